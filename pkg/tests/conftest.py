import itertools

import numpy as np
import pytest

from stratperm.dataset import Dataset
from stratperm.strata import StrataPartition


def dense_D(part: StrataPartition) -> np.ndarray:
    """Block-diagonal within-stratum centering matrix, built explicitly."""
    n = part.n
    D = np.zeros((n, n))
    for s in range(part.S):
        idx = np.flatnonzero(part.assignment == s)
        m = idx.size
        D[np.ix_(idx, idx)] = np.eye(m) - np.full((m, m), 1.0 / m)
    return D


def dense_g(D, X, v):
    """g(W, v) from explicit matrices; None when the middle matrix is singular."""
    Xt = D @ X
    Dv = D @ v
    a = Xt.T @ v
    B = Xt.T @ np.diag(Dv ** 2) @ Xt
    if np.linalg.matrix_rank(B) < B.shape[0]:
        return None
    return float(a @ np.linalg.inv(B) @ a)


def all_stratified_perms(part: StrataPartition):
    """Every element of the stratified group, by nested per-stratum permutation."""
    blocks = [np.flatnonzero(part.assignment == s) for s in range(part.S)]
    per = [list(itertools.permutations(b.tolist())) for b in blocks]
    out = []
    for combo in itertools.product(*per):
        perm = np.arange(part.n)
        for rows, image in zip(blocks, combo):
            perm[rows] = image
        out.append(perm)
    return np.array(out)


def discrete_dataset(rng, n, levels=3, k=1, beta=0.0):
    """Small dataset with one discrete nuisance column (plus intercept)."""
    zc = rng.integers(0, levels, n).astype(float)
    Z = np.column_stack([np.ones(n), zc])
    X = rng.standard_normal((n, k)) + zc[:, None]
    y = X @ np.full(k, beta) + zc + rng.standard_normal(n)
    return Dataset(y, X, Z)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
