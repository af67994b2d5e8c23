"""Strata from distinct Z rows and the within-stratum permutation group.

Permutations are stored as integer arrays ``perm`` of row labels, applied as
``v[perm]``; a stratified permutation only ever maps a row to a row of the
same stratum.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

# Enumerate (rather than sample) whenever the group has at most this many elements.
ENUM_LIMIT = 10_000
# Per-stratum enumeration tables are built only up to this stratum size (8! = 40320 rows).
_MAX_TABLE_STRATUM = 8
# Permutations drawn per RNG child stream; fixed so output does not depend on worker count.
CHUNK = 1024

_STREAM_DRAWS = 0
_STREAM_SUBSAMPLE = 1
_STREAM_UNIFORM = 2


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream ``key`` under ``seed`` (counter-based split)."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True, eq=False)
class StrataPartition:
    """Assignment of rows to strata.

    ``assignment[i]`` is the stratum id of row i, ``sizes[s]`` the stratum size
    and ``order`` the row labels sorted into contiguous stratum blocks.
    """

    assignment: np.ndarray
    sizes: np.ndarray
    order: np.ndarray
    levels: np.ndarray | None = None

    def __post_init__(self):
        for name in ("assignment", "sizes", "order"):
            a = np.asarray(getattr(self, name), dtype=np.int64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return int(self.assignment.shape[0])

    @property
    def S(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def blocks(self):
        """Row labels of each stratum, in stratum-id order."""
        off = self.offsets
        return [self.order[off[s]:off[s + 1]] for s in range(self.S)]

    @property
    def all_singletons(self) -> bool:
        return bool(np.all(self.sizes == 1))


def partition_from_labels(labels, levels=None) -> StrataPartition:
    """Partition rows by integer-like labels; ids follow sorted label order."""
    labels = np.asarray(labels)
    uniq, inverse = np.unique(labels, return_inverse=True)
    inverse = inverse.reshape(-1)
    sizes = np.bincount(inverse, minlength=uniq.shape[0])
    order = np.argsort(inverse, kind="stable")
    return StrataPartition(inverse, sizes, order, uniq if levels is None else levels)


def partition_by_z(d) -> StrataPartition:
    """Strata are the classes of exactly equal Z rows, numbered in lexicographic order."""
    Z = d.Z if hasattr(d, "Z") else np.asarray(d, dtype=np.float64)
    levels, inverse = np.unique(Z, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    sizes = np.bincount(inverse, minlength=levels.shape[0])
    order = np.argsort(inverse, kind="stable")
    return StrataPartition(inverse, sizes, order, levels)


def log_group_size(p: StrataPartition) -> float:
    """ln |S_n| = sum_s ln(n_s!)."""
    return float(sum(math.lgamma(int(m) + 1) for m in p.sizes))


def group_size(p: StrataPartition) -> int:
    """Exact |S_n| as a Python integer (may be huge)."""
    out = 1
    for m in p.sizes:
        out *= math.factorial(int(m))
    return out


@dataclass(frozen=True)
class StrataDiagnostics:
    S: int
    n: int
    ratio: float
    max_size: int
    singletons: int
    effective_n: int
    log_group_size: float
    warning: bool

    def to_dict(self):
        return {
            "S": self.S,
            "n": self.n,
            "S_over_n": self.ratio,
            "max_stratum_size": self.max_size,
            "singleton_strata": self.singletons,
            "effective_sample": self.effective_n,
            "log_group_size": self.log_group_size,
            "many_strata_warning": self.warning,
        }


RATIO_WARNING = 0.5


def diagnostics(p: StrataPartition) -> StrataDiagnostics:
    ratio = p.S / p.n
    return StrataDiagnostics(
        S=p.S,
        n=p.n,
        ratio=ratio,
        max_size=int(p.sizes.max()),
        singletons=int(np.sum(p.sizes == 1)),
        effective_n=p.n - p.S,
        log_group_size=log_group_size(p),
        warning=ratio > RATIO_WARNING,
    )


def apply_permutation(v, perm) -> np.ndarray:
    v = np.asarray(v)
    perm = np.asarray(perm)
    if v.shape[0] != perm.shape[0]:
        raise DimensionMismatch(f"vector has length {v.shape[0]}, permutation {perm.shape[0]}")
    return v[perm]


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0], dtype=perm.dtype)
    return inv


@dataclass(frozen=True, eq=False)
class PermutationSet:
    """Identity plus distinct within-stratum permutations (one per row of ``perms``)."""

    perms: np.ndarray
    seed: int
    requested: int
    enumerated: bool = False
    contains_identity: bool = field(default=True)

    def __post_init__(self):
        a = np.asarray(self.perms)
        a.setflags(write=False)
        object.__setattr__(self, "perms", a)

    @property
    def N(self) -> int:
        return int(self.perms.shape[0])

    def __len__(self):
        return self.N

    def to_json(self) -> str:
        return json.dumps({
            "seed": int(self.seed),
            "requested": int(self.requested),
            "enumerated": bool(self.enumerated),
            "perms": self.perms.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "PermutationSet":
        obj = json.loads(text)
        perms = np.asarray(obj["perms"], dtype=np.int32)
        return cls(perms, obj["seed"], obj["requested"], obj.get("enumerated", False))

    def save(self, path) -> None:
        np.savez_compressed(path, perms=self.perms, seed=np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF),
                            requested=self.requested, enumerated=self.enumerated)

    @classmethod
    def load(cls, path) -> "PermutationSet":
        with np.load(path) as f:
            return cls(f["perms"], int(f["seed"]), int(f["requested"]), bool(f["enumerated"]))


def _index_dtype(n):
    return np.int32 if n < 2**31 - 1 else np.int64


def _draw_chunk(blocks, n, count, rng):
    out = np.tile(np.arange(n, dtype=_index_dtype(n)), (count, 1))
    for rows in blocks:
        if rows.shape[0] < 2:
            continue
        tiled = np.broadcast_to(rows.astype(out.dtype), (count, rows.shape[0]))
        out[:, rows] = rng.permuted(tiled, axis=1)
    return out


def random_permutations(p: StrataPartition, count: int, seed: int, workers: int = 1) -> np.ndarray:
    """``count`` i.i.d. uniform draws from the stratified group (with replacement).

    Each stratum is shuffled with an independent Fisher-Yates pass. Draws are
    generated in fixed chunks with their own child streams, so the result is
    the same for any ``workers``.
    """
    n = p.n
    if count <= 0:
        return np.empty((0, n), dtype=_index_dtype(n))
    blocks = [b for b in p.blocks() if b.shape[0] > 1]
    n_chunks = -(-count // CHUNK)

    def job(c):
        m = min(CHUNK, count - c * CHUNK)
        return _draw_chunk(blocks, n, m, child_rng(seed, _STREAM_DRAWS, c))

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, range(n_chunks)))
    else:
        parts = [job(c) for c in range(n_chunks)]
    return np.vstack(parts)


def _dedupe(perms):
    _, first = np.unique(perms, axis=0, return_index=True)
    return perms[np.sort(first)]


def _enumerable(p):
    return int(p.sizes.max()) <= _MAX_TABLE_STRATUM


def _enumerate(p: StrataPartition, ranks) -> np.ndarray:
    """Group elements with the given mixed-radix ranks; rank 0 is the identity."""
    n = p.n
    blocks = [b for b in p.blocks() if b.shape[0] > 1]
    out = np.tile(np.arange(n, dtype=_index_dtype(n)), (len(ranks), 1))
    if not blocks:
        return out
    radices = [math.factorial(b.shape[0]) for b in blocks]
    digits = np.unravel_index(np.asarray(ranks, dtype=np.int64), radices)
    for rows, digit in zip(blocks, digits):
        table = np.array(list(itertools.permutations(rows.tolist())), dtype=out.dtype)
        out[:, rows] = table[digit]
    return out


def sample_permutation_set(p: StrataPartition, n_prime: int, seed: int, workers: int = 1) -> PermutationSet:
    """Identity plus up to ``n_prime - 1`` distinct stratified permutations.

    Small groups (at most ``max(n_prime, ENUM_LIMIT)`` elements) are handled
    through enumeration: the whole group when it has at most ``n_prime``
    elements, otherwise a simple random sample without replacement of
    ``n_prime - 1`` non-identity elements. Larger groups use ``n_prime - 1``
    uniform draws with replacement, identity added, duplicates removed.
    """
    n_prime = int(n_prime)
    if n_prime < 1:
        raise ValueError("n_prime must be at least 1")
    n = p.n
    identity = np.arange(n, dtype=_index_dtype(n))[None, :]
    if n_prime == 1 or p.all_singletons:
        return PermutationSet(identity, seed, n_prime, enumerated=p.all_singletons)

    lg = log_group_size(p)
    if lg <= math.log(max(n_prime, ENUM_LIMIT)) + 1e-9 and _enumerable(p):
        size = group_size(p)
        if size <= n_prime:
            return PermutationSet(_enumerate(p, np.arange(size)), seed, n_prime, enumerated=True)
        rng = child_rng(seed, _STREAM_SUBSAMPLE)
        picks = rng.choice(size - 1, size=n_prime - 1, replace=False) + 1
        ranks = np.concatenate([[0], picks])
        return PermutationSet(_enumerate(p, ranks), seed, n_prime)

    draws = random_permutations(p, n_prime - 1, seed, workers)
    perms = _dedupe(np.vstack([identity, draws]))
    return PermutationSet(perms, seed, n_prime)


def randomization_uniform(seed: int) -> float:
    """The shared U(0,1) draw used for randomized decisions under ``seed``."""
    return float(child_rng(seed, _STREAM_UNIFORM).random())
