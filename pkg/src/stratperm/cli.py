"""Command-line front end: ``stratperm {test,ci,diagnose,simulate,power}``.

Exit status is 0 on success, 1 on usage errors and 2 on data or validation
errors. A plain-text ``key = value`` file given with ``--config`` supplies
defaults; command-line flags override it.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .approx import approx_sr_test
from .comparators import f_test, hc_wald, pc_test
from .dataset import load_csv
from .errors import StratPermError
from .inversion import canonical_method, invert_test, parse_grid
from .montecarlo import DgpSpec, canonical_family, power_curve, strata_characteristics
from .sr import sr_test, sra_test
from .strata import diagnostics, partition_by_z

EXIT_USAGE = 1
EXIT_DATA = 2

# flags whose values may start with "-" (negative numbers, grids)
_VALUE_FLAGS = {"--grid", "--beta0", "--betas", "--u"}

_REQUIRED = {
    "test": ("csv", "y", "x", "seed"),
    "ci": ("csv", "y", "x", "grid", "seed"),
    "diagnose": ("csv", "y", "x"),
    "simulate": ("dgp", "n", "p", "seed"),
    "power": ("dgp", "n", "p", "seed"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _float_list(text):
    return [float(t) for t in _csv_list(text)]


def _int_list(text):
    return [int(t) for t in _csv_list(text)]


def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--csv", help="input CSV with a header row")
    g.add_argument("--y", help="outcome column")
    g.add_argument("--x", help="comma-separated regressors of interest")
    g.add_argument("--z", default="", help="comma-separated nuisance regressors (intercept added)")
    g.add_argument("--no-intercept", action="store_true",
                   help="first --z column already is the intercept")


def _add_common(p, fmt_default="json"):
    p.add_argument("--config", help="key = value file with default options")
    p.add_argument("--seed", type=int, help="64-bit master seed (required for provenance)")
    p.add_argument("--threads", type=int, default=1, help="worker count; results do not depend on it")
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--format", choices=("json", "csv", "human"), default=fmt_default)


def build_parser():
    parser = _Parser(prog="stratperm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stratperm {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("test", help="test H0: beta = beta0")
    _add_data(t)
    _add_common(t)
    t.add_argument("--beta0", default="0", help="comma-separated tested value (length k)")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--method", default="sr", help="sr, sra, approx, pc, hc0, hc1, hc3, f")
    t.add_argument("--permutations", type=int, default=499, help="N' (identity included)")
    t.add_argument("--u", type=float, help="uniform for randomized decisions (default: from seed)")
    t.add_argument("--conservative", action="store_true", help="reject only when phi = 1")
    t.add_argument("--s-bins", type=int, help="strata count for the approximate test")
    t.add_argument("--truncate", type=int, help="keep at most this many permuted statistics")

    c = sub.add_parser("ci", help="confidence interval by test inversion")
    _add_data(c)
    _add_common(c)
    c.add_argument("--grid", help="lo:hi:step")
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--method", default="sr")
    c.add_argument("--permutations", type=int, default=499)
    c.add_argument("--conservative", action="store_true")
    c.add_argument("--s-bins", type=int)

    g = sub.add_parser("diagnose", help="strata diagnostics for a dataset")
    _add_data(g)
    _add_common(g)

    s = sub.add_parser("simulate", help="strata characteristics of a simulation design")
    _add_common(s)
    s.add_argument("--dgp")
    s.add_argument("--n", help="comma-separated sample sizes")
    s.add_argument("--p", help="comma-separated nuisance dimensions")
    s.add_argument("--reps", type=int, default=1000)

    w = sub.add_parser("power", help="rejection frequencies over a beta grid")
    _add_common(w, fmt_default="csv")
    w.add_argument("--dgp")
    w.add_argument("--n", help="comma-separated sample sizes")
    w.add_argument("--p", help="comma-separated nuisance dimensions")
    w.add_argument("--reps", type=int, default=1000)
    w.add_argument("--methods", default="sr,sra,pc,hc1,hc3,f")
    w.add_argument("--betas", default="-0.5:0.5:0.1", help="lo:hi:step or comma list")
    w.add_argument("--alpha", type=float, default=0.05)
    w.add_argument("--permutations", type=int, default=499)
    return parser


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _join_values(argv):
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def _apply_config(parser, argv):
    ns, _ = parser.parse_known_args(argv)
    if ns.command is None or getattr(ns, "config", None) is None:
        return ns
    cfg = read_config(ns.config)
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            defaults[key] = action.type(value)
        else:
            defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _load(ns):
    return load_csv(ns.csv, _csv_list(ns.x), _csv_list(ns.z), ns.y, add_intercept=not ns.no_intercept)


def _config_dict(ns):
    return {k: v for k, v in vars(ns).items() if k not in ("out",)}


def _emit(ns, text):
    if ns.out:
        Path(ns.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _flatten(d: dict, prefix="") -> dict:
    """Nested dicts to dotted keys; lists of scalars are kept whole."""
    out = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _table_rows(payload):
    """The list of row dicts in a payload, if it has one (simulate output)."""
    for value in payload.values():
        if isinstance(value, list) and value and all(isinstance(r, dict) for r in value):
            return value
    return None


def _human(payload: dict) -> str:
    lines = []
    for key, value in _flatten(payload).items():
        if isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            continue
        if isinstance(value, list) and len(value) > 8:
            value = f"[{len(value)} values]"
        lines.append(f"{key:>32}: {value}")
    rows = _table_rows(payload)
    if rows:
        lines.append("")
        lines.extend(_csv_table(rows).splitlines())
    return "\n".join(lines) + "\n"


def _csv_table(rows) -> str:
    buf = io.StringIO()
    flat = [_flatten(r) for r in rows]
    writer = csv.DictWriter(buf, fieldnames=list(flat[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(flat)
    return buf.getvalue()


def _render(ns, payload):
    if ns.format == "human":
        return _human(payload)
    if ns.format == "csv":
        header = json.dumps({"tool_version": __version__, "config": payload.get("config", {})},
                            default=_json_default)
        rows = _table_rows(payload)
        if rows is None:
            flat = {k: v for k, v in _flatten(payload).items() if not isinstance(v, list)}
            rows = [flat]
        return f"# {header}\n" + _csv_table(rows)
    return json.dumps(payload, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def cmd_test(ns):
    method = canonical_method(ns.method)
    beta0 = _float_list(ns.beta0)
    d = _load(ns)
    if method == "SR":
        res = sr_test(d, beta0, ns.alpha, ns.permutations, ns.seed, ns.u, ns.conservative, ns.threads)
        payload = res.to_dict(ns.truncate)
    elif method == "ApproxSR":
        res = approx_sr_test(d, beta0, ns.alpha, ns.s_bins, ns.permutations, ns.seed, ns.u,
                             ns.conservative, ns.threads)
        payload = res.to_dict(ns.truncate)
    elif method == "SRa":
        payload = sra_test(d, beta0, ns.alpha).to_dict(ns.truncate)
    elif method == "PC":
        payload = pc_test(d, beta0, ns.alpha, ns.permutations, ns.seed, workers=ns.threads).to_dict()
    elif method in ("HC0", "HC1", "HC3"):
        payload = hc_wald(d, beta0, ns.alpha, method).to_dict()
    else:
        payload = f_test(d, beta0, ns.alpha).to_dict()
    payload.setdefault("diagnostics", diagnostics(partition_by_z(d)).to_dict())
    payload["config"] = _config_dict(ns)
    return payload


def cmd_ci(ns):
    grid = parse_grid(ns.grid)
    canonical_method(ns.method)
    d = _load(ns)
    ci = invert_test(d, grid, ns.alpha, ns.permutations, ns.seed, ns.method, ns.threads,
                     ns.conservative, ns.s_bins)
    payload = ci.to_dict()
    payload.setdefault("diagnostics", diagnostics(partition_by_z(d)).to_dict())
    payload["config"] = _config_dict(ns)
    for w in ci.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return payload


def cmd_diagnose(ns):
    d = _load(ns)
    part = partition_by_z(d)
    payload = {"tool_version": __version__, "diagnostics": diagnostics(part).to_dict(),
               "strata_sizes": part.sizes.tolist(), "config": _config_dict(ns)}
    return payload


def _cells(ns):
    fam = canonical_family(ns.dgp)
    return fam, _int_list(ns.n), _int_list(ns.p)


def cmd_simulate(ns):
    fam, ns_, ps = _cells(ns)
    rows = [strata_characteristics(fam, n, p, ns.reps, ns.seed) for p in ps for n in ns_]
    return {"tool_version": __version__, "strata_characteristics": rows, "config": _config_dict(ns)}


def cmd_power(ns):
    fam, ns_, ps = _cells(ns)
    betas = parse_grid(ns.betas) if ":" in ns.betas else np.array(_float_list(ns.betas))
    methods = [canonical_method(m) for m in _csv_list(ns.methods)]
    tables = [power_curve(DgpSpec(fam, n, p), betas, methods, ns.alpha, ns.reps, ns.permutations,
                          ns.seed, ns.threads) for p in ps for n in ns_]
    return tables


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _join_values(argv)
        ns = _apply_config(parser, argv)
        if ns.command is None:
            raise UsageError("a command is required")
        missing = [f"--{k.replace('_', '-')}" for k in _REQUIRED[ns.command] if getattr(ns, k) in (None, "")]
        if missing:
            raise UsageError(f"stratperm {ns.command}: missing required option(s) {', '.join(missing)}")
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        if ns.command == "power":
            tables = cmd_power(ns)
            header = json.dumps({"tool_version": __version__, "config": _config_dict(ns)},
                                default=_json_default)
            if ns.format == "json":
                text = json.dumps({"tool_version": __version__, "config": _config_dict(ns),
                                   "tables": [json.loads(t.to_json()) for t in tables]}, indent=2)
            else:
                body = [tables[0].to_csv()] + [t.to_csv().split("\n", 1)[1] for t in tables[1:]]
                text = f"# {header}\n" + "".join(body)
            _emit(ns, text)
            return 0
        handler = {"test": cmd_test, "ci": cmd_ci, "diagnose": cmd_diagnose,
                   "simulate": cmd_simulate}[ns.command]
        payload = handler(ns)
        _emit(ns, _render(ns, payload))
        return 0
    except (StratPermError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
