"""``maxreg-lab``: batch driver for the experiments.

Each subcommand reads one JSON config (merged over the defaults shown by
``--print-defaults``), writes CSV/JSON reports into ``--out`` and exits with
0 when every checked invariant holds, 1 when one fails and 2 on usage or
config errors.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cauchy, cotlar, fractional, maxreg, semigroup
from .operator_core import Operator, OperatorError, make_operator, random_accretive, \
    random_hermitian_positive, require_analytic_generator
from .timegrid import GridFunction, log_grid, log_panels

log = logging.getLogger("maxreg_lab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "semigroup": {
        "operator": {"kind": "identity", "dim": 1},
        "grid": {"t_min": 1e-4, "t_max": 1e4, "N": 256},
        "tolerances": {"semigroup_law": 1e-10},
    },
    "kato": {
        "count": 1000, "dims": [2, 3, 4], "margin": 0.0, "seed": 0,
        "samples": 1000, "alphas": [0.1, 0.2, 0.3, 0.4],
        "hermitian_count": 50,
        "tolerances": {"bound_rel": 1e-8, "hermitian": 1e-9},
    },
    "sweep": {
        "operator": {"kind": "random_accretive", "dim": 2, "margin": 0.1, "seed": 1},
        "betas": [-1.0, -0.5, 0.0, 0.5, 0.9],
        "grids": [{"t_min": 1e-3, "t_max": 1e3, "N": 256},
                  {"t_min": 1e-4, "t_max": 1e4, "N": 512},
                  {"t_min": 1e-5, "t_max": 1e5, "N": 1024}],
        "which": "Mplus", "scheme": "galerkin", "weights": "panel",
    },
    "counterexample": {
        "operator": {"kind": "identity", "dim": 1},
        "u": [1.0],
        "betas": [1.0, 0.9],
        "t_mins": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
        "t_max": 4.0, "per_decade": 64,
        "tolerances": {"slope_rel": 0.05, "slope_below": 1e-4},
    },
    "cotlar": {
        "operator": {"kind": "identity", "dim": 1},
        "alphas": [0.1, 0.25, 0.4],
        "u_grid": {"half_width": 12, "max_log2_ratio": 8},
        "grid": {"t_min": 1e-3, "t_max": 1e3, "N": 96},
        "reconstruction": {"decades": 8, "per_decade": 64},
        "tolerances": {"decay_slack": 0.05, "reconstruction": 1e-3},
    },
    "cauchy": {
        "operator": {"kind": "identity", "dim": 1},
        "u0": [1.0],
        "f": {"kind": "constant", "value": [1.0]},
        "grid": {"t_min": 1e-6, "t_max": 100.0, "N": 600},
        "tolerances": {"residual": 1e-8, "trace": 1e-5},
    },
}


@dataclass
class ExperimentConfig:
    command: str
    data: dict
    out: Path = field(default_factory=lambda: Path("."))

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)


# tagged unions: a user value replaces the default wholesale so that fields of
# the default kind (a seed, say) never leak into a different one
REPLACE_KEYS = ("operator", "f")


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in REPLACE_KEYS:
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(command: str, path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            user = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    return deep_merge(cfg, user)


def build_operator(spec: dict) -> Operator:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("operator spec needs a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "identity":
            return make_operator(np.eye(int(spec.get("dim", 1))), source="identity")
        if kind == "inline":
            return Operator.from_dict(spec)
        if kind in ("random_accretive", "random_hermitian"):
            if "seed" not in spec:
                raise ConfigError(f"{kind} operator needs an explicit 'seed'")
            if kind == "random_accretive":
                return random_accretive(int(spec["dim"]), float(spec.get("margin", 0.0)),
                                        int(spec["seed"]), float(spec.get("skew_scale", 1.0)))
            return random_hermitian_positive(int(spec["dim"]), int(spec["seed"]),
                                             float(spec.get("floor", 0.1)))
    except (KeyError, TypeError, OperatorError) as exc:
        raise ConfigError(f"bad operator spec: {exc}") from exc
    raise ConfigError(f"unknown operator kind {kind!r}")


def build_grid(spec: dict):
    try:
        return log_grid(float(spec["t_min"]), float(spec["t_max"]), int(spec["N"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid spec: {exc}") from exc


def build_f(spec: dict, grid, dim: int) -> GridFunction:
    kind = spec.get("kind")
    if kind == "constant":
        return GridFunction.constant(grid, _vec(spec["value"], dim))
    if kind == "indicators":
        f = GridFunction.zeros(grid, dim)
        for piece in spec["pieces"]:
            f = f + GridFunction.indicator(grid, float(piece["a"]), float(piece["b"]),
                                           _vec(piece["value"], dim))
        return f
    if kind == "zero":
        return GridFunction.zeros(grid, dim)
    raise ConfigError(f"unknown f kind {kind!r}")


def _vec(x, dim):
    if isinstance(x, dict):
        v = np.asarray(x["re"], float) + 1j * np.asarray(x.get("im", np.zeros(len(x["re"]))), float)
    else:
        v = np.asarray(x, dtype=complex)
    v = np.atleast_1d(v)
    if v.shape != (dim,):
        raise ConfigError(f"vector of length {v.size} for dimension {dim}")
    return v


def header_line() -> str:
    return f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}"


def write_rows(path: Path, columns, rows) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        fh.write(header_line() + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([maxreg.fmt(x) if isinstance(x, float) else x for x in r])


# --- subcommands --------------------------------------------------------------------

def cmd_semigroup(cfg: ExperimentConfig, executor=None) -> list:
    A = build_operator(cfg["operator"])
    grid = build_grid(cfg["grid"])
    failures = []
    try:
        require_analytic_generator(A, "semigroup checks")
    except OperatorError as exc:
        return [str(exc)]
    t = grid.nodes
    prop = semigroup.propagator(A)
    s = t[:: max(1, t.size // 16)]
    law = max(float(np.max(np.abs(prop.exp(a + b) - prop.exp(a) @ prop.exp(b))))
              for a in s for b in s)
    C = semigroup.analyticity_constant(A, grid)
    M = semigroup.semigroup_bound(A, grid)
    qe = semigroup.quadratic_estimate_constant(A)
    qes = semigroup.quadratic_estimate_constant(A.adjoint())
    rows = [("semigroup_law", law, int(law <= cfg["tolerances"]["semigroup_law"])),
            ("analyticity_constant", C, 1),
            ("semigroup_bound", M, 1),
            ("qe_constant", qe.value, int(qe.converged)),
            ("qe_constant_adjoint", qes.value, int(qes.converged))]
    write_rows(cfg.out / "semigroup_checks.csv", ["check", "value", "pass"], rows)
    semigroup.dump_profile_csv(A, grid, cfg.out / "semigroup_profile.csv")
    failures += [name for name, _, ok in rows if not ok]
    return failures


def cmd_kato(cfg: ExperimentConfig, executor=None) -> list:
    alphas = [float(a) for a in cfg["alphas"]]
    if any(not 0 < a < 0.5 for a in alphas):
        raise ConfigError("alphas must lie in (0, 1/2)")
    if "seed" not in cfg.data:
        raise ConfigError("kato needs a seed")
    dims, seed, samples = list(cfg["dims"]), int(cfg["seed"]), int(cfg["samples"])
    tol = cfg["tolerances"]
    worst = {a: 0.0 for a in alphas}
    sup = {a: 0.0 for a in alphas}
    passed = {a: True for a in alphas}
    for k in range(int(cfg["count"])):
        A = random_accretive(dims[k % len(dims)], float(cfg["margin"]), seed + k)
        for r in fractional.kato_audit(A, alphas, samples, seed=seed + k):
            worst[r.alpha] = max(worst[r.alpha], r.worst_ratio)
            sup[r.alpha] = max(sup[r.alpha], r.sup_ratio)
            passed[r.alpha] &= r.worst_ratio <= r.bound * (1 + tol["bound_rel"])
    herm_dev = 0.0
    for k in range(int(cfg["hermitian_count"])):
        H = random_hermitian_positive(dims[k % len(dims)], seed + 10**6 + k)
        for r in fractional.kato_audit(H, alphas, samples, seed=seed + k):
            herm_dev = max(herm_dev, abs(r.worst_ratio - 1))
    rows = [(a, fractional.kato_bound(a), worst[a], samples, int(passed[a])) for a in alphas]
    write_rows(cfg.out / "kato.csv", ["alpha", "bound", "worst_ratio", "num_samples", "pass"], rows)
    write_rows(cfg.out / "kato_hermitian.csv", ["max_abs_ratio_minus_one", "pass"],
               [(herm_dev, int(herm_dev <= tol["hermitian"]))])
    fails = [f"kato alpha={a}" for a in alphas if not passed[a]]
    if herm_dev > tol["hermitian"]:
        fails.append("hermitian ratios deviate from 1")
    return fails


def _expected_verdict(which, beta):
    if which == "Mplus":
        return "bounded" if beta < 1 else "growing"
    return "bounded" if beta > -1 else "growing"


def cmd_sweep(cfg: ExperimentConfig, executor=None) -> list:
    A = build_operator(cfg["operator"])
    grids = [build_grid(g) for g in cfg["grids"]]
    betas = [float(b) for b in cfg["betas"]]
    which = cfg["which"]
    if which not in ("Mplus", "Mminus"):
        raise ConfigError("which must be Mplus or Mminus")
    try:
        rep = maxreg.beta_sweep(A, betas, grids, which, cfg["scheme"], cfg["weights"], executor)
    except OperatorError as exc:
        return [str(exc)]
    rep.to_csv(cfg.out / "sweep.csv", header_line())
    expect = cfg.get("expect") or {}
    fails = []
    for b in betas:
        want = expect.get(str(b), _expected_verdict(which, b))
        if rep.verdicts[b] != want:
            fails.append(f"beta={b}: {rep.verdicts[b]} (expected {want})")
    return fails


def cmd_counterexample(cfg: ExperimentConfig, executor=None) -> list:
    A = build_operator(cfg["operator"])
    u = _vec(cfg["u"], A.dim)
    tol = cfg["tolerances"]
    fails = []
    for beta in [float(b) for b in cfg["betas"]]:
        try:
            r = maxreg.counterexample_growth(A, u, beta, cfg["t_mins"], float(cfg["t_max"]),
                                             int(cfg["per_decade"]))
        except OperatorError as exc:
            return [str(exc)]
        r.to_csv(cfg.out / f"counterexample_beta{beta:g}.csv", header_line())
        if beta >= 1:
            if r.verdict != "growing":
                fails.append(f"beta={beta}: norms did not grow")
            if beta == 1:
                target = r.c ** 2 * np.log(10)
                for t0, _, _, d in r.rows:
                    if t0 <= tol["slope_below"] and abs(d / target - 1) > tol["slope_rel"]:
                        fails.append(f"beta=1 increment {d:.6g} at t_min={t0:g} vs {target:.6g}")
        elif r.verdict != "bounded":
            fails.append(f"beta={beta}: norms did not stabilize")
    return fails


def cmd_cotlar(cfg: ExperimentConfig, executor=None) -> list:
    A = build_operator(cfg["operator"])
    alphas = [float(a) for a in cfg["alphas"]]
    if any(not 0 < a < 0.5 for a in alphas):
        raise ConfigError("alphas must lie in (0, 1/2)")
    grid = build_grid(cfg["grid"])
    ug = cfg["u_grid"]
    try:
        u_grid = (np.asarray(ug["values"], float) if "values" in ug
                  else cotlar.default_u_grid(A, int(ug["half_width"])))
        pairs = cotlar.pair_norms(A, u_grid, grid, int(ug["max_log2_ratio"]), executor)
    except OperatorError as exc:
        return [str(exc)]
    tol = cfg["tolerances"]
    fails = []
    summary = []
    for a in alphas:
        rep = cotlar.almost_orthogonality_audit(A, a, pairs=pairs)
        rep.to_csv(cfg.out / f"cotlar_alpha{a:g}.csv", header_line())
        summary.append((a, rep.fitted_decay, rep.fit_residual, rep.constant, rep.model_bound,
                        rep.cotlar_sum))
        if not rep.fitted_decay >= a - tol["decay_slack"]:
            fails.append(f"alpha={a}: decay {rep.fitted_decay:.4g}")
    write_rows(cfg.out / "cotlar_summary.csv",
               ["alpha", "fitted_decay", "fit_residual", "constant", "model_bound", "cotlar_sum"],
               summary)
    rc = cfg["reconstruction"]
    ur = cotlar.calderon_u_grid(A, rc.get("decades_below"), rc.get("decades_above"),
                                int(rc["per_decade"]), float(rc.get("decades", 8.0)))
    err = cotlar.reconstruction_error(A, grid, ur)
    write_rows(cfg.out / "cotlar_reconstruction.csv", ["u_points", "relative_error", "pass"],
               [(ur.size, err, int(err <= tol["reconstruction"]))])
    if err > tol["reconstruction"]:
        fails.append(f"reconstruction error {err:.3g}")
    return fails


def cmd_cauchy(cfg: ExperimentConfig, executor=None) -> list:
    A = build_operator(cfg["operator"])
    grid = build_grid(cfg["grid"])
    u0 = _vec(cfg["u0"], A.dim)
    f = build_f(cfg["f"], grid, A.dim)
    try:
        u = cauchy.solve_ivp(A, u0, f)
        rep = cauchy.ivp_report(A, u0, f, u)
    except OperatorError as exc:
        return [str(exc)]
    (cfg.out / "cauchy.json").write_text(rep.to_json() + "\n")
    u.to_csv(cfg.out / "cauchy_solution.csv")
    tol = cfg["tolerances"]
    fails = []
    if rep.max_residual > tol["residual"]:
        fails.append(f"weak residual {rep.max_residual:.3g}")
    if rep.trace_error > tol["trace"]:
        fails.append(f"trace error {rep.trace_error:.3g}")
    return fails


COMMANDS = {
    "semigroup": cmd_semigroup,
    "kato": cmd_kato,
    "sweep": cmd_sweep,
    "counterexample": cmd_counterexample,
    "cotlar": cmd_cotlar,
    "cauchy": cmd_cauchy,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxreg-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config merged over the defaults")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--print-defaults", action="store_true")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.print_defaults:
        print(json.dumps(DEFAULTS[args.command], indent=2, sort_keys=True))
        return EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        data = load_config(args.command, args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = ExperimentConfig(args.command, data, out)
        if args.threads > 1:
            with ThreadPoolExecutor(args.threads) as ex:
                failures = COMMANDS[args.command](cfg, ex)
        else:
            failures = COMMANDS[args.command](cfg)
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for msg in failures:
        print(f"FAIL {msg}", file=sys.stderr)
    if not failures:
        log.info("%s: all checks passed", args.command)
    return EXIT_FAIL if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
