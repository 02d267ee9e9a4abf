"""Command-line entry point: ``gp-limit-lab {coeffs|sigma|sample|distance|rate|audit}``.

Every subcommand reads an optional flat ``key = value`` config; explicit
flags override config keys. Output files carry the config hash and the
constants used on every row.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import features as ft
from .harness import (
    ExperimentConfig,
    run_bound_audit,
    run_coefficient_table,
    run_rate_experiment,
    sigma_audit_rows,
    write_audit_outputs,
    write_csv,
    write_json,
    write_rate_outputs,
)
from .hermite import Activation, hermite_expansion, relu_coefficient_closed_form, relu_coefficient_method, remainder
from .process import (
    ProcessMarginalSample,
    nngp_kernel,
    sample_gp_marginal,
    sample_marginal,
    sphere_sample,
)
from .transport import marginal_transport_estimate

STAMP_COLUMNS = ("config_hash", "C", "C_prime")


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")


def _out_path(config: ExperimentConfig, default: str) -> Path:
    return Path(config.out or default)


# -- subcommands -------------------------------------------------------------------


def cmd_coeffs(config: ExperimentConfig) -> int:
    act = Activation.parse(config.activation)
    D = config.max_degree
    exp = hermite_expansion(act, D, config.quad_order)
    rows = []
    for m in range(D + 1):
        rem = remainder(exp, m)
        rows.append({"m": m, "coefficient": float(exp.coefficients[m]), "method": "quadrature",
                     "remainder_after_m": rem})
        if act.kind == "relu" and relu_coefficient_method(m) == "closed_form":
            rows.append({"m": m, "coefficient": relu_coefficient_closed_form(m), "method": "closed_form",
                         "remainder_after_m": rem})
    out = _out_path(config, "coeffs.csv")
    stamp = config.stamp()
    write_csv(out, rows, ("m", "coefficient", "method", "remainder_after_m"), stamp)
    table = run_coefficient_table(act, D, config.quad_order)
    write_csv(_sidecar(out, "table"), table, ("m", "quadrature", "closed_form", "ratio", "remainder"), stamp)
    return 0


def cmd_sigma(config: ExperimentConfig) -> int:
    a = ft.poly_coeffs(config.poly)
    if config.empirical > 0:
        cov = ft.covariance_empirical(a, config.n, config.empirical, config.require_seed())
    else:
        cov = ft.covariance_analytic(a, config.n)
    vals, _ = ft.spectrum(cov)
    total = float(np.sum(vals))
    cum = np.cumsum(vals) / total if total > 0 else np.zeros_like(vals)
    rows = [{"rank": i + 1, "eigenvalue": float(v), "cumulative_mass": float(c)} for i, (v, c) in enumerate(zip(vals, cum))]
    out = _out_path(config, "sigma_spectrum.csv")
    stamp = config.stamp()
    write_csv(out, rows, ("rank", "eigenvalue", "cumulative_mass"), stamp)
    audit = sigma_audit_rows(a, config.n, config.seed if config.seed is not None else 0, config.audit_trials)
    write_csv(_sidecar(out, "audit"), [r.as_row() for r in audit],
              ("bound_name", "lhs", "rhs", "pass", "asserted", "notes"), stamp)
    return 1 if any(r.asserted and not r.passed for r in audit) else 0


def cmd_sample(config: ExperimentConfig) -> int:
    seed = config.require_seed()
    act = Activation.parse(config.activation)
    points = sphere_sample(config.n, config.points, seed)
    exp = hermite_expansion(act, config.kernel_degree, max(config.quad_order, 2 * config.kernel_degree + 2))
    K = nngp_kernel(exp, points)
    if config.gp:
        sample = sample_gp_marginal(K, config.reps, seed, points=points)
    else:
        sample = sample_marginal(config.k, act, points, config.reps, seed)
    out = _out_path(config, "marginals.csv")
    stamp = config.stamp()
    rows = ({"rep_id": r, "point_id": p, "value": float(sample.values[r, p])}
            for r in range(sample.reps) for p in range(points.shape[0]))
    write_csv(out, list(rows), ("rep_id", "point_id", "value"), stamp)
    coord_cols = [f"x{j}" for j in range(config.n)]
    prow = [{"point_id": i, **{c: float(v) for c, v in zip(coord_cols, pt)}} for i, pt in enumerate(points)]
    write_csv(_sidecar(out, "points"), prow, ["point_id", *coord_cols], stamp)
    krow = [{"i": i, "j": j, "kernel": float(K.matrix[i, j])}
            for i in range(points.shape[0]) for j in range(points.shape[0])]
    write_csv(_sidecar(out, "kernel"), krow, ("i", "j", "kernel"), {**stamp, "kernel_remainder": K.remainder,
                                                                     "jitter": K.jitter})
    return 0


def read_marginals(path) -> np.ndarray:
    """Read a ``rep_id, point_id, value`` CSV, or a plain numeric table, into ``reps x m``."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = [row for row in reader if row]
    if {"rep_id", "point_id", "value"} <= set(header):
        ir, ip, iv = header.index("rep_id"), header.index("point_id"), header.index("value")
        reps = max(int(r[ir]) for r in body) + 1
        m = max(int(r[ip]) for r in body) + 1
        table = np.full((reps, m), np.nan)
        for r in body:
            table[int(r[ir]), int(r[ip])] = float(r[iv])
        if np.isnan(table).any():
            raise ValueError(f"{path}: incomplete rep/point grid")
        return table
    keep = [i for i, h in enumerate(header) if h not in STAMP_COLUMNS]
    return np.array([[float(r[i]) for i in keep] for r in body], dtype=float)


def cmd_distance(config: ExperimentConfig) -> int:
    if not config.a or not config.b:
        raise ValueError("distance needs both --a and --b")
    A, B = read_marginals(config.a), read_marginals(config.b)
    bootstrap = config.bootstrap
    seed = config.require_seed() if bootstrap > 0 else (config.seed or 0)
    est = marginal_transport_estimate(
        ProcessMarginalSample(A, np.empty((0, 0))),
        ProcessMarginalSample(B, np.empty((0, 0))),
        method=config.estimator,
        bootstrap=bootstrap,
        seed=seed,
    )
    digests = {f"{side}_sha256": hashlib.sha256(Path(path).read_bytes()).hexdigest()
               for side, path in (("a", config.a), ("b", config.b))}
    payload = {**est.to_dict(), **config.stamp(), **digests}
    write_json(_out_path(config, "estimate.json"), payload)
    return 0


def cmd_rate(config: ExperimentConfig) -> int:
    result = run_rate_experiment(config)
    write_rate_outputs(result, _out_path(config, "rate_out"))
    return 0


def cmd_audit(config: ExperimentConfig) -> int:
    report = run_bound_audit(config)
    write_audit_outputs(report, config, _out_path(config, "audit_out"))
    for row in report.failed_asserted:
        print(f"FAILED {row.bound_name}: {row.lhs!r} > {row.rhs!r}", file=sys.stderr)
    return report.exit_code


COMMANDS = {
    "coeffs": cmd_coeffs,
    "sigma": cmd_sigma,
    "sample": cmd_sample,
    "distance": cmd_distance,
    "rate": cmd_rate,
    "audit": cmd_audit,
}

# flag name -> config key, per subcommand
FLAGS = {
    "coeffs": {"activation": str, "max_degree": int, "quad_order": int},
    "sigma": {"poly": str, "n": int, "empirical": int},
    "sample": {"activation": str, "n": int, "k": int, "points": int, "reps": int, "gp": None},
    "distance": {"a": str, "b": str, "method": str, "bootstrap": int},
    "rate": {},
    "audit": {},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gp-limit-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        for flag, typ in flags.items():
            opt = "--" + flag.replace("_", "-")
            if typ is None:
                p.add_argument(opt, action="store_true", default=None)
            elif flag == "method":
                p.add_argument(opt, choices=("exact", "sinkhorn", "auto"))
            else:
                p.add_argument(opt, type=typ)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {"seed": args.seed, "out": args.out}
    for flag in FLAGS[args.command]:
        value = getattr(args, flag)
        overrides["estimator" if flag == "method" else flag] = value
    return config.replace(**overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config)
    except (ValueError, OSError) as exc:
        print(f"gp-limit-lab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
