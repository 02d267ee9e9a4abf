"""Experiment orchestration: configs, rate experiments, bound audits, coefficient tables.

Configs are flat ``key = value`` text files. Every stochastic stage draws
from generators keyed by the config seed, so a config plus its seed fully
determines every number written out.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from . import features as ft
from .hermite import (
    Activation,
    coefficient_bound_rhs,
    hermite_expansion,
    hermite_to_monomial,
    relu_coefficient_closed_form,
    remainder,
    tanh_decay_fit,
)
from .process import nngp_kernel, sample_gp_marginal, sample_marginal, sphere_sample
from .transport import (
    BoundSpec,
    bound_theorem31,
    bound_theorem34,
    bound_theorem51,
    marginal_transport_estimate,
)

log = logging.getLogger(__name__)

MAX_TABLE_DEGREE = 200
HASH_LENGTH = 12
# file locations, not experiment parameters: excluded from hashes and exports
LOCATION_KEYS = ("out", "a", "b")


def _parse_ints(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    return tuple(int(p) for p in parts)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters.

    ``reps`` is the number of samples per side used by transport estimates;
    ``points`` is the number of sphere points ``m``.
    """

    seed: int | None = None
    activation: str = "poly:0,0,1"
    poly: str = "0,0,1"
    n: int = 3
    points: int = 5
    reps: int = 512
    k: int = 16
    k_grid: tuple[int, ...] = (16, 32, 64, 128, 256, 512, 1024, 2048, 4096)
    estimator: str = "auto"
    out: str = ""
    C: float = 1.0
    C_prime: float = 1.0
    quad_order: int = 128
    kernel_degree: int = 40
    max_degree: int = 40
    bootstrap: int = 0
    double_n: bool = True
    empirical: int = 0
    gp: bool = False
    a: str = ""
    b: str = ""
    audit_trials: int = 500
    workers: int = 1

    def __post_init__(self):
        if len(self.k_grid) == 0:
            raise ValueError("k_grid must not be empty")
        if any(b <= a for a, b in zip(self.k_grid, self.k_grid[1:])):
            raise ValueError("k_grid must be strictly increasing")
        if min(self.k_grid) < 1:
            raise ValueError("k_grid entries must be positive")
        if self.estimator not in ("auto", "exact", "sinkhorn"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        for name in ("n", "points", "reps", "k", "quad_order", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    # -- construction -------------------------------------------------------

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ValueError(f"line {lineno}: duplicate key {key!r}")
            values[key] = value
        return cls.from_mapping(values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def replace(self, **changes) -> "ExperimentConfig":
        changes = {k: _coerce(k, v) for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    # -- export -------------------------------------------------------------

    def to_dict(self, locations: bool = False) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["k_grid"] = list(self.k_grid)
        if not locations:
            for key in LOCATION_KEYS:
                d.pop(key)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.to_dict(locations=True).items()):
            if value is None or value == "":
                continue
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:HASH_LENGTH]

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValueError("this command needs an explicit seed (config key 'seed' or --seed)")
        return int(self.seed)

    def stamp(self) -> dict[str, Any]:
        """Columns appended to every output row."""
        return {"config_hash": self.config_hash, "C": float(self.C), "C_prime": float(self.C_prime)}


def _coerce(key: str, raw: Any) -> Any:
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[key]
    if not isinstance(raw, str):
        if key == "k_grid":
            return tuple(int(v) for v in raw)
        return raw
    raw = raw.strip()
    if key == "k_grid":
        return _parse_ints(raw)
    if "bool" in ftype:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if "int" in ftype:
        if raw.lower() in ("none", ""):
            return None
        return int(raw)
    if "float" in ftype:
        return float(raw)
    return raw


def derived_seed(seed: int, *tags: int) -> int:
    """Independent 63-bit seed for a sub-stage identified by integer ``tags``."""
    state = np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


# -- CSV helpers ---------------------------------------------------------------


def _cell(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, rows: Sequence[dict], columns: Sequence[str], stamp: dict | None = None) -> Path:
    """UTF-8 CSV with a header row; ``stamp`` columns are appended to each row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(columns) + ([c for c in stamp if c not in columns] if stamp else [])
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            full = {**row, **(stamp or {})}
            writer.writerow([_cell(full.get(c)) for c in cols])
    return path


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# -- log-log fits ----------------------------------------------------------------


class RateFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    points: int


def fit_loglog_slope(pairs: Iterable[tuple[float, float]]) -> RateFit:
    """Ordinary least squares of ``log(value)`` on ``log(k)``."""
    pairs = list(pairs)
    if len(pairs) < 4:
        raise ValueError(f"need at least 4 points, got {len(pairs)}")
    k = np.array([p[0] for p in pairs], dtype=float)
    v = np.array([p[1] for p in pairs], dtype=float)
    if np.any(k <= 0) or np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("log-log fit needs positive finite values")
    x, y = np.log(k), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, len(pairs))


# -- rate experiment ---------------------------------------------------------------


RATE_COLUMNS = (
    "k", "estimate", "ci_low", "ci_high", "estimator", "estimate_2N",
    "bound_theorem", "bound", "log_bound", "below_bound", "status",
)


@dataclass
class RateResult:
    rows: list[dict]
    fit: RateFit | None
    config: ExperimentConfig
    kernel_jitter: float = 0.0
    notes: list[str] = field(default_factory=list)


def applicable_bound(config: ExperimentConfig, activation: Activation, k: int, expansion=None) -> BoundSpec:
    """The theorem bound that covers ``activation`` at width ``k``.

    Monomials ``x^d`` get the sharper monomial bound, other polynomials the
    general polynomial bound, and anything else the Hermite-tail bound.
    """
    if activation.kind == "polynomial":
        a = np.asarray(activation.coeffs, dtype=float)
        d = max(activation.degree or 1, 1)
        nonzero = np.flatnonzero(a)
        if nonzero.size == 1 and nonzero[0] >= 1:
            return bound_theorem34(config.n, k, int(nonzero[0]), config.C)
        return bound_theorem31(config.n, k, d, float(np.max(a**2)), config.C)
    if expansion is None:
        expansion = hermite_expansion(activation, config.kernel_degree, config.quad_order)
    max_sq = float(np.max(np.asarray(expansion.coefficients) ** 2))
    deg = expansion.max_degree

    def tail(d: int) -> float:
        return remainder(expansion, min(d, deg))

    return bound_theorem51(config.n, k, max_sq, tail, config.C_prime, config.C)


def run_rate_experiment(config: ExperimentConfig) -> RateResult:
    """Marginal transport estimate between width-``k`` networks and the GP, per ``k``."""
    seed = config.require_seed()
    act = Activation.parse(config.activation)
    points = sphere_sample(config.n, config.points, seed)
    expansion = hermite_expansion(act, config.kernel_degree, max(config.quad_order, 2 * config.kernel_degree + 2))
    K = nngp_kernel(expansion, points)
    N = config.reps

    def one_row(k: int) -> dict:
        row: dict[str, Any] = {"k": k}
        try:
            fin = sample_marginal(k, act, points, N, derived_seed(seed, 1, k))
            gp = sample_gp_marginal(K.matrix, N, derived_seed(seed, 2, k), points=points)
            est = marginal_transport_estimate(
                fin, gp, method=config.estimator, bootstrap=config.bootstrap, seed=derived_seed(seed, 3, k)
            )
            row.update(estimate=est.value, ci_low=est.ci_low, ci_high=est.ci_high, estimator=est.estimator)
            if config.double_n:
                fin2 = sample_marginal(k, act, points, 2 * N, derived_seed(seed, 4, k))
                gp2 = sample_gp_marginal(K.matrix, 2 * N, derived_seed(seed, 5, k), points=points)
                row["estimate_2N"] = marginal_transport_estimate(fin2, gp2, method=config.estimator).value
        except Exception as exc:  # recorded per row; the grid keeps going
            row["status"] = f"failed: {exc}"
            return row
        try:
            bound = applicable_bound(config, act, k, expansion)
            row.update(bound_theorem=bound.theorem, bound=bound.value, log_bound=bound.log_value,
                       below_bound=bool(est.value <= bound.value))
        except ValueError as exc:
            row["bound_theorem"] = f"n/a: {exc}"
        row["status"] = "ok"
        return row

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            rows = list(pool.map(one_row, config.k_grid))
    else:
        rows = [one_row(k) for k in config.k_grid]

    ok = [(r["k"], r["estimate"]) for r in rows if r["status"] == "ok" and r["estimate"] > 0]
    notes = []
    fit = None
    if len(ok) >= 4:
        fit = fit_loglog_slope(ok)
    else:
        notes.append(f"fit skipped: only {len(ok)} usable grid points")
    return RateResult(rows, fit, config, K.jitter, notes)


def write_rate_outputs(result: RateResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    stamp = result.config.stamp()
    paths = [write_csv(out / "rate.csv", result.rows, RATE_COLUMNS, stamp)]
    fit = result.fit._asdict() if result.fit else None
    paths.append(write_json(out / "rate_fit.json", {"fit": fit, "notes": result.notes, **stamp}))
    paths.append(write_json(out / "config.json", result.config.to_dict()))
    return paths


# -- bound audit -------------------------------------------------------------------


AUDIT_COLUMNS = ("bound_name", "lhs", "rhs", "pass", "asserted", "notes")


@dataclass
class AuditRow:
    """One inequality ``lhs <= rhs`` at one parameter point."""

    bound_name: str
    lhs: float
    rhs: float
    passed: bool
    asserted: bool
    notes: str = ""

    def as_row(self) -> dict:
        return {"bound_name": self.bound_name, "lhs": self.lhs, "rhs": self.rhs,
                "pass": self.passed, "asserted": self.asserted, "notes": self.notes}


@dataclass
class AuditReport:
    rows: list[AuditRow]

    @property
    def failed_asserted(self) -> list[AuditRow]:
        return [r for r in self.rows if r.asserted and not r.passed]

    @property
    def exit_code(self) -> int:
        return 1 if self.failed_asserted else 0


def _le(name: str, lhs: float, rhs: float, asserted: bool = True, notes: str = "") -> AuditRow:
    # relative slack absorbs rounding when a bound is attained with equality
    ok = lhs <= rhs + 1e-12 * max(1.0, abs(rhs))
    return AuditRow(name, float(lhs), float(rhs), bool(ok), asserted, notes)


def _guard(name: str, fn) -> list[AuditRow]:
    try:
        out = fn()
        return out if isinstance(out, list) else [out]
    except (ValueError, MemoryError) as exc:
        return [AuditRow(name, math.nan, math.nan, False, False, f"skipped: {exc}")]


def kernel_identity_error(poly, n: int, pairs: int, seed: int) -> float:
    """Largest ``|Q(P(x), P(y)) - p(x . y)|`` over random unit pairs."""
    a = ft.poly_coeffs(poly)
    basis = ft.FeatureBasis.for_polynomial(n, a)
    X = sphere_sample(n, 2 * pairs, seed)
    F = ft.embed_points(X, a, basis)
    sg = basis.signs(a)
    q = np.einsum("ij,j,ij->i", F[:pairs], sg, F[pairs:])
    t = np.einsum("ij,ij->i", X[:pairs], X[pairs:])
    return float(np.max(np.abs(q - np.polynomial.polynomial.polyval(t, a))))


def sigma_audit_rows(poly, n: int, seed: int, trials: int = 500) -> list[AuditRow]:
    """Checks tied to a single feature polynomial: kernel identity, opnorm bounds, variance floor."""
    a = ft.poly_coeffs(poly)
    d = len(a) - 1
    label = ",".join(repr(float(x)) for x in a)
    rows = _guard(f"kernel_identity[n={n}]", lambda: _le(
        f"kernel_identity[n={n}]", kernel_identity_error(a, n, 200, seed), 1e-10,
        notes="max |Q(P(x),P(y)) - p(x.y)| over 200 unit pairs"))

    def opnorm_rows():
        cov = ft.covariance_analytic(a, n)
        op = float(np.linalg.eigvalsh(cov.matrix)[-1]) if cov.matrix.size else 0.0
        out = [_le(f"sigma_opnorm[n={n},d={d}]", op, ft.sigma_upper_bound_rhs(max(d, 1), n, float(np.max(np.abs(a)))),
                   notes=f"||Cov P(w)||_op <= (4d)! max|a_m| n^((d-1)/2); p=({label})")]
        if d == 2 and np.allclose(a, [0, 0, 1]):
            out.append(_le(f"quadratic_opnorm[n={n}]", op, 3.0, notes="p(x)=x^2"))
        return out

    rows += _guard(f"sigma_opnorm[n={n},d={d}]", opnorm_rows)
    if d >= 1 and np.count_nonzero(a) == 1 and a[d] != 0:
        def lambda_min_row():
            cov = ft.covariance_analytic(a, n)
            lam = float(np.linalg.eigvalsh(cov.matrix)[0])
            return _le(f"sigma_lambda_min[n={n},d={d}]", 1.0 / math.factorial(d) / abs(a[d]), lam / abs(a[d]),
                       asserted=False, notes="1/d! <= lambda_min of the multinomial-weighted Sigma (basis-dependent)")

        rows += _guard(f"sigma_lambda_min[n={n},d={d}]", lambda_min_row)
        rows += _guard(f"variance_floor[n={n},d={d}]", lambda: _le(
            f"variance_floor[n={n},d={d}]", 1.0 / math.factorial(d),
            ft.min_homogeneous_variance(n, d, trials, seed),
            notes=f"1/d! <= min Var(q(w)) over {trials} unit degree-d forms"))
    return rows


def _relu_rows(quad_order: int) -> list[AuditRow]:
    exp = hermite_expansion(Activation.relu(), 50, max(quad_order, 102))
    rows = [_le(f"relu_remainder[d={d}]", remainder(exp, d), 1.0 / d**2, notes="R(d) <= 1/d^2")
            for d in range(2, 31)]
    ms = np.arange(1, 51)
    decay = np.abs(exp.coefficients[1:51]) * ms**1.5
    rows.append(_le("relu_coefficient_decay[m<=50]", float(np.max(decay)), 1.0,
                    notes=f"max_m |c_m| m^(3/2); worst at m={int(ms[np.argmax(decay)])}"))
    for d in (2, 4, 8):
        a = hermite_to_monomial(exp.coefficients[: d + 1], d)
        maxc = float(np.max(np.abs(exp.coefficients[: d + 1])))
        worst = max(abs(a[m]) / coefficient_bound_rhs(d, m, maxc) for m in range(d + 1))
        rows.append(_le(f"monomial_coefficient_bound[relu,d={d}]", worst, 1.0,
                        notes="max_m |a_m| / (2 max|c| 2^d / sqrt(m!))"))
    return rows


def _tanh_rows() -> list[AuditRow]:
    fit = tanh_decay_fit()
    return [AuditRow("tanh_sqrt_decay_fit", fit.r_squared, 0.95, fit.r_squared >= 0.95, False,
                     f"r^2 of log|c_m| ~ b - C sqrt(m), odd m <= 40 (lhs is r^2, passes when >= rhs); "
                     f"C={fit.rate!r}")]


def _variance_method_rows(seed: int, count: int = 20) -> list[AuditRow]:
    rng = np.random.default_rng([seed, 31])
    worst = 0.0
    for _ in range(count):
        n, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        coeffs = {}
        for _ in range(int(rng.integers(1, 6))):
            I = tuple(int(x) for x in rng.multinomial(int(rng.integers(0, d + 1)), [1 / n] * n))
            coeffs[I] = coeffs.get(I, 0.0) + float(rng.standard_normal())
        v1 = ft.polynomial_variance_moments(coeffs)
        v2 = ft.polynomial_variance_derivative_expansion(coeffs)
        worst = max(worst, abs(v1 - v2) / max(abs(v1), 1e-300))
    return [_le("variance_methods_agree", worst, 1e-9, notes=f"relative gap over {count} random polynomials")]


def _sharpness_rows() -> list[AuditRow]:
    rows = []
    ns = np.arange(4, 13)
    for ell in (2, 3):
        var = [ft.polynomial_variance_moments(ft.sharpness_polynomial(int(n), ell)) for n in ns]
        fit = fit_loglog_slope(zip(ns, var))
        rows.append(_le(f"sharpness_slope[ell={ell}]", abs(fit.slope - (ell - 1)), 0.1, asserted=False,
                        notes=f"|slope - (ell-1)| for n in 4..12; slope={fit.slope!r}"))
    return rows


def run_bound_audit(config: ExperimentConfig) -> AuditReport:
    """Evaluate every checkable inequality; only literal ones are asserted."""
    seed = config.require_seed()
    rows: list[AuditRow] = []
    rows += sigma_audit_rows(config.poly, config.n, seed, config.audit_trials)
    for n in (2, 4, 8):
        rows += _guard(f"quadratic_opnorm[n={n}]", lambda n=n: _le(
            f"quadratic_opnorm[n={n}]", ft.quadratic_opnorm_audit(n), 3.0, notes="p(x)=x^2"))
    for d in range(1, 5):
        for n in range(1, 6):
            rows += _guard(f"variance_floor[n={n},d={d}]", lambda n=n, d=d: _le(
                f"variance_floor[n={n},d={d}]", 1.0 / math.factorial(d),
                ft.min_homogeneous_variance(n, d, config.audit_trials, derived_seed(seed, 7, n, d)),
                notes="1/d! <= min Var(q(w)) over random unit degree-d forms"))
    rows += _variance_method_rows(seed)
    rows += _guard("relu", lambda: _relu_rows(config.quad_order))
    rows += _guard("tanh_sqrt_decay_fit", _tanh_rows)
    rows += _guard("sharpness", _sharpness_rows)
    return AuditReport(rows)


def write_audit_outputs(report: AuditReport, config: ExperimentConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    return [
        write_csv(out / "audit.csv", [r.as_row() for r in report.rows], AUDIT_COLUMNS, config.stamp()),
        write_json(out / "config.json", config.to_dict()),
    ]


# -- coefficient table ----------------------------------------------------------------


TABLE_COLUMNS = ("m", "quadrature", "closed_form", "ratio", "remainder")


def run_coefficient_table(activation: Activation | str, dmax: int, quad_order: int = 128) -> list[dict]:
    """Per-degree quadrature coefficient, ReLU closed form, their ratio and the tail energy.

    ``ratio`` is ``closed_form / |quadrature|`` where both are nonzero; the
    closed form is only defined for ReLU at ``m >= 1``.
    """
    act = Activation.parse(activation) if isinstance(activation, str) else activation
    if not 0 <= dmax <= MAX_TABLE_DEGREE:
        raise ValueError(f"dmax must be in [0, {MAX_TABLE_DEGREE}]")
    exp = hermite_expansion(act, dmax, quad_order)
    rows = []
    for m in range(dmax + 1):
        q = float(exp.coefficients[m])
        closed = relu_coefficient_closed_form(m) if act.kind == "relu" and m >= 1 else None
        ratio = None
        if closed is not None and closed != 0.0 and abs(q) > 1e-13:
            ratio = closed / abs(q)
        rows.append({"m": m, "quadrature": q, "closed_form": closed, "ratio": ratio,
                     "remainder": remainder(exp, m)})
    return rows
