"""Hermite analysis of activation functions in L2 of the standard Gaussian.

All coefficients are taken against the normalized (probabilists') Hermite
polynomials ``h_m = He_m / sqrt(m!)``, which are orthonormal for the standard
Gaussian measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr, roots_legendre

__all__ = [
    "Activation",
    "HermiteExpansion",
    "DecayFit",
    "hermite_eval",
    "hermite_table",
    "hermite_coefficient",
    "hermite_expansion",
    "relu_coefficient_closed_form",
    "relu_coefficient_method",
    "remainder",
    "hermite_to_monomial",
    "monomial_to_hermite",
    "truncated_polynomial",
    "coefficient_bound_rhs",
    "tanh_decay_fit",
]

DEFAULT_QUAD_ORDER = 128

# Integration half-width for split rules. |h_m(x)| * phi(x) <= 1.09 exp(-x^2/4)
# for every m (Cramer's inequality), so the mass beyond 14 is below 1e-20.
_SPLIT_HALF_WIDTH = 14.0
_PANEL_LENGTH = 1.0


@dataclass(frozen=True)
class Activation:
    """A scalar activation function.

    ``kind`` is one of ``relu``, ``tanh``, ``polynomial`` or ``tabulated``.
    Polynomials carry monomial coefficients ``a_0..a_d``; tabulated
    activations carry a strictly increasing grid with values and are
    linearly interpolated inside the grid range.
    """

    kind: str
    coeffs: tuple[float, ...] = ()
    grid: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("relu", "tanh", "polynomial", "tabulated"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "polynomial":
            a = [float(c) for c in self.coeffs] or [0.0]
            while len(a) > 1 and a[-1] == 0.0:
                a.pop()
            if not all(math.isfinite(c) for c in a):
                raise ValueError("polynomial coefficients must be finite")
            object.__setattr__(self, "coeffs", tuple(a))
        if self.kind == "tabulated":
            g = np.asarray(self.grid, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if g.ndim != 1 or g.shape != v.shape or g.size < 2:
                raise ValueError("tabulated activation needs matching 1-D grid and values")
            if np.any(np.diff(g) <= 0):
                raise ValueError("tabulated grid must be strictly increasing")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def tanh(cls) -> "Activation":
        return cls("tanh")

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "Activation":
        return cls("polynomial", coeffs=tuple(float(c) for c in coeffs))

    @classmethod
    def tabulated(cls, grid, values, tail_tol: float = 1e-12) -> "Activation":
        """Linear interpolant of ``values`` on ``grid``.

        The Gaussian mass outside the grid, weighted by the largest squared
        value, must stay below ``tail_tol``; otherwise the coefficients would
        silently depend on how the function is extended.
        """
        act = cls("tabulated", grid=tuple(map(float, grid)), values=tuple(map(float, values)))
        reach = min(-act.grid[0], act.grid[-1])
        if reach <= 0:
            raise ValueError("tabulated grid must contain 0 in its interior")
        tail = 2.0 * ndtr(-reach) * max(v * v for v in act.values)
        if tail > tail_tol:
            raise ValueError(
                f"grid range +-{reach:g} leaves Gaussian tail contribution {tail:.3g} > {tail_tol:g}"
            )
        return act

    @classmethod
    def parse(cls, spec: str) -> "Activation":
        """Parse ``relu``, ``tanh``, ``identity`` or ``poly:a0,a1,...``."""
        spec = spec.strip()
        if spec in ("relu", "tanh"):
            return cls(spec)
        if spec == "identity":
            return cls.polynomial([0.0, 1.0])
        if spec.startswith("poly:"):
            body = spec[5:]
            return cls.polynomial([float(t) for t in body.split(",") if t.strip()])
        raise ValueError(f"cannot parse activation {spec!r}")

    @property
    def spec(self) -> str:
        if self.kind == "polynomial":
            return "poly:" + ",".join(repr(c) for c in self.coeffs)
        if self.kind == "tabulated":
            return f"tabulated[{len(self.grid)}]"
        return self.kind

    @property
    def degree(self) -> int | None:
        return len(self.coeffs) - 1 if self.kind == "polynomial" else None

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Points where the activation fails to be smooth."""
        if self.kind == "relu":
            return (0.0,)
        if self.kind == "tabulated":
            return self.grid
        return ()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "tanh":
            return np.tanh(x)
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(x, self.coeffs)
        return np.interp(x, self.grid, self.values)


@dataclass
class HermiteExpansion:
    """Coefficients ``c_0..c_D`` of an activation in the normalized Hermite basis."""

    coefficients: np.ndarray
    l2_norm_sq: float
    quad_order: int
    method: str = "gauss_hermite"
    activation: str = ""

    @property
    def max_degree(self) -> int:
        return len(self.coefficients) - 1

    def partial_energy(self) -> np.ndarray:
        """Running sums of squared coefficients."""
        return np.cumsum(np.asarray(self.coefficients) ** 2)

    def check(self, tol: float = 1e-9) -> None:
        """Raise if Parseval's inequality is violated beyond ``tol``."""
        total = float(np.sum(np.asarray(self.coefficients) ** 2))
        if total > self.l2_norm_sq + tol:
            raise ValueError(f"Parseval violated: {total} > {self.l2_norm_sq}")


class DecayFit(NamedTuple):
    rate: float
    intercept: float
    residual: float
    r_squared: float


def hermite_eval(m: int, x):
    """Normalized Hermite polynomial ``h_m`` at ``x``.

    Uses ``h_{j+1} = (x h_j - sqrt(j) h_{j-1}) / sqrt(j+1)``.
    """
    if m < 0:
        raise ValueError("degree must be nonnegative")
    out = hermite_table(m, x)[m]
    return float(out) if np.ndim(x) == 0 else out


def hermite_table(max_degree: int, x) -> np.ndarray:
    """Values ``h_0(x)..h_D(x)`` stacked along the first axis."""
    x = np.asarray(x, dtype=float)
    table = np.empty((max_degree + 1,) + x.shape)
    table[0] = 1.0
    if max_degree >= 1:
        table[1] = x
    for j in range(1, max_degree):
        table[j + 1] = (x * table[j] - math.sqrt(j) * table[j - 1]) / math.sqrt(j + 1)
    return table


@lru_cache(maxsize=32)
def _gauss_hermite_rule(order: int):
    x, w = hermegauss(order)
    return x, w / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=32)
def _split_rule(breakpoints: tuple[float, ...], order: int):
    # Gauss-Legendre panels between kinks; the Gaussian density is folded
    # into the weights.
    inner = [b for b in breakpoints if -_SPLIT_HALF_WIDTH < b < _SPLIT_HALF_WIDTH]
    edges = sorted(set([-_SPLIT_HALF_WIDTH, *inner, _SPLIT_HALF_WIDTH]))
    t, wt = roots_legendre(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        panels = max(1, math.ceil((hi - lo) / _PANEL_LENGTH))
        cuts = np.linspace(lo, hi, panels + 1)
        for a, b in zip(cuts[:-1], cuts[1:]):
            half = 0.5 * (b - a)
            xs = a + half * (t + 1.0)
            nodes.append(xs)
            weights.append(half * wt * np.exp(-0.5 * xs * xs) / math.sqrt(2.0 * math.pi))
    return np.concatenate(nodes), np.concatenate(weights)


def _rule(activation: Activation, quad_order: int):
    if activation.breakpoints:
        x, w = _split_rule(activation.breakpoints, quad_order)
        return x, w, "gauss_legendre_split"
    x, w = _gauss_hermite_rule(quad_order)
    return x, w, "gauss_hermite"


def _check_order(m: int, quad_order: int) -> None:
    if quad_order < 2 * m + 2:
        raise ValueError(f"quad_order={quad_order} too small for degree {m}; need >= {2 * m + 2}")


def hermite_expansion(
    activation: Activation, max_degree: int, quad_order: int = DEFAULT_QUAD_ORDER
) -> HermiteExpansion:
    """Coefficients ``c_0..c_D`` and squared L2 norm of ``activation``.

    Smooth activations use Gauss-Hermite quadrature with ``quad_order``
    nodes. Activations with kinks are integrated piecewise with
    ``quad_order`` Gauss-Legendre nodes per unit panel, split at the kinks;
    plain Gauss-Hermite converges only algebraically there.
    """
    _check_order(max_degree, quad_order)
    x, w, method = _rule(activation, quad_order)
    fx = activation(x)
    coefs = hermite_table(max_degree, x) @ (w * fx)
    return HermiteExpansion(
        coefficients=coefs,
        l2_norm_sq=float(np.sum(w * fx * fx)),
        quad_order=quad_order,
        method=method,
        activation=activation.spec,
    )


def hermite_coefficient(activation: Activation, m: int, quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    """Quadrature approximation of the ``m``-th normalized Hermite coefficient."""
    _check_order(m, quad_order)
    x, w, _ = _rule(activation, quad_order)
    return float(np.sum(w * activation(x) * hermite_eval(m, x)))


def _log_double_factorial(k: int) -> float:
    # (-1)!! = 0!! = 1
    if k <= 0:
        return 0.0
    if k % 2:
        j = (k + 1) // 2
        return math.lgamma(2 * j + 1) - j * math.log(2.0) - math.lgamma(j + 1)
    j = k // 2
    return j * math.log(2.0) + math.lgamma(j + 1)


def relu_coefficient_method(m: int) -> str:
    """Provenance of :func:`relu_coefficient_closed_form` at degree ``m``."""
    return "quadrature" if m == 0 else "closed_form"


def relu_coefficient_closed_form(m: int) -> float:
    """The printed closed form for ``|c_m|`` of ReLU.

    ``1/sqrt(2)`` at m=1, zero at odd m>1 and ``(m-3)!!/(sqrt(pi) sqrt(m!))``
    at even m>=2. The m=0 case has no meaningful closed form (it would need
    ``(-3)!!``) and is routed to quadrature. Note that this formula is larger
    than the true coefficients by a uniform factor sqrt(2); see
    ``harness.run_coefficient_table`` for the side-by-side audit.
    """
    if m < 0:
        raise ValueError("degree must be nonnegative")
    if m == 0:
        return hermite_coefficient(Activation.relu(), 0)
    if m == 1:
        return 1.0 / math.sqrt(2.0)
    if m % 2:
        return 0.0
    log_val = _log_double_factorial(m - 3) - 0.5 * math.log(math.pi) - 0.5 * math.lgamma(m + 1)
    return math.exp(log_val)


def remainder(expansion: HermiteExpansion, d: int) -> float:
    """Tail energy ``||sigma||^2 - sum_{m<=d} c_m^2``, clamped at zero."""
    if d > expansion.max_degree:
        raise ValueError(f"d={d} exceeds expansion degree {expansion.max_degree}")
    if d < 0:
        return expansion.l2_norm_sq
    head = math.fsum(float(c) ** 2 for c in expansion.coefficients[: d + 1])
    return max(0.0, expansion.l2_norm_sq - head)


def _sqrt_factorial(m: int) -> float:
    if m <= 170:
        return math.sqrt(math.factorial(m))
    return math.exp(0.5 * math.lgamma(m + 1))


def _hermite_monomial_weight(m: int, j: int) -> float:
    """Coefficient of ``x^(m-2j)`` in ``h_m``, without the sign."""
    if m <= 60:
        return float(Fraction(1, math.factorial(j) * math.factorial(m - 2 * j) * 2**j)) * _sqrt_factorial(m)
    return math.exp(
        0.5 * math.lgamma(m + 1) - math.lgamma(j + 1) - math.lgamma(m - 2 * j + 1) - j * math.log(2.0)
    )


def _monomial_hermite_weight(k: int, j: int) -> float:
    """Coefficient of ``h_{k-2j}`` in ``x^k``."""
    ell = k - 2 * j
    if k <= 60:
        return float(Fraction(math.factorial(k), math.factorial(j) * 2**j)) / _sqrt_factorial(ell)
    return math.exp(math.lgamma(k + 1) - math.lgamma(j + 1) - j * math.log(2.0) - 0.5 * math.lgamma(ell + 1))


def hermite_to_monomial(hermite_coeffs: Sequence[float], d: int | None = None) -> np.ndarray:
    """Monomial coefficients of ``sum_m c_m h_m``."""
    c = [float(v) for v in hermite_coeffs]
    if d is None:
        d = len(c) - 1
    if len(c) != d + 1:
        raise ValueError(f"expected {d + 1} Hermite coefficients, got {len(c)}")
    terms: list[list[float]] = [[] for _ in range(d + 1)]
    for m, cm in enumerate(c):
        if cm == 0.0:
            continue
        for j in range(m // 2 + 1):
            sign = -1.0 if j % 2 else 1.0
            terms[m - 2 * j].append(sign * cm * _hermite_monomial_weight(m, j))
    return np.array([math.fsum(t) for t in terms])


def monomial_to_hermite(a: Sequence[float]) -> np.ndarray:
    """Hermite coefficients of the polynomial ``sum_k a_k x^k``."""
    a = [float(v) for v in a]
    terms: list[list[float]] = [[] for _ in range(len(a))]
    for k, ak in enumerate(a):
        if ak == 0.0:
            continue
        for j in range(k // 2 + 1):
            terms[k - 2 * j].append(ak * _monomial_hermite_weight(k, j))
    return np.array([math.fsum(t) for t in terms])


def truncated_polynomial(activation: Activation, d: int, quad_order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    """Monomial coefficients of the degree-``d`` Hermite truncation of ``activation``.

    The constant term is kept, so ``||sigma - p_d||^2`` equals the remainder
    after degree ``d``.
    """
    exp = hermite_expansion(activation, d, quad_order)
    return hermite_to_monomial(exp.coefficients, d)


def coefficient_bound_rhs(d: int, m: int, max_hermite_coef: float) -> float:
    """Upper bound ``max|c_i| * 2 / sqrt(m!) * 2^d`` on the monomial coefficient ``a_m``."""
    if not 0 <= m <= d:
        raise ValueError("need 0 <= m <= d")
    return max_hermite_coef * 2.0 / _sqrt_factorial(m) * 2.0**d


def tanh_decay_fit(max_m: int = 40, quad_order: int = 256, tol: float = 1e-15) -> DecayFit:
    """Fit ``log|c_m| ~ b - C sqrt(m)`` over the odd tanh coefficients.

    Even coefficients vanish by symmetry and are excluded, as is anything
    below ``tol`` in magnitude.
    """
    if max_m < 10:
        raise ValueError("max_m must be at least 10")
    exp = hermite_expansion(Activation.tanh(), max_m, quad_order)
    ms = np.arange(1, max_m + 1, 2)
    vals = np.abs(exp.coefficients[ms])
    keep = vals > tol
    if keep.sum() < 4:
        raise ValueError("fewer than 4 nonzero coefficients to fit")
    ms, y = ms[keep], np.log(vals[keep])
    design = np.column_stack([-np.sqrt(ms), np.ones(ms.size)])
    (rate, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([rate, intercept])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(rate), float(intercept), float(np.sqrt(np.mean(resid**2))), r2)
