"""Symmetric-tensor feature embedding of a polynomial activation.

For ``p(x) = sum_m a_m x^m`` the embedding ``P(x) = sum_m sqrt|a_m| x^{(x)m}``
lives in the direct sum of symmetric tensor powers. Each symmetric power is
stored in flattened form, one coordinate per multi-index ``I`` with
``|I| = m``, scaled by ``sqrt(m! / I!)`` so that flattened inner products
reproduce ``(x . y)^m`` exactly.

Only degrees with ``a_m != 0`` are materialized; the remaining levels would
hold identically zero coordinates.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .hermite import Activation

ENUMERATION_CAP = 2_000_000
DENSE_CAP = 4000

_STREAM_EMPIRICAL_COV = 11


def dense_cap() -> int:
    """Largest dense matrix side allowed; ``GPLL_MAX_DIM`` overrides."""
    env = os.environ.get("GPLL_MAX_DIM")
    return int(env) if env else DENSE_CAP


def poly_coeffs(poly) -> np.ndarray:
    """Monomial coefficients from an :class:`Activation`, a sequence or ``"a0,a1,..."``."""
    if isinstance(poly, str):
        poly = [float(t) for t in poly.removeprefix("poly:").split(",") if t.strip()]
    if isinstance(poly, Activation):
        if poly.kind != "polynomial":
            raise ValueError("a polynomial activation is required")
        return np.array(poly.coeffs, dtype=float)
    a = np.atleast_1d(np.asarray(poly, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise ValueError("polynomial coefficients must be a nonempty 1-D sequence")
    return a


def multi_indices(n: int, m: int, cap: int = ENUMERATION_CAP) -> list[tuple[int, ...]]:
    """All exponent vectors of length ``n`` summing to ``m``.

    Ordered with the first coordinate descending, e.g. ``(2, 3)`` gives
    ``(3,0), (2,1), (1,2), (0,3)``.
    """
    if n < 1 or m < 0:
        raise ValueError("need n >= 1 and m >= 0")
    count = math.comb(n + m - 1, m)
    if count > cap:
        raise ValueError(f"|MI_{n}({m})| = {count} exceeds cap {cap}")
    return list(_gen_indices(n, m))


def _gen_indices(n: int, m: int):
    if n == 1:
        yield (m,)
        return
    for first in range(m, -1, -1):
        for rest in _gen_indices(n - 1, m - first):
            yield (first,) + rest


def multinomial(I: Sequence[int]) -> int:
    """``|I|! / prod I_i!``."""
    out = math.factorial(sum(I))
    for k in I:
        out //= math.factorial(k)
    return out


@lru_cache(maxsize=64)
def _moment_table(max_power: int) -> np.ndarray:
    # E[w^k] for a standard Gaussian: (k-1)!! for even k, zero for odd k.
    out = np.zeros(max_power + 1)
    out[0] = 1.0
    for k in range(2, max_power + 1, 2):
        out[k] = out[k - 2] * (k - 1)
    return out


def gaussian_moment(I: Sequence[int]) -> float:
    """``E[w^I]`` for ``w`` standard Gaussian with independent coordinates."""
    out = 1
    for k in I:
        if k % 2:
            return 0.0
        for j in range(k - 1, 0, -2):
            out *= j
    return float(out)


def _moments(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E)
    if E.size == 0:
        return np.ones(E.shape[:-1])
    return np.prod(_moment_table(int(E.max()))[E], axis=-1)


@dataclass(frozen=True)
class FeatureBasis:
    """Flattened basis of ``sum_{m in levels} Sym((R^n)^{(x)m})``."""

    n: int
    levels: tuple[int, ...]

    @classmethod
    def for_polynomial(cls, n: int, poly) -> "FeatureBasis":
        a = poly_coeffs(poly)
        return cls(n, tuple(m for m, am in enumerate(a) if am != 0.0))

    @property
    def degree(self) -> int:
        return max(self.levels, default=0)

    @cached_property
    def index_list(self) -> list[tuple[int, ...]]:
        out: list[tuple[int, ...]] = []
        for m in self.levels:
            out.extend(multi_indices(self.n, m))
        return out

    @property
    def dim(self) -> int:
        return sum(math.comb(self.n + m - 1, m) for m in self.levels)

    @cached_property
    def exponents(self) -> np.ndarray:
        return np.array(self.index_list, dtype=np.int64).reshape(-1, self.n)

    @cached_property
    def level(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    @cached_property
    def multinomials(self) -> np.ndarray:
        return np.array([float(multinomial(I)) for I in self.index_list])

    def level_slice(self, m: int) -> slice:
        start = 0
        for lv in self.levels:
            size = math.comb(self.n + lv - 1, lv)
            if lv == m:
                return slice(start, start + size)
            start += size
        raise KeyError(m)

    def scales(self, poly) -> np.ndarray:
        """Per-coordinate factors ``sqrt(|a_m| * multinomial(I))``."""
        a = poly_coeffs(poly)
        return np.sqrt(np.abs(a[self.level]) * self.multinomials)

    def signs(self, poly) -> np.ndarray:
        a = poly_coeffs(poly)
        return np.sign(a[self.level])


@dataclass
class FeatureVector:
    basis: FeatureBasis
    coords: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


def monomials(X, exponents: np.ndarray) -> np.ndarray:
    """``x^I`` for each row of ``X`` and each row ``I`` of ``exponents``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, n = X.shape
    dim = exponents.shape[0]
    if dim == 0:
        return np.zeros((N, 0))
    dmax = int(exponents.max())
    powers = X[:, :, None] ** np.arange(dmax + 1)
    out = np.empty((N, dim))
    chunk = max(1, 4_000_000 // max(1, dim * n))
    cols = np.arange(n)[None, :]
    for s in range(0, N, chunk):
        out[s : s + chunk] = np.prod(powers[s : s + chunk][:, cols, exponents], axis=2)
    return out


def embed_points(X, poly, basis: FeatureBasis | None = None) -> np.ndarray:
    """Feature coordinates ``P(x)`` for every row of ``X``; shape ``(N, dim)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if basis is None:
        basis = FeatureBasis.for_polynomial(X.shape[1], poly)
    if basis.dim > ENUMERATION_CAP:
        raise ValueError(f"feature dimension {basis.dim} exceeds cap")
    return monomials(X, basis.exponents) * basis.scales(poly)


def embed_point(x, poly) -> FeatureVector:
    x = np.asarray(x, dtype=float)
    basis = FeatureBasis.for_polynomial(x.size, poly)
    return FeatureVector(basis, embed_points(x[None, :], poly, basis)[0])


def q_form(u: FeatureVector, v: FeatureVector, poly) -> float:
    """Sign-weighted bilinear form ``sum_m sign(a_m) <pi_m u, pi_m v>``."""
    if u.basis != v.basis:
        raise ValueError("feature vectors live in different bases")
    return float(np.sum(u.basis.signs(poly) * u.coords * v.coords))


@dataclass
class CovarianceOperator:
    basis: FeatureBasis
    matrix: np.ndarray
    provenance: str = "analytic"
    samples: int | None = None
    seed: int | None = None


def _check_dense(basis: FeatureBasis) -> None:
    if basis.dim > dense_cap():
        raise ValueError(f"dim(H) = {basis.dim} exceeds dense cap {dense_cap()} (set GPLL_MAX_DIM)")


def covariance_analytic(poly, n: int, centered: bool = True) -> CovarianceOperator:
    """Exact ``Cov(P(w))`` for standard Gaussian ``w``.

    With ``centered=False`` this returns the second moment ``E[P(w) P(w)^T]``
    instead, which is the covariance of the sign-symmetrized sum ``X_k``.
    """
    basis = FeatureBasis.for_polynomial(n, poly)
    _check_dense(basis)
    E = basis.exponents
    c = basis.scales(poly)
    joint = _moments(E[:, None, :] + E[None, :, :])
    if centered:
        mu = _moments(E)
        joint = joint - np.outer(mu, mu)
    mat = c[:, None] * joint * c[None, :]
    return CovarianceOperator(basis, mat, "analytic" if centered else "analytic_second_moment")


def feature_mean(poly, n: int) -> np.ndarray:
    basis = FeatureBasis.for_polynomial(n, poly)
    return _moments(basis.exponents) * basis.scales(poly)


def covariance_empirical(poly, n: int, samples: int, seed: int, block_size: int = 4096) -> CovarianceOperator:
    """Unbiased sample covariance of ``P(w)`` over ``samples`` Gaussian draws.

    Blocks draw from generators keyed by ``(seed, block)`` and are merged in
    block order, so the result does not depend on how blocks are scheduled.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    basis = FeatureBasis.for_polynomial(n, poly)
    _check_dense(basis)
    count, mean, m2 = 0, np.zeros(basis.dim), np.zeros((basis.dim, basis.dim))
    for b, start in enumerate(range(0, samples, block_size)):
        size = min(block_size, samples - start)
        rng = np.random.default_rng([seed, _STREAM_EMPIRICAL_COV, b])
        F = embed_points(rng.standard_normal((size, n)), poly, basis)
        bmean = F.mean(axis=0)
        centred = F - bmean
        bm2 = centred.T @ centred
        delta = bmean - mean
        total = count + size
        mean = mean + delta * (size / total)
        m2 = m2 + bm2 + np.outer(delta, delta) * (count * size / total)
        count = total
    return CovarianceOperator(basis, m2 / (count - 1), "empirical", samples, seed)


def _coeff_arrays(coeffs: Mapping[tuple[int, ...], float]):
    keys = list(coeffs)
    if not keys:
        return np.zeros((0, 1), dtype=np.int64), np.zeros(0)
    E = np.array(keys, dtype=np.int64)
    v = np.array([float(coeffs[k]) for k in keys])
    return E, v


def polynomial_variance_moments(coeffs: Mapping[tuple[int, ...], float]) -> float:
    """``Var(q(w))`` for ``q(x) = sum_I v_I x^I`` by expanding ``E[q^2]``."""
    E, v = _coeff_arrays(coeffs)
    if v.size == 0:
        return 0.0
    mean = float(_moments(E) @ v)
    second = float(v @ _moments(E[:, None, :] + E[None, :, :]) @ v)
    return second - mean * mean


def polynomial_variance_derivative_expansion(coeffs: Mapping[tuple[int, ...], float]) -> float:
    """``Var(q(w)) = sum_{m>=1} ||E[grad^m q(w)]||^2 / m!``.

    The full tensor ``E[grad^m q]`` repeats the entry for each multi-index
    ``J`` exactly ``m!/J!`` times, so the sum collapses to
    ``sum_J (E[d^J q(w)])^2 / J!``.
    """
    E, v = _coeff_arrays(coeffs)
    if v.size == 0:
        return 0.0
    n = E.shape[1]
    d = int(E.sum(axis=1).max())
    if d == 0:
        return 0.0
    fact = np.array([math.factorial(k) for k in range(d + 1)], dtype=float)
    total = []
    for m in range(1, d + 1):
        J = np.array(multi_indices(n, m), dtype=np.int64)
        D = E[None, :, :] - J[:, None, :]
        ok = np.all(D >= 0, axis=2)
        Dc = np.where(ok[:, :, None], D, 0)
        falling = np.prod(fact[E][None, :, :] / fact[Dc], axis=2)
        grad_mean = (np.where(ok, falling * _moments(Dc), 0.0)) @ v
        total.append(np.sum(grad_mean**2 / np.prod(fact[J], axis=1)))
    return float(math.fsum(total))


class Spectrum(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


def spectrum(cov) -> Spectrum:
    """Eigenvalues in descending order with orthonormal eigenvector columns.

    Each eigenvector is signed so its first non-negligible entry is positive.
    """
    mat = cov.matrix if isinstance(cov, CovarianceOperator) else np.asarray(cov, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("square matrix required")
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12)
        if lead.size and col[lead[0]] < 0:
            vecs[:, j] = -col
    return Spectrum(vals, vecs)


@dataclass
class SpectralSplit:
    """Eigenpairs kept (above ``threshold``) and discarded (at or below it)."""

    threshold: float
    kept_values: np.ndarray
    kept_vectors: np.ndarray
    discarded_values: np.ndarray
    discarded_vectors: np.ndarray
    penalty: float

    @property
    def kept_projector(self) -> np.ndarray:
        return self.kept_vectors @ self.kept_vectors.T

    @property
    def discarded_projector(self) -> np.ndarray:
        return self.discarded_vectors @ self.discarded_vectors.T


def truncate_spectrum(cov, delta: float, n: int | None = None, d: int | None = None) -> SpectralSplit:
    """Split the spectrum at ``delta`` and report the additive cost ``8 n^d delta``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if isinstance(cov, CovarianceOperator):
        n = cov.basis.n if n is None else n
        d = cov.basis.degree if d is None else d
    if n is None or d is None:
        raise ValueError("n and d are required for a bare matrix")
    vals, vecs = spectrum(cov)
    low = vals <= delta
    return SpectralSplit(
        threshold=delta,
        kept_values=vals[~low],
        kept_vectors=vecs[:, ~low],
        discarded_values=vals[low],
        discarded_vectors=vecs[:, low],
        penalty=8.0 * float(n) ** d * delta,
    )


def balanced_threshold(n: int, k: int, d: int, max_abs_coef: float, log: bool = False) -> float:
    """Cut-off ``((110d)! n^(2d-1/2) max|a_m|^3 / k)^(1/3)`` balancing the two error terms."""
    if max_abs_coef <= 0:
        return -math.inf if log else 0.0
    lv = (math.lgamma(110 * d + 1) + (2 * d - 0.5) * math.log(n) + 3 * math.log(max_abs_coef) - math.log(k)) / 3
    return lv if log else _safe_exp(lv)


def sigma_upper_bound_rhs(d: int, n: int, max_abs_coef: float, log: bool = False) -> float:
    """``(4d)! * max|a_m| * n^((d-1)/2)``, evaluated in log space."""
    if d < 1:
        raise ValueError("d must be at least 1")
    if max_abs_coef <= 0:
        return -math.inf if log else 0.0
    lv = math.lgamma(4 * d + 1) + math.log(max_abs_coef) + 0.5 * (d - 1) * math.log(n)
    return lv if log else _safe_exp(lv)


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def sharpness_polynomial(n: int, ell: int, max_terms: int = 10**7) -> dict[tuple[int, ...], float]:
    """Coefficients of ``n^(-ell/2) sum_{i_1..i_ell} x_{i_1} x_{i_2}^2 ... x_{i_ell}^2``.

    The sum runs over all ``n^ell`` ordered index tuples.
    """
    if n < 1 or ell < 1:
        raise ValueError("need n >= 1 and ell >= 1")
    if n**ell > max_terms:
        raise ValueError(f"{n}^{ell} terms exceeds cap {max_terms}")
    scale = n ** (-ell / 2)
    out: dict[tuple[int, ...], float] = {}
    for tup in itertools.product(range(n), repeat=ell):
        e = [0] * n
        e[tup[0]] += 1
        for i in tup[1:]:
            e[i] += 2
        key = tuple(e)
        out[key] = out.get(key, 0.0) + scale
    return out


def homogeneous_monomial_covariance(n: int, d: int) -> np.ndarray:
    """``Cov(w^I, w^J)`` over ``|I| = |J| = d`` in the unweighted monomial basis."""
    E = np.array(multi_indices(n, d), dtype=np.int64)
    if E.shape[0] > dense_cap():
        raise ValueError("homogeneous block exceeds dense cap")
    mu = _moments(E)
    return _moments(E[:, None, :] + E[None, :, :]) - np.outer(mu, mu)


def min_homogeneous_variance(n: int, d: int, trials: int, seed: int) -> float:
    """Smallest ``Var(q(w))`` over random unit coefficient vectors of degree-``d`` forms."""
    M = homogeneous_monomial_covariance(n, d)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((trials, M.shape[0]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return float(np.min(np.einsum("ti,ij,tj->t", V, M, V)))


def quadratic_opnorm_audit(n: int) -> float:
    """``||Cov(P(w))||_op`` for ``p(x) = x^2`` in dimension ``n``."""
    cov = covariance_analytic([0.0, 0.0, 1.0], n)
    return float(np.linalg.eigvalsh(cov.matrix)[-1])
