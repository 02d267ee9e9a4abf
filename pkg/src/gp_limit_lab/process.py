"""Finite-width random networks on the sphere and their Gaussian limit.

Randomness is keyed by ``(seed, stream, counter)`` tuples fed to
``numpy.random.default_rng``; replica ``i`` always sees the same stream no
matter how replicas are batched or ordered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .features import FeatureBasis, embed_points, poly_coeffs
from .hermite import Activation, HermiteExpansion, remainder

STREAM_POINTS = 1
STREAM_NETWORK = 2
STREAM_GP = 3

MAX_JITTER_STEPS = 6


def rep_rng(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(counter)])


@dataclass
class NetworkDraw:
    """One draw of the hidden layer: Gaussian rows ``w_i`` and fair signs ``s_i``."""

    weights: np.ndarray
    signs: np.ndarray
    seed: int | None = None

    @property
    def width(self) -> int:
        return self.weights.shape[0]


class MCEstimate(NamedTuple):
    value: float
    stderr: float


@dataclass
class ProcessMarginalSample:
    """``reps x m`` table of process values at fixed sphere points."""

    values: np.ndarray
    points: np.ndarray
    k: int | None = None
    activation: str = "gaussian_process"
    seed: int | None = None

    @property
    def reps(self) -> int:
        return self.values.shape[0]


@dataclass
class KernelMatrix:
    matrix: np.ndarray
    remainder: float = 0.0
    jitter: float = 0.0
    degree: int | None = None
    meta: dict = field(default_factory=dict)


def check_unit(points, tol: float = 1e-10) -> np.ndarray:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("points must lie on the unit sphere")
    return X


def sphere_sample(n: int, m: int, seed: int) -> np.ndarray:
    """``m`` i.i.d. uniform points on the unit sphere in ``R^n``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    g = rep_rng(seed, STREAM_POINTS).standard_normal((m, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def draw_network(n: int, k: int, seed: int, rep: int = 0) -> NetworkDraw:
    rng = rep_rng(seed, STREAM_NETWORK, rep)
    weights = rng.standard_normal((k, n))
    signs = 2.0 * rng.integers(0, 2, size=k) - 1.0
    return NetworkDraw(weights, signs, seed)


def evaluate_network(draw: NetworkDraw, activation, points) -> np.ndarray:
    """``(1/sqrt(k)) sum_i s_i sigma(w_i . x)`` at each point."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    pre = draw.weights @ X.T
    return draw.signs @ activation(pre) / math.sqrt(draw.width)


def _draw_batch(n: int, k: int, seed: int, reps: range):
    W = np.empty((len(reps), k, n))
    S = np.empty((len(reps), k))
    for j, r in enumerate(reps):
        d = draw_network(n, k, seed, r)
        W[j], S[j] = d.weights, d.signs
    return W, S


def sample_marginal(k: int, activation, points, reps: int, seed: int, batch: int = 256) -> ProcessMarginalSample:
    """Evaluate ``reps`` independent networks of width ``k`` at ``points``."""
    if reps < 1:
        raise ValueError("reps must be positive")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((reps, X.shape[0]))
    for start in range(0, reps, batch):
        rr = range(start, min(reps, start + batch))
        W, S = _draw_batch(X.shape[1], k, seed, rr)
        out[start : start + len(rr)] = np.einsum("rk,rkm->rm", S, activation(W @ X.T)) / math.sqrt(k)
    name = activation.spec if isinstance(activation, Activation) else getattr(activation, "__name__", "custom")
    return ProcessMarginalSample(out, X, k, name, seed)


def nngp_kernel(expansion: HermiteExpansion, points) -> KernelMatrix:
    """Limiting covariance ``K(x, y) = sum_m c_m^2 (x . y)^m`` at unit points."""
    X = check_unit(points)
    rho = np.clip(X @ X.T, -1.0, 1.0)
    c2 = np.asarray(expansion.coefficients, dtype=float) ** 2
    K = np.polynomial.polynomial.polyval(rho, c2)
    K = 0.5 * (K + K.T)
    return KernelMatrix(K, remainder(expansion, expansion.max_degree), degree=expansion.max_degree)


def _factor(K: np.ndarray, jitter: float | None):
    m = K.shape[0]
    base = 1e-12 * float(np.trace(K)) / m if jitter is None else float(jitter)
    tries = [0.0] if jitter is None else []
    tries += [base * 10.0**i for i in range(MAX_JITTER_STEPS + 1)]
    last = None
    for j in tries:
        try:
            return np.linalg.cholesky(K + j * np.eye(m)), j
        except np.linalg.LinAlgError as exc:
            last = exc
    raise np.linalg.LinAlgError(f"kernel not factorizable up to jitter {tries[-1]:.3g}") from last


def sample_gp_marginal(
    K, reps: int, seed: int, jitter: float | None = None, points=None
) -> ProcessMarginalSample:
    """Draw ``reps`` samples of ``N(0, K)``.

    Cholesky is tried on ``K`` itself first; on failure the diagonal jitter
    starts at ``1e-12 trace(K)/m`` and grows tenfold at most six times.
    """
    km = K.matrix if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    m = km.shape[0]
    z = rep_rng(seed, STREAM_GP).standard_normal((reps, m))
    pts = np.empty((m, 0)) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    if not np.any(km):
        return ProcessMarginalSample(np.zeros((reps, m)), pts, seed=seed)
    L, used = _factor(km, jitter)
    if isinstance(K, KernelMatrix):
        K.jitter = used
    return ProcessMarginalSample(z @ L.T, pts, seed=seed)


def coupled_l2_discrepancy(f, g, k: int, points, reps: int, seed: int, batch: int = 256) -> MCEstimate:
    """Mean squared gap between ``P_k f`` and ``P_k g`` under shared weights and signs.

    Averaged over the points and over ``reps`` network draws; the exact
    expectation is ``int (f - g)^2 dgamma`` for any ``k``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    per_rep = np.empty(reps)
    for start in range(0, reps, batch):
        rr = range(start, min(reps, start + batch))
        W, S = _draw_batch(X.shape[1], k, seed, rr)
        pre = W @ X.T
        diff = np.einsum("rk,rkm->rm", S, f(pre) - g(pre)) / math.sqrt(k)
        per_rep[start : start + len(rr)] = np.mean(diff**2, axis=1)
    return MCEstimate(float(per_rep.mean()), float(per_rep.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.inf)


def feature_sum(draw: NetworkDraw, poly, basis: FeatureBasis | None = None) -> np.ndarray:
    """``X_k = (1/sqrt(k)) sum_i s_i P(w_i)`` for a single draw."""
    if basis is None:
        basis = FeatureBasis.for_polynomial(draw.weights.shape[1], poly)
    return draw.signs @ embed_points(draw.weights, poly, basis) / math.sqrt(draw.width)


def feature_sum_sample(poly, n: int, k: int, reps: int, seed: int) -> np.ndarray:
    """``reps`` independent draws of ``X_k``; shape ``(reps, dim)``."""
    basis = FeatureBasis.for_polynomial(n, poly_coeffs(poly))
    out = np.empty((reps, basis.dim))
    for r in range(reps):
        out[r] = feature_sum(draw_network(n, k, seed, r), poly, basis)
    return out
