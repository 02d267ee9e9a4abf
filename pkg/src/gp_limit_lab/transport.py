"""Squared 2-Wasserstein estimators and evaluators for the rate bounds.

Every estimate reports the squared distance. ``normalization="per_point"``
divides the squared Euclidean cost by the number of coordinates, which turns
a distance between ``m``-point marginals into a Monte Carlo average over the
sphere points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .process import MCEstimate, ProcessMarginalSample, rep_rng

log = logging.getLogger(__name__)

ASSIGNMENT_CAP = 2048
STREAM_BOOTSTRAP = 21
DEFAULT_EPS_FACTOR = 0.05


@dataclass
class TransportEstimate:
    value: float
    estimator: str
    ci_low: float
    ci_high: float
    normalization: str = "raw"
    squared: bool = True
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _point_estimate(value: float, estimator: str, normalization: str, **details) -> TransportEstimate:
    return TransportEstimate(value, estimator, value, value, normalization, True, details)


def _as_table(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("expected an N x m table with N >= 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("sample contains non-finite entries")
    return X


def _scale(normalization: str, m: int) -> float:
    if normalization == "raw":
        return 1.0
    if normalization == "per_point":
        return 1.0 / m
    raise ValueError(f"unknown normalization {normalization!r}")


def sq_cost(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances (from coordinate differences, so ties are exact)."""
    return cdist(A, B, "sqeuclidean")


def w2_1d(a, b) -> TransportEstimate:
    """Exact squared W2 between equal-size 1-D samples via the monotone coupling."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size != b.size:
        raise ValueError("samples must have equal length")
    return _point_estimate(float(np.mean((a - b) ** 2)), "sorted_1d", "raw")


def w2_exact(A, B, normalization: str = "raw") -> TransportEstimate:
    """Exact squared W2 between equal-weight clouds by optimal assignment."""
    A, B = _as_table(A), _as_table(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    if A.shape[0] > ASSIGNMENT_CAP:
        raise ValueError(f"N={A.shape[0]} exceeds assignment cap {ASSIGNMENT_CAP}; use sinkhorn_divergence")
    C = sq_cost(A, B)
    rows, cols = linear_sum_assignment(C)
    value = math.fsum(C[rows, cols]) / A.shape[0] * _scale(normalization, A.shape[1])
    return _point_estimate(value, "assignment", normalization)


def _entropic_ot(
    C: np.ndarray, eps: float, max_iters: int, tol: float, symmetric: bool = False, check_every: int = 10
):
    """Dual value of uniform-weight entropic OT, with final marginal violation.

    Anneals eps by halving from the largest cost, warm-starting the dual
    potentials, then iterates at the target eps until the row marginals are
    within ``tol`` in l1. Iterations run on a kernel stabilized by the current
    potentials; scalings are absorbed into the potentials whenever they drift
    far from 1. The self-transport case uses the averaged symmetric update,
    which converges much faster.
    """
    N, M = C.shape
    a, b = np.full(N, 1.0 / N), np.full(M, 1.0 / M)
    f, g = np.zeros(N), np.zeros(M)
    stages = []
    e = float(C.max())
    while e > eps:
        stages.append((e, 10))
        e *= 0.5
    stages.append((eps, max_iters))
    viol, it = math.inf, 0
    for e, iters in stages:
        K = np.exp((f[:, None] + g[None, :] - C) / e) / (N * M)
        u, v = np.ones(N), np.ones(M)
        final = e == eps
        for it in range(1, iters + 1):
            if symmetric:
                u = np.sqrt(u * a / np.maximum(K @ u, 1e-300))
                v = u
            else:
                u = a / np.maximum(K @ v, 1e-300)
                v = b / np.maximum(K.T @ u, 1e-300)
            if final and (it % check_every == 0 or it == iters):
                viol = float(np.abs(u * (K @ v) - a).sum())
                if viol <= tol:
                    break
            if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > 200.0:
                f, g = f + e * np.log(u), g + e * np.log(v)
                K = np.exp((f[:, None] + g[None, :] - C) / e) / (N * M)
                u, v = np.ones(N), np.ones(M)
        f, g = f + e * np.log(u), g + e * np.log(v)
    return float(f.mean() + g.mean()), viol, it


def sinkhorn_divergence(
    A,
    B,
    eps: float | None = None,
    max_iters: int = 5000,
    tol: float = 1e-9,
    normalization: str = "raw",
) -> TransportEstimate:
    """Debiased entropic divergence ``OT(A,B) - OT(A,A)/2 - OT(B,B)/2``.

    ``eps`` defaults to 0.05 times the median pairwise cost between ``A`` and
    ``B``. Non-convergence is logged and reported in ``details``.
    """
    A, B = _as_table(A), _as_table(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    s = _scale(normalization, A.shape[1])
    Cab = sq_cost(A, B) * s
    if eps is None:
        eps = DEFAULT_EPS_FACTOR * float(np.median(Cab))
        if eps <= 0:
            eps = 1e-12
    if eps <= 0:
        raise ValueError("eps must be positive")
    ab, v1, i1 = _entropic_ot(Cab, eps, max_iters, tol)
    aa, v2, i2 = _entropic_ot(sq_cost(A, A) * s, eps, max_iters, tol, symmetric=True)
    bb, v3, i3 = _entropic_ot(sq_cost(B, B) * s, eps, max_iters, tol, symmetric=True)
    viol = max(v1, v2, v3)
    converged = viol <= tol
    if not converged:
        log.warning("sinkhorn stopped at marginal violation %.3g after %d iterations", viol, max(i1, i2, i3))
    value = max(0.0, ab - 0.5 * aa - 0.5 * bb)
    return _point_estimate(
        value,
        "sinkhorn",
        normalization,
        eps=float(eps),
        iterations=max(i1, i2, i3),
        violation=viol,
        converged=converged,
    )


def _psd_sqrt(C: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
    if vals.size and vals[0] < -1e-10 * max(1.0, abs(vals[-1])):
        raise ValueError(f"{what} is not positive semidefinite")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def w2_gaussian(mean1, cov1, mean2, cov2) -> TransportEstimate:
    """Closed-form squared W2 between two Gaussians (Bures formula)."""
    m1, m2 = np.atleast_1d(np.asarray(mean1, float)), np.atleast_1d(np.asarray(mean2, float))
    C1, C2 = np.atleast_2d(np.asarray(cov1, float)), np.atleast_2d(np.asarray(cov2, float))
    _psd_sqrt(C1, "cov1")
    r2 = _psd_sqrt(C2, "cov2")
    cross = np.linalg.eigvalsh(r2 @ C1 @ r2)
    value = float(np.sum((m1 - m2) ** 2) + np.trace(C1) + np.trace(C2) - 2.0 * np.sum(np.sqrt(np.clip(cross, 0, None))))
    return _point_estimate(max(0.0, value), "gaussian_closed_form", "raw")


def _w2_tables(A: np.ndarray, B: np.ndarray, method: str, normalization: str, eps: float | None) -> TransportEstimate:
    if A.shape[1] == 1 and A.shape[0] == B.shape[0] and method != "sinkhorn":
        est = w2_1d(A[:, 0], B[:, 0])
        est.normalization = normalization
        return est
    if method == "auto":
        method = "exact" if A.shape[0] == B.shape[0] and A.shape[0] <= ASSIGNMENT_CAP else "sinkhorn"
    if method == "exact":
        return w2_exact(A, B, normalization)
    if method == "sinkhorn":
        return sinkhorn_divergence(A, B, eps=eps, normalization=normalization)
    raise ValueError(f"unknown method {method!r}")


def marginal_transport_estimate(
    A: ProcessMarginalSample,
    B: ProcessMarginalSample,
    method: str = "auto",
    bootstrap: int = 0,
    seed: int = 0,
    eps: float | None = None,
    level: float = 0.95,
) -> TransportEstimate:
    """Squared W2 between two empirical ``m``-point marginals, cost ``|.|^2 / m``.

    This estimates a lower bound on the functional distance: any coupling of
    the processes induces one of the marginals. The bootstrap interval
    resamples the replicas of each side independently (basic bootstrap,
    clipped at zero and widened if needed to contain the point estimate).
    """
    if not _same_points(A.points, B.points):
        raise ValueError("samples were taken at different point sets")
    Xa, Xb = _as_table(A.values), _as_table(B.values)
    if Xa.shape[1] != Xb.shape[1]:
        raise ValueError("samples have different numbers of points")
    est = _w2_tables(Xa, Xb, method, "per_point", eps)
    if bootstrap > 0:
        reps = np.empty(bootstrap)
        for b in range(bootstrap):
            rng = rep_rng(seed, STREAM_BOOTSTRAP, b)
            ia = rng.integers(0, Xa.shape[0], Xa.shape[0])
            ib = rng.integers(0, Xb.shape[0], Xb.shape[0])
            reps[b] = _w2_tables(Xa[ia], Xb[ib], est.estimator if est.estimator != "assignment" else "exact",
                                 "per_point", est.details.get("eps", eps)).value
        alpha = 0.5 * (1.0 - level)
        q_lo, q_hi = np.quantile(reps, [alpha, 1.0 - alpha])
        # basic (reverse-percentile) interval: resampling with replacement
        # inflates empirical distances, and reflecting about the point
        # estimate cancels that shift to first order
        lo, hi = max(0.0, 2.0 * est.value - q_hi), max(0.0, 2.0 * est.value - q_lo)
        est.ci_low, est.ci_high = float(min(lo, est.value)), float(max(hi, est.value))
        est.details["bootstrap"] = bootstrap
    return est


def _same_points(P: np.ndarray, Q: np.ndarray) -> bool:
    P, Q = np.asarray(P), np.asarray(Q)
    if P.size == 0 or Q.size == 0:
        return True
    return P.shape == Q.shape and np.allclose(P, Q, rtol=0, atol=1e-12)


@dataclass
class BoundSpec:
    theorem: str
    params: dict
    C: float
    log_value: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value < 709 else math.inf

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "params": self.params, "C": self.C,
                "log_value": self.log_value, "value": self.value}


def _log_cd(d: int, C: float) -> float:
    # C_d = d^(C d)
    return C * d * math.log(d) if d > 1 else 0.0


def bound_theorem31(n: int, k: int, d: int, max_sq_coef: float, C: float = 1.0) -> BoundSpec:
    """``C_d max|a_m|^2 (n^(5d - 1/2) / k)^(1/3)`` with ``C_d = d^(C d)``."""
    if min(n, k, d) <= 0 or max_sq_coef <= 0:
        raise ValueError("all parameters must be positive")
    lv = _log_cd(d, C) + math.log(max_sq_coef) + ((5 * d - 0.5) * math.log(n) - math.log(k)) / 3.0
    return BoundSpec("3.1", {"n": n, "k": k, "d": d, "max_sq_coef": max_sq_coef}, C, lv)


def bound_theorem34(n: int, k: int, d: int, C: float = 1.0) -> BoundSpec:
    """``C_d n^(2.5d - 1.5) / k`` for the monomial ``x^d``."""
    if min(n, k, d) <= 0:
        raise ValueError("all parameters must be positive")
    lv = _log_cd(d, C) + (2.5 * d - 1.5) * math.log(n) - math.log(k)
    return BoundSpec("3.4", {"n": n, "k": k, "d": d}, C, lv)


def theorem51_degree(n: int, k: float, C: float = 1.0) -> int:
    """Truncation degree ``ceil(log k / (100 C log n log log k))``."""
    if k < 16:
        raise ValueError("k must be at least 16 so that log log k > 0")
    if n < 2:
        raise ValueError("n must be at least 2")
    return max(1, math.ceil(math.log(k) / (100.0 * C * math.log(n) * math.log(math.log(k)))))


def bound_theorem51(
    n: int,
    k: float,
    max_sq_hermite: float,
    remainder_fn: Callable[[int], float],
    C_prime: float = 1.0,
    C: float = 1.0,
) -> BoundSpec:
    """``C' max|c_m|^2 / k^(1/6) + R(d)`` at the degree chosen by :func:`theorem51_degree`."""
    d = theorem51_degree(n, k, C)
    width_term = C_prime * max_sq_hermite / k ** (1.0 / 6.0)
    tail_term = float(remainder_fn(d))
    total = width_term + tail_term
    params = {"n": n, "k": k, "d": d, "max_sq_hermite": max_sq_hermite,
              "width_term": width_term, "tail_term": tail_term, "C_prime": C_prime}
    return BoundSpec("5.1", params, C, math.log(total) if total > 0 else -math.inf)


def whiten(F, second_moment, tol: float = 1e-12) -> np.ndarray:
    """Map samples to isotropic coordinates on the range of ``second_moment``."""
    vals, vecs = np.linalg.eigh(np.asarray(second_moment, float))
    keep = vals > tol * max(1.0, vals[-1])
    return np.asarray(F, float) @ (vecs[:, keep] / np.sqrt(vals[keep]))


def bonis_rhs(Y, k: int, batches: int = 10) -> MCEstimate:
    """Monte Carlo value of ``sqrt(N)/k * ||E[Y Y^T |Y|^2]||_HS`` for isotropic ``Y``.

    The standard error comes from batch means.
    """
    Y = _as_table(Y)
    dim = Y.shape[1]

    def _one(Z):
        M = (Z * (Z * Z).sum(1, keepdims=True)).T @ Z / Z.shape[0]
        return math.sqrt(dim) / k * float(np.linalg.norm(M))

    value = _one(Y)
    if Y.shape[0] < 2 * batches:
        return MCEstimate(value, math.inf)
    parts = [_one(Z) for Z in np.array_split(Y, batches)]
    return MCEstimate(value, float(np.std(parts, ddof=1) / math.sqrt(batches)))
