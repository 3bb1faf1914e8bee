"""Bregman information gain and its closed-form upper bounds.

With ``Z(theta) = lam * sum_t loss_t(theta) + rho(theta)`` and minimiser
``theta_hat``, the information gain is

    gain = -log( int exp(-(Z(theta) - Z(theta_hat))) dtheta / int exp(-rho) dtheta ).

It is closed form for the gaussian family and computed by quadrature
(Hessian-whitened trapezoid rule) for other families in ``d <= 3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    AccuracyError,
    ConvergenceError,
    InvalidArgumentError,
    UnsupportedDimensionError,
)
from .estimators import regularized_objective, ridge_mle
from .families import GlmFamily, ObservationLog, loss_from_natural

QUAD_MAX_DIM = 3
_STEP = {1: 0.05, 2: 0.15, 3: 0.3}
_START_HALF_WIDTH = 12.0
_MAX_HALF_WIDTH = 400.0
_MAX_NODES = 4_000_000
BOUNDARY_TOL = 1e-6
RANK_RTOL = 1e-10


def _sym(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + A.T)


def _check_psd(A, name="gram"):
    A = _sym(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError(f"{name} must be finite")
    if A.size and np.linalg.eigvalsh(A)[0] < -1e-10 * max(1.0, float(np.abs(A).max())):
        raise InvalidArgumentError(f"{name} is not positive semidefinite")
    return A


def logdet_psd_plus_identity(A, alpha: float = 1.0) -> float:
    """``log det(alpha * A + I)`` by Cholesky."""
    A = _check_psd(A)
    if A.size == 0:
        return 0.0
    try:
        L = np.linalg.cholesky(alpha * A + np.eye(A.shape[0]))
    except np.linalg.LinAlgError:
        raise InvalidArgumentError("alpha * gram + I is not positive definite") from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def info_gain_bound(gram, M: float, gamma: float, lam: float = 1.0) -> float:
    """``1/2 log det(lam M gamma^2 gram + I)``."""
    for name, v in (("M", M), ("gamma", gamma), ("lambda", lam)):
        if not (np.isfinite(v) and v >= 0):
            raise InvalidArgumentError(f"{name} must be nonnegative, got {v!r}")
    return 0.5 * logdet_psd_plus_identity(gram, lam * M * gamma**2)


def numerical_rank(gram) -> int:
    A = _check_psd(gram)
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def logdet_rank_bound(gram, alpha: float, L: float, n: int) -> float:
    """``r log(1 + alpha n L^2 / r)`` with ``r`` the numerical rank of ``gram``.

    Dominates ``log det(alpha * gram + I)`` whenever every covariate has
    norm at most ``L`` (arithmetic-geometric mean inequality on the nonzero
    eigenvalues).
    """
    if not alpha > 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha!r}")
    if not L >= 0 or n < 0:
        raise InvalidArgumentError("L and n must be nonnegative")
    A = _check_psd(gram)
    r = numerical_rank(A)
    if r == 0:
        return 0.0
    if np.trace(A) > n * L**2 * (1 + 1e-9) + 1e-12:
        raise InvalidArgumentError("trace(gram) exceeds n L^2: L does not bound the covariate norms")
    return r * math.log1p(alpha * n * L**2 / r)


def logdet_worst_case(d: int, alpha: float, L: float, n: int) -> float:
    """``d log(1 + alpha n L^2 / d)``: the rank bound with ``r = d``."""
    if d < 1:
        raise InvalidArgumentError("d must be >= 1")
    return d * math.log1p(alpha * n * L**2 / d)


# -- exact gain ---------------------------------------------------------------


def _solve_anchor(log, family, gamma, lam):
    rep = ridge_mle(log, family, gamma, lam)
    if not rep.converged:
        raise ConvergenceError(f"ridge solve failed: {rep.message}", "ridge_mle")
    return rep


def _box_nodes(k, half, h):
    m = int(math.ceil(half / h))
    axis = np.arange(-m, m + 1) * h
    w = np.full(axis.size, h)
    w[0] = w[-1] = h / 2
    return axis, w


def _quadrature_gain(log, family, gamma, lam, theta_hat, H, step=None):
    """``-log`` of the whitened tilted integral over the prior volume."""
    d = log.d
    X, Y = np.asarray(log.X), np.asarray(log.Y)
    fun = regularized_objective(log, family, gamma, lam)
    z_hat = fun(theta_hat)[0]
    Lc = np.linalg.cholesky(_sym(H))
    T = np.linalg.inv(Lc).T  # theta = theta_hat + T u  makes the Hessian the identity
    h = _STEP[d] if step is None else step
    log_jac = -float(np.sum(np.log(np.diag(Lc))))
    half = _START_HALF_WIDTH
    while True:
        axis, w = _box_nodes(d, half, h)
        if axis.size**d > _MAX_NODES:
            raise AccuracyError(
                f"quadrature box needs more than {_MAX_NODES} nodes", "info_gain_exact"
            )
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        U = np.stack([m.reshape(-1) for m in mesh], axis=1)
        logw = sum(m.reshape(-1) for m in np.meshgrid(*([np.log(w)] * d), indexing="ij"))
        theta = theta_hat + U @ T.T
        vals = np.empty(len(theta))
        for s in range(0, len(theta), 20000):
            th = theta[s : s + 20000]
            Zc = th @ X.T
            vals[s : s + 20000] = lam * np.sum(loss_from_natural(family, Zc, Y[None, :]), axis=1) + 0.5 * np.sum(
                th**2, axis=1
            ) / gamma**2
        logf = -(vals - z_hat) + logw
        total = logsumexp(logf)
        edge = np.any(np.abs(U) >= axis[-1] - 1e-12, axis=1)
        edge_mass = logsumexp(logf[edge]) - total
        if edge_mass <= math.log(BOUNDARY_TOL):
            break
        if half >= _MAX_HALF_WIDTH:
            raise AccuracyError(
                f"quadrature box mass at boundary {math.exp(edge_mass):.2e} exceeds {BOUNDARY_TOL}",
                "info_gain_exact",
            )
        half *= 2.0
    log_num = float(total) + log_jac
    log_den = 0.5 * d * math.log(2.0 * math.pi * gamma**2)
    return -(log_num - log_den)


def info_gain_exact(
    log: ObservationLog,
    family: GlmFamily,
    gamma: float,
    lam: float = 1.0,
    *,
    method: str = "auto",
) -> float:
    """Bregman information gain at the ridge minimiser.

    ``method`` is ``"closed-form"`` (gaussian only), ``"quadrature"``
    (``d <= 3``) or ``"auto"``.
    """
    if log.d == 0 or log.n == 0:
        return 0.0
    if method == "auto":
        method = "closed-form" if family.is_quadratic else "quadrature"
    if method == "closed-form":
        if not family.is_quadratic:
            raise InvalidArgumentError("closed-form gain is only available for the gaussian family")
        return info_gain_bound(log.gram, 1.0, gamma, lam)
    if method != "quadrature":
        raise InvalidArgumentError(f"unknown method {method!r}")
    if log.d > QUAD_MAX_DIM:
        raise UnsupportedDimensionError(f"quadrature gain supports d <= {QUAD_MAX_DIM}, got {log.d}")
    rep = _solve_anchor(log, family, gamma, lam)
    _, _, H = regularized_objective(log, family, gamma, lam)(rep.solution)
    return max(_quadrature_gain(log, family, gamma, lam, rep.solution, H), 0.0)


def restricted_info_gain(log: ObservationLog, family: GlmFamily, gamma: float, lam: float, support, **kw) -> float:
    """Gain of the sub-model on the coordinates in ``support``."""
    idx = sorted(int(i) for i in support)
    if any(i < 0 or i >= log.d for i in idx):
        raise InvalidArgumentError(f"support {idx} not contained in 0..{log.d - 1}")
    if not idx:
        return 0.0
    return info_gain_exact(log.restrict(idx), family, gamma, lam, **kw)


@dataclass(frozen=True)
class InfoGainReport:
    exact: float | None
    bound: float
    rank_bound: float
    regularized_minimizer: np.ndarray


def info_gain_report(
    log: ObservationLog, family: GlmFamily, gamma: float, lam: float = 1.0, *, L: float | None = None
) -> InfoGainReport:
    """Exact gain (where trustworthy), the log-det bound and its rank-adaptive cap."""
    rep = _solve_anchor(log, family, gamma, lam)
    exact = None
    if family.is_quadratic or log.d <= QUAD_MAX_DIM:
        exact = info_gain_exact(log, family, gamma, lam)
    bound = info_gain_bound(log.gram, family.smoothness, gamma, lam)
    if L is None:
        L = float(np.max(np.linalg.norm(log.X, axis=1))) if log.n else 0.0
    alpha = lam * family.smoothness * gamma**2
    rank_bound = 0.5 * logdet_rank_bound(log.gram, alpha, L, log.n) if alpha > 0 else 0.0
    return InfoGainReport(exact, bound, rank_bound, rep.solution)


# -- regret bounds ------------------------------------------------------------


def ewa_regret_bound(rho_at_comparator: float, info_gain: float, lam: float) -> float:
    """``(rho(theta_bar) + gain) / lam``."""
    if not lam > 0:
        raise InvalidArgumentError(f"lambda must be positive, got {lam!r}")
    return (rho_at_comparator + info_gain) / lam


def sparse_regret_bound(restricted_gain: float, rho_at_comparator: float, s: int, d: int, lam: float) -> float:
    """``(gain_S + rho + s log(2 e d / s) + log 2) / lam``; the ``s`` term vanishes at ``s = 0``."""
    if not lam > 0:
        raise InvalidArgumentError(f"lambda must be positive, got {lam!r}")
    if s < 0 or s > d:
        raise InvalidArgumentError(f"support size {s} outside 0..{d}")
    sparsity = s * math.log(2.0 * math.e * d / s) if s > 0 else 0.0
    return (restricted_gain + rho_at_comparator + sparsity + math.log(2.0)) / lam
