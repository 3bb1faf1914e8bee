"""Maximum-likelihood anchors for the confidence sets.

* :func:`ridge_mle` minimises ``lam * sum_t loss_t(theta) + |theta|^2 / (2 gamma^2)``
  by damped Newton.
* :func:`constrained_mle` minimises ``sum_t loss_t`` over the polar set
  ``{theta : max_t |<theta, X_t>| <= b}``.  The unconstrained Newton solution
  is returned when it exists and is feasible; otherwise a log-barrier
  interior-point method takes over.
* :func:`restricted_mle` is the ridge problem with coordinates outside a
  support fixed to zero.

Solvers never raise on non-convergence; they return a :class:`SolveReport`
with ``converged=False`` and a message, and callers decide.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidArgumentError
from .families import GlmFamily, ObservationLog, loss_from_natural

ARMIJO = 1e-4
MAX_ITER = 200
MAX_HALVINGS = 60
DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class SolveReport:
    solution: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool
    message: str = ""
    objective_trace: tuple = field(default=(), repr=False)


def _design(log: ObservationLog):
    return np.asarray(log.X, dtype=float), np.asarray(log.Y, dtype=float)


def _newton_solve(H, g):
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        # singular directions: the loss is flat there, take the min-norm step
        return -np.linalg.lstsq(H, g, rcond=None)[0]
    return -np.linalg.solve(L.T, np.linalg.solve(L, g))


def _damped_newton(fun, theta0, tol, max_iter, stop_on_divergence=False):
    """Minimise a smooth convex ``fun(theta) -> (f, g, H)``.

    Returns (theta, f, gnorm, iterations, converged, message, trace).
    """
    theta = np.array(theta0, dtype=float)
    f, g, H = fun(theta)
    gnorm0 = float(np.linalg.norm(g))
    threshold = tol * max(1.0, gnorm0)
    trace = [f]
    gnorm = gnorm0
    for it in range(max_iter + 1):
        if gnorm <= threshold:
            return theta, f, gnorm, it, True, "gradient tolerance reached", tuple(trace)
        if it == max_iter:
            break
        step = _newton_solve(H, g)
        slope = float(g @ step)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            cand = theta + t * step
            fc, gc, Hc = fun(cand)
            # a step whose decrease rounds away must at least shrink the gradient
            if np.isfinite(fc) and fc <= f + ARMIJO * t * slope and (fc < f or np.linalg.norm(gc) < gnorm):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # at machine precision the Armijo test cannot resolve the decrease;
            # a full Newton step that shrinks the gradient is still progress
            cand = theta + step
            fc, gc, Hc = fun(cand)
            if not (np.isfinite(fc) and np.linalg.norm(gc) < gnorm and fc <= f + 1e-12 * max(1.0, abs(f))):
                return theta, f, gnorm, it, False, "line search failed", tuple(trace)
        theta, f, g, H = cand, fc, gc, Hc
        gnorm = float(np.linalg.norm(g))
        trace.append(f)
        if stop_on_divergence and np.linalg.norm(theta) > DIVERGENCE_NORM:
            return theta, f, gnorm, it + 1, False, "iterates diverged (no finite minimiser)", tuple(trace)
    return theta, f, gnorm, max_iter, False, "iteration cap reached", tuple(trace)


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise InvalidArgumentError(f"{name} must be positive and finite, got {value!r}")


def regularized_objective(log: ObservationLog, family: GlmFamily, gamma: float, lam: float):
    """Return ``fun(theta) -> (value, grad, hess)`` for the ridge objective."""
    X, Y = _design(log)
    d = log.d
    const = -float(np.sum(family.log_carrier(Y))) if len(Y) else 0.0
    inv_g2 = 1.0 / gamma**2

    def fun(theta):
        z = X @ theta
        val = lam * (float(np.sum(family.log_partition(z) - z * Y)) + const) + 0.5 * inv_g2 * float(theta @ theta)
        grad = lam * (X.T @ (family.mean(z) - Y)) + inv_g2 * theta
        hess = lam * (X.T * family.variance(z)) @ X + inv_g2 * np.eye(d)
        return val, grad, hess

    return fun


def ridge_mle(
    log: ObservationLog,
    family: GlmFamily,
    gamma: float,
    lam: float = 1.0,
    *,
    tol: float = 1e-10,
    max_iter: int = MAX_ITER,
) -> SolveReport:
    """Minimiser of ``lam * sum_t loss_t(theta) + |theta|^2 / (2 gamma^2)``."""
    _check_positive("gamma", gamma)
    _check_positive("lambda", lam)
    fun = regularized_objective(log, family, gamma, lam)
    theta, f, gnorm, it, ok, msg, trace = _damped_newton(fun, np.zeros(log.d), tol, max_iter)
    return SolveReport(theta, f, gnorm, it, ok, msg, trace)


def restricted_mle(
    log: ObservationLog,
    family: GlmFamily,
    support,
    gamma: float,
    lam: float = 1.0,
    *,
    tol: float = 1e-10,
    max_iter: int = MAX_ITER,
) -> SolveReport:
    """Ridge problem over ``{theta : theta_i = 0 for i not in support}``."""
    _check_positive("gamma", gamma)
    _check_positive("lambda", lam)
    idx = sorted(int(i) for i in support)
    if any(i < 0 or i >= log.d for i in idx):
        raise InvalidArgumentError(f"support {idx} not contained in 0..{log.d - 1}")
    if not idx:
        fun = regularized_objective(log.restrict([]), family, gamma, lam)
        val, _, _ = fun(np.zeros(0))
        return SolveReport(np.zeros(log.d), val, 0.0, 0, True, "empty support", (val,))
    sub = ridge_mle(log.restrict(idx), family, gamma, lam, tol=tol, max_iter=max_iter)
    full = np.zeros(log.d)
    full[idx] = sub.solution
    return SolveReport(full, sub.objective, sub.gradient_norm, sub.iterations, sub.converged, sub.message, sub.objective_trace)


def _unregularized(log, family):
    X, Y = _design(log)
    const = -float(np.sum(family.log_carrier(Y)))

    def fun(theta):
        z = X @ theta
        val = float(np.sum(family.log_partition(z) - z * Y)) + const
        grad = X.T @ (family.mean(z) - Y)
        hess = (X.T * family.variance(z)) @ X
        return val, grad, hess

    return fun


def constrained_mle(
    log: ObservationLog,
    family: GlmFamily,
    b: float,
    *,
    tol: float = 1e-9,
    max_iter: int = MAX_ITER,
) -> SolveReport:
    """Maximum likelihood over the polar set ``{theta : max_t |<theta, X_t>| <= b}``.

    The minimiser need not be unique when the loss is flat along a face of
    the polytope; any point meeting the first-order residual is returned.
    """
    if not b > 0:
        raise InvalidArgumentError(f"b must be positive, got {b!r}")
    if log.n == 0:
        raise InvalidArgumentError("constrained MLE needs at least one round")
    X, Y = _design(log)
    fun = _unregularized(log, family)

    theta, f, gnorm, it, ok, msg, trace = _damped_newton(
        fun, np.zeros(log.d), tol, max_iter, stop_on_divergence=True
    )
    if ok and np.max(np.abs(X @ theta)) <= b:
        return SolveReport(theta, f, gnorm, it, True, "constraint inactive", trace)
    if not np.isfinite(b):
        return SolveReport(theta, f, gnorm, it, False, msg or "unconstrained solve failed", trace)
    return _barrier(X, fun, b, tol, max_iter, it)


def _barrier(X, fun, b, tol, max_iter, prior_iterations):
    """Log-barrier path following for ``min f`` s.t. ``-b <= X theta <= b``."""
    n, d = X.shape
    m = 2 * n
    theta = np.zeros(d)
    t = 1.0
    total_it = prior_iterations
    trace = []

    def phi(theta):
        z = X @ theta
        up, lo = b - z, b + z
        if np.any(up <= 0) or np.any(lo <= 0):
            return np.inf, None, None
        val = -float(np.sum(np.log(up)) + np.sum(np.log(lo)))
        w = 1.0 / up - 1.0 / lo
        grad = X.T @ w
        hess = (X.T * (1.0 / up**2 + 1.0 / lo**2)) @ X
        return val, grad, hess

    def centered(theta, t):
        f, g, H = fun(theta)
        p, gp, Hp = phi(theta)
        if not np.isfinite(p):
            return np.inf, None, None
        return t * f + p, t * g + gp, t * H + Hp

    gap_target = tol * 1e-2
    while True:
        for _ in range(50):
            val, g, H = centered(theta, t)
            step = _newton_solve(H, g)
            decrement = -float(g @ step)
            if decrement / 2.0 <= 1e-14:
                break
            s = 1.0
            if decrement < 0.25:
                # inside the quadratic-convergence region: only keep feasibility
                while not np.isfinite(phi(theta + s * step)[0]) and s > 1e-16:
                    s *= 0.5
            else:
                while s > 1e-16:
                    cv = centered(theta + s * step, t)[0]
                    if np.isfinite(cv) and cv <= val - ARMIJO * s * decrement:
                        break
                    s *= 0.5
            if s <= 1e-16:
                break
            theta = theta + s * step
            total_it += 1
        trace.append(fun(theta)[0])
        if m / t <= gap_target:
            break
        t *= 20.0

    polished = _polish_active_set(X, fun, b, theta, tol)
    if polished is not None:
        theta = polished
    f, g, _ = fun(theta)
    residual = _kkt_residual(X, g, theta, b)
    ok = residual <= tol * max(1.0, float(np.linalg.norm(g))) and np.max(np.abs(X @ theta)) <= b * (1 + 1e-12)
    return SolveReport(theta, f, residual, total_it, bool(ok), "barrier path" if ok else "barrier did not reach tolerance", tuple(trace))


def _active_rows(X, theta, b, thresh):
    z = X @ theta
    up = b - z <= thresh
    lo = b + z <= thresh
    return np.vstack([X[up], -X[lo]])


def _kkt_residual(X, g, theta, b, thresh=None):
    """Smallest ``|g + A^T u|`` over ``u >= 0``, with ``A`` the near-active constraint normals."""
    if thresh is None:
        thresh = 1e-7 * b
    A = _active_rows(X, theta, b, thresh)
    if len(A) == 0:
        return float(np.linalg.norm(g))
    _, rnorm = nnls(A.T, -g)
    return float(rnorm)


def _polish_active_set(X, fun, b, theta, tol):
    """Newton on the face identified by the barrier iterate; ``None`` if it leaves the feasible set."""
    z = X @ theta
    sign = np.where(z >= 0, 1.0, -1.0)
    act = np.abs(b - np.abs(z)) <= 1e-6 * b
    if not act.any():
        return None
    A = X[act]
    rhs = sign[act] * b
    # nearest point on the face, then minimise along its null space
    base = theta + np.linalg.lstsq(A, rhs - A @ theta, rcond=None)[0]
    _, sv, vt = np.linalg.svd(A)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    N = vt[rank:].T
    if N.shape[1] == 0:
        cand = base
    else:
        def sub(w):
            f, g, H = fun(base + N @ w)
            return f, N.T @ g, N.T @ H @ N

        w, *_ = _damped_newton(sub, np.zeros(N.shape[1]), tol * 1e-2, MAX_ITER)
        cand = base + N @ w
    if np.max(np.abs(X @ cand)) > b * (1 + 1e-12):
        return None
    if fun(cand)[0] > fun(theta)[0] + 1e-9 * max(1.0, abs(fun(theta)[0])):
        return None
    return cand
