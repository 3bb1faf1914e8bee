"""Confidence sets for the GLM parameter.

Three shapes:

* :class:`LikelihoodRatioSet` -- ``{theta : sum_t loss_t(theta) - loss_t(ref) <= beta}``
  built by :func:`analytic_adaptive_set`.
* :class:`BregmanBallSet` -- ``{theta : B_Psi(theta, center) <= radius}`` with
  ``Psi(theta) = sum_t psi(<X_t, theta>)``, built by :func:`transductive_set`.
* :class:`PseudoLabelEllipsoid` -- ``{theta : 1/2 sum_t (<theta, X_t> - Yhat_t)^2 <= beta}``
  built by :func:`algorithmic_det_set`, :func:`ewa_alg_set` and :func:`sparse_alg_set`.

All inequalities are non-strict.  Algorithmic sets carry a :class:`Mode`:
``ORACLE`` widths use the realised regret against a known parameter,
``BOUND`` widths use a data-free regret bound.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import ConvergenceError, InvalidArgumentError, StrongConvexityUnavailableError
from .estimators import constrained_mle, ridge_mle
from .families import GlmFamily, ObservationLog, loss_from_natural
from .forecasters import Posterior, run_chain, telescoped_regret
from .infogain import info_gain_bound, logdet_rank_bound, logdet_worst_case

EXTENT_TOL = 1e-6
_EXTENT_CAP = 1e12


class Mode(str, enum.Enum):
    ORACLE = "oracle"
    BOUND = "bound"


def _check_delta(delta):
    if not (0.0 < delta < 1.0):
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta!r}")


def _check_m(m):
    if not (np.isfinite(m) and m > 0):
        raise StrongConvexityUnavailableError(f"strong convexity constant must be positive, got {m!r}")


def _as_theta(theta, d):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != d:
        raise InvalidArgumentError(f"parameter has dimension {theta.shape[0]}, set has {d}")
    return theta


def _log_unit_ball(d):
    return 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d + 1.0))


def _ellipsoid_report(gram, radius):
    """Axis half-lengths of ``{u : 1/2 u' gram u <= radius}`` and its log volume."""
    evals = np.linalg.eigvalsh(0.5 * (gram + gram.T))
    d = len(evals)
    if radius < 0:
        return {"axes": [0.0] * d, "log_volume": -math.inf}
    scale = max(1.0, float(np.max(np.abs(evals)))) if d else 1.0
    axes = [math.sqrt(2.0 * radius / e) if e > 1e-12 * scale else math.inf for e in evals]
    finite = all(math.isfinite(a) for a in axes)
    if not finite:
        log_vol = math.inf
    elif radius == 0:
        log_vol = -math.inf
    else:
        log_vol = _log_unit_ball(d) + float(np.sum(np.log(axes)))
    return {"axes": axes, "log_volume": log_vol}


def _directional_extents(excess, center, beta):
    """Largest ``s`` with ``excess(center +/- s e_i) <= beta`` per axis, by bisection."""
    out = []
    d = len(center)
    for i in range(d):
        pair = []
        for sign in (-1.0, 1.0):
            e = np.zeros(d)
            e[i] = sign

            def inside(s):
                return excess(center + s * e) <= beta

            if not inside(0.0):
                pair.append(0.0)
                continue
            hi = 1.0
            while inside(hi) and hi < _EXTENT_CAP:
                hi *= 2.0
            if inside(hi):
                pair.append(math.inf)
                continue
            lo = 0.0 if hi == 1.0 else hi / 2.0
            while hi - lo > EXTENT_TOL * max(1.0, lo):
                mid = 0.5 * (lo + hi)
                if inside(mid):
                    lo = mid
                else:
                    hi = mid
            pair.append(lo)
        out.append(pair)
    return out


def _float_list(a):
    return [float(v) for v in np.asarray(a, dtype=float).reshape(-1)]


# -- likelihood-ratio set -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class LikelihoodRatioSet:
    """``{theta : sum_t (loss_t(theta) - loss_t(reference)) <= beta}``.

    ``beta`` is the log-det width; ``beta_rank`` and ``beta_worst_case``
    replace the log-det term by its rank-adaptive and dimension-based caps.
    """

    family: GlmFamily
    X: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    reference: np.ndarray
    beta: float
    delta: float
    gamma: float
    beta_rank: float = math.nan
    beta_worst_case: float = math.nan
    set_type: str = "likelihood-ratio"

    @property
    def d(self):
        return len(self.reference)

    @property
    def gram(self):
        return self.X.T @ self.X

    def excess(self, theta) -> float:
        theta = _as_theta(theta, self.d)
        if len(self.Y) == 0:
            return 0.0
        diff = loss_from_natural(self.family, self.X @ theta, self.Y) - loss_from_natural(
            self.family, self.X @ self.reference, self.Y
        )
        return float(np.sum(diff))

    def contains(self, theta, width: str = "logdet") -> bool:
        beta = {"logdet": self.beta, "rank": self.beta_rank, "worst-case": self.beta_worst_case}[width]
        return self.excess(theta) <= beta

    def width_report(self, extents: bool = True) -> dict:
        rep = {"beta": self.beta, "beta_rank": self.beta_rank, "beta_worst_case": self.beta_worst_case}
        if extents:
            rep["extents"] = _directional_extents(self.excess, self.reference, self.beta)
        if self.family.is_quadratic:
            # the excess is a quadratic: 1/2 |theta - ols|^2_gram minus its value at the reference
            G = self.gram
            ols = np.linalg.lstsq(G, self.X.T @ self.Y, rcond=None)[0] if len(self.Y) else np.zeros(self.d)
            rep.update(_ellipsoid_report(G, self.beta - self.excess(ols)))
        return rep

    def to_dict(self) -> dict:
        return {
            "type": self.set_type,
            "reference": _float_list(self.reference),
            "width": self.beta,
            "beta_rank": self.beta_rank,
            "beta_worst_case": self.beta_worst_case,
            "gram": _float_list(self.gram),
            "delta": self.delta,
            "mode": None,
        }


def analytic_adaptive_set(
    log: ObservationLog, family: GlmFamily, gamma: float, delta: float, *, L: float | None = None
) -> LikelihoodRatioSet:
    """Likelihood-ratio set around the ridge minimiser (``lam = 1``).

    ``beta = |theta_hat|^2 / (2 gamma^2) + 1/2 log det(gamma^2 M gram + I) + log(1/delta)``.
    ``L`` bounds the covariate norms for the rank and worst-case widths
    (defaults to the observed maximum).
    """
    _check_delta(delta)
    rep = ridge_mle(log, family, gamma, 1.0)
    if not rep.converged:
        raise ConvergenceError(f"ridge solve failed: {rep.message}", "ridge_mle")
    theta_hat = rep.solution
    head = 0.5 * float(theta_hat @ theta_hat) / gamma**2 + math.log(1.0 / delta)
    alpha = gamma**2 * family.smoothness
    gram = np.asarray(log.gram)
    beta = head + info_gain_bound(gram, family.smoothness, gamma, 1.0)
    if L is None:
        L = float(np.max(np.linalg.norm(log.X, axis=1))) if log.n else 0.0
    beta_rank = head + 0.5 * logdet_rank_bound(gram, alpha, L, log.n)
    beta_wc = head + 0.5 * logdet_worst_case(log.d, alpha, L, log.n)
    return LikelihoodRatioSet(
        family, np.array(log.X), np.array(log.Y), theta_hat, beta, delta, gamma, beta_rank, beta_wc
    )


# -- Bregman ball ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BregmanBallSet:
    """``{theta : Psi(theta) - Psi(c) - <grad Psi(c), theta - c> <= radius}``."""

    family: GlmFamily
    X: np.ndarray = field(repr=False)
    center: np.ndarray
    radius: float
    delta: float
    b: float
    kappa: float
    center_converged: bool = True
    set_type: str = "bregman-ball"

    @property
    def d(self):
        return len(self.center)

    @property
    def gram(self):
        return self.X.T @ self.X

    def potential(self, theta) -> float:
        """``Psi(theta) = sum_t psi(<X_t, theta>)``."""
        return float(np.sum(self.family.log_partition(self.X @ _as_theta(theta, self.d))))

    def divergence(self, theta) -> float:
        theta = _as_theta(theta, self.d)
        zc = self.X @ self.center
        z = self.X @ theta
        psi = self.family.log_partition
        val = np.sum(psi(z) - psi(zc) - self.family.mean(zc) * (z - zc))
        return max(float(val), 0.0)

    def contains(self, theta) -> bool:
        return self.divergence(theta) <= self.radius

    def width_report(self, extents: bool = True) -> dict:
        rep = {"beta": self.radius, "radius": self.radius, "kappa": self.kappa}
        if self.family.is_quadratic:
            rep.update(_ellipsoid_report(self.gram, self.radius))
        elif extents:
            rep["extents"] = _directional_extents(self.divergence, self.center, self.radius)
        return rep

    def to_dict(self) -> dict:
        return {
            "type": self.set_type,
            "center": _float_list(self.center),
            "width": self.radius,
            "kappa": self.kappa,
            "b": self.b,
            "gram": _float_list(self.gram),
            "delta": self.delta,
            "mode": None,
        }


def transductive_radius(d: int, kappa: float, delta: float) -> float:
    """``d log(1 + 2 kappa) + 2 log(1/delta)``."""
    _check_delta(delta)
    return d * math.log1p(2.0 * kappa) + 2.0 * math.log(1.0 / delta)


def transductive_set(log: ObservationLog, family: GlmFamily, b: float, delta: float) -> BregmanBallSet:
    """Bregman ball around the constrained MLE; valid at a fixed horizon for oblivious covariates."""
    _check_delta(delta)
    m = family.strong_convexity_at(b)
    if not m > 0:
        raise StrongConvexityUnavailableError(
            f"{family.name} has no strong convexity on [-{b}, {b}]", "transductive_set"
        )
    kappa = family.smoothness / m
    rep = constrained_mle(log, family, b)
    if not rep.converged:
        raise ConvergenceError(f"constrained solve failed: {rep.message}", "constrained_mle")
    return BregmanBallSet(
        family, np.array(log.X), rep.solution, transductive_radius(log.d, kappa, delta), delta, b, kappa
    )


# -- pseudo-label ellipsoid -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class PseudoLabelEllipsoid:
    """``{theta : 1/2 theta' gram theta - <theta, moment> + offset <= beta}``."""

    X: np.ndarray = field(repr=False)
    pseudo_labels: np.ndarray = field(repr=False)
    beta: float
    delta: float
    mode: Mode
    regret_term: float
    m: float
    set_type: str = "pseudo-label-ellipsoid"

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def gram(self):
        return self.X.T @ self.X

    @property
    def moment(self):
        return self.X.T @ self.pseudo_labels

    @property
    def offset(self):
        return 0.5 * float(self.pseudo_labels @ self.pseudo_labels)

    @property
    def center(self):
        return np.linalg.pinv(self.gram) @ self.moment

    def quadratic_value(self, theta) -> float:
        theta = _as_theta(theta, self.d)
        return 0.5 * float(theta @ self.gram @ theta) - float(theta @ self.moment) + self.offset

    def definitional_value(self, theta) -> float:
        theta = _as_theta(theta, self.d)
        r = self.X @ theta - self.pseudo_labels
        return 0.5 * float(r @ r)

    def contains(self, theta) -> bool:
        return self.quadratic_value(theta) <= self.beta

    def width_report(self, extents: bool = True) -> dict:
        c = self.center
        rep = {"beta": self.beta, "regret_term": self.regret_term, "m": self.m}
        rep.update(_ellipsoid_report(self.gram, self.beta - self.definitional_value(c)))
        return rep

    def to_dict(self) -> dict:
        return {
            "type": self.set_type,
            "center": _float_list(self.center),
            "width": self.beta,
            "regret_term": self.regret_term,
            "m": self.m,
            "gram": _float_list(self.gram),
            "moment": _float_list(self.moment),
            "offset": self.offset,
            "delta": self.delta,
            "mode": self.mode.value,
        }


def algorithmic_width(m: float, regret_term: float, delta: float) -> float:
    """``(2/m) regret + (4/m) log(1/delta)``."""
    _check_m(m)
    _check_delta(delta)
    return (2.0 / m) * regret_term + (4.0 / m) * math.log(1.0 / delta)


def algorithmic_det_set(
    X, pseudo_labels, m: float, regret_term: float, delta: float, mode: Mode | str
) -> PseudoLabelEllipsoid:
    """Ellipsoid from pseudo-labels ``Yhat_t = clip(<theta_t, X_t>, b)`` of a deterministic forecaster."""
    mode = Mode(mode)
    X = np.asarray(X, dtype=float)
    Yh = np.asarray(pseudo_labels, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != Yh.shape[0]:
        raise InvalidArgumentError("X must be (n, d) with one pseudo-label per row")
    return PseudoLabelEllipsoid(X, Yh, algorithmic_width(m, regret_term, delta), delta, mode, float(regret_term), m)


def ewa_alg_set(
    prior_post: Posterior,
    log: ObservationLog,
    family: GlmFamily,
    b: float,
    delta: float,
    *,
    mode: Mode | str,
    theta_star=None,
    regret_bound: float | None = None,
) -> PseudoLabelEllipsoid:
    """Ellipsoid from EWA pseudo-labels ``Yhat_t = int clip(<theta, X_t>, b) dq_{t+1}``.

    ``mode="oracle"`` needs ``theta_star`` and uses the telescoped regret
    against it; ``mode="bound"`` needs a uniform ``regret_bound``.
    The forecaster is expected to run at ``lam = 1/2``.
    """
    mode = Mode(mode)
    m = family.strong_convexity_at(b)
    _check_m(m)
    if mode is Mode.ORACLE:
        if theta_star is None or regret_bound is not None:
            raise InvalidArgumentError("oracle mode takes theta_star and no regret_bound")
        regret = telescoped_regret(prior_post, log, theta_star)
    else:
        if regret_bound is None or theta_star is not None:
            raise InvalidArgumentError("bound mode takes regret_bound and no theta_star")
        regret = float(regret_bound)
    chain = run_chain(prior_post, log, b=b)
    return algorithmic_det_set(np.array(log.X), chain.pseudo_labels, m, regret, delta, mode)


def sparse_width(n: int, d: int, s: int, M: float, B: float, L_inf: float, m: float, delta: float) -> float:
    """``(4s/m) log(2 e d sqrt(1 + M B^2 L_inf^2 n / 2) / s) + (4/m) log(2 sqrt(e) / delta)``."""
    if not (1 <= s <= d):
        raise InvalidArgumentError(f"sparsity {s} outside 1..{d}")
    if n < 0 or M < 0 or B < 0 or L_inf < 0:
        raise InvalidArgumentError("n, M, B and L_inf must be nonnegative")
    _check_m(m)
    _check_delta(delta)
    inner = 2.0 * math.e * d * math.sqrt(1.0 + M * B**2 * L_inf**2 * n / 2.0) / s
    return (4.0 * s / m) * math.log(inner) + (4.0 / m) * math.log(2.0 * math.sqrt(math.e) / delta)


def sparse_alg_set(
    prior_post: Posterior,
    log: ObservationLog,
    family: GlmFamily,
    b: float,
    delta: float,
    *,
    s: int,
    B: float,
    L_inf: float,
    m: float | None = None,
    M: float | None = None,
) -> PseudoLabelEllipsoid:
    """Bound-mode ellipsoid with the sparse width; ``prior_post`` should be sparse with ``gamma = B``, ``lam = 1/2``."""
    m = family.strong_convexity_at(b) if m is None else m
    M = family.smoothness if M is None else M
    beta = sparse_width(log.n, log.d, s, M, B, L_inf, m, delta)
    chain = run_chain(prior_post, log, b=b)
    X = np.array(log.X)
    return PseudoLabelEllipsoid(X, chain.pseudo_labels, beta, delta, Mode.BOUND, math.nan, m)


# -- generic ------------------------------------------------------------------

ConfidenceSet = LikelihoodRatioSet | BregmanBallSet | PseudoLabelEllipsoid


def membership(cs, theta) -> bool:
    return cs.contains(theta)


def width_report(cs) -> dict:
    return cs.width_report()


def to_json(cs) -> str:
    return json.dumps(cs.to_dict(), sort_keys=True)
