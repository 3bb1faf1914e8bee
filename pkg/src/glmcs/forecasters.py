"""Exponentially weighted average (EWA) mixture forecasters.

The posterior after ``t`` rounds is ``q_{t+1} ∝ q_1 exp(-lam * sum_s loss_s)``.
Two representations are provided:

* :class:`ConjugatePosterior` -- exact Gaussian components, available for the
  gaussian family.  A sparse prior becomes one component per support.
* :class:`GridPosterior` -- weighted nodes on a tensor grid (trapezoid rule)
  for any family in ``d <= 3``.  A sparse prior becomes the union of the
  subspace grids, one per support.

Posteriors are immutable; :func:`ewa_update` returns a new value.  Every
weight is kept in the log domain and normalised after each update.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .errors import InvalidArgumentError, NumericalUnderflowError, UnsupportedDimensionError
from .families import GlmFamily, ObservationLog, loss_from_natural

GRID_NODES = {1: 2001, 2: 201, 3: 61}
MAX_GRID_DIM = 3
MAX_SPARSE_DIM = 12
_LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Prior:
    """Gaussian prior ``rho(theta) = |theta|^2 / (2 gamma^2)``, optionally sparse.

    The sparse version puts mass ``pi(S) = 2^-|S| / (C(d,|S|) sum_s 2^-s)`` on
    each support ``S`` and the Gaussian prior restricted to ``Theta_S`` within.
    """

    gamma: float
    sparse: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidArgumentError(f"prior scale gamma must be positive, got {self.gamma!r}")

    def rho(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return 0.5 * float(theta @ theta) / self.gamma**2

    def supports(self, d: int):
        """``[(support, log pi(support)), ...]``; a single full support when not sparse."""
        if not self.sparse:
            return [(tuple(range(d)), 0.0)]
        if d > MAX_SPARSE_DIM:
            raise UnsupportedDimensionError(
                f"sparse prior enumerates 2^d supports; d={d} exceeds {MAX_SPARSE_DIM}"
            )
        log_norm = math.log(sum(2.0**-s for s in range(d + 1)))
        out = []
        for s in range(d + 1):
            lw = -s * math.log(2.0) - math.log(math.comb(d, s)) - log_norm
            out.extend((S, lw) for S in itertools.combinations(range(d), s))
        return out


@dataclass(frozen=True, eq=False)
class Posterior:
    family: GlmFamily
    prior: Prior
    lam: float
    d: int
    rounds: int
    log_evidence: float  # log of int exp(-lam * cumulative loss) dq_1

    @property
    def branch(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConjugatePosterior(Posterior):
    """Mixture of Gaussians, one per support; covariances are zero off-support."""

    supports: tuple = ()
    means: np.ndarray = field(default=None, repr=False)
    covs: np.ndarray = field(default=None, repr=False)
    log_weights: np.ndarray = field(default=None, repr=False)

    @property
    def branch(self) -> str:
        return "sparse-mixture" if self.prior.sparse else "conjugate-gaussian"

    def precision(self, component: int = 0) -> np.ndarray:
        """Precision of one component on its support (a ``|S| x |S|`` matrix)."""
        S = list(self.supports[component])
        return np.linalg.inv(self.covs[component][np.ix_(S, S)])


@dataclass(frozen=True, eq=False)
class GridPosterior(Posterior):
    """Weighted nodes; ``owner[i]`` indexes the support node ``i`` belongs to."""

    supports: tuple = ()
    nodes: np.ndarray = field(default=None, repr=False)
    log_weights: np.ndarray = field(default=None, repr=False)
    owner: np.ndarray = field(default=None, repr=False)

    @property
    def branch(self) -> str:
        return "sparse-mixture" if self.prior.sparse else "grid"


# -- construction -------------------------------------------------------------


def _trapezoid_grid(k, c, n):
    axis = np.linspace(-c, c, n)
    w = np.full(n, 2.0 * c / (n - 1))
    w[0] = w[-1] = c / (n - 1)
    if k == 0:
        return np.zeros((1, 0)), np.zeros(1)
    mesh = np.meshgrid(*([axis] * k), indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=1)
    wmesh = np.meshgrid(*([np.log(w)] * k), indexing="ij")
    return nodes, sum(m.reshape(-1) for m in wmesh)


def ewa_init(
    family: GlmFamily,
    d: int,
    prior: Prior,
    lam: float = 1.0,
    *,
    box_half_width: float | None = None,
    nodes_per_dim: int | None = None,
    branch: str | None = None,
) -> Posterior:
    """Initial mixture ``q_1 ∝ exp(-rho)``.

    The conjugate branch is used for the gaussian family unless
    ``branch="grid"`` is requested.  The grid covers ``[-c, c]^k`` on every
    support of size ``k`` with ``c = box_half_width`` (default ``8 * gamma``).
    """
    if not (np.isfinite(lam) and lam > 0):
        raise InvalidArgumentError(f"learning rate must be positive, got {lam!r}")
    if d < 1:
        raise InvalidArgumentError(f"dimension must be >= 1, got {d}")
    if branch is None:
        branch = "conjugate" if family.is_quadratic else "grid"
    if branch not in ("conjugate", "grid"):
        raise InvalidArgumentError(f"unknown branch {branch!r}")
    supports = prior.supports(d)

    if branch == "conjugate":
        if not family.is_quadratic:
            raise InvalidArgumentError("conjugate branch needs the gaussian family")
        C = len(supports)
        covs = np.zeros((C, d, d))
        for c, (S, _) in enumerate(supports):
            covs[c, list(S), list(S)] = prior.gamma**2
        lw = np.array([w for _, w in supports])
        return ConjugatePosterior(
            family, prior, float(lam), d, 0, 0.0,
            supports=tuple(S for S, _ in supports),
            means=np.zeros((C, d)), covs=covs, log_weights=lw - logsumexp(lw),
        )

    if d > MAX_GRID_DIM:
        raise UnsupportedDimensionError(f"grid posterior supports d <= {MAX_GRID_DIM}, got d={d}")
    c = 8.0 * prior.gamma if box_half_width is None else float(box_half_width)
    if not (np.isfinite(c) and c > 0):
        raise InvalidArgumentError(f"box_half_width must be positive, got {box_half_width!r}")
    n = GRID_NODES[d] if nodes_per_dim is None else int(nodes_per_dim)
    if n < 2:
        raise InvalidArgumentError("nodes_per_dim must be at least 2")
    all_nodes, all_lw, owner = [], [], []
    for idx, (S, log_pi) in enumerate(supports):
        sub, lq = _trapezoid_grid(len(S), c, n)
        lq = lq - 0.5 * np.sum(sub**2, axis=1) / prior.gamma**2
        lq = lq - logsumexp(lq) + log_pi
        full = np.zeros((len(sub), d))
        full[:, list(S)] = sub
        all_nodes.append(full)
        all_lw.append(lq)
        owner.append(np.full(len(sub), idx))
    lw = np.concatenate(all_lw)
    return GridPosterior(
        family, prior, float(lam), d, 0, 0.0,
        supports=tuple(S for S, _ in supports),
        nodes=np.concatenate(all_nodes), log_weights=lw - logsumexp(lw),
        owner=np.concatenate(owner),
    )


def point_mass(family: GlmFamily, theta, lam: float = 1.0, prior: Prior | None = None) -> GridPosterior:
    """Degenerate grid holding all mass at ``theta``; updates leave it in place."""
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    d = theta.shape[1]
    return GridPosterior(
        family, prior or Prior(1.0), float(lam), d, 0, 0.0,
        supports=(tuple(range(d)),), nodes=theta, log_weights=np.zeros(1),
        owner=np.zeros(1, dtype=int),
    )


# -- per-round quantities -----------------------------------------------------


def _check_round(post, x, y=None):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != post.d:
        raise InvalidArgumentError(f"covariate has dimension {x.shape[0]}, posterior has {post.d}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("covariate must be finite")
    if y is not None:
        if not np.isfinite(y) or not post.family.in_support(y):
            raise InvalidArgumentError(f"label {y!r} outside the {post.family.name} support")
    return x


def _component_stats(post: ConjugatePosterior, x):
    cx = post.covs @ x
    return post.means @ x, cx @ x, cx


def _conj_log_evidence(mz, v, y, lam, eta=1.0, z_star=0.0):
    """``log int exp(-lam * loss(eta z + (1-eta) z_star, y)) N(z; mz, v) dz`` per component."""
    m = eta * mz + (1.0 - eta) * z_star
    s = lam * eta * eta * v
    return -0.5 * lam * _LOG_2PI - 0.5 * np.log1p(s) - 0.5 * lam * (y - m) ** 2 / (1.0 + s)


def _node_loss(post: GridPosterior, x, y, eta=1.0, theta_star=None):
    z = post.nodes @ x
    if eta != 1.0:
        z = eta * z + (1.0 - eta) * float(np.asarray(theta_star, dtype=float) @ x)
    return loss_from_natural(post.family, z, y)


def _log_mix(post, x, y, lam, eta=1.0, theta_star=None):
    if isinstance(post, ConjugatePosterior):
        mz, v, _ = _component_stats(post, x)
        z_star = 0.0 if theta_star is None else float(np.asarray(theta_star, dtype=float) @ x)
        return float(logsumexp(post.log_weights + _conj_log_evidence(mz, v, y, lam, eta, z_star)))
    return float(logsumexp(post.log_weights - lam * _node_loss(post, x, y, eta, theta_star)))


def mix_loss(post: Posterior, x, y, lam: float | None = None) -> float:
    """``-(1/lam) log int exp(-lam * loss) dq``; ``lam`` defaults to the posterior's."""
    x = _check_round(post, x, y)
    lam = post.lam if lam is None else lam
    return -_log_mix(post, x, float(y), lam) / lam


def predictive_loss(post: Posterior, x, y) -> float:
    """Negative log of the mixture's predictive density, ``-log int p(y|x,theta) dq``."""
    return mix_loss(post, x, y, lam=1.0)


def shifted_mix_loss(post: Posterior, x, y, theta_star, eta: float, lam: float | None = None) -> float:
    """Mix loss of ``theta -> loss(eta theta + (1 - eta) theta_star)``."""
    if not (0.0 < eta <= 1.0):
        raise InvalidArgumentError(f"eta must lie in (0, 1], got {eta!r}")
    x = _check_round(post, x, y)
    lam = post.lam if lam is None else lam
    return -_log_mix(post, x, float(y), lam, eta, theta_star) / lam


def ewa_update(post: Posterior, x, y) -> Posterior:
    """Tilt by ``exp(-lam * loss_t)`` and renormalise."""
    x = _check_round(post, x, y)
    y = float(y)
    lam = post.lam
    if isinstance(post, ConjugatePosterior):
        mz, v, cx = _component_stats(post, x)
        la = _conj_log_evidence(mz, v, y, lam)
        denom = 1.0 + lam * v
        means = post.means + cx * (lam * (y - mz) / denom)[:, None]
        u = cx * np.sqrt(lam / denom)[:, None]  # u u' is exactly symmetric
        covs = post.covs - u[:, :, None] * u[:, None, :]
        lw = post.log_weights + la
        total = logsumexp(lw)
        if not np.isfinite(total):
            raise NumericalUnderflowError("all mixture weights underflowed", "ewa_update")
        return ConjugatePosterior(
            post.family, post.prior, lam, post.d, post.rounds + 1, post.log_evidence + float(total),
            supports=post.supports, means=means, covs=covs, log_weights=lw - total,
        )
    lw = post.log_weights - lam * _node_loss(post, x, y)
    total = logsumexp(lw)
    if not np.isfinite(total):
        raise NumericalUnderflowError("all grid weights underflowed", "ewa_update")
    return GridPosterior(
        post.family, post.prior, lam, post.d, post.rounds + 1, post.log_evidence + float(total),
        supports=post.supports, nodes=post.nodes, log_weights=lw - total, owner=post.owner,
    )


def _clipped_normal_mean(m, s, b):
    """``E[clip(Z, -b, b)]`` for ``Z ~ N(m, s^2)``, vectorised; ``s = 0`` allowed."""
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    out = np.clip(m, -b, b)
    pos = s > 0
    if np.any(pos):
        mm, ss = m[pos], s[pos]
        lo, hi = (-b - mm) / ss, (b - mm) / ss
        Plo, Phi = ndtr(lo), ndtr(hi)
        plo = _INV_SQRT_2PI * np.exp(-0.5 * lo * lo)
        phi = _INV_SQRT_2PI * np.exp(-0.5 * hi * hi)
        inner = mm * (Phi - Plo) + ss * (plo - phi)
        out = out.copy()
        out[pos] = np.clip(-b * Plo + b * (1.0 - Phi) + inner, -b, b)
    return out


def pseudo_label(post_next: Posterior, x, b: float) -> float:
    """``int clip(<theta, x>, -b, b) dq_{t+1}``; pass the posterior that has seen round t."""
    if not b > 0:
        raise InvalidArgumentError(f"b must be positive, got {b!r}")
    x = _check_round(post_next, x)
    w = np.exp(post_next.log_weights)
    if isinstance(post_next, ConjugatePosterior):
        mz, v, _ = _component_stats(post_next, x)
        vals = _clipped_normal_mean(mz, np.sqrt(np.maximum(v, 0.0)), b)
    else:
        vals = np.clip(post_next.nodes @ x, -b, b)
    return float(np.clip(w @ vals, -b, b))


def posterior_mean(post: Posterior) -> np.ndarray:
    w = np.exp(post.log_weights)
    src = post.means if isinstance(post, ConjugatePosterior) else post.nodes
    return w @ src


def support_weights(post: Posterior) -> dict:
    """Posterior probability of each support."""
    w = np.exp(post.log_weights)
    if isinstance(post, GridPosterior):
        w = np.bincount(post.owner, weights=w, minlength=len(post.supports))
    return {S: float(p) for S, p in zip(post.supports, w)}


# -- regret -------------------------------------------------------------------


def _total_loss(family, log, theta):
    return float(np.sum(loss_from_natural(family, log.X @ np.asarray(theta, dtype=float), log.Y)))


def telescoped_regret(prior_post: Posterior, log: ObservationLog, theta_bar) -> float:
    """``-(1/lam) log int exp(-lam sum_t (loss_t - loss_t(theta_bar))) dq_1`` as a single integral.

    This does not replay the updates, so it independently checks
    :func:`replay_regret`.
    """
    if prior_post.rounds != 0:
        raise InvalidArgumentError("telescoped_regret expects the initial posterior q_1")
    theta_bar = np.asarray(theta_bar, dtype=float)
    if not np.all(np.isfinite(theta_bar)) or theta_bar.shape != (prior_post.d,):
        raise InvalidArgumentError("theta_bar must be a finite vector of the posterior's dimension")
    if log.n == 0:
        return 0.0
    lam = prior_post.lam
    X, Y = np.asarray(log.X), np.asarray(log.Y)
    if isinstance(prior_post, ConjugatePosterior):
        g2 = prior_post.prior.gamma**2
        log_z = []
        for S in prior_post.supports:
            XS = X[:, list(S)]
            A = lam * XS.T @ XS + np.eye(len(S)) / g2
            bvec = lam * XS.T @ Y
            quad = float(bvec @ np.linalg.solve(A, bvec)) if len(S) else 0.0
            logdet = np.linalg.slogdet(g2 * A)[1] if len(S) else 0.0
            log_z.append(-0.5 * logdet + 0.5 * quad - 0.5 * lam * float(Y @ Y) - 0.5 * lam * len(Y) * _LOG_2PI)
        total = logsumexp(prior_post.log_weights + np.array(log_z))
    else:
        Z = prior_post.nodes @ X.T  # (nodes, rounds)
        cum = np.sum(loss_from_natural(prior_post.family, Z, Y[None, :]), axis=1)
        total = logsumexp(prior_post.log_weights - lam * cum)
    if not np.isfinite(total):
        raise NumericalUnderflowError("cumulative evidence underflowed", "telescoped_regret")
    return -float(total) / lam - _total_loss(prior_post.family, log, theta_bar)


@dataclass(frozen=True)
class ChainResult:
    """Per-round outputs of running the forecaster over a log."""

    mix_losses: np.ndarray
    pseudo_labels: np.ndarray | None
    final: Posterior


def run_chain(prior_post: Posterior, log: ObservationLog, b: float | None = None) -> ChainResult:
    """Replay ``ewa_update`` over ``log``; pseudo-labels (if ``b`` given) use ``q_{t+1}``."""
    post = prior_post
    losses = np.empty(log.n)
    labels = np.empty(log.n) if b is not None else None
    X, Y = np.asarray(log.X), np.asarray(log.Y)
    for t in range(log.n):
        losses[t] = mix_loss(post, X[t], Y[t])
        post = ewa_update(post, X[t], Y[t])
        if b is not None:
            labels[t] = pseudo_label(post, X[t], b)
    return ChainResult(losses, labels, post)


def replay_regret(prior_post: Posterior, log: ObservationLog, theta_bar) -> float:
    """``sum_t (mix_loss_t - loss_t(theta_bar))`` by sequential updates."""
    chain = run_chain(prior_post, log)
    return float(np.sum(chain.mix_losses)) - _total_loss(prior_post.family, log, theta_bar)


# -- batches of independent chains ----------------------------------------------


class PosteriorBatch:
    """``R`` independent copies of one initial posterior, advanced together.

    Copy ``r`` sees its own round ``(X[r], Y[r])``.  Unlike :class:`Posterior`
    this object is mutable: :meth:`update` works in place.  It exists for
    Monte Carlo loops; :meth:`posterior` extracts copy ``r`` as an ordinary
    posterior, which the tests compare with the sequential path.
    """

    def __init__(self, post: Posterior, R: int):
        if R < 1:
            raise InvalidArgumentError("batch size must be >= 1")
        self.template = post
        self.R = int(R)
        self.lam = post.lam
        self.family = post.family
        self.d = post.d
        self.rounds = post.rounds
        self.log_evidence = np.full(R, post.log_evidence)
        self.conjugate = isinstance(post, ConjugatePosterior)
        self.log_weights = np.tile(post.log_weights, (R, 1))
        if self.conjugate:
            self.means = np.tile(post.means, (R, 1, 1))
            self.covs = np.tile(post.covs, (R, 1, 1, 1))
        else:
            self.nodes = post.nodes

    def _check(self, X, Y=None):
        X = np.asarray(X, dtype=float)
        if X.shape != (self.R, self.d):
            raise InvalidArgumentError(f"expected covariates of shape {(self.R, self.d)}, got {X.shape}")
        if Y is not None:
            Y = np.asarray(Y, dtype=float).reshape(-1)
            if Y.shape != (self.R,) or not np.all(self.family.in_support(Y)):
                raise InvalidArgumentError("labels must be (R,) and inside the family support")
        return X, Y

    def _stats(self, X):
        cx = np.einsum("rcij,rj->rci", self.covs, X)
        return np.einsum("rci,ri->rc", self.means, X), np.einsum("rci,ri->rc", cx, X), cx

    def _log_mix(self, X, Y, lam, eta=1.0, theta_star=None):
        z_star = 0.0 if theta_star is None else np.sum(X * np.asarray(theta_star, dtype=float), axis=-1)
        if self.conjugate:
            mz, v, _ = self._stats(X)
            zs = z_star if np.ndim(z_star) == 0 else z_star[:, None]
            la = _conj_log_evidence(mz, v, Y[:, None], lam, eta, zs)
            return logsumexp(self.log_weights + la, axis=1)
        Z = X @ self.nodes.T
        if eta != 1.0:
            Z = eta * Z + (1.0 - eta) * (z_star if np.ndim(z_star) == 0 else z_star[:, None])
        return logsumexp(self.log_weights - lam * loss_from_natural(self.family, Z, Y[:, None]), axis=1)

    def mix_loss(self, X, Y, lam: float | None = None) -> np.ndarray:
        X, Y = self._check(X, Y)
        lam = self.lam if lam is None else lam
        return -self._log_mix(X, Y, lam) / lam

    def shifted_mix_loss(self, X, Y, theta_star, eta: float, lam: float | None = None) -> np.ndarray:
        if not (0.0 < eta <= 1.0):
            raise InvalidArgumentError(f"eta must lie in (0, 1], got {eta!r}")
        X, Y = self._check(X, Y)
        lam = self.lam if lam is None else lam
        return -self._log_mix(X, Y, lam, eta, theta_star) / lam

    def update(self, X, Y) -> None:
        X, Y = self._check(X, Y)
        lam = self.lam
        if self.conjugate:
            mz, v, cx = self._stats(X)
            la = _conj_log_evidence(mz, v, Y[:, None], lam)
            denom = 1.0 + lam * v
            self.means = self.means + cx * (lam * (Y[:, None] - mz) / denom)[..., None]
            u = cx * np.sqrt(lam / denom)[..., None]
            self.covs = self.covs - u[..., :, None] * u[..., None, :]
            lw = self.log_weights + la
        else:
            lw = self.log_weights - lam * loss_from_natural(self.family, X @ self.nodes.T, Y[:, None])
        total = logsumexp(lw, axis=1)
        if not np.all(np.isfinite(total)):
            raise NumericalUnderflowError("mixture weights underflowed", "ewa_update")
        self.log_weights = lw - total[:, None]
        self.log_evidence = self.log_evidence + total
        self.rounds += 1

    def pseudo_label(self, X, b: float) -> np.ndarray:
        if not b > 0:
            raise InvalidArgumentError(f"b must be positive, got {b!r}")
        X, _ = self._check(X)
        w = np.exp(self.log_weights)
        if self.conjugate:
            mz, v, _ = self._stats(X)
            vals = _clipped_normal_mean(mz.reshape(-1), np.sqrt(np.maximum(v, 0.0)).reshape(-1), b).reshape(mz.shape)
        else:
            vals = np.clip(X @ self.nodes.T, -b, b)
        return np.clip(np.sum(w * vals, axis=1), -b, b)

    def posterior(self, r: int) -> Posterior:
        t = self.template
        common = (t.family, t.prior, t.lam, t.d, self.rounds, float(self.log_evidence[r]))
        if self.conjugate:
            return ConjugatePosterior(
                *common, supports=t.supports, means=self.means[r].copy(), covs=self.covs[r].copy(),
                log_weights=self.log_weights[r].copy(),
            )
        return GridPosterior(
            *common, supports=t.supports, nodes=t.nodes, log_weights=self.log_weights[r].copy(), owner=t.owner
        )
