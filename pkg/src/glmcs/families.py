"""GLM families, per-round losses and the observation log.

A family is the canonical exponential-family model

    p(y | x, theta) = exp(<theta, x> y - psi(<theta, x>)) h(y),

described by its log-partition ``psi`` and carrier ``h``.  Losses returned
here are full negative log densities (the ``-log h(y)`` term is kept) so that
likelihood ratios built from them are exact.

Only globally smooth families are built in (``psi'' <= M`` everywhere).  A new
family is added by constructing a :class:`GlmFamily` with vectorised callables
and registering it in ``FAMILIES``; Poisson (``psi = exp``) is deliberately
absent because it has no global smoothness constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DomainError, InvalidArgumentError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GlmFamily:
    """Log-partition function and friends for a one-parameter GLM.

    All callables are vectorised over numpy arrays.

    Attributes
    ----------
    name : str
    log_partition : callable
        ``psi(z)``.
    mean : callable
        ``mu(z) = psi'(z)``.
    variance : callable
        ``psi''(z)``.
    smoothness : float
        Global bound ``M >= psi''``.
    strong_convexity_at : callable
        ``b -> m(b) = inf_{|z| <= b} psi''(z)``.
    log_carrier : callable
        ``y -> log h(y)``.
    label_sampler : callable
        ``(z, rng) -> Y`` with ``E[Y] = mu(z)``.
    in_support : callable
        ``y -> bool array``.
    """

    name: str
    log_partition: Callable[[np.ndarray], np.ndarray]
    mean: Callable[[np.ndarray], np.ndarray]
    variance: Callable[[np.ndarray], np.ndarray]
    smoothness: float
    strong_convexity_at: Callable[[float], float]
    log_carrier: Callable[[np.ndarray], np.ndarray]
    label_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    in_support: Callable[[np.ndarray], np.ndarray]

    @property
    def is_quadratic(self) -> bool:
        return self.name == "gaussian"

    def __repr__(self):
        return f"GlmFamily({self.name!r})"


# -- gaussian -----------------------------------------------------------------


def _gauss_psi(z):
    z = np.asarray(z, dtype=float)
    return 0.5 * z * z


def _gauss_mu(z):
    return np.asarray(z, dtype=float) * 1.0


def _gauss_var(z):
    return np.ones_like(np.asarray(z, dtype=float))


def _gauss_log_h(y):
    y = np.asarray(y, dtype=float)
    return -0.5 * y * y - _HALF_LOG_2PI


def _gauss_sample(z, rng):
    z = np.asarray(z, dtype=float)
    return z + rng.standard_normal(z.shape)


def _gauss_support(y):
    return np.isfinite(np.asarray(y, dtype=float))


GAUSSIAN = GlmFamily(
    name="gaussian",
    log_partition=_gauss_psi,
    mean=_gauss_mu,
    variance=_gauss_var,
    smoothness=1.0,
    strong_convexity_at=lambda b: 1.0,
    log_carrier=_gauss_log_h,
    label_sampler=_gauss_sample,
    in_support=_gauss_support,
)


# -- logistic -----------------------------------------------------------------


def _logistic_psi(z):
    # log(1 + e^z) without overflow for large |z|
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _logistic_var(z):
    p = expit(z)
    return p * (1.0 - p)


def _logistic_m(b):
    # psi'' is even and decreasing in |z|, so the infimum sits at |z| = b
    p = float(expit(b))
    return p * (1.0 - p)


def _logistic_log_h(y):
    return np.zeros_like(np.asarray(y, dtype=float))


def _logistic_sample(z, rng):
    z = np.asarray(z, dtype=float)
    return (rng.random(z.shape) < expit(z)).astype(float)


def _logistic_support(y):
    y = np.asarray(y, dtype=float)
    return (y == 0.0) | (y == 1.0)


LOGISTIC = GlmFamily(
    name="logistic",
    log_partition=_logistic_psi,
    mean=lambda z: expit(np.asarray(z, dtype=float)),
    variance=_logistic_var,
    smoothness=0.25,
    strong_convexity_at=_logistic_m,
    log_carrier=_logistic_log_h,
    label_sampler=_logistic_sample,
    in_support=_logistic_support,
)

FAMILIES = {"gaussian": GAUSSIAN, "logistic": LOGISTIC}


def get_family(name: str | GlmFamily) -> GlmFamily:
    if isinstance(name, GlmFamily):
        return name
    try:
        return FAMILIES[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown family {name!r}; available: {sorted(FAMILIES)}"
        ) from None


# -- losses -------------------------------------------------------------------


def _check_finite(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite, got {value!r}")
    return arr


def loss_from_natural(family: GlmFamily, z, y):
    """Vectorised ``-z*y + psi(z) - log h(y)``; no validation."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return -z * y + family.log_partition(z) - family.log_carrier(y)


def negloglik(family: GlmFamily, x, y, theta) -> float:
    """Negative log likelihood of one round, ``-log p(y | x, theta)``."""
    x = _check_finite("x", x)
    theta = _check_finite("theta", theta)
    y = float(_check_finite("y", y))
    if x.shape != theta.shape:
        raise InvalidArgumentError(f"x has shape {x.shape}, theta {theta.shape}")
    if not family.in_support(y):
        raise DomainError(f"label {y!r} outside the support of the {family.name} family")
    return float(loss_from_natural(family, x @ theta, y))


def negloglik_grad(family: GlmFamily, x, y, theta) -> np.ndarray:
    """Gradient in theta: ``(mu(<theta, x>) - y) x``."""
    x = np.asarray(x, dtype=float)
    return (float(family.mean(x @ np.asarray(theta, dtype=float))) - float(y)) * x


def d_psi(family: GlmFamily, z, z_prime):
    """``psi(z)/2 + psi(z')/2 - psi((z + z')/2)``, elementwise and >= 0."""
    z = _check_finite("z", z)
    zp = _check_finite("z_prime", z_prime)
    psi = family.log_partition
    out = 0.5 * psi(z) + 0.5 * psi(zp) - psi(0.5 * (z + zp))
    # convexity makes this nonnegative; clip roundoff on the order of 1e-17
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def shifted_loss(family: GlmFamily, x, y, theta, theta_star, eta: float) -> float:
    """Loss evaluated at ``eta*theta + (1 - eta)*theta_star``."""
    if not (0.0 < eta <= 1.0):
        raise InvalidArgumentError(f"eta must lie in (0, 1], got {eta!r}")
    theta = _check_finite("theta", theta)
    theta_star = _check_finite("theta_star", theta_star)
    return negloglik(family, x, y, eta * theta + (1.0 - eta) * theta_star)


def truncate(z, b):
    """Clamp ``z`` to ``[-b, b]``; ``b`` may be an array broadcasting with ``z``."""
    b_arr = np.asarray(b, dtype=float)
    if not np.all(b_arr > 0):
        raise InvalidArgumentError(f"truncation level must be positive, got {b!r}")
    out = np.clip(np.asarray(z, dtype=float), -b_arr, b_arr)
    return float(out) if out.ndim == 0 else out


def sample_label(family: GlmFamily, z, rng: np.random.Generator):
    z = _check_finite("z", z)
    out = family.label_sampler(z, rng)
    return float(out) if np.ndim(out) == 0 else out


# -- observation log ----------------------------------------------------------


class ObservationLog:
    """Append-only record of rounds ``(X_t, Y_t)`` with a running Gram matrix.

    Rounds are numbered from 1.  ``X``, ``Y`` and ``gram`` return read-only
    views; mutate only through :meth:`append` / :meth:`extend`.
    """

    def __init__(self, d: int, capacity: int = 64):
        if d < 0:
            raise InvalidArgumentError(f"dimension must be >= 0, got {d}")
        self.d = int(d)
        self._X = np.empty((max(capacity, 1), self.d))
        self._Y = np.empty(max(capacity, 1))
        self._n = 0
        self._gram = np.zeros((self.d, self.d))

    @classmethod
    def from_arrays(cls, X, Y) -> "ObservationLog":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim != 2:
            raise InvalidArgumentError("X must be a 2-d array (n, d)")
        log = cls(X.shape[1], capacity=max(len(X), 1))
        log.extend(X, Y)
        return log

    def __len__(self):
        return self._n

    @property
    def n(self) -> int:
        return self._n

    def _grow(self, needed):
        cap = len(self._Y)
        if needed <= cap:
            return
        new_cap = max(needed, 2 * cap)
        X = np.empty((new_cap, self.d))
        Y = np.empty(new_cap)
        X[: self._n] = self._X[: self._n]
        Y[: self._n] = self._Y[: self._n]
        self._X, self._Y = X, Y

    def append(self, x, y) -> None:
        x = _check_finite("x", x).reshape(-1)
        y = float(_check_finite("y", y))
        if x.shape[0] != self.d:
            raise InvalidArgumentError(f"covariate has dimension {x.shape[0]}, log has {self.d}")
        self._grow(self._n + 1)
        self._X[self._n] = x
        self._Y[self._n] = y
        self._n += 1
        self._gram += np.outer(x, x)

    def extend(self, X, Y) -> None:
        X = _check_finite("X", X)
        Y = _check_finite("Y", Y).reshape(-1)
        if X.ndim != 2 or X.shape[1] != self.d or X.shape[0] != Y.shape[0]:
            raise InvalidArgumentError(f"expected X of shape (k, {self.d}) and Y of shape (k,)")
        k = X.shape[0]
        self._grow(self._n + k)
        self._X[self._n : self._n + k] = X
        self._Y[self._n : self._n + k] = Y
        self._n += k
        self._gram += X.T @ X

    def _view(self, arr):
        v = arr[: self._n]
        v = v.view()
        v.flags.writeable = False
        return v

    @property
    def X(self) -> np.ndarray:
        return self._view(self._X)

    @property
    def Y(self) -> np.ndarray:
        return self._view(self._Y)

    @property
    def gram(self) -> np.ndarray:
        g = self._gram.view()
        g.flags.writeable = False
        return g

    def round(self, t: int):
        """Return ``(X_t, Y_t)`` for 1-based round index ``t``."""
        if not 1 <= t <= self._n:
            raise IndexError(f"round {t} outside 1..{self._n}")
        return self._X[t - 1].copy(), float(self._Y[t - 1])

    def prefix(self, n: int) -> "ObservationLog":
        """Independent copy holding rounds ``1..n``."""
        if not 0 <= n <= self._n:
            raise InvalidArgumentError(f"prefix length {n} outside 0..{self._n}")
        return ObservationLog.from_arrays(self._X[:n], self._Y[:n]) if n else ObservationLog(self.d)

    def restrict(self, support) -> "ObservationLog":
        """Copy with covariates restricted to the coordinates in ``support``."""
        idx = np.asarray(sorted(support), dtype=int)
        out = ObservationLog(len(idx), capacity=max(self._n, 1))
        if self._n:
            out.extend(self._X[: self._n][:, idx], self._Y[: self._n])
        return out
