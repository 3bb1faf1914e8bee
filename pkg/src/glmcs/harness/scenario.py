"""Scenario description, seeding protocol and data generation.

Seeding: every stream is ``numpy.random.Generator(Philox(SeedSequence(seed,
spawn_key=key)))``.  Key ``(0,)`` draws the true parameter, key ``(2,)`` a
generated fixed design, and key ``(1, r)`` drives replication ``r``.  Within a
replication, oblivious processes draw all ``n`` covariates and then all ``n``
labels; the adaptive process draws, for each round, its candidate pool and
then the label.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..families import GlmFamily, get_family

SET_TYPES = ("analytic", "transductive", "det-alg", "ewa-alg", "sparse")
COVARIATE_KINDS = ("iid-gaussian", "iid-uniform", "fixed-design", "adaptive-greedy")
THETA_KINDS = ("explicit", "sphere", "sparse")

_SET_DEFAULTS = {
    "analytic": {"gamma": 1.0},
    "transductive": {"b": 2.0},
    "det-alg": {"gamma": 1.0, "b": 1.0, "mode": "oracle"},
    "ewa-alg": {"gamma": 1.0, "b": 1.0, "mode": "oracle", "B": 1.0, "nodes_per_dim": None},
    "sparse": {"b": 1.0, "B": 1.0, "s": 1, "L_inf": 1.0, "M": None, "m": None, "mode": "bound"},
}


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, key...)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def geometric_checkpoints(n: int) -> list[int]:
    out, c = [], 1
    while c <= n:
        out.append(c)
        c *= 2
    if n >= 1 and out[-1] != n:
        out.append(n)
    return out


@dataclass
class ScenarioConfig:
    family: str = "gaussian"
    d: int = 2
    n: int = 100
    delta: float = 0.05
    reps: int = 100
    seed: int = 0
    theta_star: dict = field(default_factory=lambda: {"kind": "sphere", "norm": 1.0})
    covariates: dict = field(default_factory=lambda: {"kind": "iid-gaussian", "scale": 1.0})
    checkpoints: list | None = None
    polar_b: float | None = None
    sets: list = field(default_factory=lambda: [{"type": "analytic", "gamma": 1.0}])
    forecaster: dict = field(default_factory=lambda: {"kind": "ewa", "gamma": 1.0, "lam": 1.0, "eta": 1.0})
    regret: dict = field(default_factory=dict)
    chunk: int = 256

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**copy.deepcopy(raw))
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    @property
    def glm(self) -> GlmFamily:
        try:
            return get_family(self.family)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolved_checkpoints(self) -> list[int]:
        if self.checkpoints is None:
            return geometric_checkpoints(self.n)
        cps = sorted({int(c) for c in self.checkpoints if 1 <= int(c) <= self.n})
        if not cps:
            raise ConfigError("no checkpoint inside 1..n")
        return cps

    def resolved_sets(self) -> list[dict]:
        out = []
        for spec in self.sets:
            t = spec.get("type")
            merged = dict(_SET_DEFAULTS[t])
            merged.update(spec)
            merged.setdefault("label", t)
            out.append(merged)
        return out

    def validate(self) -> None:
        self.glm
        for name in ("d", "n", "reps", "chunk"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if name == "n" else 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or self.seed < 0 or self.seed >= 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not (isinstance(self.delta, (int, float)) and 0 < self.delta < 1):
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta!r}")
        if self.polar_b is not None and not self.polar_b > 0:
            raise ConfigError("polar_b must be positive")
        kind = self.theta_star.get("kind")
        if kind not in THETA_KINDS:
            raise ConfigError(f"theta_star.kind must be one of {THETA_KINDS}, got {kind!r}")
        if kind == "explicit" and len(self.theta_star.get("value", [])) != self.d:
            raise ConfigError("explicit theta_star must have d entries")
        if kind == "sparse" and not 1 <= int(self.theta_star.get("s", 1)) <= self.d:
            raise ConfigError("theta_star.s must lie in 1..d")
        ck = self.covariates.get("kind")
        if ck not in COVARIATE_KINDS:
            raise ConfigError(f"covariates.kind must be one of {COVARIATE_KINDS}, got {ck!r}")
        pts = self.covariates.get("points")
        if ck == "fixed-design" and pts is not None:
            arr = np.asarray(pts, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != self.d or len(arr) == 0:
                raise ConfigError("fixed-design points must be a non-empty (k, d) list")
        for spec in self.sets:
            t = spec.get("type") if isinstance(spec, dict) else None
            if t not in SET_TYPES:
                raise ConfigError(f"set type must be one of {SET_TYPES}, got {t!r}")
            unknown = set(spec) - set(_SET_DEFAULTS[t]) - {"type", "label"}
            if unknown:
                raise ConfigError(f"unknown parameters for set {t!r}: {sorted(unknown)}")
            if "mode" in spec and spec["mode"] not in ("oracle", "bound"):
                raise ConfigError(f"mode must be 'oracle' or 'bound', got {spec['mode']!r}")
            if t == "transductive" and ck == "adaptive-greedy":
                raise ConfigError("transductive sets need obliviously drawn covariates, not adaptive-greedy")
            if t == "det-alg" and spec.get("mode", "oracle") != "oracle":
                raise ConfigError("det-alg sets support oracle mode only (no uniform regret bound is available)")
            if t == "sparse" and spec.get("mode", "bound") != "bound":
                raise ConfigError("sparse sets are bound-mode only")
        labels = [s.get("label", s.get("type")) for s in self.sets]
        if len(set(labels)) != len(labels):
            raise ConfigError("set labels must be unique; add a 'label' to repeated set types")
        fk = self.forecaster.get("kind", "ewa")
        if fk not in ("ewa", "point-mass"):
            raise ConfigError(f"forecaster.kind must be 'ewa' or 'point-mass', got {fk!r}")
        eta = self.forecaster.get("eta", 1.0)
        if not 0 < eta <= 1:
            raise ConfigError(f"forecaster.eta must lie in (0, 1], got {eta!r}")


# -- data generation ------------------------------------------------------------


def draw_theta_star(cfg: ScenarioConfig) -> np.ndarray:
    spec = cfg.theta_star
    rng = stream(cfg.seed, 0)
    d = cfg.d
    if spec["kind"] == "explicit":
        return np.asarray(spec["value"], dtype=float)
    norm = float(spec.get("norm", 1.0))
    if spec["kind"] == "sphere":
        v = rng.standard_normal(d)
        return norm * v / np.linalg.norm(v)
    s = int(spec.get("s", 1))
    support = np.sort(rng.choice(d, size=s, replace=False))
    v = rng.standard_normal(s)
    theta = np.zeros(d)
    theta[support] = norm * v / np.linalg.norm(v)
    return theta


def fixed_design(cfg: ScenarioConfig) -> np.ndarray:
    pts = cfg.covariates.get("points")
    if pts is not None:
        base = np.asarray(pts, dtype=float)
        reps = math.ceil(cfg.n / len(base))
        return np.tile(base, (reps, 1))[: cfg.n]
    rng = stream(cfg.seed, 2)
    return float(cfg.covariates.get("scale", 1.0)) * rng.standard_normal((cfg.n, cfg.d))


@dataclass
class Replication:
    """Data of one replication: covariates, labels and the parameter used."""

    X: np.ndarray
    Y: np.ndarray
    theta_star: np.ndarray
    theta_scale: float


def polar_level(cfg: ScenarioConfig) -> float | None:
    """Tightest declared bound on ``|<theta_star, X_t>|`` (config plus per-set ``b``)."""
    levels = [cfg.polar_b] if cfg.polar_b is not None else []
    for spec in cfg.resolved_sets():
        if spec["type"] in ("det-alg", "ewa-alg", "sparse", "transductive"):
            levels.append(float(spec["b"]))
    return min(levels) if levels else None


def generate_replication(cfg: ScenarioConfig, r: int, theta_star: np.ndarray, design=None) -> Replication:
    """Draw covariates and labels of replication ``r``.

    Under a polar level ``b`` the parameter is scaled down (per replication,
    recorded in ``theta_scale``) for oblivious covariates; adaptive-greedy
    candidates are instead shrunk towards zero so ``|<theta_star, x>| <= b``.
    """
    fam = cfg.glm
    rng = stream(cfg.seed, 1, r)
    n, d = cfg.n, cfg.d
    spec = cfg.covariates
    kind = spec["kind"]
    scale = float(spec.get("scale", 1.0))
    b = polar_level(cfg)
    theta = np.array(theta_star, dtype=float)
    factor = 1.0
    if kind == "adaptive-greedy":
        pool = int(spec.get("pool", 20))
        exploit = float(spec.get("exploit", 0.0))
        X = np.empty((n, d))
        Y = np.empty(n)
        P = np.eye(d)  # Lambda + I
        moment = np.zeros(d)
        for t in range(n):
            cand = scale * rng.standard_normal((pool, d))
            if b is not None:
                z = np.abs(cand @ theta)
                shrink = np.where(z > b, b / np.maximum(z, 1e-300), 1.0)
                cand = cand * shrink[:, None]
            Pinv = np.linalg.inv(P)
            score = np.einsum("ij,jk,ik->i", cand, Pinv, cand)
            if exploit:
                score = score + exploit * (cand @ (Pinv @ moment))
            x = cand[int(np.argmax(score))]
            y = float(fam.label_sampler(np.array(x @ theta), rng))
            X[t], Y[t] = x, y
            P += np.outer(x, x)
            moment += y * x
        return Replication(X, Y, theta, 1.0)
    if kind == "iid-gaussian":
        X = scale * rng.standard_normal((n, d))
    elif kind == "iid-uniform":
        X = rng.uniform(-scale, scale, size=(n, d))
    else:
        X = design if design is not None else fixed_design(cfg)
    if b is not None and n:
        zmax = float(np.max(np.abs(X @ theta)))
        if zmax > b:
            factor = b / zmax
            theta = theta * factor
    Y = fam.label_sampler(X @ theta, rng) if n else np.empty(0)
    return Replication(X, np.asarray(Y, dtype=float), theta, factor)
