"""Monte Carlo experiments behind the CLI.

Every experiment returns a list of row dicts with the CSV columns
``rep, checkpoint, set_type, mode, covered, beta, width_metric, extra_json``.
Per-replication rows come first (ordered by replication, checkpoint, set),
followed by rows with ``rep = "summary"``.

Column meanings per experiment:

* coverage / width -- ``covered``: the true parameter is in the set;
  ``beta``: the width; ``width_metric``: log volume for ellipsoidal sets,
  otherwise ``beta`` again (named in ``extra_json``).  The summary row with
  ``checkpoint = "all"`` reports uniform coverage, i.e. membership at every
  checkpoint, which lower-bounds coverage at all times.
* martingale -- ``covered``: the running maximum of ``log M_t`` over all
  rounds so far stayed below ``log(1/delta)``; ``beta``: ``log M_n``;
  ``width_metric``: that running maximum.  Summary rows carry the mean of
  ``M_n`` (``beta``) and its standard error (``width_metric``).
* regret -- ``covered``: realised regret <= bound + 1e-6; ``beta``: the
  bound; ``width_metric``: the realised (telescoped) regret.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from ..confsets import (
    Mode,
    PseudoLabelEllipsoid,
    algorithmic_det_set,
    analytic_adaptive_set,
    sparse_width,
    transductive_set,
)
from ..errors import ConfigError
from ..estimators import restricted_mle, ridge_mle
from ..families import ObservationLog, loss_from_natural, truncate
from ..forecasters import PosteriorBatch, Prior, ewa_init, point_mass, replay_regret, telescoped_regret
from ..infogain import (
    ewa_regret_bound,
    info_gain_bound,
    info_gain_exact,
    restricted_info_gain,
    sparse_regret_bound,
)
from .scenario import ScenarioConfig, draw_theta_star, fixed_design, generate_replication, stream

HEADER = ("rep", "checkpoint", "set_type", "mode", "covered", "beta", "width_metric", "extra_json")
SLACK_TOL = 1e-6
_SPARSE_BATCH_BYTES = 50_000_000


# -- output -------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json(extra):
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.floating, float)):
            f = float(v)
            return f if math.isfinite(f) else repr(f)
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, np.bool_):
            return bool(v)
        return v

    return json.dumps(clean(extra), sort_keys=True, separators=(",", ":"))


def write_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(HEADER)
    for row in rows:
        w.writerow([_fmt(row[k]) if k != "extra_json" else _json(row.get(k, {})) for k in HEADER])


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def _row(rep, cp, set_type, mode, covered, beta, width, extra):
    return {
        "rep": rep, "checkpoint": cp, "set_type": set_type, "mode": mode, "covered": covered,
        "beta": beta, "width_metric": width, "extra_json": extra,
    }


def binomial_threshold(delta: float, R: int) -> float:
    """``delta + 3 sqrt(delta (1 - delta) / R)``."""
    return delta + 3.0 * math.sqrt(delta * (1.0 - delta) / R)


# -- data ---------------------------------------------------------------------


def _replications(cfg, lo, hi, theta0, design):
    return [generate_replication(cfg, r, theta0, design) for r in range(lo, hi)]


def _design(cfg):
    return fixed_design(cfg) if cfg.covariates["kind"] == "fixed-design" else None


def _own_losses(fam, reps):
    return np.stack([loss_from_natural(fam, rp.X @ rp.theta_star, rp.Y) for rp in reps])


# -- per-set evaluators ---------------------------------------------------------
# each returns, per replication, a list over checkpoints of
# (covered, beta, width_metric, extra)


def _width_metric(report):
    lv = report.get("log_volume")
    if lv is None:
        return report["beta"], "beta"
    return lv, "log_volume"


def _eval_analytic(cfg, spec, reps, cps):
    fam = cfg.glm
    out = []
    for rp in reps:
        log = ObservationLog.from_arrays(rp.X, rp.Y)
        res = []
        for c in cps:
            cs = analytic_adaptive_set(log.prefix(c), fam, float(spec["gamma"]), cfg.delta)
            wm, name = _width_metric(cs.width_report(extents=False))
            extra = {"beta_rank": cs.beta_rank, "beta_worst_case": cs.beta_worst_case, "width_metric": name}
            res.append((cs.contains(rp.theta_star), cs.beta, wm, extra))
        out.append(res)
    return out


def _eval_transductive(cfg, spec, reps, cps):
    fam = cfg.glm
    out = []
    for rp in reps:
        log = ObservationLog.from_arrays(rp.X, rp.Y)
        res = []
        for c in cps:
            cs = transductive_set(log.prefix(c), fam, float(spec["b"]), cfg.delta)
            wm, name = _width_metric(cs.width_report(extents=False))
            extra = {"kappa": cs.kappa, "width_metric": name, "coverage_kind": "fixed-n"}
            res.append((cs.contains(rp.theta_star), cs.radius, wm, extra))
        out.append(res)
    return out


def _ellipsoid_rows(cfg, rp, cps, labels, m, mode, *, regret=None, widths=None):
    """Pseudo-label ellipsoids at each checkpoint, from a regret path or a width path."""
    res = []
    for c in cps:
        if widths is None:
            cs = algorithmic_det_set(rp.X[:c], labels[:c], m, regret[c - 1], cfg.delta, mode)
        else:
            cs = PseudoLabelEllipsoid(rp.X[:c], np.asarray(labels[:c]), widths[c - 1], cfg.delta, mode, math.nan, m)
        wm, name = _width_metric(cs.width_report())
        extra = {"regret_term": cs.regret_term, "width_metric": name}
        res.append((cs.contains(rp.theta_star), cs.beta, wm, extra))
    return res


def _ftrl_predictions(fam, rp, gamma):
    """Ridge follow-the-leader: theta_t fits rounds ``1..t-1``."""
    n, d = rp.X.shape
    thetas = np.zeros((n, d))
    if fam.is_quadratic:
        A = np.eye(d) / gamma**2
        s = np.zeros(d)
        for t in range(n):
            thetas[t] = np.linalg.solve(A, s)
            A += np.outer(rp.X[t], rp.X[t])
            s += rp.Y[t] * rp.X[t]
        return thetas
    log = ObservationLog.from_arrays(rp.X, rp.Y)
    for t in range(1, n):
        thetas[t] = ridge_mle(log.prefix(t), fam, gamma).solution
    return thetas


def _eval_det_alg(cfg, spec, reps, cps):
    fam = cfg.glm
    b = float(spec["b"])
    m = fam.strong_convexity_at(b)
    out = []
    for rp in reps:
        thetas = _ftrl_predictions(fam, rp, float(spec["gamma"]))
        z = np.sum(thetas * rp.X, axis=1)
        labels = truncate(z, b) if len(z) else z
        regret = np.cumsum(loss_from_natural(fam, z, rp.Y) - loss_from_natural(fam, rp.X @ rp.theta_star, rp.Y))
        out.append(_ellipsoid_rows(cfg, rp, cps, np.atleast_1d(labels), m, Mode.ORACLE, regret=regret))
    return out


def _run_batch(prior, reps, b):
    """Mix losses and pseudo-labels ``(R, n)`` for a batch of replications."""
    R = len(reps)
    n = reps[0].X.shape[0]
    batch = PosteriorBatch(prior, R)
    X = np.stack([rp.X for rp in reps], axis=1)  # (n, R, d)
    Y = np.stack([rp.Y for rp in reps], axis=1)
    mix = np.empty((R, n))
    labels = np.empty((R, n))
    for t in range(n):
        mix[:, t] = batch.mix_loss(X[t], Y[t])
        batch.update(X[t], Y[t])
        labels[:, t] = batch.pseudo_label(X[t], b)
    return mix, labels


def _eval_ewa_alg(cfg, spec, reps, cps):
    fam = cfg.glm
    b, gamma, lam = float(spec["b"]), float(spec["gamma"]), 0.5
    mode = Mode(spec["mode"])
    m = fam.strong_convexity_at(b)
    kw = {} if spec.get("nodes_per_dim") is None else {"nodes_per_dim": int(spec["nodes_per_dim"])}
    prior = ewa_init(fam, cfg.d, Prior(gamma), lam, **kw)
    mix, labels = _run_batch(prior, reps, b)
    own = _own_losses(fam, reps)
    out = []
    for i, rp in enumerate(reps):
        if mode is Mode.ORACLE:
            regret = np.cumsum(mix[i] - own[i])
        else:
            B = float(spec["B"])
            if np.linalg.norm(rp.theta_star) > B * (1 + 1e-12):
                raise ConfigError(f"bound mode assumes |theta_star| <= B = {B}")
            regret = np.empty(len(rp.Y))
            gram = np.zeros((cfg.d, cfg.d))
            for t in range(len(rp.Y)):
                gram += np.outer(rp.X[t], rp.X[t])
                gain = info_gain_bound(gram, fam.smoothness, gamma, lam)
                regret[t] = ewa_regret_bound(0.5 * B**2 / gamma**2, gain, lam)
        out.append(_ellipsoid_rows(cfg, rp, cps, labels[i], m, mode, regret=regret))
    return out


def _eval_sparse(cfg, spec, reps, cps):
    fam = cfg.glm
    b, B, s, L_inf = float(spec["b"]), float(spec["B"]), int(spec["s"]), float(spec["L_inf"])
    m = fam.strong_convexity_at(b) if spec.get("m") is None else float(spec["m"])
    M = fam.smoothness if spec.get("M") is None else float(spec["M"])
    for rp in reps:
        th = rp.theta_star
        if np.linalg.norm(th) > B * (1 + 1e-12) or np.count_nonzero(th) > s:
            raise ConfigError(f"sparse set assumes an {s}-sparse theta_star with norm <= {B}")
        if len(rp.X) and np.max(np.abs(rp.X)) > L_inf:
            raise ConfigError(f"sparse set assumes covariates with max-norm <= {L_inf}")
    prior = ewa_init(fam, cfg.d, Prior(B, sparse=True), 0.5)
    widths = np.array([sparse_width(t, cfg.d, s, M, B, L_inf, m, cfg.delta) for t in range(1, cfg.n + 1)])
    per = max(1, _SPARSE_BATCH_BYTES // (8 * 2**cfg.d * cfg.d * cfg.d))
    out = []
    for lo in range(0, len(reps), per):
        chunk = reps[lo : lo + per]
        _, labels = _run_batch(prior, chunk, b)
        for i, rp in enumerate(chunk):
            out.append(_ellipsoid_rows(cfg, rp, cps, labels[i], m, Mode.BOUND, widths=widths))
    return out


_EVALUATORS = {
    "analytic": _eval_analytic,
    "transductive": _eval_transductive,
    "det-alg": _eval_det_alg,
    "ewa-alg": _eval_ewa_alg,
    "sparse": _eval_sparse,
}


def _set_mode(spec):
    return spec["mode"] if spec["type"] in ("det-alg", "ewa-alg", "sparse") else "none"


# -- coverage / width -----------------------------------------------------------


def coverage_experiment(cfg: ScenarioConfig, *, summary: str = "coverage") -> list[dict]:
    """Membership of the true parameter in every configured set at every checkpoint."""
    cfg.validate()
    cps = cfg.resolved_checkpoints()
    sets = cfg.resolved_sets()
    theta0 = draw_theta_star(cfg)
    design = _design(cfg)
    R = cfg.reps
    results = {spec["label"]: [] for spec in sets}
    scales = []
    for lo in range(0, R, cfg.chunk):
        reps = _replications(cfg, lo, min(R, lo + cfg.chunk), theta0, design)
        scales.extend(rp.theta_scale for rp in reps)
        for spec in sets:
            results[spec["label"]].extend(_EVALUATORS[spec["type"]](cfg, spec, reps, cps))

    rows = []
    for r in range(R):
        for j, c in enumerate(cps):
            for spec in sets:
                cov, beta, wm, extra = results[spec["label"]][r][j]
                extra = dict(extra, theta_scale=scales[r])
                rows.append(_row(r, c, spec["label"], _set_mode(spec), bool(cov), beta, wm, extra))

    thr = binomial_threshold(cfg.delta, R)
    se = math.sqrt(cfg.delta * (1 - cfg.delta) / R)
    for spec in sets:
        res = results[spec["label"]]
        cov = np.array([[x[0] for x in rr] for rr in res], dtype=bool)
        beta = np.array([[x[1] for x in rr] for rr in res])
        wm = np.array([[x[2] for x in rr] for rr in res])
        for j, c in enumerate(cps):
            finite = wm[:, j][np.isfinite(wm[:, j])]
            extra = {
                "reps": R, "miscoverage": 1.0 - cov[:, j].mean(), "se": se, "threshold": thr,
                "median_width_metric": float(np.median(finite)) if finite.size else math.inf,
            }
            rows.append(_row("summary", c, spec["label"], _set_mode(spec), float(cov[:, j].mean()),
                             float(beta[:, j].mean()), float(finite.mean()) if finite.size else math.inf, extra))
        if summary == "coverage":
            uni = cov.all(axis=1).mean()
            extra = {
                "reps": R, "miscoverage": 1.0 - uni, "se": se, "threshold": thr,
                "semantics": "theta_star inside the set at every checkpoint",
                "checkpoints": cps,
            }
            rows.append(_row("summary", "all", spec["label"], _set_mode(spec), float(uni),
                             float(beta[:, -1].mean()), float(np.mean(wm[:, -1])), extra))
    return rows


def width_experiment(cfg: ScenarioConfig) -> list[dict]:
    """Widths of every configured set; summary rows average widths per checkpoint."""
    return coverage_experiment(cfg, summary="width")


# -- martingale -----------------------------------------------------------------


def martingale_validate(cfg: ScenarioConfig, eta: float | None = None) -> list[dict]:
    """Track ``M_t = prod_s p_s(Y_s) / p(Y_s | X_s, theta_star)`` over replications.

    ``p_s`` is the (``eta``-shifted) predictive density of the configured
    forecaster, evaluated at unit scale whatever learning rate drives its
    updates.
    """
    cfg.validate()
    fam = cfg.glm
    fc = dict({"kind": "ewa", "gamma": 1.0, "lam": 1.0, "eta": 1.0}, **cfg.forecaster)
    eta = float(fc["eta"] if eta is None else eta)
    if not 0 < eta <= 1:
        raise ConfigError(f"eta must lie in (0, 1], got {eta!r}")
    cps = cfg.resolved_checkpoints()
    theta0 = draw_theta_star(cfg)
    design = _design(cfg)
    if fc["kind"] == "point-mass":
        prior = point_mass(fam, theta0, float(fc["lam"]))
    else:
        kw = {k: fc[k] for k in ("nodes_per_dim", "box_half_width") if fc.get(k) is not None}
        prior = ewa_init(fam, cfg.d, Prior(float(fc["gamma"])), float(fc["lam"]), **kw)
    log_thr = math.log(1.0 / cfg.delta)
    R = cfg.reps
    logM = np.empty((R, len(cps)))
    runmax = np.empty((R, len(cps)))
    for lo in range(0, R, cfg.chunk):
        reps = _replications(cfg, lo, min(R, lo + cfg.chunk), theta0, design)
        thetas = np.stack([rp.theta_star for rp in reps])
        if fc["kind"] == "point-mass" and any(rp.theta_scale != 1.0 for rp in reps):
            raise ConfigError("point-mass forecaster needs an unscaled theta_star (drop the polar level)")
        X = np.stack([rp.X for rp in reps], axis=1)
        Y = np.stack([rp.Y for rp in reps], axis=1)
        batch = PosteriorBatch(prior, len(reps))
        cur = np.zeros(len(reps))
        mx = np.full(len(reps), -math.inf)
        j = 0
        for t in range(cfg.n):
            pred = batch.shifted_mix_loss(X[t], Y[t], thetas, eta, lam=1.0)
            cur += loss_from_natural(fam, np.sum(X[t] * thetas, axis=1), Y[t]) - pred
            mx = np.maximum(mx, cur)
            batch.update(X[t], Y[t])
            if j < len(cps) and t + 1 == cps[j]:
                logM[lo : lo + len(reps), j] = cur
                runmax[lo : lo + len(reps), j] = mx
                j += 1

    set_type = "martingale" if eta == 1.0 else "shifted-martingale"
    mode = fc["kind"]
    rows = []
    for r in range(R):
        for j, c in enumerate(cps):
            rows.append(_row(r, c, set_type, mode, bool(runmax[r, j] < log_thr), logM[r, j], runmax[r, j],
                             {"eta": eta}))
    for j, c in enumerate(cps):
        M = np.exp(logM[:, j])
        mean = float(M.mean())
        se = float(M.std(ddof=1) / math.sqrt(R)) if R > 1 else math.inf
        z = (mean - 1.0) / se if se > 0 else 0.0
        cross = float(np.mean(runmax[:, j] >= log_thr))
        extra = {"eta": eta, "mean_M": mean, "se": se, "z": z, "within_3se": bool(abs(mean - 1.0) <= 3 * se),
                 "crossing_freq": cross, "reps": R}
        rows.append(_row("summary", c, set_type, mode, 1.0 - cross, mean, se, extra))
    cross = float(np.mean(runmax[:, -1] >= log_thr))
    thr = binomial_threshold(cfg.delta, R)
    extra = {"eta": eta, "crossing_freq": cross, "threshold": thr, "reps": R,
             "semantics": "sup over all rounds of log M_t >= log(1/delta)"}
    rows.append(_row("summary", "all", set_type, mode, 1.0 - cross, float(np.mean(logM[:, -1])),
                     float(np.mean(runmax[:, -1])), extra))
    return rows


def shifted_martingale_validate(cfg: ScenarioConfig, eta: float) -> list[dict]:
    return martingale_validate(cfg, eta=eta)


# -- regret audit ---------------------------------------------------------------


def regret_audit(cfg: ScenarioConfig) -> list[dict]:
    """Realised EWA regret against the configured comparator versus its bound.

    ``cfg.regret`` keys: ``lam`` (1.0), ``gamma`` (scalar or ``[lo, hi]``
    drawn per instance, default ``[0.3, 3.0]``), ``sparse`` (False),
    ``comparator`` (``"theta_star"`` or ``"ridge"``), ``n_range``
    (``[lo, hi]`` horizon per instance, default ``n``), ``nodes_per_dim``.
    """
    cfg.validate()
    fam = cfg.glm
    spec = dict({"lam": 1.0, "gamma": [0.3, 3.0], "sparse": False, "comparator": "theta_star",
                 "n_range": None, "nodes_per_dim": None}, **cfg.regret)
    lam = float(spec["lam"])
    sparse = bool(spec["sparse"])
    if spec["comparator"] not in ("theta_star", "ridge"):
        raise ConfigError(f"regret.comparator must be 'theta_star' or 'ridge', got {spec['comparator']!r}")
    theta0 = draw_theta_star(cfg)
    design = _design(cfg)
    kw = {} if spec["nodes_per_dim"] is None else {"nodes_per_dim": int(spec["nodes_per_dim"])}
    set_type = "sparse-regret" if sparse else "ewa-regret"
    rows = []
    slacks = []
    for r in range(cfg.reps):
        rng = stream(cfg.seed, 3, r)
        g = spec["gamma"]
        gamma = float(rng.uniform(g[0], g[1])) if isinstance(g, (list, tuple)) else float(g)
        n_r = cfg.n if spec["n_range"] is None else int(rng.integers(spec["n_range"][0], spec["n_range"][1] + 1))
        rp = generate_replication(cfg, r, theta0, design)
        log = ObservationLog.from_arrays(rp.X[:n_r], rp.Y[:n_r]) if n_r else ObservationLog(cfg.d)
        prior = ewa_init(fam, cfg.d, Prior(gamma, sparse=sparse), lam, **kw)
        support = [int(i) for i in np.flatnonzero(rp.theta_star)]
        if spec["comparator"] == "theta_star":
            comp = rp.theta_star
        elif sparse:
            comp = restricted_mle(log, fam, support, gamma, lam).solution
        else:
            comp = ridge_mle(log, fam, gamma, lam).solution
        realized = telescoped_regret(prior, log, comp)
        replay = replay_regret(prior, log, comp)
        rho = prior.prior.rho(comp)
        if sparse:
            gain = restricted_info_gain(log, fam, gamma, lam, support)
            bound = sparse_regret_bound(gain, rho, len(support), cfg.d, lam)
        else:
            gain = info_gain_exact(log, fam, gamma, lam)
            bound = ewa_regret_bound(rho, gain, lam)
        slack = bound - realized
        slacks.append(slack)
        extra = {"slack": slack, "replay": replay, "gamma": gamma, "lam": lam, "info_gain": gain, "rho": rho}
        rows.append(_row(r, n_r, set_type, "audit", bool(slack >= -SLACK_TOL), bound, realized, extra))
    slacks = np.array(slacks)
    ok = slacks >= -SLACK_TOL
    extra = {"violations": int((~ok).sum()), "min_slack": float(slacks.min()) if len(slacks) else math.inf,
             "reps": cfg.reps}
    rows.append(_row("summary", "all", set_type, "audit", float(ok.mean()) if len(ok) else 1.0,
                     float(np.mean([r["beta"] for r in rows])) if rows else 0.0,
                     float(np.mean([r["width_metric"] for r in rows])) if rows else 0.0, extra))
    return rows
