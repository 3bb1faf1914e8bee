"""Acceptance suite: one PASS/FAIL line per criterion.

Lines are printed as they are produced and repeated in the pytest terminal
summary.  Scenario files live in ``configs/`` and can be replayed with the
CLI.  Tolerances and thresholds are fixed below; ``binomial_threshold``
is ``delta + 3 sqrt(delta (1 - delta) / R)``.
"""

import json
import math
import pathlib
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from glmcs import (
    GAUSSIAN,
    LOGISTIC,
    ObservationLog,
    Prior,
    algorithmic_det_set,
    analytic_adaptive_set,
    d_psi,
    ewa_init,
    info_gain_bound,
    info_gain_exact,
    logdet_rank_bound,
    logdet_worst_case,
    ridge_mle,
    run_chain,
    sparse_width,
    truncate,
)
from glmcs.confsets import transductive_radius
from glmcs.estimators import regularized_objective
from glmcs.harness import ScenarioConfig, coverage_experiment, martingale_validate, regret_audit
from glmcs.harness import cli

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"

MARTINGALE_SECONDS = 60.0
ANALYTIC_SECONDS = 120.0
REGRET_SLACK = 1e-6
GAIN_EXACT_TOL = 1e-8
GAIN_BOUND_SLACK = 1e-6
RADIUS_TOL = 1e-9
QUAD_FORM_TOL = 1e-9
SPARSE_ORACLE = 37.944
SPARSE_TOL = 1e-3
LEMMA_SLACK = 1e-9
PROBES = 10_000


def load(name, **override):
    raw = json.loads((CONFIGS / f"{name}.json").read_text())
    raw.update(override)
    return ScenarioConfig.from_dict(raw)


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def summaries(rows, cp=None):
    return [r for r in rows if r["rep"] == "summary" and (cp is None or r["checkpoint"] == cp)]


# -- 1 ------------------------------------------------------------------------


def test_criterion_01_martingale_validity():
    parts, ok = [], True
    for name in ("martingale_gaussian", "martingale_logistic"):
        rows, secs = timed(martingale_validate, load(name))
        per_cp = [r for r in summaries(rows) if r["checkpoint"] != "all"]
        worst_z = max(abs(r["extra_json"]["z"]) for r in per_cp)
        all_within = all(r["extra_json"]["within_3se"] for r in per_cp)
        last = summaries(rows, "all")[0]["extra_json"]
        good = all_within and last["crossing_freq"] <= last["threshold"] and secs <= MARTINGALE_SECONDS
        ok &= good
        parts.append(f"{name} max|z|={worst_z:.2f} cross={last['crossing_freq']:.4f}<={last['threshold']:.4f} "
                     f"{secs:.1f}s")
    for name in ("martingale_gaussian_wide", "martingale_logistic_wide", "martingale_logistic_shifted"):
        rows, secs = timed(martingale_validate, load(name))
        last = summaries(rows, "all")[0]["extra_json"]
        good = last["crossing_freq"] <= last["threshold"] and secs <= MARTINGALE_SECONDS
        ok &= good
        parts.append(f"{name} cross={last['crossing_freq']:.4f} {secs:.1f}s")
    report(1, ok, "; ".join(parts))


# -- 2 ------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["analytic_gaussian", "analytic_logistic"])
def test_criterion_02_analytic_anytime_coverage(name):
    rows, secs = timed(coverage_experiment, load(name))
    s = summaries(rows, "all")[0]["extra_json"]
    ok = s["miscoverage"] <= s["threshold"] and secs <= ANALYTIC_SECONDS
    report(2, ok, f"{name} uniform miscoverage={s['miscoverage']:.4f}<={s['threshold']:.4f} {secs:.1f}s")


# -- 3 ------------------------------------------------------------------------


def test_criterion_03_transductive_fixed_n():
    cfg = load("transductive_gaussian")
    rows = coverage_experiment(cfg)
    s = summaries(rows, 200)[0]["extra_json"]
    formula = cfg.d * math.log(1 + 2 * 1.0) + 2 * math.log(1 / cfg.delta)
    radii = {r["beta"] for r in coverage_experiment(load("transductive_gaussian", reps=3, checkpoints=[50, 100, 200]))
             if r["rep"] != "summary"}
    radius_ok = all(abs(r - formula) <= RADIUS_TOL for r in radii) and len(radii) == 1
    radius_ok &= abs(transductive_radius(cfg.d, 1.0, cfg.delta) - formula) <= RADIUS_TOL
    ok = s["miscoverage"] <= s["threshold"] and radius_ok
    report(3, ok, f"miscoverage={s['miscoverage']:.4f}<={s['threshold']:.4f}; radius={sorted(radii)} "
                  f"formula={formula:.10f} constant over n=50,100,200: {len(radii) == 1}")


# -- 4 ------------------------------------------------------------------------


def test_criterion_04_regret_dominance():
    parts, ok = [], True
    for name in ("regret_gaussian", "regret_logistic", "regret_sparse"):
        rows = regret_audit(load(name))
        slacks = [r["extra_json"]["slack"] for r in rows if r["rep"] != "summary"]
        good = len(slacks) == 100 and min(slacks) >= -REGRET_SLACK
        ok &= good
        parts.append(f"{name} n={len(slacks)} min_slack={min(slacks):.3e}")
    report(4, ok, "; ".join(parts))


# -- 5 ------------------------------------------------------------------------


def _evidence_gain(log, fam, gamma, lam):
    chain = run_chain(ewa_init(fam, log.d, Prior(gamma), lam), log)
    theta = ridge_mle(log, fam, gamma, lam).solution
    return lam * float(np.sum(chain.mix_losses)) - regularized_objective(log, fam, gamma, lam)(theta)[0]


def test_criterion_05_info_gain():
    rng = np.random.default_rng(500)
    worst_g = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 6))
        n = int(rng.integers(1, 80))
        gamma, lam = float(rng.uniform(0.2, 3)), float(rng.uniform(0.2, 2))
        X = rng.standard_normal((n, d)) * rng.uniform(0.3, 2)
        log = ObservationLog.from_arrays(X, GAUSSIAN.label_sampler(X @ rng.standard_normal(d), rng))
        oracle = 0.5 * float(np.sum(np.log1p(lam * gamma**2 * np.linalg.eigvalsh(X.T @ X))))
        worst_g = max(worst_g, abs(info_gain_exact(log, GAUSSIAN, gamma, lam) - oracle),
                      abs(_evidence_gain(log, GAUSSIAN, gamma, lam) - oracle))
    worst_l = -math.inf
    for _ in range(100):
        n = int(rng.integers(1, 120))
        gamma, lam = float(rng.uniform(0.2, 4)), float(rng.choice([0.5, 1.0]))
        X = rng.standard_normal((n, 1)) * rng.uniform(0.3, 3)
        log = ObservationLog.from_arrays(X, LOGISTIC.label_sampler(X @ rng.standard_normal(1), rng))
        exact = info_gain_exact(log, LOGISTIC, gamma, lam)
        worst_l = max(worst_l, exact - info_gain_bound(log.gram, LOGISTIC.smoothness, gamma, lam))
    ok = worst_g <= GAIN_EXACT_TOL and worst_l <= GAIN_BOUND_SLACK
    report(5, ok, f"gaussian max|exact-logdet|={worst_g:.2e} (50, d<=5); logistic max(exact-bound)={worst_l:.3e} (100)")


# -- 6 ------------------------------------------------------------------------


def test_criterion_06_algorithmic_coverage():
    parts, ok = [], True
    for name in ("algorithmic_det", "algorithmic_ewa"):
        rows = coverage_experiment(load(name))
        s = summaries(rows, "all")[0]
        good = s["extra_json"]["miscoverage"] <= s["extra_json"]["threshold"] and s["mode"] == "oracle"
        ok &= good
        parts.append(f"{name} miscoverage={s['extra_json']['miscoverage']:.4f}<={s['extra_json']['threshold']:.4f}")
    rng = np.random.default_rng(600)
    worst = 0.0
    for _ in range(PROBES // 100):
        n, d = int(rng.integers(1, 301)), int(rng.integers(1, 4))
        X = rng.uniform(-1, 1, (n, d))
        cs = algorithmic_det_set(X, rng.uniform(-1, 1, n), 1.0, 1.0, 0.05, "oracle")
        for th in rng.standard_normal((100, d)) * 2:
            a, b = cs.quadratic_value(th), cs.definitional_value(th)
            worst = max(worst, abs(a - b))
            ok &= (a <= cs.beta) == (b <= cs.beta) or abs(b - cs.beta) <= QUAD_FORM_TOL
    ok &= worst <= QUAD_FORM_TOL
    parts.append(f"quadratic vs definitional max diff={worst:.2e} over {PROBES} probes")
    report(6, ok, "; ".join(parts))


# -- 7 ------------------------------------------------------------------------


def test_criterion_07_sparse():
    beta = sparse_width(100, 10, 1, 0.25, 1.0, 1.0, 1.0, 0.05)
    formula_ok = abs(beta - SPARSE_ORACLE) <= SPARSE_TOL
    rows = coverage_experiment(load("sparse_gaussian"))
    s = summaries(rows, "all")[0]
    cov_ok = s["extra_json"]["miscoverage"] <= s["extra_json"]["threshold"] and s["mode"] == "bound"
    report(7, formula_ok and cov_ok,
           f"beta={beta:.6f} vs {SPARSE_ORACLE}; gaussian bound-mode miscoverage="
           f"{s['extra_json']['miscoverage']:.4f}<={s['extra_json']['threshold']:.4f} (R=500, beta_n={s['beta']:.3f})")


# -- 8 ------------------------------------------------------------------------


def test_criterion_08_lemma_suite():
    rng = np.random.default_rng(800)
    counts = {}
    for fam in (GAUSSIAN, LOGISTIC):
        z, zp = rng.uniform(-20, 20, PROBES), rng.uniform(-20, 20, PROBES)
        a, b = d_psi(fam, z, zp), d_psi(fam, zp, z)
        counts[f"{fam.name}:nonneg+sym"] = int(np.sum((a < -LEMMA_SLACK) | (np.abs(a - b) > LEMMA_SLACK)))

        zp = rng.uniform(-10, 10, PROBES)
        u = np.sort(rng.uniform(0, 10, (PROBES, 2)), axis=1)
        right = d_psi(fam, zp + u[:, 0], zp) > d_psi(fam, zp + u[:, 1], zp) + LEMMA_SLACK
        left = d_psi(fam, zp - u[:, 0], zp) > d_psi(fam, zp - u[:, 1], zp) + LEMMA_SLACK
        counts[f"{fam.name}:quasi"] = int(np.sum(right | left))

        bb = rng.uniform(0.05, 5, PROBES)
        zp = rng.uniform(-1, 1, PROBES) * bb
        z = rng.uniform(-30, 30, PROBES)
        counts[f"{fam.name}:truncation"] = int(np.sum(d_psi(fam, truncate(z, bb), zp) > d_psi(fam, z, zp) + LEMMA_SLACK))

        z, zp = rng.uniform(-1, 1, PROBES) * bb, rng.uniform(-1, 1, PROBES) * bb
        m = np.array([fam.strong_convexity_at(float(v)) for v in bb])
        counts[f"{fam.name}:strong-convexity"] = int(np.sum(d_psi(fam, z, zp) < m * (z - zp) ** 2 / 8 - LEMMA_SLACK))

    bad = 0
    for _ in range(PROBES):
        d, n = int(rng.integers(1, 6)), int(rng.integers(1, 30))
        r = int(rng.integers(1, d + 1))
        X = rng.standard_normal((n, r)) @ np.linalg.qr(rng.standard_normal((d, r)))[0].T
        L = float(np.max(np.linalg.norm(X, axis=1)))
        alpha = float(rng.uniform(0.01, 10))
        actual = float(np.sum(np.log1p(alpha * np.maximum(np.linalg.eigvalsh(X.T @ X), 0))))
        bad += actual > logdet_rank_bound(X.T @ X, alpha, L, n) + LEMMA_SLACK
    counts["det_tr"] = int(bad)
    report(8, sum(counts.values()) == 0, f"violations {counts} ({PROBES} probes each)")


# -- 9 ------------------------------------------------------------------------


def test_criterion_09_rank_adaptivity():
    rng = np.random.default_rng(900)
    d, n = 5, 100
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    X = rng.uniform(-1, 1, (n, 1)) * u
    log = ObservationLog.from_arrays(X, GAUSSIAN.label_sampler(X @ (0.5 * u), rng))
    cs = analytic_adaptive_set(log, GAUSSIAN, 1.0, 0.05, L=1.0)
    rank_term = logdet_rank_bound(log.gram, 1.0, 1.0, n)
    wc_term = logdet_worst_case(d, 1.0, 1.0, n)
    ok = cs.beta_rank < cs.beta_worst_case and rank_term < wc_term
    report(9, ok, f"rank-adaptive beta={cs.beta_rank:.4f} < worst-case beta={cs.beta_worst_case:.4f} "
                  f"(log-det caps {rank_term:.4f} vs {wc_term:.4f})")


# -- 10 -----------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    conf = str(CONFIGS / "determinism.json")
    same = []
    for cmd in ("simulate", "width", "regret", "validate-martingale"):
        outs = []
        for k in range(2):
            path = tmp_path / f"{cmd}-{k}.csv"
            assert cli.main([cmd, "--config", conf, "--seed", "2024", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        same.append(outs[0] == outs[1] and len(outs[0]) > 0)
    report(10, all(same), f"byte-identical CSV for simulate, width, regret, validate-martingale: {same}")
