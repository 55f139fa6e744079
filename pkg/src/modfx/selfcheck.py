"""Oracle acceptance suite.

Every check validates the estimation pipeline against an independent
reference: hand-built fixtures with exhaustive O(n^2) re-derivations,
simulated worlds with analytically known effects, or byte-level
determinism comparisons. The `selftest` CLI subcommand and the pytest
acceptance module both run these.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .cohort import (
    MODERATION_VS_NONE,
    QUICK_VS_DELAYED,
    SETUPS,
    build_cohort,
    compute_delta_participation,
    compute_delta_report_rate,
    post_window,
    pre_window,
)
from .domain import (
    COVARIATE_NAMES,
    MatchDayRecord,
    ModerationAction as MA,
    ModerationEvent,
    OffenseType,
    ReportEvent,
    severity_or_none,
)
from .estimators import (
    EstimatorConfig,
    META_LEARNERS,
    compare_meta_learners,
    dr_ate_formula,
    effect_data,
    estimate_effect,
    _fit_propensity,
)
from .diagnostics import balance_report, compute_skill_indicators, \
    cate_feature_correlation
from .ingest import EventLog, LinkedCase, RawTables, link_cases
from .learners import LearnerParams
from .simulate import generate_world, preset_config, true_effects

LINEAR_CFG = EstimatorConfig(base_learner="linear", effect_learner="linear")
TREE_CFG = EstimatorConfig(base_learner="gbt", effect_learner="gbt")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


# ---------------------------------------------------------------------------
# naive reference implementations (no numpy, no indexes, pure scans)


def naive_first_moderation(raw: RawTables) -> dict[str, ModerationEvent]:
    first: dict[str, ModerationEvent] = {}
    for m in sorted(raw.moderations,
                    key=lambda m: (m.moderation_date, m.offense_type.value,
                                   tuple(a.value for a in m.actions))):
        if m.player_id not in first:
            first[m.player_id] = m
    return first


def naive_link(raw: RawTables) -> list[LinkedCase]:
    """Exhaustive re-derivation of the linking rules."""
    cases = []
    for pid, mod in sorted(naive_first_moderation(raw).items()):
        candidates = [
            r.report_date
            for r in raw.reports
            if r.player_id == pid
            and r.offense_type is mod.offense_type
            and timedelta(0) <= mod.moderation_date - r.report_date <= timedelta(days=14)
        ]
        if not candidates:
            continue
        t = min(candidates)
        cov = naive_covariates(raw, pid, t)
        cases.append(
            LinkedCase(
                player_id=pid,
                report_date=t,
                moderation_date=mod.moderation_date,
                offense_type=mod.offense_type,
                actions=mod.actions,
                severity=severity_or_none(mod.offense_type, mod.actions),
                covariates=cov,
            )
        )
    return cases


def naive_reports(raw, pid, lo, hi) -> int:
    return sum(
        1 for r in raw.reports if r.player_id == pid and lo <= r.report_date <= hi
    )


def naive_matches(raw, pid, lo, hi) -> int:
    return sum(
        m.matches_played
        for m in raw.match_days
        if m.player_id == pid and lo <= m.date <= hi
    )


def naive_days(raw, pid, lo, hi) -> int:
    return sum(
        1
        for m in raw.match_days
        if m.player_id == pid and lo <= m.date <= hi and m.matches_played > 0
    )


def naive_covariates(raw, pid, t) -> Optional[tuple[float, ...]]:
    lo, hi = t - timedelta(days=7), t - timedelta(days=1)
    rows = [
        m for m in raw.match_days
        if m.player_id == pid and lo <= m.date <= hi and m.matches_played > 0
    ]
    total = sum(m.matches_played for m in rows)
    if total == 0:
        return None
    sums = [0.0] * len(COVARIATE_NAMES)
    for m in rows:
        for j, v in enumerate(m.stats):
            sums[j] += v * m.matches_played
    return tuple(s / total for s in sums)


def naive_delta_r(raw, case: LinkedCase, setup) -> Optional[float]:
    lo0, hi0 = pre_window(case)
    lo1, hi1 = post_window(case, setup)
    m0 = naive_matches(raw, case.player_id, lo0, hi0)
    m1 = naive_matches(raw, case.player_id, lo1, hi1)
    if m0 == 0 or m1 == 0:
        return None
    return (
        naive_reports(raw, case.player_id, lo1, hi1) / m1
        - naive_reports(raw, case.player_id, lo0, hi0) / m0
    )


def naive_delta_p(raw, case: LinkedCase, setup) -> float:
    lo0, hi0 = pre_window(case)
    lo1, hi1 = post_window(case, setup)
    return (
        naive_days(raw, case.player_id, lo1, hi1) / 7
        - naive_days(raw, case.player_id, lo0, hi0) / 7
    )


def random_small_world(seed: int) -> RawTables:
    """A random event log with at most 50 events, for exhaustive checks.

    Offense variety is kept low and event dates clustered so that the
    multi-report, multi-moderation linking rules actually fire.
    """
    rng = random.Random(seed)
    start = date(2023, 2, 1)
    end = start + timedelta(days=35)
    players = [f"q{k}" for k in range(rng.randint(1, 4))]
    offenses = rng.sample(list(OffenseType), rng.randint(1, 2))
    action_choices = [
        (MA.REMOVE_FROM_LEADERBOARD,),
        (MA.FEATURE_FLAG, MA.WARNING_NOTICE),
        (MA.FEATURE_FLAG, MA.PENALTY_NOTICE),
        (MA.FEATURE_FLAG,),
        (MA.FEATURE_FLAG, MA.FEATURE_FLAG, MA.PENALTY_NOTICE),
    ]
    reports = []
    moderations = []
    match_days = []
    budget = 50
    for pid in players:
        n_rep = rng.randint(1, 5)
        for _ in range(min(n_rep, budget)):
            day = start + timedelta(days=rng.randint(0, 24))
            reports.append(ReportEvent(pid, day, rng.choice(offenses)))
            budget -= 1
        n_mod = rng.randint(1, 3)
        for _ in range(max(min(n_mod, budget), 0)):
            day = start + timedelta(days=rng.randint(0, 30))
            moderations.append(
                ModerationEvent(pid, day, rng.choice(offenses),
                                tuple(sorted(rng.choice(action_choices),
                                             key=lambda a: a.value)))
            )
            budget -= 1
        days = rng.sample(range(0, 35), max(min(rng.randint(0, 10), budget), 0))
        for d in days:
            stats = tuple(float(rng.randint(0, 20)) for _ in COVARIATE_NAMES)
            match_days.append(
                MatchDayRecord(pid, start + timedelta(days=d),
                               rng.randint(1, 5), stats)
            )
            budget -= 1
    return RawTables(tuple(reports), tuple(moderations), tuple(match_days),
                     start, end)


# ---------------------------------------------------------------------------
# criteria


def _true_ate_for(truth, data) -> float:
    ate, _ = true_effects(truth, data.player_ids)
    return ate


def check_oracle_ate_recovery() -> CheckResult:
    """Confounded world, n=20000, true relative report-rate effect -30%:
    the DR learner lands within 0.03 absolute and 5 relative points, in
    under two minutes."""
    t0 = time.monotonic()
    cfg = preset_config("confounded", n_players=20000, seed=11)
    raw, truth = generate_world(cfg)
    cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
    data = effect_data(cohort, "delta_report_rate")
    true_ate = _true_ate_for(truth, data)
    est = estimate_effect(cohort, "delta_report_rate", "dr", config=TREE_CFG)
    elapsed = time.monotonic() - t0
    err = abs(est.ate - true_ate)
    true_rel = 100.0 * true_ate / est.control_baseline_mean
    rel_err = abs(est.ate_relative - true_rel)
    ok = err < 0.03 and rel_err < 5.0 and elapsed < 120.0
    return CheckResult(
        "oracle_ate_recovery", ok,
        f"ate={est.ate:+.4f} truth={true_ate:+.4f} |err|={err:.4f} (<0.03); "
        f"relative {est.ate_relative:+.2f}% vs {true_rel:+.2f}% "
        f"(diff {rel_err:.2f} < 5); {elapsed:.1f}s (<120)",
        elapsed,
    )


def check_double_robustness() -> CheckResult:
    """With one nuisance deliberately broken (constant outcome model, or a
    constant 0.5 propensity), the DR estimate stays within 0.03 of truth
    while the T-learner under the broken outcome model is biased by >0.05."""
    t0 = time.monotonic()
    cfg = preset_config("confounded", n_players=20000, seed=12)
    raw, truth = generate_world(cfg)
    cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
    data = effect_data(cohort, "delta_report_rate")
    true_ate = _true_ate_for(truth, data)

    broken_outcome = EstimatorConfig(base_learner="mean", effect_learner="linear")
    dr_bad_mu = estimate_effect(cohort, "delta_report_rate", "dr", broken_outcome)
    t_bad_mu = estimate_effect(cohort, "delta_report_rate", "t", broken_outcome)
    broken_prop = replace(LINEAR_CFG, propensity_override=0.5)
    dr_bad_e = estimate_effect(cohort, "delta_report_rate", "dr", broken_prop)

    dr_err1 = abs(dr_bad_mu.ate - true_ate)
    t_bias = abs(t_bad_mu.ate - true_ate)
    dr_err2 = abs(dr_bad_e.ate - true_ate)
    ok = dr_err1 < 0.03 and t_bias > 0.05 and dr_err2 < 0.03
    return CheckResult(
        "double_robustness", ok,
        f"broken outcome model: DR |err|={dr_err1:.4f} (<0.03), "
        f"T |bias|={t_bias:.4f} (>0.05); "
        f"broken propensity: DR |err|={dr_err2:.4f} (<0.03)",
        time.monotonic() - t0,
    )


def check_null_safety() -> CheckResult:
    """No-effect world, n=10000: every estimator's relative effect stays
    inside 5 points and its 95% CI covers zero, in at least 18 of 20 runs."""
    t0 = time.monotonic()
    good_runs = 0
    worst = 0.0
    for k in range(20):
        cfg = preset_config("null", n_players=10000, seed=1000 + k)
        raw, _ = generate_world(cfg)
        cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
        run_ok = True
        for j, name in enumerate(META_LEARNERS):
            est = estimate_effect(
                cohort, "delta_report_rate", name, config=LINEAR_CFG,
                reps=200, level=0.95, seed=7000 + 100 * k + j,
            )
            worst = max(worst, abs(est.ate_relative))
            if abs(est.ate_relative) >= 5.0 or not (est.ci_low <= 0.0 <= est.ci_high):
                run_ok = False
        good_runs += run_ok
    ok = good_runs >= 18
    return CheckResult(
        "null_safety", ok,
        f"{good_runs}/20 runs with all five estimators inside +-5 points and "
        f"CIs covering 0 (need >=18); worst |relative|={worst:.2f}%",
        time.monotonic() - t0,
    )


def check_ci_coverage() -> CheckResult:
    """Across 200 simulated worlds, the 95% bootstrap interval covers the
    known ATE at an empirical rate inside [0.90, 0.99]."""
    t0 = time.monotonic()
    covered = 0
    for k in range(200):
        cfg = preset_config("confounded", n_players=600, seed=20000 + k)
        raw, truth = generate_world(cfg)
        cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
        data = effect_data(cohort, "delta_report_rate")
        true_ate = _true_ate_for(truth, data)
        est = estimate_effect(
            cohort, "delta_report_rate", "dr", config=LINEAR_CFG,
            reps=500, level=0.95, seed=30000 + k,
        )
        covered += est.ci_low <= true_ate <= est.ci_high
    rate = covered / 200.0
    ok = 0.90 <= rate <= 0.99
    return CheckResult(
        "ci_coverage", ok,
        f"coverage {covered}/200 = {rate:.3f} (need within [0.90, 0.99])",
        time.monotonic() - t0,
    )


def check_pipeline_exactness() -> CheckResult:
    """Linking and both outcomes agree exactly with the naive oracle on 40
    random small logs plus the hand fixtures; the 4-row AIPW table matches
    its direct evaluation to 1e-12."""
    t0 = time.monotonic()
    problems = []

    for seed in range(40):
        raw = random_small_world(seed)
        mine = link_cases(raw)
        ref = naive_link(raw)
        key = lambda c: (c.player_id, c.report_date, c.moderation_date,
                         c.offense_type.value, c.actions, c.severity)
        if [key(c) for c in mine] != [key(c) for c in ref]:
            problems.append(f"seed {seed}: linked case sets differ")
            continue
        for c_mine, c_ref in zip(mine, ref):
            if (c_mine.covariates is None) != (c_ref.covariates is None):
                problems.append(f"seed {seed}: covariate presence differs")
            elif c_mine.covariates is not None and not all(
                a == b for a, b in zip(c_mine.covariates, c_ref.covariates)
            ):
                problems.append(f"seed {seed}: covariates differ")
        log = EventLog(raw)
        for setup in (MODERATION_VS_NONE, QUICK_VS_DELAYED):
            for case in mine:
                lo0, hi0 = pre_window(case)
                lo1, hi1 = post_window(case, setup)
                if not (log.covers(lo0, hi0) and log.covers(lo1, hi1)):
                    continue
                if compute_delta_report_rate(case, setup, log) != naive_delta_r(
                    raw, case, setup
                ):
                    problems.append(f"seed {seed}: delta report rate differs")
                if compute_delta_participation(case, setup, log) != naive_delta_p(
                    raw, case, setup
                ):
                    problems.append(f"seed {seed}: delta participation differs")

    # 4-row hand table, evaluated with plain python arithmetic
    rows = [
        (1, 1.0, 0.4, 0.5, 0.1),
        (0, 0.2, 0.3, 0.6, 0.2),
        (1, 0.8, 0.6, 0.7, 0.0),
        (0, -0.1, 0.5, 0.4, 0.3),
    ]
    direct = sum(
        (w * y - (w - e) * mu1) / e - ((1 - w) * y + (w - e) * mu0) / (1 - e)
        for w, y, e, mu1, mu0 in rows
    ) / len(rows)
    mine_ate = dr_ate_formula(
        y=[r[1] for r in rows], w=[r[0] for r in rows], e=[r[2] for r in rows],
        mu0=[r[4] for r in rows], mu1=[r[3] for r in rows],
    )
    if abs(mine_ate - direct) > 1e-12:
        problems.append(f"AIPW hand table: {mine_ate} vs {direct}")

    ok = not problems
    return CheckResult(
        "pipeline_exactness", ok,
        "40 random small logs + hand table all exact" if ok
        else "; ".join(problems[:4]),
        time.monotonic() - t0,
    )


BALANCE_FIXTURES = (
    ("confounded", 3000, 101),
    ("confounded", 3000, 202),
    ("heterogeneous_kd", 3000, 303),
)


def check_balance_improvement() -> CheckResult:
    """KNN matching on the propensity score strictly lowers mean |SMD| in
    every shipped confounded fixture."""
    t0 = time.monotonic()
    details = []
    ok = True
    for preset, n, seed in BALANCE_FIXTURES:
        cfg = preset_config(preset, n_players=n, seed=seed)
        raw, _ = generate_world(cfg)
        cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
        data = effect_data(cohort, "delta_participation")
        prop = _fit_propensity(data, LINEAR_CFG)
        before, after = balance_report(data.x, prop, k=1).mean_abs_smd()
        details.append(f"{preset}/{seed}: {before:.4f}->{after:.4f}")
        ok = ok and after < before
    return CheckResult(
        "balance_improvement", ok, "; ".join(details), time.monotonic() - t0
    )


def check_heterogeneity_sign() -> CheckResult:
    """Planted effect falling in K/D: the DR CATE correlates with K/D below
    -0.3 in at least 18 of 20 seeded worlds."""
    t0 = time.monotonic()
    hits = 0
    rs = []
    for k in range(20):
        cfg = preset_config("heterogeneous_kd", n_players=4000, seed=40000 + k)
        raw, _ = generate_world(cfg)
        cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
        est = estimate_effect(cohort, "delta_report_rate", "dr", config=LINEAR_CFG)
        rows = [r for r in cohort.rows if r.delta_report_rate is not None]
        kd = compute_skill_indicators(cohort).kd[
            [i for i, r in enumerate(cohort.rows) if r.delta_report_rate is not None]
        ]
        r, _ = cate_feature_correlation(est.cate, kd)
        rs.append(r)
        hits += r < -0.3
    ok = hits >= 18
    return CheckResult(
        "heterogeneity_sign", ok,
        f"{hits}/20 seeds with r(CATE, K/D) < -0.3 (need >=18); "
        f"median r={np.median(rs):+.3f}",
        time.monotonic() - t0,
    )


def check_concentration_ordering() -> CheckResult:
    """Constant-effect worlds: the DR CATE interquartile range is no wider
    than the T-learner's in a majority of 20 seeds."""
    t0 = time.monotonic()
    wins = 0
    for k in range(20):
        cfg = preset_config("constant", n_players=2000, seed=50000 + k)
        raw, _ = generate_world(cfg)
        cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
        summaries = {
            s.estimator_name: s
            for s in compare_meta_learners(cohort, "delta_report_rate", TREE_CFG)
        }
        wins += summaries["dr"].iqr <= summaries["t"].iqr
    ok = wins >= 11
    return CheckResult(
        "concentration_ordering", ok,
        f"DR IQR <= T IQR in {wins}/20 constant-effect seeds (need majority)",
        time.monotonic() - t0,
    )


def check_determinism() -> CheckResult:
    """Identical seed and config give byte-identical report files, run to
    run and serial versus parallel."""
    import tempfile

    from .cli import main as cli_main

    t0 = time.monotonic()
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        world_dir = tmp / "world"
        rc = cli_main([
            "simulate", "--preset", "confounded", "--players", "400",
            "--seed", "7", "--out", str(world_dir),
        ])
        if rc != 0:
            return CheckResult("determinism", False, "simulate failed",
                               time.monotonic() - t0)
        base_args = [
            "analyze",
            "--reports", str(world_dir / "reports.csv"),
            "--moderations", str(world_dir / "moderations.csv"),
            "--matches", str(world_dir / "matches.csv"),
            "--from", "2023-02-01", "--to", "2023-02-22",
            "--seed", "99", "--reps", "120",
            "--base", "linear", "--effect-learner", "linear",
        ]
        outputs = {}
        for label, extra in (
            ("a", ["--jobs", "1"]),
            ("b", ["--jobs", "1"]),
            ("par", ["--jobs", "4"]),
        ):
            outdir = tmp / label
            rc = cli_main(base_args + ["--out", str(outdir)] + extra)
            if rc != 0:
                return CheckResult("determinism", False,
                                   f"analyze run {label} exited {rc}",
                                   time.monotonic() - t0)
            outputs[label] = {
                name: (outdir / name).read_bytes()
                for name in ("report.txt", "report.csv", "report.json",
                             "balance.csv", "heterogeneity.csv")
            }
        same_rerun = outputs["a"] == outputs["b"]
        same_parallel = outputs["a"] == outputs["par"]
    ok = same_rerun and same_parallel
    return CheckResult(
        "determinism", ok,
        f"rerun identical: {same_rerun}; serial==parallel: {same_parallel}",
        time.monotonic() - t0,
    )


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "oracle_ate_recovery": check_oracle_ate_recovery,
    "double_robustness": check_double_robustness,
    "null_safety": check_null_safety,
    "ci_coverage": check_ci_coverage,
    "pipeline_exactness": check_pipeline_exactness,
    "balance_improvement": check_balance_improvement,
    "heterogeneity_sign": check_heterogeneity_sign,
    "concentration_ordering": check_concentration_ordering,
    "determinism": check_determinism,
}
CHECK_NAMES = tuple(CHECKS)


def run_all(only=None, verbose: bool = False) -> list[CheckResult]:
    names = CHECK_NAMES if only is None else tuple(only)
    results = []
    for name in names:
        if name not in CHECKS:
            raise ValueError(f"unknown check {name!r}")
        result = CHECKS[name]()
        results.append(result)
        if verbose:
            status = "PASS" if result.passed else "FAIL"
            print(f"{status} {name} ({result.seconds:.1f}s): {result.detail}")
    return results
