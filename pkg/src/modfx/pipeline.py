"""End-to-end analysis orchestration: strata, estimates, diagnostics.

One run walks setup x offense x severity strata, builds each cohort, fits
the configured estimators with bootstrap intervals, and collects balance
and heterogeneity diagnostics. Strata are independent, so they may run in
a thread pool; every stratum derives its own seed from the master seed and
its position, making serial and parallel runs byte-identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cohort import (
    CohortDegenerate,
    CohortTable,
    OUTCOMES,
    SETUPS,
    build_cohort,
)
from .diagnostics import (
    INDICATOR_NAMES,
    balance_report,
    cate_feature_correlation,
    compute_skill_indicators,
)
from .domain import OffenseType, Severity
from .estimators import (
    EstimationError,
    EstimatorConfig,
    _fit_propensity,
    effect_data,
    estimate_effect,
)
from .ingest import EventLog, LinkedCase, RawTables, link_cases

OFFENSE_ORDER = (
    OffenseType.CHEATING,
    OffenseType.OFFENSIVE_TEXT_CHAT,
    OffenseType.OFFENSIVE_USER_ID,
    OffenseType.OFFENSIVE_VOICE_CHAT,
)
SEVERITY_STRATA = (None, Severity.MILDER, Severity.STRICTER)


@dataclass(frozen=True)
class PipelineOptions:
    setups: tuple[str, ...] = ("moderation_vs_none", "quick_vs_delayed")
    estimators: tuple[str, ...] = ("dr",)
    correlation_estimator: str = "dr"
    reps: int = 500
    level: float = 0.95
    seed: int = 0
    knn_k: int = 1
    jobs: int = 1
    # "auto" picks trees for moderation_vs_none and linear for quick_vs_delayed
    effect_learner: str = "auto"
    estimator_config: EstimatorConfig = field(default_factory=EstimatorConfig)

    def config_for(self, setup_name: str) -> EstimatorConfig:
        choice = self.effect_learner
        if choice == "auto":
            choice = "gbt" if setup_name == "moderation_vs_none" else "linear"
        return replace(self.estimator_config, effect_learner=choice)


@dataclass(frozen=True)
class EffectRow:
    setup: str
    offense: str
    stratum: str
    outcome: str
    estimator: str
    status: str  # "ok" | "degenerate"
    detail: str
    ate: float
    ate_relative: float
    ci_low: float
    ci_high: float
    ci_low_relative: float
    ci_high_relative: float
    n_treated: int
    n_control: int
    bootstrap_reps: int
    control_baseline_mean: float


@dataclass(frozen=True)
class BalanceRow:
    setup: str
    offense: str
    stratum: str
    feature: str
    mean_treated: float
    mean_control: float
    smd_before: float
    smd_after: float


@dataclass(frozen=True)
class HeterogeneityRow:
    setup: str
    offense: str
    stratum: str
    outcome: str
    indicator: str
    pearson_r: float
    n_used: int


@dataclass(frozen=True)
class ExclusionRow:
    setup: str
    offense: str
    stratum: str
    reason: str
    count: int


@dataclass(frozen=True)
class AnalysisReport:
    config: dict[str, str]
    seed: int
    counts: dict[str, int]
    effects: tuple[EffectRow, ...]
    balance: tuple[BalanceRow, ...]
    heterogeneity: tuple[HeterogeneityRow, ...]
    exclusions: tuple[ExclusionRow, ...]

    @property
    def all_degenerate(self) -> bool:
        return all(e.status != "ok" for e in self.effects)


def _stratum_seed(master: int, *indices: int) -> int:
    return int(np.random.SeedSequence((master, *indices)).generate_state(1)[0])


def _nan_row(setup, offense, stratum, outcome, estimator, detail) -> EffectRow:
    return EffectRow(
        setup=setup, offense=offense, stratum=stratum, outcome=outcome,
        estimator=estimator, status="degenerate", detail=detail,
        ate=math.nan, ate_relative=math.nan, ci_low=math.nan, ci_high=math.nan,
        ci_low_relative=math.nan, ci_high_relative=math.nan,
        n_treated=0, n_control=0, bootstrap_reps=0,
        control_baseline_mean=math.nan,
    )


def _analyze_stratum(cases, log, setup_name, s_idx, offense, o_idx, severity, v_idx,
                     opts: PipelineOptions):
    """All rows for one stratum; never raises on degeneracy."""
    setup = SETUPS[setup_name]
    stratum = "pooled" if severity is None else severity.value
    offense_name = offense.value
    est_config = opts.config_for(setup_name)
    effects: list[EffectRow] = []
    balance: list[BalanceRow] = []
    heterogeneity: list[HeterogeneityRow] = []
    exclusions: list[ExclusionRow] = []

    try:
        cohort = build_cohort(cases, setup, log, offense=offense, severity=severity)
    except CohortDegenerate as exc:
        for outcome in OUTCOMES:
            for est in opts.estimators:
                effects.append(
                    _nan_row(setup_name, offense_name, stratum, outcome, est, str(exc))
                )
        return effects, balance, heterogeneity, exclusions

    for reason in sorted(cohort.exclusion_counts):
        exclusions.append(
            ExclusionRow(setup_name, offense_name, stratum, reason,
                         cohort.exclusion_counts[reason])
        )

    cate_by_outcome: dict[str, Optional[np.ndarray]] = {}
    for oc_idx, outcome in enumerate(OUTCOMES):
        corr_cate = None
        for e_idx, est in enumerate(opts.estimators):
            seed = _stratum_seed(opts.seed, s_idx, o_idx, v_idx, oc_idx, e_idx)
            try:
                res = estimate_effect(
                    cohort, outcome, est, config=est_config,
                    reps=opts.reps, level=opts.level, seed=seed,
                )
            except EstimationError as exc:
                effects.append(
                    _nan_row(setup_name, offense_name, stratum, outcome, est, str(exc))
                )
                continue
            effects.append(
                EffectRow(
                    setup=setup_name, offense=offense_name, stratum=stratum,
                    outcome=outcome, estimator=est, status="ok", detail="",
                    ate=res.ate, ate_relative=res.ate_relative,
                    ci_low=res.ci_low, ci_high=res.ci_high,
                    ci_low_relative=res.ci_low_relative,
                    ci_high_relative=res.ci_high_relative,
                    n_treated=res.n_treated, n_control=res.n_control,
                    bootstrap_reps=res.bootstrap_reps,
                    control_baseline_mean=res.control_baseline_mean,
                )
            )
            if est == opts.correlation_estimator:
                corr_cate = res.cate
        if corr_cate is None:
            try:
                corr_cate = estimate_effect(
                    cohort, outcome, opts.correlation_estimator,
                    config=est_config,
                ).cate
            except EstimationError:
                corr_cate = None
        cate_by_outcome[outcome] = corr_cate

    # balance: propensity over all rows (participation outcome keeps every row)
    try:
        data = effect_data(cohort, "delta_participation")
        prop = _fit_propensity(data, est_config)
        rep = balance_report(data.x, prop, k=min(opts.knn_k, max(data.n_control, 1)))
        for f in rep.features:
            balance.append(
                BalanceRow(setup_name, offense_name, stratum, f.feature,
                           f.mean_treated, f.mean_control, f.smd_before, f.smd_after)
            )
    except (EstimationError, ValueError):
        pass

    indicators = compute_skill_indicators(cohort)
    full_rows = cohort.rows
    for outcome in OUTCOMES:
        cate = cate_by_outcome.get(outcome)
        if cate is None:
            continue
        # align indicator rows with the outcome's defined subset
        defined = [i for i, r in enumerate(full_rows) if getattr(r, outcome) is not None]
        for ind in INDICATOR_NAMES:
            values = indicators.by_name(ind)[defined]
            r, n_used = cate_feature_correlation(cate, values)
            heterogeneity.append(
                HeterogeneityRow(setup_name, offense_name, stratum, outcome, ind,
                                 r, n_used)
            )
    return effects, balance, heterogeneity, exclusions


def run_pipeline(raw: RawTables, opts: PipelineOptions,
                 config_echo: Optional[dict[str, str]] = None) -> AnalysisReport:
    """Link cases and analyze every stratum; degenerate strata are reported,
    not fatal."""
    cases = link_cases(raw)
    log = EventLog(raw)

    tasks = []
    for s_idx, setup_name in enumerate(opts.setups):
        for o_idx, offense in enumerate(OFFENSE_ORDER):
            strata = (
                (None,) if offense is OffenseType.CHEATING else SEVERITY_STRATA
            )
            for v_idx, severity in enumerate(strata):
                tasks.append(
                    (setup_name, s_idx, offense, o_idx, severity, v_idx)
                )

    def run(task):
        setup_name, s_idx, offense, o_idx, severity, v_idx = task
        return _analyze_stratum(
            cases, log, setup_name, s_idx, offense, o_idx, severity, v_idx, opts
        )

    if opts.jobs > 1:
        with ThreadPoolExecutor(max_workers=opts.jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    effects: list[EffectRow] = []
    balance: list[BalanceRow] = []
    heterogeneity: list[HeterogeneityRow] = []
    exclusions: list[ExclusionRow] = []
    for eff, bal, het, exc in results:
        effects.extend(eff)
        balance.extend(bal)
        heterogeneity.extend(het)
        exclusions.extend(exc)

    counts = {
        "reports": len(raw.reports),
        "moderations": len(raw.moderations),
        "match_days": len(raw.match_days),
        "linked_cases": len(cases),
    }
    return AnalysisReport(
        config=dict(sorted((config_echo or {}).items())),
        seed=opts.seed,
        counts=counts,
        effects=tuple(effects),
        balance=tuple(balance),
        heterogeneity=tuple(heterogeneity),
        exclusions=tuple(exclusions),
    )


def pipeline_cohorts(raw: RawTables, setups: Sequence[str]) -> dict[str, CohortTable]:
    """Pooled per-setup cohorts for export; degenerate setups are skipped."""
    cases = link_cases(raw)
    log = EventLog(raw)
    out = {}
    for name in setups:
        try:
            out[name] = build_cohort(cases, SETUPS[name], log)
        except CohortDegenerate:
            continue
    return out
