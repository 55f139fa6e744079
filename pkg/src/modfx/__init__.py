"""Causal analysis of game-moderation effects with a synthetic oracle."""

from .cohort import (
    Assignment,
    CohortDegenerate,
    CohortRow,
    CohortTable,
    MODERATION_VS_NONE,
    QUICK_VS_DELAYED,
    SETUPS,
    StudySetup,
    assign_treatment,
    build_cohort,
    compute_delta_participation,
    compute_delta_report_rate,
)
from .diagnostics import (
    BalanceReport,
    SkillIndicators,
    balance_report,
    cate_feature_correlation,
    compute_skill_indicators,
    knn_match,
    standardized_mean_difference,
)
from .domain import (
    COVARIATE_NAMES,
    MatchDayRecord,
    ModerationAction,
    ModerationEvent,
    OffenseType,
    ParseError,
    ReportEvent,
    Severity,
    UnclassifiableActionSet,
    classify_severity,
)
from .estimators import (
    CateSummary,
    EffectEstimate,
    EstimationError,
    EstimatorConfig,
    PropensityModel,
    bootstrap_ci,
    compare_meta_learners,
    dr_learner_ate,
    dr_learner_cate,
    estimate_effect,
    estimate_propensity,
    r_learner,
    relative_effect,
    s_learner,
    t_learner,
    x_learner,
)
from .ingest import EventLog, LinkedCase, RawTables, link_cases, load_event_log
from .learners import (
    GradientBoostedTrees,
    LearnerParams,
    LogisticModel,
    MeanRegression,
    RidgeRegression,
    fit_gbt,
    fit_logistic,
    fit_ridge,
)
from .pipeline import AnalysisReport, PipelineOptions, run_pipeline
from .simulate import SimConfig, SimGroundTruth, generate_world, preset_config, \
    true_effects

__version__ = "0.1.0"
