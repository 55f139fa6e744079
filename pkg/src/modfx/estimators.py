"""Treatment-effect estimators: T, S, X, R and doubly-robust learners.

All estimators consume a CohortTable and one outcome column, fit their
nuisance models in-sample, and return an EffectEstimate holding the ATE,
a per-row CATE vector, and (optionally) a stratified percentile-bootstrap
confidence interval. The DR estimator is the headline method: its ATE is
the augmented inverse-propensity formula and its CATE comes from a second-
stage regression of per-row pseudo-outcomes

    phi_i = mu1(X_i) - mu0(X_i) + W_i (Y_i - mu1(X_i)) / e(X_i)
                                - (1 - W_i)(Y_i - mu0(X_i)) / (1 - e(X_i))

on the covariates, with an independently selectable second-stage learner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cohort import BASELINES, CohortTable, OUTCOMES
from .learners import (
    LearnerParams,
    LogisticModel,
    make_classifier,
    make_regressor,
)

META_LEARNERS = ("t", "s", "x", "r", "dr")


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs shared by every estimator; defaults follow the report pipeline.

    propensity_override pins every propensity score to a constant: a
    deliberate misspecification hook for robustness checks.
    """

    base_learner: str = "gbt"
    effect_learner: str = "linear"
    propensity_clip: tuple[float, float] = (0.01, 0.99)
    use_propensity_weighting: bool = True
    cross_fit: bool = False
    seed: int = 0
    propensity_override: Optional[float] = None
    learner: LearnerParams = field(default_factory=LearnerParams)

    def __post_init__(self):
        lo, hi = self.propensity_clip
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("propensity clip bounds must satisfy 0 < lo < hi < 1")
        if self.propensity_override is not None and not (
            0.0 < self.propensity_override < 1.0
        ):
            raise ValueError("propensity override must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class EffectData:
    """Array view of a cohort restricted to rows where the outcome is defined."""

    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    baseline: np.ndarray
    player_ids: tuple[str, ...]
    outcome: str

    @property
    def n_treated(self) -> int:
        return int(self.w.sum())

    @property
    def n_control(self) -> int:
        return len(self.w) - self.n_treated

    def subset(self, idx: np.ndarray) -> "EffectData":
        return EffectData(
            x=self.x[idx],
            w=self.w[idx],
            y=self.y[idx],
            baseline=self.baseline[idx],
            player_ids=tuple(self.player_ids[i] for i in idx),
            outcome=self.outcome,
        )


def effect_data(cohort: CohortTable, outcome: str) -> EffectData:
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {outcome!r}")
    baseline_field = BASELINES[outcome]
    rows = [r for r in cohort.rows if getattr(r, outcome) is not None]
    if not rows:
        raise EstimationError(f"no rows with a defined {outcome}")
    return EffectData(
        x=np.array([r.x for r in rows]),
        w=np.array([r.w for r in rows], dtype=np.int64),
        y=np.array([getattr(r, outcome) for r in rows], dtype=float),
        baseline=np.array([getattr(r, baseline_field) for r in rows], dtype=float),
        player_ids=tuple(r.player_id for r in rows),
        outcome=outcome,
    )


# ---------------------------------------------------------------------------
# propensity


@dataclass(frozen=True)
class PropensityModel:
    classifier: Optional[LogisticModel]
    clip: tuple[float, float]
    scores: np.ndarray
    treated: np.ndarray

    def score_for(self, x: np.ndarray) -> np.ndarray:
        if self.classifier is None:
            return np.full(len(x), float(self.scores[0]))
        lo, hi = self.clip
        return np.clip(self.classifier.predict_proba(x), lo, hi)


def _fit_propensity(data: EffectData, cfg: EstimatorConfig) -> PropensityModel:
    if data.n_treated == 0 or data.n_control == 0:
        raise EstimationError("cannot fit a propensity model with an empty arm")
    if cfg.propensity_override is not None:
        scores = np.full(len(data.w), cfg.propensity_override)
        return PropensityModel(None, cfg.propensity_clip, scores, data.w.copy())
    clf = make_classifier(cfg.learner).fit(data.x, data.w)
    lo, hi = cfg.propensity_clip
    scores = np.clip(clf.predict_proba(data.x), lo, hi)
    return PropensityModel(clf, cfg.propensity_clip, scores, data.w.copy())


def estimate_propensity(
    cohort: CohortTable,
    clip: tuple[float, float] = (0.01, 0.99),
    outcome: str = "delta_participation",
    config: Optional[EstimatorConfig] = None,
) -> PropensityModel:
    """Logistic fit of treatment on covariates, scores clipped to [lo, hi]."""
    cfg = replace(config or EstimatorConfig(), propensity_clip=clip)
    return _fit_propensity(effect_data(cohort, outcome), cfg)


# ---------------------------------------------------------------------------
# point estimators (cate vectors over EffectData rows)


def _fit_reg(name: str, cfg: EstimatorConfig, x, y, sample_weight=None):
    return make_regressor(name, cfg.learner).fit(x, y, sample_weight=sample_weight)


def _split_arms(data: EffectData):
    t = data.w == 1
    if t.sum() < 2 or (~t).sum() < 2:
        raise EstimationError("an arm is too small to fit on")
    return t


def _cate_t(data: EffectData, cfg: EstimatorConfig):
    t = _split_arms(data)
    m1 = _fit_reg(cfg.base_learner, cfg, data.x[t], data.y[t])
    m0 = _fit_reg(cfg.base_learner, cfg, data.x[~t], data.y[~t])
    return m1.predict(data.x) - m0.predict(data.x), None, 0


def _cate_s(data: EffectData, cfg: EstimatorConfig):
    _split_arms(data)
    xw = np.column_stack([data.x, data.w.astype(float)])
    f = _fit_reg(cfg.base_learner, cfg, xw, data.y)
    x1 = np.column_stack([data.x, np.ones(len(data.w))])
    x0 = np.column_stack([data.x, np.zeros(len(data.w))])
    return f.predict(x1) - f.predict(x0), None, 0


def _cate_x(data: EffectData, cfg: EstimatorConfig):
    t = _split_arms(data)
    m0 = _fit_reg(cfg.base_learner, cfg, data.x[~t], data.y[~t])
    m1 = _fit_reg(cfg.base_learner, cfg, data.x[t], data.y[t])
    d1 = data.y[t] - m0.predict(data.x[t])
    d0 = m1.predict(data.x[~t]) - data.y[~t]
    tau1 = _fit_reg(cfg.base_learner, cfg, data.x[t], d1)
    tau0 = _fit_reg(cfg.base_learner, cfg, data.x[~t], d0)
    if cfg.use_propensity_weighting:
        g = _fit_propensity(data, cfg).scores
    else:
        g = np.full(len(data.w), data.n_treated / len(data.w))
    cate = g * tau0.predict(data.x) + (1.0 - g) * tau1.predict(data.x)
    return cate, None, 0


R_RESIDUAL_FLOOR = 1e-6


def _cate_r(data: EffectData, cfg: EstimatorConfig):
    _split_arms(data)
    prop = _fit_propensity(data, cfg)
    m = _fit_reg(cfg.base_learner, cfg, data.x, data.y)
    y_res = data.y - m.predict(data.x)
    w_res = data.w - prop.scores
    keep = np.abs(w_res) >= R_RESIDUAL_FLOOR
    n_dropped = int((~keep).sum())
    if keep.sum() < 2:
        raise EstimationError("all rows have near-zero treatment residual")
    pseudo = y_res[keep] / w_res[keep]
    tau = _fit_reg(cfg.effect_learner, cfg, data.x[keep], pseudo,
                   sample_weight=w_res[keep] ** 2)
    return tau.predict(data.x), prop, n_dropped


def _dr_nuisances(data: EffectData, cfg: EstimatorConfig):
    """Per-row propensity scores and outcome-model predictions mu0/mu1."""
    t = _split_arms(data)
    prop = _fit_propensity(data, cfg)
    n = len(data.w)
    if not cfg.cross_fit:
        m1 = _fit_reg(cfg.base_learner, cfg, data.x[t], data.y[t])
        m0 = _fit_reg(cfg.base_learner, cfg, data.x[~t], data.y[~t])
        return prop.scores, m0.predict(data.x), m1.predict(data.x)
    # 2-fold cross-fit: nuisances fit on one fold predict the other
    rng = np.random.default_rng(cfg.seed)
    fold = np.zeros(n, dtype=bool)
    for arm in (t, ~t):
        idx = np.flatnonzero(arm)
        idx = idx[rng.permutation(len(idx))]
        fold[idx[: len(idx) // 2]] = True
    mu0 = np.empty(n)
    mu1 = np.empty(n)
    for half in (fold, ~fold):
        train = ~half
        if (t & train).sum() < 2 or (~t & train).sum() < 2:
            raise EstimationError("cross-fit fold with an empty arm")
        m1 = _fit_reg(cfg.base_learner, cfg, data.x[t & train], data.y[t & train])
        m0 = _fit_reg(cfg.base_learner, cfg, data.x[~t & train], data.y[~t & train])
        mu1[half] = m1.predict(data.x[half])
        mu0[half] = m0.predict(data.x[half])
    return prop.scores, mu0, mu1


def dr_pseudo_outcomes(data: EffectData, cfg: EstimatorConfig) -> np.ndarray:
    e, mu0, mu1 = _dr_nuisances(data, cfg)
    w = data.w.astype(float)
    return mu1 - mu0 + w * (data.y - mu1) / e - (1.0 - w) * (data.y - mu0) / (1.0 - e)


def dr_ate_formula(y, w, e, mu0, mu1) -> float:
    """Augmented IPW average treatment effect, evaluated term by term."""
    e = np.asarray(e, dtype=float)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise EstimationError("propensity scores must be clipped inside (0, 1)")
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    treated_term = (w * y - (w - e) * np.asarray(mu1)) / e
    control_term = ((1.0 - w) * y + (w - e) * np.asarray(mu0)) / (1.0 - e)
    return float(np.mean(treated_term - control_term))


def _cate_dr(data: EffectData, cfg: EstimatorConfig):
    phi = dr_pseudo_outcomes(data, cfg)
    second = _fit_reg(cfg.effect_learner, cfg, data.x, phi)
    return second.predict(data.x), None, 0


_POINT = {
    "t": _cate_t,
    "s": _cate_s,
    "x": _cate_x,
    "r": _cate_r,
    "dr": _cate_dr,
}


def _point_ate(data: EffectData, name: str, cfg: EstimatorConfig) -> float:
    if name == "dr":
        # ATE from the pseudo-outcome mean; identical to the AIPW formula
        return float(np.mean(dr_pseudo_outcomes(data, cfg)))
    if name == "dr_ate":
        e, mu0, mu1 = _dr_nuisances(data, cfg)
        return dr_ate_formula(data.y, data.w, e, mu0, mu1)
    cate, _, _ = _POINT[name](data, cfg)
    return float(np.mean(cate))


# ---------------------------------------------------------------------------
# effect estimates


@dataclass(frozen=True)
class EffectEstimate:
    estimator_name: str
    outcome: str
    ate: float
    ate_relative: float
    ci_low: float
    ci_high: float
    ci_low_relative: float
    ci_high_relative: float
    cate: np.ndarray
    n_treated: int
    n_control: int
    bootstrap_reps: int
    control_baseline_mean: float
    n_dropped_rows: int = 0


def _control_baseline(data: EffectData) -> float:
    return float(data.baseline[data.w == 0].mean())


def _pct(value: float, base: float) -> float:
    return 100.0 * value / base if abs(base) >= 1e-9 else math.nan


def _finish(name, data, cate, ate, n_dropped) -> EffectEstimate:
    base = _control_baseline(data)
    return EffectEstimate(
        estimator_name=name,
        outcome=data.outcome,
        ate=ate,
        ate_relative=_pct(ate, base),
        ci_low=math.nan,
        ci_high=math.nan,
        ci_low_relative=math.nan,
        ci_high_relative=math.nan,
        cate=cate,
        n_treated=data.n_treated,
        n_control=data.n_control,
        bootstrap_reps=0,
        control_baseline_mean=base,
        n_dropped_rows=n_dropped,
    )


def _estimate(cohort, outcome, name, cfg) -> EffectEstimate:
    data = effect_data(cohort, outcome)
    if name == "dr_ate":
        e, mu0, mu1 = _dr_nuisances(data, cfg)
        ate = dr_ate_formula(data.y, data.w, e, mu0, mu1)
        w = data.w.astype(float)
        phi = mu1 - mu0 + w * (data.y - mu1) / e - (1.0 - w) * (data.y - mu0) / (1.0 - e)
        return _finish(name, data, phi, ate, 0)
    cate, _, n_dropped = _POINT[name](data, cfg)
    return _finish(name, data, cate, float(np.mean(cate)), n_dropped)


def t_learner(cohort, outcome="delta_report_rate",
              config: EstimatorConfig = EstimatorConfig()) -> EffectEstimate:
    """Separate outcome models per arm; CATE is their prediction gap."""
    return _estimate(cohort, outcome, "t", config)


def s_learner(cohort, outcome="delta_report_rate",
              config: EstimatorConfig = EstimatorConfig()) -> EffectEstimate:
    """One outcome model with treatment as an extra feature."""
    return _estimate(cohort, outcome, "s", config)


def x_learner(cohort, outcome="delta_report_rate",
              config: EstimatorConfig = EstimatorConfig(),
              use_propensity_weighting: Optional[bool] = None) -> EffectEstimate:
    """Cross-learner with propensity-weighted combination of the two
    imputed-effect models; disabling the weighting falls back to a constant
    weight equal to the treated fraction."""
    if use_propensity_weighting is not None:
        config = replace(config, use_propensity_weighting=use_propensity_weighting)
    return _estimate(cohort, outcome, "x", config)


def r_learner(cohort, outcome="delta_report_rate",
              config: EstimatorConfig = EstimatorConfig()) -> EffectEstimate:
    """Residual-on-residual regression; rows with treatment residual below
    1e-6 in magnitude are dropped from the stage-two fit and counted."""
    return _estimate(cohort, outcome, "r", config)


def dr_learner_ate(cohort, outcome="delta_report_rate",
                   config: EstimatorConfig = EstimatorConfig()) -> EffectEstimate:
    """Doubly-robust ATE from the augmented IPW formula; the stored cate
    vector holds the raw per-row pseudo-outcomes."""
    return _estimate(cohort, outcome, "dr_ate", config)


def dr_learner_cate(cohort, outcome="delta_report_rate",
                    config: EstimatorConfig = EstimatorConfig()) -> EffectEstimate:
    """Doubly-robust CATE: second-stage regression of pseudo-outcomes."""
    return _estimate(cohort, outcome, "dr", config)


def estimate_effect(cohort, outcome, estimator: str,
                    config: EstimatorConfig = EstimatorConfig(),
                    reps: int = 0, level: float = 0.95,
                    seed: Optional[int] = None) -> EffectEstimate:
    """Point estimate plus, when reps > 0, a bootstrap interval."""
    if estimator not in (*META_LEARNERS, "dr_ate"):
        raise ValueError(f"unknown estimator {estimator!r}")
    est = _estimate(cohort, outcome, estimator, config)
    if reps <= 0:
        return est
    if seed is None:
        raise ValueError("bootstrap needs a seed for reproducibility")
    lo, hi = bootstrap_ci(cohort, estimator, outcome=outcome, reps=reps,
                          level=level, seed=seed, config=config)
    lo = min(lo, est.ate)
    hi = max(hi, est.ate)
    base = est.control_baseline_mean
    return replace(
        est,
        ci_low=lo,
        ci_high=hi,
        ci_low_relative=_pct(lo, base),
        ci_high_relative=_pct(hi, base),
        bootstrap_reps=reps,
    )


def bootstrap_ci(cohort, estimator: str, outcome: str = "delta_report_rate",
                 reps: int = 500, level: float = 0.95, seed: int = 0,
                 config: EstimatorConfig = EstimatorConfig()) -> tuple[float, float]:
    """Percentile interval from a nonparametric bootstrap, resampling rows
    with replacement within each treatment arm. Replicate seeds derive from
    (seed, replicate, attempt), so serial and parallel runs agree; replicates
    that fail to estimate are redrawn, with a global budget of 10x reps."""
    if reps < 100:
        raise ValueError("bootstrap needs at least 100 replicates")
    if not (0.0 < level < 1.0):
        raise ValueError("level must be in (0, 1)")
    data = effect_data(cohort, outcome)
    idx_t = np.flatnonzero(data.w == 1)
    idx_c = np.flatnonzero(data.w == 0)
    ates = np.empty(reps)
    budget = 10 * reps
    for rep in range(reps):
        attempt = 0
        while True:
            if budget == 0:
                raise EstimationError("bootstrap exhausted its redraw budget")
            budget -= 1
            rng = np.random.default_rng([seed, rep, attempt])
            take = np.concatenate(
                [
                    idx_t[rng.integers(0, len(idx_t), len(idx_t))],
                    idx_c[rng.integers(0, len(idx_c), len(idx_c))],
                ]
            )
            try:
                ates[rep] = _point_ate(data.subset(take), estimator, config)
                break
            except EstimationError:
                attempt += 1
    alpha = 1.0 - level
    lo, hi = np.quantile(ates, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def relative_effect(estimate: EffectEstimate, cohort: CohortTable) -> float:
    """ATE as a percentage of the control arm's mean baseline level.

    The baseline is the pre-window report rate for report-rate analyses and
    the pre-window participation fraction otherwise; intervals scale by the
    same denominator.
    """
    data = effect_data(cohort, estimate.outcome)
    base = _control_baseline(data)
    if abs(base) < 1e-9:
        raise EstimationError("control baseline mean is too close to zero")
    return 100.0 * estimate.ate / base


# ---------------------------------------------------------------------------
# meta-learner comparison


@dataclass(frozen=True)
class CateSummary:
    estimator_name: str
    mean: float
    mode: float
    std: float
    iqr: float


def _kde_mode(values: np.ndarray, grid_size: int = 512) -> float:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return lo
    n = len(values)
    sd = float(values.std(ddof=1))
    q25, q75 = np.quantile(values, [0.25, 0.75])
    spread = min(sd, (q75 - q25) / 1.34) or sd
    bw = 0.9 * spread * n ** (-0.2)
    if bw <= 0:
        return float(np.median(values))
    pad = 3.0 * bw
    grid = np.linspace(lo - pad, hi + pad, grid_size)
    density = np.zeros(grid_size)
    for start in range(0, n, 4096):
        chunk = values[start : start + 4096]
        density += np.exp(-0.5 * ((grid[:, None] - chunk[None, :]) / bw) ** 2).sum(axis=1)
    return float(grid[int(np.argmax(density))])


def compare_meta_learners(cohort, outcome="delta_report_rate",
                          config: EstimatorConfig = EstimatorConfig()) -> list[CateSummary]:
    """Run all five learners and summarize their CATE distributions: the
    concentration numbers behind second-stage model selection."""
    out = []
    for name in META_LEARNERS:
        est = _estimate(cohort, outcome, name, config)
        q25, q75 = np.quantile(est.cate, [0.25, 0.75])
        out.append(
            CateSummary(
                estimator_name=name,
                mean=float(est.cate.mean()),
                mode=_kde_mode(est.cate),
                std=float(est.cate.std(ddof=1)) if len(est.cate) > 1 else 0.0,
                iqr=float(q75 - q25),
            )
        )
    return out
