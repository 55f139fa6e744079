"""Covariate-balance checks and treatment-effect heterogeneity readouts.

Balance is judged by standardized mean differences before and after
propensity-score matching; heterogeneity by Pearson correlations between
per-row CATE values and skill indicators derived from the pre-report
covariate window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import COVARIATE_NAMES
from .estimators import PropensityModel


@dataclass(frozen=True)
class FeatureBalance:
    feature: str
    mean_treated: float
    mean_control: float
    smd_before: float
    smd_after: float


@dataclass(frozen=True)
class BalanceReport:
    features: tuple[FeatureBalance, ...]
    match_pairs: tuple[tuple[int, int], ...]
    k: int

    def mean_abs_smd(self) -> tuple[float, float]:
        before = [abs(f.smd_before) for f in self.features if math.isfinite(f.smd_before)]
        after = [abs(f.smd_after) for f in self.features if math.isfinite(f.smd_after)]
        return (
            float(np.mean(before)) if before else math.nan,
            float(np.mean(after)) if after else math.nan,
        )


def standardized_mean_difference(values_t, values_c) -> float:
    """(mean_t - mean_c) / sqrt((var_t + var_c) / 2), sample variances.

    Returns NaN when the pooled variance is zero or either arm is too small
    for a variance.
    """
    values_t = np.asarray(values_t, dtype=float)
    values_c = np.asarray(values_c, dtype=float)
    if len(values_t) == 0 or len(values_c) == 0:
        raise ValueError("both arms must be non-empty")
    if len(values_t) < 2 or len(values_c) < 2:
        return math.nan
    pooled = (values_t.var(ddof=1) + values_c.var(ddof=1)) / 2.0
    if pooled <= 0.0:
        return math.nan
    return float((values_t.mean() - values_c.mean()) / math.sqrt(pooled))


def knn_match(propensity: PropensityModel, k: int = 1) -> tuple[tuple[int, int], ...]:
    """For each treated row, the k nearest control rows by propensity-score
    distance, with replacement; ties break toward the lower row index."""
    treated_idx = np.flatnonzero(propensity.treated == 1)
    control_idx = np.flatnonzero(propensity.treated == 0)
    if len(treated_idx) == 0 or len(control_idx) == 0:
        raise ValueError("matching needs both arms")
    if k < 1 or k > len(control_idx):
        raise ValueError(f"k={k} outside [1, {len(control_idx)}]")
    scores = propensity.scores
    control_scores = scores[control_idx]
    pairs = []
    for ti in treated_idx:
        dist = np.abs(control_scores - scores[ti])
        order = np.lexsort((control_idx, dist))
        for ci in control_idx[order[:k]]:
            pairs.append((int(ti), int(ci)))
    return tuple(pairs)


def balance_report(x: np.ndarray, propensity: PropensityModel, k: int = 1,
                   feature_names: Sequence[str] = COVARIATE_NAMES) -> BalanceReport:
    """Per-feature SMD before matching and against the matched control sample."""
    x = np.asarray(x, dtype=float)
    pairs = knn_match(propensity, k)
    t_mask = propensity.treated == 1
    matched_controls = np.array([ci for _, ci in pairs], dtype=np.int64)
    rows = []
    for j, name in enumerate(feature_names):
        col = x[:, j]
        rows.append(
            FeatureBalance(
                feature=name,
                mean_treated=float(col[t_mask].mean()),
                mean_control=float(col[~t_mask].mean()),
                smd_before=standardized_mean_difference(col[t_mask], col[~t_mask]),
                smd_after=standardized_mean_difference(
                    col[t_mask], col[matched_controls]
                ),
            )
        )
    return BalanceReport(features=tuple(rows), match_pairs=pairs, k=k)


def rank_auc(scores, labels) -> float:
    """Probability a uniformly chosen treated row outscores a control row
    (ties count half): a quick separation check for propensity models."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need both classes")
    order = np.argsort(np.concatenate([pos, neg]), kind="stable")
    ranks = np.empty(len(order))
    ranks[order] = np.arange(1, len(order) + 1)
    # midranks for ties
    allv = np.concatenate([pos, neg])
    sorted_v = allv[order]
    start = 0
    for i in range(1, len(order) + 1):
        if i == len(order) or sorted_v[i] != sorted_v[start]:
            ranks[order[start:i]] = 0.5 * (start + 1 + i)
            start = i
    r_pos = ranks[: len(pos)].sum()
    return float((r_pos - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


# ---------------------------------------------------------------------------
# skill indicators


# covariate positions used by the indicators
_SCORE = COVARIATE_NAMES.index("match_score")
_ELIMS = COVARIATE_NAMES.index("eliminations")
_DEATHS = COVARIATE_NAMES.index("deaths")
_DMG_DONE = COVARIATE_NAMES.index("damage_done")
_DMG_TAKEN = COVARIATE_NAMES.index("damage_taken")


@dataclass(frozen=True)
class SkillIndicators:
    """Per-row skill summaries over the pre-report window; NaN marks an
    undefined ratio (zero denominator)."""

    ams: np.ndarray
    dsi: np.ndarray
    kd: np.ndarray

    def by_name(self, name: str) -> np.ndarray:
        return {"ams": self.ams, "dsi": self.dsi, "kd": self.kd}[name]


INDICATOR_NAMES = ("ams", "dsi", "kd")


def compute_skill_indicators(cohort) -> SkillIndicators:
    """AMS / DSI / K-D from the cohort's covariates, which already hold
    per-match means over the pre-report week."""
    x = np.array([r.x for r in cohort.rows], dtype=float)
    if len(x) == 0:
        return SkillIndicators(np.empty(0), np.empty(0), np.empty(0))
    ams = x[:, _SCORE].copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        dsi = np.where(x[:, _DMG_TAKEN] > 0, x[:, _DMG_DONE] / x[:, _DMG_TAKEN], np.nan)
        kd = np.where(x[:, _DEATHS] > 0, x[:, _ELIMS] / x[:, _DEATHS], np.nan)
    return SkillIndicators(ams=ams, dsi=dsi, kd=kd)


def cate_feature_correlation(cate, indicator) -> tuple[float, int]:
    """Pearson r over rows where both inputs are defined; (NaN, n) when
    fewer than three pairs remain or either side has zero variance."""
    cate = np.asarray(cate, dtype=float)
    indicator = np.asarray(indicator, dtype=float)
    if cate.shape != indicator.shape:
        raise ValueError("length mismatch")
    mask = np.isfinite(cate) & np.isfinite(indicator)
    n = int(mask.sum())
    if n < 3:
        return math.nan, n
    a = cate[mask]
    b = indicator[mask]
    sa = a.std()
    sb = b.std()
    if sa == 0.0 or sb == 0.0:
        return math.nan, n
    r = float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))
    return r, n
