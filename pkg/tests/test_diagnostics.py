import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modfx.diagnostics import (
    balance_report,
    cate_feature_correlation,
    compute_skill_indicators,
    knn_match,
    standardized_mean_difference,
)
from modfx.estimators import EstimatorConfig, PropensityModel, _fit_propensity, \
    effect_data

from conftest import synthetic_cohort


def _prop(scores, treated):
    return PropensityModel(
        classifier=None,
        clip=(0.01, 0.99),
        scores=np.asarray(scores, dtype=float),
        treated=np.asarray(treated, dtype=int),
    )


def test_smd_identical_distributions_is_zero():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert standardized_mean_difference(v, v) == 0.0


def test_smd_unit_gap_unit_variance():
    t = np.array([0.0, 2.0])  # mean 1, var 2... pick explicit construction
    # arms with mean gap 1 and sample variance 1 each
    t = np.array([0.5, 1.5, 0.5, 1.5]) + 0.5
    c = np.array([0.5, 1.5, 0.5, 1.5]) - 0.5
    # var (ddof=1) of each arm = 1/3; rescale to make it exactly 1
    t = (t - t.mean()) * math.sqrt(1 / np.var(t, ddof=1)) + 1.0
    c = (c - c.mean()) * math.sqrt(1 / np.var(c, ddof=1)) + 0.0
    assert standardized_mean_difference(t, c) == pytest.approx(1.0, abs=1e-12)


def test_smd_feature_balance_style_fixture():
    # means from the published balance table; variances supplied here
    rng = np.random.default_rng(0)
    t = rng.normal(0, 1, 4000) * 580.0
    c = rng.normal(0, 1, 4000) * 610.0
    t = t - t.mean() + 2137.5
    c = c - c.mean() + 2156.4
    expected = (2137.5 - 2156.4) / math.sqrt(
        (np.var(t, ddof=1) + np.var(c, ddof=1)) / 2
    )
    assert standardized_mean_difference(t, c) == pytest.approx(expected, abs=1e-12)


def test_smd_zero_pooled_variance_undefined():
    assert math.isnan(standardized_mean_difference([1.0, 1.0], [1.0, 1.0]))


def test_smd_requires_nonempty_arms():
    with pytest.raises(ValueError):
        standardized_mean_difference([], [1.0])


@settings(max_examples=50, deadline=None)
@given(
    t=st.lists(st.floats(-100, 100), min_size=2, max_size=20),
    c=st.lists(st.floats(-100, 100), min_size=2, max_size=20),
)
def test_smd_antisymmetric_under_arm_swap(t, c):
    a = standardized_mean_difference(t, c)
    b = standardized_mean_difference(c, t)
    if math.isnan(a):
        assert math.isnan(b)
    else:
        assert a == pytest.approx(-b, rel=1e-9, abs=1e-12)


def test_knn_tie_breaks_to_lowest_index():
    prop = _prop([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
    pairs = knn_match(prop, k=1)
    # both treated rows (0 and 2) match control row 1, the lowest control index
    assert pairs == ((0, 1), (2, 1))


def test_knn_picks_nearest_score():
    prop = _prop([0.75, 0.2, 0.8], [1, 0, 0])
    assert knn_match(prop, k=1) == ((0, 2),)


def test_knn_k_bounds():
    prop = _prop([0.5, 0.5], [1, 0])
    with pytest.raises(ValueError):
        knn_match(prop, k=2)
    with pytest.raises(ValueError):
        knn_match(prop, k=0)


def test_knn_with_replacement_and_k2():
    prop = _prop([0.5, 0.45, 0.52, 0.9], [1, 0, 0, 0])
    pairs = knn_match(prop, k=2)
    assert pairs == ((0, 2), (0, 1))


def test_balance_improves_after_matching(confounded_cohort):
    cohort, _ = confounded_cohort
    data = effect_data(cohort, "delta_participation")
    prop = _fit_propensity(
        data, EstimatorConfig(base_learner="linear", effect_learner="linear")
    )
    before, after = balance_report(data.x, prop, k=1).mean_abs_smd()
    assert after < before


def test_matching_improves_most_features_under_broad_confounding():
    from dataclasses import replace

    from modfx.cohort import MODERATION_VS_NONE, build_cohort
    from modfx.ingest import EventLog, link_cases
    from modfx.simulate import generate_world, preset_config

    cfg = replace(
        preset_config("confounded", n_players=4000, seed=19),
        assign_coefs=(0.5, -0.4, 0.6, -0.5, 0.4, 0.5, 0.45, -0.45, 0.4),
    )
    raw, _ = generate_world(cfg)
    cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
    data = effect_data(cohort, "delta_participation")
    prop = _fit_propensity(
        data, EstimatorConfig(base_learner="linear", effect_learner="linear")
    )
    rep = balance_report(data.x, prop, k=1)
    improved = sum(1 for f in rep.features if abs(f.smd_after) < abs(f.smd_before))
    assert improved >= 7


def test_skill_indicator_values():
    x = np.zeros((2, 9))
    x[0] = [2000, 3, 15.4, 11.7, 40000, 130, 1600, 1280, 20]
    x[1] = [1500, 2, 10.0, 0.0, 30000, 120, 900, 0.0, 15]
    cohort = synthetic_cohort(x, [1, 0])
    ind = compute_skill_indicators(cohort)
    assert ind.ams[0] == pytest.approx(2000.0)
    assert ind.dsi[0] == pytest.approx(1.25)
    assert ind.kd[0] == pytest.approx(15.4 / 11.7)
    assert math.isnan(ind.kd[1])
    assert math.isnan(ind.dsi[1])


def test_correlation_exact_linear_cases():
    v = np.linspace(0, 1, 50)
    r, n = cate_feature_correlation(2 * v + 1, v)
    assert r == pytest.approx(1.0, abs=1e-12)
    assert n == 50
    r, _ = cate_feature_correlation(-v, v)
    assert r == pytest.approx(-1.0, abs=1e-12)


def test_correlation_skips_undefined_rows():
    cate = np.array([1.0, 2.0, 3.0, 4.0])
    ind = np.array([1.0, np.nan, 3.0, 4.0])
    r, n = cate_feature_correlation(cate, ind)
    assert n == 3
    assert r == pytest.approx(1.0, abs=1e-12)


def test_correlation_needs_three_pairs_and_variance():
    r, n = cate_feature_correlation([1.0, 2.0], [1.0, 2.0])
    assert math.isnan(r) and n == 2
    r, n = cate_feature_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    assert math.isnan(r) and n == 3


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(0.1, 10),
    b=st.floats(-5, 5),
    seed=st.integers(0, 1000),
)
def test_correlation_affine_invariance_and_sign_flip(a, b, seed):
    rng = np.random.default_rng(seed)
    cate = rng.normal(size=30)
    ind = rng.normal(size=30) + 0.5 * cate
    r0, _ = cate_feature_correlation(cate, ind)
    r1, _ = cate_feature_correlation(cate, a * ind + b)
    r2, _ = cate_feature_correlation(cate, -ind)
    assert r1 == pytest.approx(r0, rel=1e-9, abs=1e-9)
    assert r2 == pytest.approx(-r0, rel=1e-9, abs=1e-9)
