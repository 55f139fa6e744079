import math
from dataclasses import replace
from datetime import date

import numpy as np
import pytest
from scipy import stats as scipy_stats

from modfx.cohort import MODERATION_VS_NONE, QUICK_VS_DELAYED, build_cohort
from modfx.ingest import EventLog, link_cases, load_event_log
from modfx.simulate import (
    SimConfig,
    generate_world,
    preset_config,
    sim_config_from_kv,
    true_effects,
    write_world,
)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_players=0)
    with pytest.raises(ValueError):
        SimConfig(setup="weekly")
    with pytest.raises(ValueError):
        SimConfig(offense_mix=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SimConfig(noise_r=-1.0)
    with pytest.raises(ValueError):
        SimConfig(lag_weights=(1.0,) * 10)
    with pytest.raises(ValueError):
        # no control-arm mass
        SimConfig(lag_weights=(1.0,) + (0.0,) * 14)


def test_same_seed_same_files(tmp_path):
    cfg = preset_config("confounded", n_players=150, seed=9)
    for sub in ("a", "b"):
        raw, truth = generate_world(cfg)
        write_world(tmp_path / sub, raw, truth)
    for name in ("reports.csv", "moderations.csv", "matches.csv", "truth.csv",
                 "world.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (
            tmp_path / "b" / name
        ).read_bytes(), name


def test_different_seed_changes_world():
    a, _ = generate_world(preset_config("confounded", n_players=100, seed=1))
    b, _ = generate_world(preset_config("confounded", n_players=100, seed=2))
    assert a.reports != b.reports


def test_constant_effect_truth_is_exact():
    cfg = replace(SimConfig(n_players=300, seed=3), tau_r=-0.2, tau_p=0.1)
    _, truth = generate_world(cfg)
    assert truth.true_ate_r == pytest.approx(-0.2, abs=1e-12)
    assert truth.true_ate_p == pytest.approx(0.1, abs=1e-12)
    ate, cate = true_effects(truth, list(truth.player_ids))
    assert ate == pytest.approx(-0.2, abs=1e-12)
    assert np.allclose(cate, -0.2)


def test_linear_heterogeneity_matches_structural_function():
    cfg = replace(
        SimConfig(n_players=500, seed=4),
        tau_r_coefs=(0.3, 0, 0, 0, 0, 0, 0, 0, 0),
        tau_r=-0.1,
    )
    raw, truth = generate_world(cfg)
    cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
    x = np.array([r.x for r in cohort.rows])
    _, cate = true_effects(truth, [r.player_id for r in cohort.rows])
    assert np.allclose(truth.cate_r(x), cate, atol=1e-9)


def test_mean_cate_equals_ate_to_machine_precision():
    cfg = preset_config("heterogeneous_kd", n_players=800, seed=5)
    _, truth = generate_world(cfg)
    assert truth.true_ate_r == pytest.approx(float(truth.tau_r.mean()), abs=1e-12)


def test_true_effects_rejects_foreign_rows():
    _, truth = generate_world(SimConfig(n_players=50, seed=6))
    with pytest.raises(ValueError):
        true_effects(truth, ["someone_else"])


def test_lag_distribution_matches_config():
    cfg = preset_config("confounded", n_players=6000, seed=8)
    _, truth = generate_world(cfg)
    observed = np.bincount(truth.lag, minlength=15)
    expected = truth.expected_lag_counts()
    keep = expected > 1e-9
    chi2 = float(((observed[keep] - expected[keep]) ** 2 / expected[keep]).sum())
    dof = int(keep.sum()) - 1
    assert chi2 < scipy_stats.chi2.ppf(0.999, dof)


def test_offense_mix_roughly_respected():
    raw, truth = generate_world(SimConfig(n_players=8000, seed=9))
    counts = {}
    for m in raw.moderations:
        counts[m.offense_type.value] = counts.get(m.offense_type.value, 0) + 1
    share_voice = counts["offensive_voice_chat"] / 8000
    assert share_voice == pytest.approx(0.535, abs=0.03)


def test_round_trip_files_reproduce_cohort(tmp_path):
    cfg = preset_config("confounded", n_players=300, seed=10,
                        setup="quick_vs_delayed")
    raw, truth = generate_world(cfg)
    paths = write_world(tmp_path, raw, truth)
    loaded = load_event_log(
        paths["reports"], paths["moderations"], paths["matches"],
        (raw.start, raw.end), voice_start_override=raw.start,
    )
    assert loaded.reports == raw.reports
    assert loaded.moderations == raw.moderations
    assert loaded.match_days == raw.match_days

    direct = build_cohort(link_cases(raw), QUICK_VS_DELAYED, EventLog(raw))
    reloaded = build_cohort(link_cases(loaded), QUICK_VS_DELAYED, EventLog(loaded))
    assert direct.rows == reloaded.rows
    assert direct.exclusion_counts == reloaded.exclusion_counts


def test_generated_events_respect_study_range():
    cfg = SimConfig(n_players=200, seed=11)
    raw, _ = generate_world(cfg)
    for r in raw.reports:
        assert raw.start <= r.report_date <= raw.end
    for m in raw.moderations:
        assert raw.start <= m.moderation_date <= raw.end
    for md in raw.match_days:
        assert raw.start <= md.date <= raw.end
        assert md.matches_played > 0


def test_every_simulated_case_links_once():
    raw, truth = generate_world(SimConfig(n_players=400, seed=12))
    cases = link_cases(raw)
    assert len(cases) == 400
    by_pid = {c.player_id: c for c in cases}
    pos = {pid: i for i, pid in enumerate(truth.player_ids)}
    for pid, case in by_pid.items():
        assert case.lag == truth.lag[pos[pid]]


def test_background_activity_stays_out_of_windows():
    cfg = replace(SimConfig(n_players=150, seed=13), background_play_prob=0.6)
    raw, truth = generate_world(cfg)
    cases = {c.player_id: c for c in link_cases(raw)}
    log = EventLog(raw)
    cohort = build_cohort(list(cases.values()), MODERATION_VS_NONE, log)
    # planted outcome counts must be unaffected by the background fill:
    # regenerate without background and compare per-player outcomes
    bare_raw, _ = generate_world(replace(cfg, background_play_prob=0.0))
    bare_cohort = build_cohort(
        link_cases(bare_raw), MODERATION_VS_NONE, EventLog(bare_raw)
    )
    a = {r.player_id: (r.delta_report_rate, r.delta_participation)
         for r in cohort.rows}
    b = {r.player_id: (r.delta_report_rate, r.delta_participation)
         for r in bare_cohort.rows}
    assert a == b


def test_sim_config_from_kv_round_trip():
    cfg = sim_config_from_kv(
        {
            "n_players": "123",
            "seed": "5",
            "setup": "quick_vs_delayed",
            "start": "2023-03-01",
            "tau_r": "-0.2",
            "lag_weights": ",".join(["0.2", "0.1", "0.1", "0.1", "0.0", "0.0",
                                     "0.0", "0.1", "0.1", "0.1", "0.1", "0.05",
                                     "0.02", "0.02", "0.01"]),
            "assign_intercept": "auto",
        }
    )
    assert cfg.n_players == 123
    assert cfg.setup == "quick_vs_delayed"
    assert cfg.start == date(2023, 3, 1)
    assert cfg.tau_r == -0.2
    assert cfg.assign_intercept is None
    with pytest.raises(ValueError):
        sim_config_from_kv({"players": "10"})


def test_quick_vs_delayed_world_plants_effect_after_moderation():
    cfg = preset_config("confounded", n_players=4000, seed=14,
                        setup="quick_vs_delayed")
    raw, truth = generate_world(cfg)
    cohort = build_cohort(link_cases(raw), QUICK_VS_DELAYED, EventLog(raw))
    from modfx.estimators import EstimatorConfig, estimate_effect, effect_data

    est = estimate_effect(
        cohort, "delta_report_rate", "dr",
        EstimatorConfig(base_learner="linear", effect_learner="linear"),
    )
    data = effect_data(cohort, "delta_report_rate")
    true_ate, _ = true_effects(truth, data.player_ids)
    assert est.ate == pytest.approx(true_ate, abs=0.03)
