import numpy as np
import pytest

from modfx.cohort import CohortRow, CohortTable, MODERATION_VS_NONE
from modfx.domain import OffenseType, Severity


def synthetic_cohort(x, w, y_r=None, y_p=None, baseline_r=None, baseline_p=None,
                     setup=MODERATION_VS_NONE):
    """Wrap plain arrays in a CohortTable so estimators can be unit-tested
    without running the event pipeline."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=int)
    n = len(w)
    y_r = np.zeros(n) if y_r is None else np.asarray(y_r, dtype=float)
    y_p = np.zeros(n) if y_p is None else np.asarray(y_p, dtype=float)
    baseline_r = np.full(n, 0.5) if baseline_r is None else np.asarray(baseline_r)
    baseline_p = np.full(n, 0.7) if baseline_p is None else np.asarray(baseline_p)
    rows = tuple(
        CohortRow(
            player_id=f"p{i:06d}",
            w=int(w[i]),
            x=tuple(float(v) for v in np.atleast_1d(x[i])),
            delta_report_rate=float(y_r[i]) if np.isfinite(y_r[i]) else None,
            delta_participation=float(y_p[i]),
            offense_type=OffenseType.OFFENSIVE_TEXT_CHAT,
            severity=Severity.MILDER,
            baseline_report_rate=float(baseline_r[i]),
            baseline_participation=float(baseline_p[i]),
            lag=0 if w[i] else 8,
        )
        for i in range(n)
    )
    return CohortTable(setup=setup, rows=rows, exclusion_counts={})


@pytest.fixture(scope="session")
def confounded_world():
    """One medium confounded world shared by estimator/diagnostic tests."""
    from modfx.simulate import generate_world, preset_config

    cfg = preset_config("confounded", n_players=5000, seed=77)
    return generate_world(cfg)


@pytest.fixture(scope="session")
def confounded_cohort(confounded_world):
    from modfx.cohort import build_cohort
    from modfx.ingest import EventLog, link_cases

    raw, truth = confounded_world
    cohort = build_cohort(link_cases(raw), MODERATION_VS_NONE, EventLog(raw))
    return cohort, truth
