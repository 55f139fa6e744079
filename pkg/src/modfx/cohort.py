"""Quasi-experimental cohort construction and outcome computation.

Two study designs share the machinery:

  * moderation vs none: treated = same-day moderation (lag 0), control =
    moderation delayed a week or more; the post window follows the REPORT,
    so controls are observed while effectively unmoderated.
  * quick vs delayed: treated = moderated within three days, control as
    above; the post window follows the MODERATION for both arms.

Outcomes per player: change in report rate (reports per match, post minus
pre) and change in participation rate (fraction of days played, post minus
pre). Windows are 7 calendar days, inclusive at both ends.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Optional, Sequence

import numpy as np

from .domain import OffenseType, Severity
from .ingest import EventLog, LinkedCase, PRE_WINDOW_DAYS

WINDOW_DAYS = 7


class CohortDegenerate(ValueError):
    """Raised when a stratum lacks a treated or control arm."""


class Assignment(enum.Enum):
    TREATED = "treated"
    CONTROL = "control"
    EXCLUDED = "excluded"


@dataclass(frozen=True, slots=True)
class StudySetup:
    name: str
    treat_max_lag: int
    control_min_lag: int = 7
    post_anchor: str = "report"  # "report" | "moderation"

    def __post_init__(self):
        if self.treat_max_lag >= self.control_min_lag:
            raise ValueError("treated lag bound must sit below the control bound")
        if self.post_anchor not in ("report", "moderation"):
            raise ValueError(f"unknown post anchor {self.post_anchor!r}")


MODERATION_VS_NONE = StudySetup("moderation_vs_none", treat_max_lag=0)
QUICK_VS_DELAYED = StudySetup(
    "quick_vs_delayed", treat_max_lag=3, post_anchor="moderation"
)
SETUPS = {s.name: s for s in (MODERATION_VS_NONE, QUICK_VS_DELAYED)}


def assign_treatment(case: LinkedCase, setup: StudySetup) -> Assignment:
    if case.lag <= setup.treat_max_lag:
        return Assignment.TREATED
    if case.lag >= setup.control_min_lag:
        return Assignment.CONTROL
    return Assignment.EXCLUDED


def pre_window(case: LinkedCase) -> tuple[date, date]:
    t = case.report_date
    return t - timedelta(days=PRE_WINDOW_DAYS), t - timedelta(days=1)


def post_window(case: LinkedCase, setup: StudySetup) -> tuple[date, date]:
    anchor = case.report_date if setup.post_anchor == "report" else case.moderation_date
    return anchor, anchor + timedelta(days=WINDOW_DAYS - 1)


def compute_delta_report_rate(
    case: LinkedCase, setup: StudySetup, log: EventLog
) -> Optional[float]:
    """Report-rate change, post minus pre; None when either window has no
    matches (a rate needs a positive match count)."""
    lo0, hi0 = pre_window(case)
    lo1, hi1 = post_window(case, setup)
    if not (log.covers(lo0, hi0) and log.covers(lo1, hi1)):
        raise ValueError(f"windows for {case.player_id} fall outside the log range")
    m0 = log.matches_in(case.player_id, lo0, hi0)
    m1 = log.matches_in(case.player_id, lo1, hi1)
    if m0 == 0 or m1 == 0:
        return None
    r0 = log.reports_in(case.player_id, lo0, hi0)
    r1 = log.reports_in(case.player_id, lo1, hi1)
    return r1 / m1 - r0 / m0


def compute_delta_participation(
    case: LinkedCase, setup: StudySetup, log: EventLog
) -> float:
    """Participation change: fraction of post-window days played minus the
    pre-window fraction. Defined even with zero matches."""
    lo0, hi0 = pre_window(case)
    lo1, hi1 = post_window(case, setup)
    if not (log.covers(lo0, hi0) and log.covers(lo1, hi1)):
        raise ValueError(f"windows for {case.player_id} fall outside the log range")
    d0 = log.days_played_in(case.player_id, lo0, hi0)
    d1 = log.days_played_in(case.player_id, lo1, hi1)
    return d1 / WINDOW_DAYS - d0 / WINDOW_DAYS


@dataclass(frozen=True, slots=True)
class CohortRow:
    player_id: str
    w: int
    x: tuple[float, ...]
    delta_report_rate: Optional[float]
    delta_participation: float
    offense_type: OffenseType
    severity: Optional[Severity]
    baseline_report_rate: float
    baseline_participation: float
    lag: int


@dataclass(frozen=True)
class CohortTable:
    """Analysis rows for one stratum.

    exclusion_counts tallies dropped cases by reason, except
    "zero_match_window", which counts rows kept with an undefined
    report-rate outcome (they still contribute to participation analyses):
    len(rows) + dropped == input case count.
    """

    setup: StudySetup
    rows: tuple[CohortRow, ...]
    exclusion_counts: dict[str, int] = field(default_factory=dict)

    DROP_REASONS = ("lag_gap", "no_pre_window_matches", "window_outside_log")

    @property
    def n_dropped(self) -> int:
        return sum(self.exclusion_counts.get(r, 0) for r in self.DROP_REASONS)

    @property
    def n_treated(self) -> int:
        return sum(r.w for r in self.rows)

    @property
    def n_control(self) -> int:
        return len(self.rows) - self.n_treated


OUTCOMES = ("delta_report_rate", "delta_participation")
BASELINES = {
    "delta_report_rate": "baseline_report_rate",
    "delta_participation": "baseline_participation",
}


def build_cohort(
    cases: Sequence[LinkedCase],
    setup: StudySetup,
    log: EventLog,
    offense: Optional[OffenseType] = None,
    severity: Optional[Severity] = None,
) -> CohortTable:
    """Assemble the cohort for one stratum; raises CohortDegenerate when a
    stratum has an empty arm. Stratum filters apply before assignment."""
    selected = [
        c
        for c in cases
        if (offense is None or c.offense_type is offense)
        and (severity is None or c.severity is severity)
    ]
    selected.sort(key=lambda c: c.player_id)

    excl: dict[str, int] = {}

    def count(reason):
        excl[reason] = excl.get(reason, 0) + 1

    kept: list[tuple[LinkedCase, int]] = []
    for case in selected:
        assignment = assign_treatment(case, setup)
        if assignment is Assignment.EXCLUDED:
            count("lag_gap")
            continue
        if case.covariates is None:
            count("no_pre_window_matches")
            continue
        lo0, hi0 = pre_window(case)
        lo1, hi1 = post_window(case, setup)
        if not (log.covers(lo0, hi0) and log.covers(lo1, hi1)):
            count("window_outside_log")
            continue
        kept.append((case, 1 if assignment is Assignment.TREATED else 0))

    rows: list[CohortRow] = []
    if kept:
        pids = [c.player_id for c, _ in kept]
        pre_lo = [pre_window(c)[0] for c, _ in kept]
        pre_hi = [pre_window(c)[1] for c, _ in kept]
        post_lo = [post_window(c, setup)[0] for c, _ in kept]
        post_hi = [post_window(c, setup)[1] for c, _ in kept]

        r0 = log.report_counts(pids, pre_lo, pre_hi)
        r1 = log.report_counts(pids, post_lo, post_hi)
        m0, d0 = log.match_totals(pids, pre_lo, pre_hi)
        m1, d1 = log.match_totals(pids, post_lo, post_hi)

        for i, (case, w) in enumerate(kept):
            # covariates exist, so the pre window has matches
            baseline_rate = r0[i] / m0[i]
            if m1[i] == 0:
                delta_r: Optional[float] = None
                count("zero_match_window")
            else:
                delta_r = r1[i] / m1[i] - r0[i] / m0[i]
            rows.append(
                CohortRow(
                    player_id=case.player_id,
                    w=w,
                    x=case.covariates,
                    delta_report_rate=delta_r,
                    delta_participation=d1[i] / WINDOW_DAYS - d0[i] / WINDOW_DAYS,
                    offense_type=case.offense_type,
                    severity=case.severity,
                    baseline_report_rate=float(baseline_rate),
                    baseline_participation=d0[i] / WINDOW_DAYS,
                    lag=case.lag,
                )
            )

    table = CohortTable(setup=setup, rows=tuple(rows), exclusion_counts=excl)
    if table.n_treated == 0 or table.n_control == 0:
        label = _stratum_label(setup, offense, severity)
        raise CohortDegenerate(
            f"{label}: treated={table.n_treated} control={table.n_control}"
        )
    return table


def _stratum_label(setup, offense, severity) -> str:
    parts = [setup.name]
    parts.append(offense.value if offense is not None else "all_offenses")
    if severity is not None:
        parts.append(severity.value)
    return "/".join(parts)


def write_cohort_csv(path, table: CohortTable) -> None:
    from .domain import COVARIATE_NAMES

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["player_id", "w", *(f"cov_{n}" for n in COVARIATE_NAMES),
             "delta_report_rate", "delta_participation", "offense_type", "severity",
             "baseline_report_rate", "baseline_participation", "lag"]
        )
        for row in table.rows:
            w.writerow(
                [
                    row.player_id,
                    row.w,
                    *(format(v, ".10g") for v in row.x),
                    "" if row.delta_report_rate is None
                    else format(row.delta_report_rate, ".10g"),
                    format(row.delta_participation, ".10g"),
                    row.offense_type.value,
                    row.severity.value if row.severity is not None else "",
                    format(row.baseline_report_rate, ".10g"),
                    format(row.baseline_participation, ".10g"),
                    row.lag,
                ]
            )
