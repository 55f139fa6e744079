"""Event-file loading and report-to-moderation case linking.

The linking rules, applied in order:

  1. join reports to moderations on (player_id, offense_type);
  2. keep pairs with moderation date M within 14 days of the report date T;
  3. when one moderation covers several reports, the earliest report defines
     T (equivalently: the longest delay for that moderation event);
  4. when a player has several moderation events, keep the first one
     (ordered by date, then offense value for determinism);
  5. exactly one linked case per player.

Covariates are per-match means over the week before the report,
weighted by matches played per day.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Optional, Sequence

import numpy as np

from .domain import (
    COVARIATE_NAMES,
    N_COVARIATES,
    MatchDayRecord,
    ModerationAction,
    ModerationEvent,
    OffenseType,
    ParseError,
    ReportEvent,
    parse_actions,
    parse_offense,
    severity_or_none,
    Severity,
)

MAX_LINK_LAG = 14
PRE_WINDOW_DAYS = 7


@dataclass(frozen=True, slots=True)
class RawTables:
    """Validated raw event tables plus the date range they claim to cover."""

    reports: tuple[ReportEvent, ...]
    moderations: tuple[ModerationEvent, ...]
    match_days: tuple[MatchDayRecord, ...]
    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("date range end before start")
        seen = set()
        for md in self.match_days:
            key = (md.player_id, md.date)
            if key in seen:
                raise ValueError(f"duplicate match-day row for {key}")
            seen.add(key)


@dataclass(frozen=True, slots=True)
class LinkedCase:
    """One player's linked report -> moderation episode.

    covariates is None when the player has no matches in the pre-report
    week; such cases are excluded downstream but counted.
    """

    player_id: str
    report_date: date
    moderation_date: date
    offense_type: OffenseType
    actions: tuple[ModerationAction, ...]
    severity: Optional[Severity]
    covariates: Optional[tuple[float, ...]]

    @property
    def lag(self) -> int:
        return (self.moderation_date - self.report_date).days


# ---------------------------------------------------------------------------
# file loading


def _parse_date(text: str, ctx: str) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"{ctx}: bad date {text!r}") from None


def _rows(path) -> Iterable[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        for row in reader:
            yield reader.line_num, row


def _get(row: dict, key: str, ctx: str) -> str:
    value = row.get(key)
    if value is None or not value.strip():
        raise ParseError(f"{ctx}: missing field {key!r}")
    return value.strip()


def load_event_log(
    reports_path,
    moderations_path,
    matches_path,
    date_range: tuple[date, date],
    voice_start_override: Optional[date] = None,
) -> RawTables:
    """Load the three event files, dropping rows outside date_range.

    Voice-chat reports dated before voice_start_override are dropped (the
    voice moderation pipeline went live mid-window). Malformed rows raise
    ParseError with file and line context.
    """
    start, end = date_range
    if voice_start_override is None:
        voice_start_override = start

    reports = []
    for line_num, row in _rows(reports_path):
        ctx = f"{reports_path}:{line_num}"
        day = _parse_date(_get(row, "report_date", ctx), ctx)
        offense = _parse_offense_ctx(row, "offense_type", ctx)
        if not (start <= day <= end):
            continue
        if offense is OffenseType.OFFENSIVE_VOICE_CHAT and day < voice_start_override:
            continue
        reporter = (row.get("reporter_id") or "").strip() or None
        reports.append(ReportEvent(_get(row, "player_id", ctx), day, offense, reporter))

    moderations = []
    for line_num, row in _rows(moderations_path):
        ctx = f"{moderations_path}:{line_num}"
        day = _parse_date(_get(row, "moderation_date", ctx), ctx)
        if not (start <= day <= end):
            continue
        offense = _parse_offense_ctx(row, "offense_type", ctx)
        try:
            actions = parse_actions(_get(row, "actions", ctx))
        except ParseError as exc:
            raise ParseError(f"{ctx}: {exc}") from None
        linked = tuple(
            s.strip() for s in (row.get("linked_reporters") or "").split(";") if s.strip()
        )
        moderations.append(
            ModerationEvent(_get(row, "player_id", ctx), day, offense, actions, linked)
        )

    match_days = []
    for line_num, row in _rows(matches_path):
        ctx = f"{matches_path}:{line_num}"
        day = _parse_date(_get(row, "date", ctx), ctx)
        if not (start <= day <= end):
            continue
        try:
            n_matches = int(_get(row, "matches_played", ctx))
        except ValueError:
            raise ParseError(f"{ctx}: bad match count") from None
        stats = None
        if n_matches > 0:
            try:
                stats = tuple(float(_get(row, name, ctx)) for name in COVARIATE_NAMES)
            except ValueError:
                raise ParseError(f"{ctx}: non-numeric stat") from None
        try:
            match_days.append(
                MatchDayRecord(_get(row, "player_id", ctx), day, n_matches, stats)
            )
        except ValueError as exc:
            raise ParseError(f"{ctx}: {exc}") from None

    return RawTables(tuple(reports), tuple(moderations), tuple(match_days), start, end)


def _parse_offense_ctx(row: dict, key: str, ctx: str) -> OffenseType:
    try:
        return parse_offense(_get(row, key, ctx))
    except ParseError as exc:
        raise ParseError(f"{ctx}: {exc}") from None


# ---------------------------------------------------------------------------
# event-log index


class EventLog:
    """Columnar index over RawTables for fast per-player window queries.

    Dates are stored as day offsets from the declared range start. All
    window queries are inclusive of both endpoints.
    """

    def __init__(self, raw: RawTables):
        self.start = raw.start
        self.end = raw.end
        self._span = (raw.end - raw.start).days + 1

        rep_pid = np.array([r.player_id for r in raw.reports], dtype=object)
        rep_day = np.array(
            [(r.report_date - raw.start).days for r in raw.reports], dtype=np.int64
        )
        md_pid = np.array([m.player_id for m in raw.match_days], dtype=object)
        md_day = np.array(
            [(m.date - raw.start).days for m in raw.match_days], dtype=np.int64
        )
        md_matches = np.array([m.matches_played for m in raw.match_days], dtype=np.int64)
        md_stats = np.zeros((len(raw.match_days), N_COVARIATES))
        for i, m in enumerate(raw.match_days):
            if m.stats is not None:
                md_stats[i] = m.stats

        self.players = np.unique(np.concatenate([rep_pid, md_pid, np.array(
            [m.player_id for m in raw.moderations], dtype=object)])) if (
            len(rep_pid) + len(md_pid) + len(raw.moderations)) else np.array([], dtype=object)
        self._code = {pid: i for i, pid in enumerate(self.players)}

        rep_key = self._keys(rep_pid, rep_day)
        order = np.argsort(rep_key, kind="stable")
        self._rep_key = rep_key[order]

        md_key = self._keys(md_pid, md_day)
        order = np.argsort(md_key, kind="stable")
        self._md_key = md_key[order]
        md_matches = md_matches[order]
        md_stats = md_stats[order]
        # prefix sums; index i holds the total over sorted rows [0, i)
        self._cum_matches = np.concatenate([[0], np.cumsum(md_matches)])
        self._cum_days = np.concatenate([[0], np.cumsum(md_matches > 0)])
        self._cum_stats = np.vstack(
            [np.zeros(N_COVARIATES), np.cumsum(md_stats * md_matches[:, None], axis=0)]
        )

    def _keys(self, pids: np.ndarray, days: np.ndarray) -> np.ndarray:
        codes = np.fromiter(
            (self._code[p] for p in pids), dtype=np.int64, count=len(pids)
        ) if len(pids) else np.zeros(0, dtype=np.int64)
        return codes * self._span + days

    def _window_keys(self, player_ids: Sequence[str], lo: np.ndarray, hi: np.ndarray):
        codes = np.fromiter(
            (self._code.get(p, -1) for p in player_ids), dtype=np.int64,
            count=len(player_ids),
        )
        # count over the window's overlap with the log range; windows fully
        # outside give an empty half-open span
        lo_c = np.clip(lo, 0, self._span)
        hi_c = np.maximum(np.clip(hi + 1, 0, self._span), lo_c)
        return codes * self._span + lo_c, codes * self._span + hi_c, codes >= 0

    def covers(self, lo: date, hi: date) -> bool:
        return self.start <= lo and hi <= self.end

    def _offsets(self, lo_dates, hi_dates):
        lo = np.array([(d - self.start).days for d in lo_dates], dtype=np.int64)
        hi = np.array([(d - self.start).days for d in hi_dates], dtype=np.int64)
        return lo, hi

    def report_counts(self, player_ids, lo_dates, hi_dates) -> np.ndarray:
        """Reports received per player inside [lo, hi], any offense type."""
        lo, hi = self._offsets(lo_dates, hi_dates)
        klo, khi, known = self._window_keys(player_ids, lo, hi)
        counts = np.searchsorted(self._rep_key, khi) - np.searchsorted(self._rep_key, klo)
        return np.where(known, counts, 0)

    def match_totals(self, player_ids, lo_dates, hi_dates):
        """(matches played, distinct days with a match) per player in [lo, hi]."""
        lo, hi = self._offsets(lo_dates, hi_dates)
        klo, khi, known = self._window_keys(player_ids, lo, hi)
        i0 = np.searchsorted(self._md_key, klo)
        i1 = np.searchsorted(self._md_key, khi)
        matches = self._cum_matches[i1] - self._cum_matches[i0]
        days = self._cum_days[i1] - self._cum_days[i0]
        return np.where(known, matches, 0), np.where(known, days, 0)

    def covariate_means(self, player_ids, lo_dates, hi_dates):
        """Per-match stat means over [lo, hi]; rows with zero matches are NaN."""
        lo, hi = self._offsets(lo_dates, hi_dates)
        klo, khi, known = self._window_keys(player_ids, lo, hi)
        i0 = np.searchsorted(self._md_key, klo)
        i1 = np.searchsorted(self._md_key, khi)
        matches = (self._cum_matches[i1] - self._cum_matches[i0]).astype(float)
        matches[~known] = 0.0
        sums = self._cum_stats[i1] - self._cum_stats[i0]
        with np.errstate(invalid="ignore", divide="ignore"):
            means = sums / matches[:, None]
        means[matches == 0] = np.nan
        return means

    # scalar conveniences, used by tests and the single-case operations
    def reports_in(self, player_id: str, lo: date, hi: date) -> int:
        return int(self.report_counts([player_id], [lo], [hi])[0])

    def matches_in(self, player_id: str, lo: date, hi: date) -> int:
        return int(self.match_totals([player_id], [lo], [hi])[0][0])

    def days_played_in(self, player_id: str, lo: date, hi: date) -> int:
        return int(self.match_totals([player_id], [lo], [hi])[1][0])


# ---------------------------------------------------------------------------
# linking


def link_cases(raw: RawTables) -> list[LinkedCase]:
    """Produce at most one LinkedCase per moderated player (rules above)."""
    by_player_offense: dict[tuple[str, OffenseType], list[date]] = {}
    for r in raw.reports:
        by_player_offense.setdefault((r.player_id, r.offense_type), []).append(
            r.report_date
        )
    for dates in by_player_offense.values():
        dates.sort()

    # first moderation event per player, deterministic tie-break
    first_mod: dict[str, ModerationEvent] = {}
    for m in sorted(
        raw.moderations,
        key=lambda m: (m.moderation_date, m.offense_type.value,
                       tuple(a.value for a in m.actions)),
    ):
        first_mod.setdefault(m.player_id, m)

    linked: list[tuple[str, date, ModerationEvent]] = []
    for pid in sorted(first_mod):
        mod = first_mod[pid]
        dates = by_player_offense.get((pid, mod.offense_type), ())
        window_lo = mod.moderation_date - timedelta(days=MAX_LINK_LAG)
        candidates = [d for d in dates if window_lo <= d <= mod.moderation_date]
        if candidates:
            linked.append((pid, min(candidates), mod))
    if not linked:
        return []

    log = EventLog(raw)
    covs = log.covariate_means(
        [pid for pid, _, _ in linked],
        [t - timedelta(days=PRE_WINDOW_DAYS) for _, t, _ in linked],
        [t - timedelta(days=1) for _, t, _ in linked],
    )
    cases = []
    for (pid, t, mod), cov in zip(linked, covs):
        covariates = None if np.isnan(cov).any() else tuple(float(v) for v in cov)
        cases.append(
            LinkedCase(
                player_id=pid,
                report_date=t,
                moderation_date=mod.moderation_date,
                offense_type=mod.offense_type,
                actions=mod.actions,
                severity=severity_or_none(mod.offense_type, mod.actions),
                covariates=covariates,
            )
        )
    return cases


# ---------------------------------------------------------------------------
# writers (the exact schema load_event_log reads)


def write_reports_csv(path, reports: Iterable[ReportEvent]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", "report_date", "offense_type", "reporter_id"])
        for r in reports:
            w.writerow(
                [r.player_id, r.report_date.isoformat(), r.offense_type.value,
                 r.reporter_id or ""]
            )


def write_moderations_csv(path, moderations: Iterable[ModerationEvent]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["player_id", "moderation_date", "offense_type", "actions", "linked_reporters"]
        )
        for m in moderations:
            w.writerow(
                [
                    m.player_id,
                    m.moderation_date.isoformat(),
                    m.offense_type.value,
                    ";".join(a.value for a in m.actions),
                    ";".join(m.linked_reporters),
                ]
            )


def write_cases_csv(path, cases: Iterable[LinkedCase]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["player_id", "report_date", "moderation_date", "lag", "offense_type",
             "actions", "severity", *(f"cov_{n}" for n in COVARIATE_NAMES)]
        )
        for c in cases:
            cov = (
                [format(v, ".10g") for v in c.covariates]
                if c.covariates is not None
                else [""] * N_COVARIATES
            )
            w.writerow(
                [
                    c.player_id,
                    c.report_date.isoformat(),
                    c.moderation_date.isoformat(),
                    c.lag,
                    c.offense_type.value,
                    ";".join(a.value for a in c.actions),
                    c.severity.value if c.severity is not None else "",
                    *cov,
                ]
            )


def write_matches_csv(path, match_days: Iterable[MatchDayRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", "date", "matches_played", *COVARIATE_NAMES])
        for m in match_days:
            # repr round-trips doubles exactly, so reload == original
            stats = (
                [repr(float(v)) for v in m.stats]
                if m.stats is not None
                else [""] * N_COVARIATES
            )
            w.writerow([m.player_id, m.date.isoformat(), m.matches_played, *stats])
