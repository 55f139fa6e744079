"""Synthetic moderation-world generator with known ground truth.

Every player gets one report on a shared anchor day and one moderation
event whose delay is drawn from a configurable lag distribution; quick
versus delayed assignment depends on covariates through a logistic model,
which is the only confounding channel. Potential outcomes are built on the
rate scale:

    delta(0) = drift(X) + noise        delta(1) = delta(0) + tau(X)

and realized as integer report/match counts in the pre and post windows,
so the full ingestion pipeline can run on the generated files unchanged.
Rounding to integer counts is the only distortion between the analytic
truth and the realized outcomes; configs used in tests keep it far below
the assertion tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cohort import SETUPS
from .domain import (
    COVARIATE_NAMES,
    MatchDayRecord,
    ModerationAction as MA,
    ModerationEvent,
    OffenseType,
    ReportEvent,
)
from .ingest import (
    RawTables,
    write_matches_csv,
    write_moderations_csv,
    write_reports_csv,
)

MAX_LAG = 14
_ZEROS = (0.0,) * len(COVARIATE_NAMES)

# loosely calibrated to the published feature-balance magnitudes
DEFAULT_COV_MEANS = (2150.0, 3.2, 15.4, 12.7, 42000.0, 135.0, 1650.0, 1400.0, 20.9)
DEFAULT_COV_SDS = (600.0, 1.2, 5.0, 4.0, 12000.0, 25.0, 500.0, 400.0, 5.0)
DEFAULT_COV_FLOORS = (0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 10.0, 10.0, 0.5)

OFFENSES = (
    OffenseType.CHEATING,
    OffenseType.OFFENSIVE_TEXT_CHAT,
    OffenseType.OFFENSIVE_USER_ID,
    OffenseType.OFFENSIVE_VOICE_CHAT,
)
# unique-player shares by moderation reason
DEFAULT_OFFENSE_MIX = (0.062, 0.316, 0.088, 0.535)

# action multisets drawn per offense: (actions, probability); includes some
# combinations outside the severity classes to exercise pooled-only handling
ACTION_MIX = {
    OffenseType.CHEATING: (
        ((MA.REMOVE_FROM_LEADERBOARD,), 0.97),
        ((MA.RANKING_SERVICE, MA.REMOVE_FROM_LEADERBOARD), 0.03),
    ),
    OffenseType.OFFENSIVE_TEXT_CHAT: (
        ((MA.FEATURE_FLAG, MA.PENALTY_NOTICE), 0.55),
        ((MA.FEATURE_FLAG, MA.WARNING_NOTICE), 0.40),
        ((MA.PENALTY_NOTICE,), 0.05),
    ),
    OffenseType.OFFENSIVE_USER_ID: (
        ((MA.FEATURE_FLAG, MA.LIMIT_ALLOWED_RENAMES, MA.PENALTY_NOTICE,
          MA.RENAME_USER, MA.UPDATE_CLANTAG), 0.60),
        ((MA.LIMIT_ALLOWED_RENAMES, MA.PENALTY_NOTICE, MA.RENAME_USER,
          MA.UPDATE_CLANTAG), 0.35),
        ((MA.LIMIT_ALLOWED_RENAMES, MA.RENAME_USER), 0.05),
    ),
    OffenseType.OFFENSIVE_VOICE_CHAT: (
        ((MA.FEATURE_FLAG,), 0.40),
        ((MA.FEATURE_FLAG, MA.FEATURE_FLAG, MA.PENALTY_NOTICE), 0.35),
        ((MA.FEATURE_FLAG, MA.WARNING_NOTICE), 0.25),
    ),
}


@dataclass(frozen=True)
class SimConfig:
    """Structural equations and bookkeeping for one simulated world.

    Linear terms apply to covariates standardized by the configured
    means/sds; *_kd terms apply to the standardized kill-death ratio, the
    hook for planting skill-linked heterogeneity.
    """

    n_players: int = 2000
    setup: str = "moderation_vs_none"
    seed: int = 0
    start: date = date(2023, 2, 1)
    report_offset: int = 7

    cov_means: tuple[float, ...] = DEFAULT_COV_MEANS
    cov_sds: tuple[float, ...] = DEFAULT_COV_SDS

    assign_intercept: Optional[float] = None  # None: calibrated to lag_weights
    assign_coefs: tuple[float, ...] = _ZEROS
    lag_weights: Optional[tuple[float, ...]] = None  # None: per-setup default

    base_rate: float = 0.5
    rate_coefs: tuple[float, ...] = _ZEROS
    drift_r: float = 0.0
    drift_r_coefs: tuple[float, ...] = _ZEROS
    tau_r: float = 0.0
    tau_r_coefs: tuple[float, ...] = _ZEROS
    tau_r_kd: float = 0.0
    noise_r: float = 0.08

    drift_p: float = 0.0
    drift_p_coefs: tuple[float, ...] = _ZEROS
    tau_p: float = 0.0
    tau_p_coefs: tuple[float, ...] = _ZEROS
    tau_p_kd: float = 0.0
    noise_p: float = 0.02

    play_prob: float = 0.95
    matches_per_day: float = 4.0
    offense_mix: tuple[float, ...] = DEFAULT_OFFENSE_MIX
    background_play_prob: float = 0.0
    background_rate: float = 0.25
    kd_center: float = 1.25
    kd_scale: float = 0.45

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"unknown setup {self.setup!r}")
        if self.n_players < 1:
            raise ValueError("need at least one player")
        # published shares carry rounding; accept near-1 and normalize on use
        if abs(sum(self.offense_mix) - 1.0) > 0.02:
            raise ValueError("offense mixture weights must sum to 1")
        for name in ("noise_r", "noise_p"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.report_offset < 7:
            raise ValueError("pre-report window must fit inside the log range")
        if self.lag_weights is not None:
            if len(self.lag_weights) != MAX_LAG + 1:
                raise ValueError(f"lag_weights needs {MAX_LAG + 1} entries")
            if any(w < 0 for w in self.lag_weights) or sum(self.lag_weights) <= 0:
                raise ValueError("lag weights must be non-negative, not all zero")
        self.region_masses()  # both study arms need lag mass

    @property
    def quick_max_lag(self) -> int:
        return SETUPS[self.setup].treat_max_lag

    @property
    def anchor_day(self) -> date:
        return self.start + timedelta(days=self.report_offset)

    @property
    def end(self) -> date:
        post_tail = 6 if SETUPS[self.setup].post_anchor == "moderation" else 0
        return self.anchor_day + timedelta(days=MAX_LAG + post_tail)

    def resolved_lag_weights(self) -> np.ndarray:
        if self.lag_weights is not None:
            w = np.asarray(self.lag_weights, dtype=float)
        elif self.quick_max_lag == 0:
            w = np.array([0.45] + [0.01] * 6 + [0.49 / 8] * 8)
        else:
            w = np.array([0.18, 0.12, 0.08, 0.07] + [0.02] * 3 + [0.49 / 8] * 8)
        return w / w.sum()

    def region_masses(self) -> tuple[float, float, float]:
        w = self.resolved_lag_weights()
        q = float(w[: self.quick_max_lag + 1].sum())
        m = float(w[self.quick_max_lag + 1 : 7].sum())
        d = float(w[7:].sum())
        if q <= 0 or d <= 0:
            raise ValueError("lag weights must give mass to both study arms")
        return q, m, d


@dataclass(frozen=True)
class SimGroundTruth:
    """Exact per-player effects for the world that generated them."""

    player_ids: tuple[str, ...]
    tau_r: np.ndarray
    tau_p: np.ndarray
    lag: np.ndarray
    treated: np.ndarray
    p_quick: np.ndarray
    config: SimConfig

    def __post_init__(self):
        object.__setattr__(
            self, "_pos", {pid: i for i, pid in enumerate(self.player_ids)}
        )

    @property
    def true_ate_r(self) -> float:
        return float(self.tau_r.mean())

    @property
    def true_ate_p(self) -> float:
        return float(self.tau_p.mean())

    def cate_r(self, x) -> np.ndarray:
        return _structural(self.config, np.asarray(x, dtype=float))[0]

    def cate_p(self, x) -> np.ndarray:
        return _structural(self.config, np.asarray(x, dtype=float))[1]

    def expected_lag_counts(self) -> np.ndarray:
        """Exact expected count per lag value given the generated covariates."""
        cfg = self.config
        w = cfg.resolved_lag_weights()
        q_mass, m_mass, d_mass = cfg.region_masses()
        qmax = cfg.quick_max_lag
        p = self.p_quick
        expected = np.zeros(MAX_LAG + 1)
        for lag in range(MAX_LAG + 1):
            if lag <= qmax:
                expected[lag] = ((1 - m_mass) * p * (w[lag] / q_mass)).sum()
            elif lag < 7:
                expected[lag] = len(p) * w[lag]
            else:
                expected[lag] = ((1 - m_mass) * (1 - p) * (w[lag] / d_mass)).sum()
        return expected


def true_effects(truth: SimGroundTruth, rows,
                 outcome: str = "delta_report_rate") -> tuple[float, np.ndarray]:
    """Exact (ate, cate) for the given cohort rows; raises on players the
    world never generated."""
    taus = truth.tau_r if outcome == "delta_report_rate" else truth.tau_p
    pos = getattr(truth, "_pos")
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        pid = row.player_id if hasattr(row, "player_id") else row
        if pid not in pos:
            raise ValueError(f"player {pid!r} is not part of this world")
        out[i] = taus[pos[pid]]
    return float(out.mean()), out


def _standardize(cfg: SimConfig, x: np.ndarray) -> np.ndarray:
    return (x - np.asarray(cfg.cov_means)) / np.asarray(cfg.cov_sds)


def _kd_z(cfg: SimConfig, x: np.ndarray) -> np.ndarray:
    elim = COVARIATE_NAMES.index("eliminations")
    deaths = COVARIATE_NAMES.index("deaths")
    kd = x[:, elim] / x[:, deaths]
    return (kd - cfg.kd_center) / cfg.kd_scale


def _structural(cfg: SimConfig, x: np.ndarray):
    """(tau_r, tau_p, drift_r, drift_p, p_quick, rate) for raw covariates."""
    z = _standardize(cfg, x)
    kdz = _kd_z(cfg, x)
    tau_r = cfg.tau_r + z @ np.asarray(cfg.tau_r_coefs) + cfg.tau_r_kd * kdz
    tau_p = cfg.tau_p + z @ np.asarray(cfg.tau_p_coefs) + cfg.tau_p_kd * kdz
    drift_r = cfg.drift_r + z @ np.asarray(cfg.drift_r_coefs)
    drift_p = cfg.drift_p + z @ np.asarray(cfg.drift_p_coefs)
    q_mass, m_mass, d_mass = cfg.region_masses()
    a0 = (
        cfg.assign_intercept
        if cfg.assign_intercept is not None
        else math.log(q_mass / d_mass)
    )
    logits = a0 + z @ np.asarray(cfg.assign_coefs)
    p_quick = 1.0 / (1.0 + np.exp(-np.clip(logits, -35, 35)))
    rate = np.maximum(cfg.base_rate + z @ np.asarray(cfg.rate_coefs), 0.05)
    return tau_r, tau_p, drift_r, drift_p, p_quick, rate


def _draw_lags(cfg: SimConfig, p_quick: np.ndarray, rng) -> np.ndarray:
    w = cfg.resolved_lag_weights()
    qmax = cfg.quick_max_lag
    q_mass, m_mass, d_mass = cfg.region_masses()
    n = len(p_quick)

    u_mid = rng.random(n)
    u_quick = rng.random(n)
    u_lag = rng.random(n)

    lags = np.empty(n, dtype=np.int64)
    mid = u_mid < m_mass
    quick = ~mid & (u_quick < p_quick)
    delayed = ~mid & ~quick

    for mask, lag_values in (
        (quick, np.arange(0, qmax + 1)),
        (mid, np.arange(qmax + 1, 7)),
        (delayed, np.arange(7, MAX_LAG + 1)),
    ):
        if not mask.any():
            continue
        weights = w[lag_values]
        cum = np.cumsum(weights / weights.sum())
        lags[mask] = lag_values[np.searchsorted(cum, u_lag[mask], side="right")]
    return lags


def generate_world(cfg: SimConfig) -> tuple[RawTables, SimGroundTruth]:
    """Emit raw event tables plus exact ground truth, deterministic in the
    config seed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_players
    setup = SETUPS[cfg.setup]

    x = rng.normal(cfg.cov_means, cfg.cov_sds, size=(n, len(COVARIATE_NAMES)))
    x = np.maximum(x, DEFAULT_COV_FLOORS)
    acc = COVARIATE_NAMES.index("accuracy")
    x[:, acc] = np.clip(x[:, acc], 0.5, 100.0)

    tau_r, tau_p, drift_r, drift_p, p_quick, rate = _structural(cfg, x)
    lags = _draw_lags(cfg, p_quick, rng)
    treated = (lags <= cfg.quick_max_lag).astype(np.int64)

    offense_cum = np.cumsum(cfg.offense_mix) / np.sum(cfg.offense_mix)
    offense_idx = np.searchsorted(offense_cum, rng.random(n), side="right")
    offense_idx = np.minimum(offense_idx, len(OFFENSES) - 1)
    action_u = rng.random(n)

    days0 = rng.binomial(7, cfg.play_prob, n)
    eps_r = rng.normal(0.0, cfg.noise_r, n) if cfg.noise_r > 0 else np.zeros(n)
    eps_p = rng.normal(0.0, cfg.noise_p, n) if cfg.noise_p > 0 else np.zeros(n)
    lam = max(cfg.matches_per_day - 1.0, 0.0)
    matches0 = 1 + rng.poisson(lam, (n, 7))
    matches1 = 1 + rng.poisson(lam, (n, 7))

    anchor = cfg.anchor_day
    w0_days = [anchor - timedelta(days=7 - k) for k in range(7)]

    p0 = days0 / 7.0
    delta_p = drift_p + eps_p + treated * tau_p
    days1 = np.clip(np.rint(7.0 * (p0 + delta_p)), 0, 7).astype(np.int64)

    m0 = np.where(
        days0[:, None] > np.arange(7)[None, :], matches0, 0
    ).sum(axis=1)
    m1 = np.where(
        days1[:, None] > np.arange(7)[None, :], matches1, 0
    ).sum(axis=1)

    reports0 = np.rint(rate * m0).astype(np.int64)
    r0_real = np.divide(reports0, m0, out=np.zeros(n), where=m0 > 0)
    r1_target = r0_real + drift_r + eps_r + treated * tau_r
    reports1 = np.where(m1 > 0, np.maximum(np.rint(r1_target * m1), 0), 0).astype(np.int64)

    # background activity outside the outcome windows keeps the log coherent
    n_days = (cfg.end - cfg.start).days + 1
    if cfg.background_play_prob > 0:
        bg_play = rng.random((n, n_days)) < cfg.background_play_prob
        bg_matches = 1 + rng.poisson(lam, (n, n_days))
        bg_reports = rng.poisson(cfg.background_rate * bg_matches)
    else:
        bg_play = None

    reports: list[ReportEvent] = []
    moderations: list[ModerationEvent] = []
    match_days: list[MatchDayRecord] = []

    for i in range(n):
        pid = f"p{i:06d}"
        offense = OFFENSES[offense_idx[i]]
        other = OFFENSES[(offense_idx[i] + 1) % len(OFFENSES)]
        stats = tuple(float(v) for v in x[i])
        mod_day = anchor + timedelta(days=int(lags[i]))

        reports.append(ReportEvent(pid, anchor, offense, f"r{i % 997:04d}"))
        mix = ACTION_MIX[offense]
        u = action_u[i]
        acc_p = 0.0
        actions = mix[-1][0]
        for candidate, prob in mix:
            acc_p += prob
            if u < acc_p:
                actions = candidate
                break
        moderations.append(ModerationEvent(pid, mod_day, offense, tuple(sorted(
            actions, key=lambda a: a.value))))

        played0 = w0_days[: days0[i]]
        for k, day in enumerate(played0):
            match_days.append(MatchDayRecord(pid, day, int(matches0[i, k]), stats))
        for j in range(reports0[i]):
            reports.append(ReportEvent(pid, played0[j % len(played0)], other))

        post_start = anchor if setup.post_anchor == "report" else mod_day
        played1 = [post_start + timedelta(days=k) for k in range(days1[i])]
        for k, day in enumerate(played1):
            match_days.append(MatchDayRecord(pid, day, int(matches1[i, k]), stats))
        anchors_in_w1 = 1 if post_start <= anchor <= post_start + timedelta(days=6) else 0
        extra = int(max(reports1[i] - anchors_in_w1, 0)) if days1[i] > 0 else 0
        for j in range(extra):
            reports.append(ReportEvent(pid, played1[j % len(played1)], other))

        if bg_play is not None:
            window_days = set(played0) | set(played1) | {anchor}
            w1_lo, w1_hi = post_start, post_start + timedelta(days=6)
            for d in range(n_days):
                day = cfg.start + timedelta(days=d)
                if day in window_days or anchor - timedelta(days=7) <= day <= anchor - timedelta(days=1):
                    continue
                if w1_lo <= day <= w1_hi:
                    continue
                if bg_play[i, d]:
                    match_days.append(
                        MatchDayRecord(pid, day, int(bg_matches[i, d]), stats)
                    )
                    for _ in range(int(bg_reports[i, d])):
                        reports.append(ReportEvent(pid, day, other))

    raw = RawTables(
        reports=tuple(reports),
        moderations=tuple(moderations),
        match_days=tuple(match_days),
        start=cfg.start,
        end=cfg.end,
    )
    truth = SimGroundTruth(
        player_ids=tuple(f"p{i:06d}" for i in range(n)),
        tau_r=tau_r,
        tau_p=tau_p,
        lag=lags,
        treated=treated,
        p_quick=p_quick,
        config=cfg,
    )
    return raw, truth


# ---------------------------------------------------------------------------
# preset worlds used by self-tests and demo scripts

_CONFOUND_GAMMA = (0.0, 0.0, 0.9, -0.7, 0.0, 0.0, 0.5, 0.0, 0.0)
_CONFOUND_DRIFT = (0.0, 0.0, 0.06, -0.045, 0.0, 0.0, 0.03, 0.0, 0.0)


def preset_config(name: str, n_players: int, seed: int,
                  setup: str = "moderation_vs_none") -> SimConfig:
    """Named worlds: confounded / null / constant / heterogeneous_kd /
    unconfounded. The confounded world plants a -30% relative report-rate
    effect; the heterogeneous world makes the effect fall with K/D."""
    base = SimConfig(n_players=n_players, seed=seed, setup=setup)
    if name == "confounded":
        return replace(
            base,
            assign_coefs=_CONFOUND_GAMMA,
            drift_r_coefs=_CONFOUND_DRIFT,
            drift_p_coefs=tuple(v / 3.0 for v in _CONFOUND_DRIFT),
            tau_r=-0.15,
            tau_p=-0.04,
        )
    if name == "null":
        return replace(base, drift_r_coefs=_CONFOUND_DRIFT)
    if name == "constant":
        return replace(base, tau_r=-0.15, tau_p=-0.04)
    if name == "heterogeneous_kd":
        return replace(
            base,
            assign_coefs=_CONFOUND_GAMMA,
            drift_r_coefs=_CONFOUND_DRIFT,
            tau_r=-0.12,
            tau_r_kd=-0.05,
            tau_p=-0.04,
            tau_p_kd=-0.015,
        )
    if name == "unconfounded":
        return replace(base, tau_r=-0.15, tau_p=-0.04, drift_r_coefs=_CONFOUND_DRIFT)
    raise ValueError(f"unknown preset {name!r}")


# ---------------------------------------------------------------------------
# file output


def write_truth_csv(path, truth: SimGroundTruth) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["player_id", "lag", "treated", "p_quick",
             "tau_report_rate", "tau_participation"]
        )
        for i, pid in enumerate(truth.player_ids):
            w.writerow(
                [pid, int(truth.lag[i]), int(truth.treated[i]),
                 format(truth.p_quick[i], ".10g"),
                 format(truth.tau_r[i], ".10g"), format(truth.tau_p[i], ".10g")]
            )


def write_world(outdir, raw: RawTables, truth: SimGroundTruth) -> dict[str, str]:
    """Write the world in the ingestion schema plus truth and a manifest;
    returns the path map."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "reports": str(outdir / "reports.csv"),
        "moderations": str(outdir / "moderations.csv"),
        "matches": str(outdir / "matches.csv"),
        "truth": str(outdir / "truth.csv"),
        "manifest": str(outdir / "world.txt"),
    }
    write_reports_csv(paths["reports"], raw.reports)
    write_moderations_csv(paths["moderations"], raw.moderations)
    write_matches_csv(paths["matches"], raw.match_days)
    write_truth_csv(paths["truth"], truth)
    cfg = truth.config
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write(f"setup = {cfg.setup}\n")
        fh.write(f"start = {raw.start.isoformat()}\n")
        fh.write(f"end = {raw.end.isoformat()}\n")
        fh.write(f"voice_from = {raw.start.isoformat()}\n")
        fh.write(f"seed = {cfg.seed}\n")
        fh.write(f"n_players = {cfg.n_players}\n")
        fh.write(f"true_ate_report_rate = {truth.true_ate_r:.10g}\n")
        fh.write(f"true_ate_participation = {truth.true_ate_p:.10g}\n")
    return paths


def sim_config_from_kv(mapping: dict[str, str]) -> SimConfig:
    """Build a SimConfig from key=value strings (the simulate CLI format)."""
    kwargs = {}
    by_name = {f.name: f for f in fields(SimConfig)}
    for key, text in mapping.items():
        if key not in by_name:
            raise ValueError(f"unknown simulation option {key!r}")
        if key == "start":
            kwargs[key] = date.fromisoformat(text)
        elif key in ("n_players", "seed", "report_offset"):
            kwargs[key] = int(text)
        elif key == "setup":
            kwargs[key] = text.strip()
        elif key in ("lag_weights", "cov_means", "cov_sds", "assign_coefs",
                     "rate_coefs", "drift_r_coefs", "tau_r_coefs",
                     "drift_p_coefs", "tau_p_coefs", "offense_mix"):
            kwargs[key] = tuple(float(v) for v in text.split(","))
        elif key == "assign_intercept":
            kwargs[key] = None if text.strip().lower() == "auto" else float(text)
        else:
            kwargs[key] = float(text)
    return SimConfig(**kwargs)
