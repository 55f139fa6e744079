"""Core vocabulary: offense types, moderation actions, severity, raw events.

Everything here is immutable and safe to share across threads. Action
containers are multisets (sorted tuples), because some escalation patterns
apply the same action twice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import date
from typing import Optional


class OffenseType(enum.Enum):
    CHEATING = "cheating"
    OFFENSIVE_TEXT_CHAT = "offensive_text_chat"
    OFFENSIVE_USER_ID = "offensive_user_id"
    OFFENSIVE_VOICE_CHAT = "offensive_voice_chat"


class ModerationAction(enum.Enum):
    REMOVE_FROM_LEADERBOARD = "remove_from_leaderboard"
    WARNING_NOTICE = "warning_notice"
    PENALTY_NOTICE = "penalty_notice"
    RENAME_USER = "rename_user"
    LIMIT_ALLOWED_RENAMES = "limit_allowed_renames"
    UPDATE_CLANTAG = "update_clantag"
    REMOVE_CLANTAG = "remove_clantag"
    DELETE_PROFILE = "delete_profile"
    FEATURE_FLAG = "feature_flag"
    RANKING_SERVICE = "ranking_service"


class Severity(enum.Enum):
    MILDER = "milder"
    STRICTER = "stricter"
    NOT_APPLICABLE = "not_applicable"


class UnclassifiableActionSet(ValueError):
    """Raised when an action multiset matches no known severity class."""


class ParseError(ValueError):
    """Raised on malformed input rows; carries file/line context in the message."""


def _alias_key(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch.isalnum())


_OFFENSE_ALIASES = {_alias_key(o.value): o for o in OffenseType}
_OFFENSE_ALIASES.update(
    {
        _alias_key("cheater"): OffenseType.CHEATING,
        _alias_key("offensive user identification"): OffenseType.OFFENSIVE_USER_ID,
    }
)

_ACTION_ALIASES = {_alias_key(a.value): a for a in ModerationAction}
_ACTION_ALIASES.update(
    {
        # plural form appears in some exports
        _alias_key("remove from leaderboards"): ModerationAction.REMOVE_FROM_LEADERBOARD,
        _alias_key("featureflag"): ModerationAction.FEATURE_FLAG,
    }
)


def parse_offense(text: str) -> OffenseType:
    try:
        return _OFFENSE_ALIASES[_alias_key(text)]
    except KeyError:
        raise ParseError(f"unknown offense type: {text!r}") from None


def parse_action(text: str) -> ModerationAction:
    try:
        return _ACTION_ALIASES[_alias_key(text)]
    except KeyError:
        raise ParseError(f"unknown moderation action: {text!r}") from None


def parse_actions(text: str, sep: str = ";") -> tuple[ModerationAction, ...]:
    """Parse a separator-joined action list into a sorted multiset."""
    parts = [p for p in (s.strip() for s in text.split(sep)) if p]
    if not parts:
        raise ParseError("empty action list")
    return action_multiset(parse_action(p) for p in parts)


def action_multiset(actions) -> tuple[ModerationAction, ...]:
    ms = tuple(sorted(actions, key=lambda a: a.value))
    if not ms:
        raise ValueError("action multiset must be non-empty")
    return ms


def _row(*actions: ModerationAction) -> tuple[ModerationAction, ...]:
    return action_multiset(actions)


_A = ModerationAction

# Severity classes per offense, keyed by the exact action multiset applied.
# Voice-chat escalation legitimately applies FEATURE_FLAG twice.
SEVERITY_TABLE: dict[OffenseType, dict[tuple[ModerationAction, ...], Severity]] = {
    OffenseType.OFFENSIVE_TEXT_CHAT: {
        _row(_A.WARNING_NOTICE, _A.FEATURE_FLAG): Severity.MILDER,
        _row(_A.PENALTY_NOTICE, _A.FEATURE_FLAG): Severity.STRICTER,
    },
    OffenseType.OFFENSIVE_USER_ID: {
        _row(_A.RENAME_USER, _A.LIMIT_ALLOWED_RENAMES, _A.UPDATE_CLANTAG,
             _A.PENALTY_NOTICE): Severity.MILDER,
        _row(_A.RENAME_USER, _A.LIMIT_ALLOWED_RENAMES, _A.UPDATE_CLANTAG,
             _A.PENALTY_NOTICE, _A.FEATURE_FLAG): Severity.STRICTER,
    },
    OffenseType.OFFENSIVE_VOICE_CHAT: {
        _row(_A.FEATURE_FLAG): Severity.MILDER,
        _row(_A.FEATURE_FLAG, _A.FEATURE_FLAG, _A.PENALTY_NOTICE): Severity.STRICTER,
    },
}


def classify_severity(offense: OffenseType, actions) -> Severity:
    """Map an (offense, action multiset) pair to its severity class.

    Cheating never stratifies by severity. Rare action combinations that
    belong to no known class raise UnclassifiableActionSet; callers keep
    those cases in pooled analyses and drop them from severity strata.
    """
    ms = action_multiset(actions)
    if offense is OffenseType.CHEATING:
        return Severity.NOT_APPLICABLE
    severity = SEVERITY_TABLE[offense].get(ms)
    if severity is None:
        names = ", ".join(a.value for a in ms)
        raise UnclassifiableActionSet(f"{offense.value}: [{names}]")
    return severity


def severity_or_none(offense: OffenseType, actions) -> Optional[Severity]:
    try:
        return classify_severity(offense, actions)
    except UnclassifiableActionSet:
        return None


# Covariate order used everywhere a feature matrix appears.
COVARIATE_NAMES = (
    "match_score",
    "assists",
    "eliminations",
    "deaths",
    "distance_traveled",
    "move_speed",
    "damage_done",
    "damage_taken",
    "accuracy",
)
N_COVARIATES = len(COVARIATE_NAMES)


@dataclass(frozen=True, slots=True)
class ReportEvent:
    player_id: str
    report_date: date
    offense_type: OffenseType
    reporter_id: Optional[str] = None


@dataclass(frozen=True, slots=True)
class ModerationEvent:
    player_id: str
    moderation_date: date
    offense_type: OffenseType
    actions: tuple[ModerationAction, ...]
    linked_reporters: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.actions:
            raise ValueError("moderation event with empty action set")


@dataclass(frozen=True, slots=True)
class MatchDayRecord:
    """One player-day of gameplay; stats are per-match means for that day.

    stats is None exactly when matches_played == 0.
    """

    player_id: str
    date: date
    matches_played: int
    stats: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.matches_played < 0:
            raise ValueError("negative match count")
        if self.matches_played == 0 and self.stats is not None:
            raise ValueError("stats present on a zero-match day")
        if self.matches_played > 0:
            if self.stats is None or len(self.stats) != N_COVARIATES:
                raise ValueError(f"expected {N_COVARIATES} per-match stats")
