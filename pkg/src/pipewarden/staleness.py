"""Update lag of pinned script usages and its distribution."""

from __future__ import annotations

import enum
from collections.abc import Iterable
from dataclasses import dataclass
from datetime import datetime

from pipewarden.metadata import ScriptMetadata
from pipewarden.model import Location
from pipewarden.refs import RefKind, RepositoryRef, ScriptUsage, VersionKey, compare_versions

__all__ = [
    "DAYS_PER_MONTH",
    "LagBuckets",
    "LagStatus",
    "RepoLag",
    "UsageLag",
    "bucket_days",
    "bucket_lags",
    "compute_repo_lag",
    "compute_usage_lag",
]

DAYS_PER_MONTH = 30
_SECONDS_PER_DAY = 86400


class LagStatus(enum.Enum):
    UP_TO_DATE = "UpToDate"
    OUTDATED = "Outdated"
    TRACKS_BRANCH = "TracksBranch"
    PINNED_COMMIT = "PinnedCommit"
    UNKNOWN = "Unknown"


BUCKETED = (LagStatus.OUTDATED, LagStatus.PINNED_COMMIT)


@dataclass(frozen=True)
class UsageLag:
    location: Location
    status: LagStatus
    lag_days: int = 0
    referenced_release_date: datetime | None = None
    first_newer_release_date: datetime | None = None

    @property
    def bucketed(self) -> bool:
        return self.status in BUCKETED


@dataclass(frozen=True)
class RepoLag:
    repo: str
    max_lag_days: int = 0
    contributing_usage: Location | None = None


@dataclass(frozen=True)
class LagBuckets:
    under_1_month: int = 0
    months_1_to_3: int = 0
    months_3_to_12: int = 0
    over_12_months: int = 0

    def __add__(self, other: LagBuckets) -> LagBuckets:
        return LagBuckets(
            self.under_1_month + other.under_1_month,
            self.months_1_to_3 + other.months_1_to_3,
            self.months_3_to_12 + other.months_3_to_12,
            self.over_12_months + other.over_12_months,
        )

    @property
    def total(self) -> int:
        return self.under_1_month + self.months_1_to_3 + self.months_3_to_12 + self.over_12_months

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.under_1_month, self.months_1_to_3, self.months_3_to_12, self.over_12_months)

    def to_dict(self) -> dict[str, int]:
        return {
            "lt_1_month": self.under_1_month,
            "1_to_3_months": self.months_1_to_3,
            "3_to_12_months": self.months_3_to_12,
            "gt_12_months": self.over_12_months,
        }


def _days_between(start: datetime, end: datetime) -> int:
    return max(0, int((end - start).total_seconds() // _SECONDS_PER_DAY))


def compute_usage_lag(usage: ScriptUsage, metadata: ScriptMetadata | None, analysis_time: datetime) -> UsageLag:
    """How long a usage has trailed the first release newer than what it pins.

    Releases dated after ``analysis_time`` are not visible.
    """
    loc = usage.location
    ref = usage.ref
    if metadata is None or not isinstance(ref, RepositoryRef):
        return UsageLag(loc, LagStatus.UNKNOWN)
    visible = [r for r in metadata.releases if r.date <= analysis_time]

    if usage.kind is RefKind.TAG:
        current = metadata.release(ref.ref)
        if current is None:
            return UsageLag(loc, LagStatus.UNKNOWN)
        key = VersionKey.from_tag(current.tag, current.date)
        newer = [r for r in visible if compare_versions(VersionKey.from_tag(r.tag, r.date), key) > 0]
        if not newer:
            return UsageLag(loc, LagStatus.UP_TO_DATE, 0, current.date)
        first = min(r.date for r in newer)
        return UsageLag(loc, LagStatus.OUTDATED, _days_between(first, analysis_time), current.date, first)

    if usage.kind is RefKind.BRANCH:
        return UsageLag(loc, LagStatus.TRACKS_BRANCH)

    if usage.kind is RefKind.COMMIT_HASH:
        committed = metadata.commit_date(ref.ref)
        if committed is None:
            # a commit no release points at has no datable lag
            return UsageLag(loc, LagStatus.UNKNOWN)
        later = [r.date for r in visible if r.date > committed]
        if not later:
            return UsageLag(loc, LagStatus.PINNED_COMMIT, 0, committed)
        first = min(later)
        return UsageLag(loc, LagStatus.PINNED_COMMIT, _days_between(first, analysis_time), committed, first)

    return UsageLag(loc, LagStatus.UNKNOWN)


def compute_repo_lag(lags: Iterable[UsageLag], repo: str = "") -> RepoLag:
    """Repository lag is the largest usage lag; ties go to the earliest location."""
    best: UsageLag | None = None
    for lag in lags:
        if not lag.bucketed:
            continue
        if (
            best is None
            or lag.lag_days > best.lag_days
            or (lag.lag_days == best.lag_days and lag.location.sort_key() < best.location.sort_key())
        ):
            best = lag
    if best is None:
        return RepoLag(repo)
    return RepoLag(repo, best.lag_days, best.location)


def bucket_days(days: Iterable[int]) -> LagBuckets:
    counts = [0, 0, 0, 0]
    for d in days:
        if d < DAYS_PER_MONTH:
            counts[0] += 1
        elif d < 3 * DAYS_PER_MONTH:
            counts[1] += 1
        elif d < 365:
            counts[2] += 1
        else:
            counts[3] += 1
    return LagBuckets(*counts)


def bucket_lags(lags: Iterable[UsageLag]) -> LagBuckets:
    """Half-open buckets [0,30), [30,90), [90,365), [365,inf) days over Outdated and PinnedCommit lags."""
    return bucket_days(lag.lag_days for lag in lags if lag.bucketed)
