"""Known-vulnerability database and unfixed-usage matching."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from pipewarden.metadata import ScriptMetadata
from pipewarden.model import Location
from pipewarden.refs import RefKind, RepositoryRef, ScriptUsage, VersionKey, compare_versions

__all__ = [
    "Advisory",
    "AdvisoryAssessment",
    "AdvisoryDb",
    "AdvisoryError",
    "AdvisoryErrorKind",
    "MatchReason",
    "VulnMatch",
    "assess_advisories",
    "load_advisories",
    "load_bundled_advisories",
    "match_advisories",
]


class AdvisoryErrorKind(enum.Enum):
    MALFORMED = "Malformed"
    DUPLICATE_ID = "DuplicateId"
    BOTH_RANGE_FIELDS = "BothRangeFields"
    NO_RANGE_FIELD = "NoRangeField"
    BAD_SCORE = "BadScore"


class AdvisoryError(Exception):
    def __init__(self, kind: AdvisoryErrorKind, detail: str):
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind.value}: {detail}")


@dataclass(frozen=True)
class Advisory:
    id: str
    slug: str
    cvss: float
    impact: str
    verified_creator: bool
    last_vulnerable: str | None = None
    fixed_in: str | None = None
    references: tuple[str, ...] = ()

    def __post_init__(self):
        if self.last_vulnerable is not None and self.fixed_in is not None:
            raise AdvisoryError(AdvisoryErrorKind.BOTH_RANGE_FIELDS, self.id)
        if self.last_vulnerable is None and self.fixed_in is None:
            raise AdvisoryError(AdvisoryErrorKind.NO_RANGE_FIELD, self.id)
        if not 0.0 <= self.cvss <= 10.0:
            raise AdvisoryError(AdvisoryErrorKind.BAD_SCORE, f"{self.id}: {self.cvss}")

    @property
    def boundary(self) -> str:
        return self.fixed_in if self.fixed_in is not None else self.last_vulnerable  # type: ignore[return-value]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "slug": self.slug,
            "cvss": self.cvss,
            "impact": self.impact,
            "verified_creator": self.verified_creator,
            "references": list(self.references),
        }
        if self.fixed_in is not None:
            out["fixed_in"] = self.fixed_in
        else:
            out["last_vulnerable"] = self.last_vulnerable
        return out

    @classmethod
    def from_dict(cls, raw: Any) -> Advisory:
        if not isinstance(raw, dict):
            raise AdvisoryError(AdvisoryErrorKind.MALFORMED, f"record is not an object: {raw!r}")
        try:
            cvss = raw["cvss"]
            if isinstance(cvss, bool) or not isinstance(cvss, (int, float)):
                raise AdvisoryError(AdvisoryErrorKind.BAD_SCORE, f"{raw.get('id')}: {cvss!r}")
            refs = raw.get("references", [])
            if not isinstance(refs, list):
                raise AdvisoryError(AdvisoryErrorKind.MALFORMED, f"{raw.get('id')}: references must be a list")
            return cls(
                id=str(raw["id"]),
                slug=str(raw["slug"]),
                cvss=float(cvss),
                impact=str(raw["impact"]),
                verified_creator=bool(raw["verified_creator"]),
                last_vulnerable=raw.get("last_vulnerable"),
                fixed_in=raw.get("fixed_in"),
                references=tuple(str(r) for r in refs),
            )
        except KeyError as exc:
            raise AdvisoryError(AdvisoryErrorKind.MALFORMED, f"missing field {exc.args[0]!r}") from None


class AdvisoryDb:
    """Immutable set of advisories, unique by id and iterated in id order."""

    def __init__(self, advisories: list[Advisory] | tuple[Advisory, ...] = ()):
        by_id: dict[str, Advisory] = {}
        for adv in advisories:
            if adv.id in by_id:
                raise AdvisoryError(AdvisoryErrorKind.DUPLICATE_ID, adv.id)
            by_id[adv.id] = adv
        self._advisories = tuple(by_id[i] for i in sorted(by_id))
        self._by_slug: dict[str, list[Advisory]] = {}
        for adv in self._advisories:
            self._by_slug.setdefault(adv.slug.lower(), []).append(adv)

    def __len__(self) -> int:
        return len(self._advisories)

    def __iter__(self):
        return iter(self._advisories)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AdvisoryDb) and self._advisories == other._advisories

    def get(self, advisory_id: str) -> Advisory | None:
        for adv in self._advisories:
            if adv.id == advisory_id:
                return adv
        return None

    def for_slug(self, repo_slug: str) -> list[Advisory]:
        return list(self._by_slug.get(repo_slug.lower(), ()))

    def to_json(self) -> str:
        return json.dumps([a.to_dict() for a in self._advisories], sort_keys=True, indent=2) + "\n"


def parse_advisories(text: str) -> AdvisoryDb:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AdvisoryError(AdvisoryErrorKind.MALFORMED, str(exc)) from None
    if not isinstance(raw, list):
        raise AdvisoryError(AdvisoryErrorKind.MALFORMED, "advisory file must hold a JSON array")
    return AdvisoryDb([Advisory.from_dict(r) for r in raw])


def load_advisories(path: str | Path) -> AdvisoryDb:
    return parse_advisories(Path(path).read_text(encoding="utf-8"))


def load_bundled_advisories() -> AdvisoryDb:
    text = resources.files("pipewarden").joinpath("data", "advisories.json").read_text(encoding="utf-8")
    return parse_advisories(text)


class MatchReason(enum.Enum):
    AT_OR_BEFORE_LAST_VULNERABLE = "AtOrBeforeLastVulnerable"
    BEFORE_FIXED_IN = "BeforeFixedIn"


@dataclass(frozen=True)
class VulnMatch:
    advisory: Advisory
    location: Location
    referenced_version: str
    reason: MatchReason


@dataclass(frozen=True)
class AdvisoryAssessment:
    matches: tuple[VulnMatch, ...] = ()
    # advisory id -> why a usage of the affected script was not reported
    notes: tuple[tuple[str, str], ...] = field(default=())


def _keys(tag: str, boundary: str, meta: ScriptMetadata | None) -> tuple[VersionKey, VersionKey]:
    tag_rel = meta.release(tag) if meta else None
    bound_rel = meta.release(boundary) if meta else None
    # dates only break ties when both sides have one
    if tag_rel is not None and bound_rel is not None:
        return VersionKey.from_tag(tag, tag_rel.date), VersionKey.from_tag(boundary, bound_rel.date)
    return VersionKey.from_tag(tag), VersionKey.from_tag(boundary)


def _reason(adv: Advisory) -> MatchReason:
    return MatchReason.BEFORE_FIXED_IN if adv.fixed_in is not None else MatchReason.AT_OR_BEFORE_LAST_VULNERABLE


def _tag_affected(adv: Advisory, tag: str, meta: ScriptMetadata | None) -> bool:
    used, bound = _keys(tag, adv.boundary, meta)
    order = compare_versions(used, bound)
    return order < 0 if adv.fixed_in is not None else order <= 0


def assess_advisories(usage: ScriptUsage, db: AdvisoryDb, metadata: ScriptMetadata | None = None) -> AdvisoryAssessment:
    """Check one usage against every advisory for its script.

    Tags are compared by version order; commit pins by the commit's date
    against the boundary release's date. Branch, invalid and unresolved refs
    never match and leave a note instead.
    """
    ref = usage.ref
    if not isinstance(ref, RepositoryRef):
        return AdvisoryAssessment()
    matches, notes = [], []
    for adv in db.for_slug(ref.repo_slug):
        if usage.kind is RefKind.TAG:
            if _tag_affected(adv, ref.ref, metadata):
                matches.append(VulnMatch(adv, usage.location, ref.ref, _reason(adv)))
        elif usage.kind is RefKind.COMMIT_HASH:
            commit_date = metadata.commit_date(ref.ref) if metadata else None
            boundary = metadata.release(adv.boundary) if metadata else None
            if commit_date is None or boundary is None:
                notes.append((adv.id, "unresolved: commit or boundary release date unknown"))
            elif (commit_date < boundary.date) if adv.fixed_in is not None else (commit_date <= boundary.date):
                matches.append(VulnMatch(adv, usage.location, ref.ref, _reason(adv)))
        elif usage.kind is RefKind.BRANCH:
            notes.append((adv.id, "suppressed: branch reference tracks the latest revision"))
        elif usage.kind is RefKind.INVALID:
            notes.append((adv.id, "suppressed: reference does not resolve"))
        else:
            notes.append((adv.id, "unresolved: no metadata for script"))
    return AdvisoryAssessment(tuple(matches), tuple(notes))


def match_advisories(usage: ScriptUsage, db: AdvisoryDb, metadata: ScriptMetadata | None = None) -> list[VulnMatch]:
    return list(assess_advisories(usage, db, metadata).matches)
