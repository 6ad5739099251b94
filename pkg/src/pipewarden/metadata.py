"""Per-script metadata: snapshot files, runtime classification, bundled seed data."""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from pipewarden.refs import RepositoryRef

__all__ = [
    "MetadataStore",
    "Release",
    "Runtime",
    "RuntimeKind",
    "ScriptMetadata",
    "SnapshotError",
    "SnapshotErrorKind",
    "classify_runtime",
    "format_timestamp",
    "load_category_map",
    "load_snapshot",
    "load_verified_creators",
    "parse_timestamp",
    "write_snapshot",
]


class SnapshotErrorKind(enum.Enum):
    MALFORMED = "Malformed"
    DUPLICATE_SLUG = "DuplicateSlug"
    DUPLICATE_TAG = "DuplicateTag"
    BAD_TIMESTAMP = "BadTimestamp"


class SnapshotError(Exception):
    def __init__(self, kind: SnapshotErrorKind, detail: str):
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind.value}: {detail}")


def parse_timestamp(text: str) -> datetime:
    """RFC 3339 to an aware UTC datetime. Naive input is taken as UTC."""
    if not isinstance(text, str) or not text:
        raise ValueError(f"not a timestamp: {text!r}")
    value = text.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class RuntimeKind(enum.Enum):
    NODEJS = "NodeJs"
    DOCKER = "Docker"
    COMPOSITE = "Composite"
    RAW_COMMAND = "RawCommand"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class Runtime:
    kind: RuntimeKind = RuntimeKind.UNKNOWN
    detail: str | None = None

    @property
    def aggregate_kind(self) -> RuntimeKind:
        # composite actions are shell-command scripts for distribution purposes
        if self.kind is RuntimeKind.COMPOSITE:
            return RuntimeKind.RAW_COMMAND
        return self.kind

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "detail": self.detail}


@dataclass(frozen=True)
class Release:
    tag: str
    date: datetime
    commit: str | None = None


@dataclass(frozen=True)
class ScriptMetadata:
    slug: str
    creator: str = ""
    verified: bool = False
    default_branch: str = ""
    branches: frozenset[str] = frozenset()
    releases: tuple[Release, ...] = ()
    runtime: Runtime = field(default_factory=Runtime)
    categories: frozenset[str] = frozenset()
    fetch_error: str | None = None

    def __post_init__(self):
        tags = [r.tag for r in self.releases]
        if len(tags) != len(set(tags)):
            dupes = sorted({t for t in tags if tags.count(t) > 1})
            raise SnapshotError(SnapshotErrorKind.DUPLICATE_TAG, f"{self.slug}: duplicate tag(s) {', '.join(dupes)}")
        ordered = tuple(sorted(self.releases, key=lambda r: (r.date, r.tag)))
        object.__setattr__(self, "releases", ordered)

    @property
    def partial(self) -> bool:
        return self.fetch_error is not None

    @property
    def tags(self) -> frozenset[str]:
        return frozenset(r.tag for r in self.releases)

    def release(self, tag: str) -> Release | None:
        for r in self.releases:
            if r.tag == tag:
                return r
        return None

    def commit_date(self, sha: str) -> datetime | None:
        """Date of a commit known through a release; abbreviated hashes match by prefix."""
        if len(sha) < 7:
            return None
        for r in self.releases:
            if r.commit and r.commit.startswith(sha):
                return r.date
        return None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "creator": self.creator,
            "verified": self.verified,
            "default_branch": self.default_branch,
            "branches": sorted(self.branches),
            "releases": [
                {"tag": r.tag, "date": format_timestamp(r.date), "commit": r.commit} for r in self.releases
            ],
            "runtime": self.runtime.to_dict(),
            "categories": sorted(self.categories),
        }
        if self.fetch_error is not None:
            out["fetch_error"] = self.fetch_error
        return out

    @classmethod
    def from_dict(cls, slug: str, raw: Any) -> ScriptMetadata:
        if not isinstance(raw, dict):
            raise SnapshotError(SnapshotErrorKind.MALFORMED, f"{slug}: entry is not an object")
        try:
            releases = []
            for rel in raw.get("releases", []):
                try:
                    date = parse_timestamp(rel["date"])
                except (ValueError, TypeError) as exc:
                    raise SnapshotError(SnapshotErrorKind.BAD_TIMESTAMP, f"{slug}: {exc}") from None
                tag = rel["tag"]
                if not isinstance(tag, str) or not tag:
                    raise SnapshotError(SnapshotErrorKind.MALFORMED, f"{slug}: empty release tag")
                releases.append(Release(tag, date, rel.get("commit")))
            runtime_raw = raw.get("runtime") or {}
            runtime = Runtime(RuntimeKind(runtime_raw.get("kind", "Unknown")), runtime_raw.get("detail"))
            return cls(
                slug=slug,
                creator=str(raw.get("creator", "")),
                verified=bool(raw.get("verified", False)),
                default_branch=str(raw.get("default_branch", "")),
                branches=frozenset(raw.get("branches", [])),
                releases=tuple(releases),
                runtime=runtime,
                categories=frozenset(raw.get("categories", [])),
                fetch_error=raw.get("fetch_error"),
            )
        except SnapshotError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SnapshotError(SnapshotErrorKind.MALFORMED, f"{slug}: {exc!r}") from None


class MetadataStore(Mapping[str, ScriptMetadata]):
    """Read-only map of slug to :class:`ScriptMetadata` with case-insensitive lookup."""

    def __init__(self, entries: Iterable[ScriptMetadata] = ()):
        self._entries: dict[str, ScriptMetadata] = {}
        for meta in entries:
            if meta.slug in self._entries:
                raise SnapshotError(SnapshotErrorKind.DUPLICATE_SLUG, meta.slug)
            self._entries[meta.slug] = meta
        self._folded = {slug.lower(): meta for slug, meta in self._entries.items()}

    def __getitem__(self, slug: str) -> ScriptMetadata:
        return self._entries[slug]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._entries))

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetadataStore):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self) -> str:
        return f"MetadataStore({len(self)} scripts)"

    def lookup(self, ref: RepositoryRef | str) -> ScriptMetadata | None:
        """Usable metadata for a reference; partial (failed fetch) entries count as absent."""
        candidates = [ref.slug, ref.repo_slug] if isinstance(ref, RepositoryRef) else [ref]
        for slug in candidates:
            meta = self._folded.get(slug.lower())
            if meta is not None:
                return None if meta.partial else meta
        return None

    def merged(self, newer: MetadataStore) -> MetadataStore:
        """Union by slug; a newer complete entry replaces the old one, a newer partial one does not."""
        entries = dict(self._entries)
        for slug, meta in newer._entries.items():
            old = entries.get(slug)
            if old is None or not meta.partial or old.partial:
                entries[slug] = meta
        return MetadataStore(entries.values())

    def to_json(self) -> str:
        payload = {slug: self._entries[slug].to_dict() for slug in sorted(self._entries)}
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    seen: dict[str, Any] = {}
    for key, value in pairs:
        if key in seen:
            raise SnapshotError(SnapshotErrorKind.DUPLICATE_SLUG, key)
        seen[key] = value
    return seen


def parse_snapshot(text: str) -> MetadataStore:
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise SnapshotError(SnapshotErrorKind.MALFORMED, str(exc)) from None
    if not isinstance(raw, dict):
        raise SnapshotError(SnapshotErrorKind.MALFORMED, "snapshot root must be an object")
    return MetadataStore(ScriptMetadata.from_dict(slug, entry) for slug, entry in raw.items())


def load_snapshot(path: str | Path) -> MetadataStore:
    return parse_snapshot(Path(path).read_text(encoding="utf-8"))


def write_snapshot(store: MetadataStore, path: str | Path) -> None:
    Path(path).write_text(store.to_json(), encoding="utf-8")


def classify_runtime(manifest_text: str | bytes | None) -> Runtime:
    """Runtime declared by an ``action.yml`` manifest. Never raises."""
    if manifest_text is None:
        return Runtime()
    try:
        if isinstance(manifest_text, bytes):
            manifest_text = manifest_text.decode("utf-8")
        doc = yaml.load(manifest_text, Loader=yaml.BaseLoader)
    except (yaml.YAMLError, UnicodeDecodeError, RecursionError, ValueError) as exc:
        return Runtime(RuntimeKind.UNKNOWN, f"malformed manifest: {type(exc).__name__}")
    if doc is None or doc == "":
        return Runtime()
    if not isinstance(doc, dict):
        return Runtime(RuntimeKind.UNKNOWN, "malformed manifest: top level is not a mapping")
    runs = doc.get("runs")
    if not isinstance(runs, dict):
        return Runtime()
    using = runs.get("using")
    if not isinstance(using, str):
        return Runtime()
    using = using.strip().lower()
    if using.startswith("node"):
        return Runtime(RuntimeKind.NODEJS, using[len("node"):])
    if using == "docker":
        image = runs.get("image")
        return Runtime(RuntimeKind.DOCKER, image if isinstance(image, str) else None)
    if using == "composite":
        steps = runs.get("steps")
        shell_only = isinstance(steps, list) and all(isinstance(s, dict) and "run" in s and "uses" not in s for s in steps)
        return Runtime(RuntimeKind.COMPOSITE, "shell" if shell_only else "mixed")
    return Runtime()


def _data_text(name: str) -> str:
    return resources.files("pipewarden").joinpath("data", name).read_text(encoding="utf-8")


def load_verified_creators(path: str | Path | None = None) -> frozenset[str]:
    """Lower-cased creator names treated as verified when the snapshot does not say so."""
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("verified_creators.json")
    return frozenset(name.lower() for name in json.loads(text)["creators"])


def load_category_map(path: str | Path | None = None) -> dict[str, frozenset[str]]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("categories.json")
    raw = json.loads(text)["scripts"]
    return {slug.lower(): frozenset(cats) for slug, cats in raw.items()}
