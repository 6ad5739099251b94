"""Structured ``uses:`` references, revision-kind classification and tag ordering."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from datetime import datetime
from typing import TYPE_CHECKING, Union

from pipewarden.model import Location

if TYPE_CHECKING:
    from pipewarden.metadata import ScriptMetadata

__all__ = [
    "DockerImageRef",
    "LocalPathRef",
    "RefKind",
    "RefParseError",
    "RepositoryRef",
    "ScriptRef",
    "ScriptUsage",
    "VersionKey",
    "classify_ref",
    "compare_versions",
    "is_full_commit",
    "parse_uses",
]

_HEX_RE = re.compile(r"[0-9a-f]{7,40}")
_FULL_HEX_RE = re.compile(r"[0-9a-f]{40}")
_LEADING_DIGITS = re.compile(r"\d+")


class RefParseError(ValueError):
    pass


class RefKind(enum.Enum):
    TAG = "Tag"
    BRANCH = "Branch"
    COMMIT_HASH = "CommitHash"
    INVALID = "Invalid"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class RepositoryRef:
    raw: str
    owner: str
    repo: str
    ref: str
    subpath: str | None = None

    @property
    def repo_slug(self) -> str:
        return f"{self.owner}/{self.repo}"

    @property
    def slug(self) -> str:
        return f"{self.repo_slug}/{self.subpath}" if self.subpath else self.repo_slug

    def reconstruct(self) -> str:
        return f"{self.slug}@{self.ref}"


@dataclass(frozen=True)
class DockerImageRef:
    raw: str
    image: str
    registry: str | None = None
    tag_or_digest: str | None = None

    @property
    def pinned_by_digest(self) -> bool:
        return bool(self.tag_or_digest and self.tag_or_digest.startswith("sha256:"))


@dataclass(frozen=True)
class LocalPathRef:
    raw: str
    path: str


ScriptRef = Union[RepositoryRef, DockerImageRef, LocalPathRef]


@dataclass(frozen=True)
class ScriptUsage:
    """One ``uses:`` occurrence with its parsed reference and, for repositories, its kind."""

    location: Location
    ref: ScriptRef
    kind: RefKind | None = None

    @property
    def raw(self) -> str:
        return self.ref.raw


def _parse_docker(raw: str) -> DockerImageRef:
    rest = raw[len("docker://"):].strip()
    tag_or_digest = None
    if "@" in rest:
        rest, tag_or_digest = rest.split("@", 1)
    else:
        slash = rest.rfind("/")
        colon = rest.rfind(":")
        if colon > slash:
            rest, tag_or_digest = rest[:colon], rest[colon + 1:]
    registry = None
    first, sep, remainder = rest.partition("/")
    if sep and ("." in first or ":" in first or first == "localhost"):
        registry, rest = first, remainder
    if not rest:
        raise RefParseError(f"docker reference without image name: {raw!r}")
    return DockerImageRef(raw=raw, image=rest, registry=registry, tag_or_digest=tag_or_digest or None)


def parse_uses(raw: str) -> ScriptRef:
    """Parse a ``uses:`` value into a repository, Docker image or local path reference."""
    text = raw.strip()
    if not text:
        raise RefParseError("empty uses value")
    if text.startswith("docker://"):
        return _parse_docker(raw)
    if text.startswith(("./", "../", "/")):
        return LocalPathRef(raw=raw, path=text)
    path, _, ref = text.partition("@")
    parts = path.split("/")
    if len(parts) < 2 or not parts[0] or not parts[1]:
        raise RefParseError(f"expected owner/repo[@ref], got {raw!r}")
    if any(ch.isspace() for ch in path):
        raise RefParseError(f"whitespace in script path: {raw!r}")
    subpath = "/".join(parts[2:]) or None
    return RepositoryRef(raw=raw, owner=parts[0], repo=parts[1], ref=ref, subpath=subpath)


def is_full_commit(ref: str) -> bool:
    return _FULL_HEX_RE.fullmatch(ref) is not None


def classify_ref(ref: RepositoryRef, metadata: ScriptMetadata | None) -> RefKind:
    """Decide whether ``ref`` names a tag, a branch, a commit, or nothing known.

    Named refs known to the metadata win over the hex rule, so a tag called
    ``deadbee`` is a Tag rather than an abbreviated commit.
    """
    name = ref.ref
    if not name:
        return RefKind.INVALID
    if metadata is None:
        return RefKind.COMMIT_HASH if is_full_commit(name) else RefKind.UNRESOLVED
    if name in metadata.tags:
        return RefKind.TAG
    if name in metadata.branches or name == metadata.default_branch:
        return RefKind.BRANCH
    if _HEX_RE.fullmatch(name):
        return RefKind.COMMIT_HASH
    return RefKind.INVALID


@dataclass(frozen=True)
class VersionKey:
    """Numeric view of a tag; ``release_date`` breaks ties between equal numbers."""

    numeric_components: tuple[int, ...]
    original: str
    release_date: datetime | None = None

    @classmethod
    def from_tag(cls, tag: str, release_date: datetime | None = None) -> VersionKey:
        text = tag.strip()
        if text[:1] in ("v", "V"):
            text = text[1:]
        components = []
        for part in text.split("."):
            m = _LEADING_DIGITS.match(part)
            if m is None:
                break
            components.append(int(m.group(0)))
            if m.end() != len(part):
                break
        return cls(tuple(components), tag, release_date)


def compare_versions(a: VersionKey, b: VersionKey) -> int:
    """Return -1, 0 or 1. Missing components count as zero; undated keys sort before dated ones."""
    width = max(len(a.numeric_components), len(b.numeric_components))
    for i in range(width):
        x = a.numeric_components[i] if i < len(a.numeric_components) else 0
        y = b.numeric_components[i] if i < len(b.numeric_components) else 0
        if x != y:
            return -1 if x < y else 1
    da, db = a.release_date, b.release_date
    if da == db:
        return 0
    if da is None:
        return -1
    if db is None:
        return 1
    return -1 if da < db else 1
