"""Per-workflow and per-repository analysis feeding the rules and corpus statistics."""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from pipewarden.advisories import AdvisoryAssessment, AdvisoryDb, assess_advisories
from pipewarden.metadata import (
    MetadataStore,
    ScriptMetadata,
    load_category_map,
    load_verified_creators,
)
from pipewarden.model import (
    CredentialUse,
    Location,
    ParseError,
    Workflow,
    discover_workflows,
    extract_credentials,
    extract_script_usages,
    parse_workflow,
)
from pipewarden.refs import RefParseError, RepositoryRef, ScriptUsage, classify_ref, parse_uses
from pipewarden.staleness import UsageLag, compute_usage_lag

__all__ = [
    "AnalysisContext",
    "InvalidUses",
    "ParseFailure",
    "RepoAnalysis",
    "UsageAnalysis",
    "WorkflowAnalysis",
    "analyze_file",
    "analyze_repo",
    "collect",
    "analyze_workflow",
    "load_external_triggers",
    "workflow_files",
]


def load_external_triggers(path: str | Path | None = None) -> frozenset[str]:
    if path:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = resources.files("pipewarden").joinpath("data", "external_triggers.json").read_text(encoding="utf-8")
    return frozenset(json.loads(text)["events"])


@dataclass(frozen=True)
class AnalysisContext:
    metadata: MetadataStore = field(default_factory=MetadataStore)
    advisories: AdvisoryDb = field(default_factory=AdvisoryDb)
    categories: dict[str, frozenset[str]] = field(default_factory=load_category_map)
    verified_creators: frozenset[str] = field(default_factory=load_verified_creators)
    external_triggers: frozenset[str] = field(default_factory=load_external_triggers)
    analysis_time: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    # per-file replacement for analysis_time, keyed by reported file path
    config_times: dict[str, datetime] = field(default_factory=dict)

    def time_for(self, file: str) -> datetime:
        return self.config_times.get(file, self.analysis_time)

    def creator_of(self, ref: RepositoryRef, meta: ScriptMetadata | None) -> str:
        return meta.creator if meta and meta.creator else ref.owner

    def is_verified(self, ref: RepositoryRef, meta: ScriptMetadata | None) -> bool:
        if meta is not None and meta.verified:
            return True
        return self.creator_of(ref, meta).lower() in self.verified_creators

    def categories_of(self, ref: RepositoryRef, meta: ScriptMetadata | None) -> frozenset[str]:
        cats = set(meta.categories) if meta else set()
        cats |= self.categories.get(ref.slug.lower(), frozenset())
        cats |= self.categories.get(ref.repo_slug.lower(), frozenset())
        return frozenset(cats)


@dataclass(frozen=True)
class UsageAnalysis:
    usage: ScriptUsage
    metadata: ScriptMetadata | None
    assessment: AdvisoryAssessment
    lag: UsageLag
    creator: str | None = None
    verified: bool = False
    categories: frozenset[str] = frozenset()

    @property
    def location(self) -> Location:
        return self.usage.location


@dataclass(frozen=True)
class InvalidUses:
    location: Location
    raw: str
    error: str


@dataclass(frozen=True)
class ParseFailure:
    file: str
    kind: str
    detail: str

    def to_dict(self) -> dict[str, str]:
        return {"file": self.file, "kind": self.kind, "detail": self.detail}


@dataclass(frozen=True)
class WorkflowAnalysis:
    workflow: Workflow
    usages: tuple[UsageAnalysis, ...]
    invalid_uses: tuple[InvalidUses, ...]
    credentials: tuple[CredentialUse, ...]

    @property
    def distinct_secrets(self) -> frozenset[str]:
        return frozenset(c.secret_name for c in self.credentials)


@dataclass(frozen=True)
class RepoAnalysis:
    repo: str
    workflows: tuple[WorkflowAnalysis, ...] = ()
    failures: tuple[ParseFailure, ...] = ()

    @property
    def usages(self) -> list[UsageAnalysis]:
        return [u for wf in self.workflows for u in wf.usages]

    @property
    def usage_count(self) -> int:
        return sum(len(wf.usages) + len(wf.invalid_uses) for wf in self.workflows)


def analyze_workflow(workflow: Workflow, ctx: AnalysisContext) -> WorkflowAnalysis:
    usages, invalid = [], []
    when = ctx.time_for(workflow.source_path)
    for loc, raw in extract_script_usages(workflow):
        try:
            ref = parse_uses(raw)
        except RefParseError as exc:
            invalid.append(InvalidUses(loc, raw, str(exc)))
            continue
        if isinstance(ref, RepositoryRef):
            meta = ctx.metadata.lookup(ref)
            usage = ScriptUsage(loc, ref, classify_ref(ref, meta))
            usages.append(
                UsageAnalysis(
                    usage=usage,
                    metadata=meta,
                    assessment=assess_advisories(usage, ctx.advisories, meta),
                    lag=compute_usage_lag(usage, meta, when),
                    creator=ctx.creator_of(ref, meta),
                    verified=ctx.is_verified(ref, meta),
                    categories=ctx.categories_of(ref, meta),
                )
            )
        else:
            usage = ScriptUsage(loc, ref)
            usages.append(UsageAnalysis(usage, None, AdvisoryAssessment(), compute_usage_lag(usage, None, when)))
    return WorkflowAnalysis(workflow, tuple(usages), tuple(invalid), tuple(extract_credentials(workflow)))


def analyze_file(path: Path, shown: str, ctx: AnalysisContext) -> WorkflowAnalysis | ParseFailure:
    try:
        wf = parse_workflow(path.read_bytes(), shown)
    except ParseError as exc:
        return ParseFailure(shown, exc.kind.value, exc.detail)
    except OSError as exc:
        return ParseFailure(shown, "Unreadable", str(exc))
    return analyze_workflow(wf, ctx)


def collect(repo: str, results: Iterable[WorkflowAnalysis | ParseFailure]) -> RepoAnalysis:
    workflows, failures = [], []
    for item in results:
        (failures if isinstance(item, ParseFailure) else workflows).append(item)
    return RepoAnalysis(repo, tuple(workflows), tuple(failures))


def workflow_files(root: str | Path, prefix: str = "") -> list[tuple[Path, str]]:
    """Workflow files under ``root`` paired with their reported path.

    Reported paths are repository-relative POSIX paths, optionally joined
    under ``prefix``.
    """
    root = Path(root)
    out = []
    for path in discover_workflows(root):
        rel = path.relative_to(root).as_posix()
        out.append((path, f"{prefix.rstrip('/')}/{rel}" if prefix else rel))
    return out


def analyze_repo(root: str | Path, ctx: AnalysisContext, repo: str = "", prefix: str = "") -> RepoAnalysis:
    """Parse and analyze every workflow under ``root``."""
    files = workflow_files(root, prefix)
    return collect(repo or Path(root).name, (analyze_file(path, shown, ctx) for path, shown in files))
