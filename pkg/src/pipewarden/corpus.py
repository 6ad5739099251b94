"""Corpus-level distributions over many analyzed repositories.

:class:`CorpusStats` keeps sets and per-key repository counts rather than
percentages so two partial results over disjoint repositories merge exactly.
Percentages and top-N tables are derived only when serializing.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, fields
from functools import reduce
from typing import Any

from pipewarden.analysis import RepoAnalysis
from pipewarden.metadata import RuntimeKind
from pipewarden.refs import DockerImageRef, RefKind, RepositoryRef
from pipewarden.staleness import LagBuckets, LagStatus, bucket_days, bucket_lags, compute_repo_lag

__all__ = ["CREDENTIAL_BINS", "CorpusStats", "aggregate_corpus", "credential_bin", "repo_stats"]

CREDENTIAL_BINS = ("0", "1", "2-5", ">5")
RUNTIME_KINDS = (RuntimeKind.NODEJS, RuntimeKind.DOCKER, RuntimeKind.RAW_COMMAND, RuntimeKind.UNKNOWN)
REF_KINDS = (RefKind.TAG, RefKind.BRANCH, RefKind.COMMIT_HASH, RefKind.INVALID, RefKind.UNRESOLVED)
SENSITIVE = ("artifact-release", "deployment")


def credential_bin(count: int) -> str:
    if count <= 1:
        return str(max(count, 0))
    return "2-5" if count <= 5 else ">5"


def _add_counts(a: Mapping[str, int], b: Mapping[str, int]) -> dict[str, int]:
    out = dict(a)
    for key, n in b.items():
        if n:
            out[key] = out.get(key, 0) + n
    return out


def _union_maps(a: Mapping[str, Any], b: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(a)
    for key, value in b.items():
        if key in out and out[key] != value:
            # conflicting per-script facts: keep a deterministic choice
            out[key] = max(out[key], value)
        else:
            out[key] = value
    return out


def _pct(n: int, total: int) -> float:
    return round(100.0 * n / total, 2) if total else 0.0


@dataclass(frozen=True)
class CorpusStats:
    repo_count: int = 0
    usage_count: int = 0
    scripts: frozenset[str] = frozenset()
    # slug -> aggregate runtime kind value
    script_runtimes: dict[str, str] = field(default_factory=dict)
    # slug -> verified flag
    script_verified: dict[str, bool] = field(default_factory=dict)
    # creator -> verified flag
    creators: dict[str, bool] = field(default_factory=dict)
    runtime_repos: dict[str, int] = field(default_factory=dict)
    script_repos: dict[str, int] = field(default_factory=dict)
    creator_repos: dict[str, int] = field(default_factory=dict)
    repos_using_verified: int = 0
    repos_using_unverified: int = 0
    credential_histogram: dict[str, int] = field(default_factory=dict)
    ref_kind_repos: dict[str, int] = field(default_factory=dict)
    # category -> slugs
    sensitive_scripts: dict[str, frozenset[str]] = field(default_factory=dict)
    sensitive_repos: dict[str, int] = field(default_factory=dict)
    usage_lag_buckets: LagBuckets = LagBuckets()
    repo_lag_buckets: LagBuckets = LagBuckets()
    lag_days_total: int = 0
    lag_known_usages: int = 0
    outdated_usages: int = 0
    repos_with_outdated: int = 0
    vulnerable_repos: frozenset[str] = frozenset()
    advisory_repos: dict[str, int] = field(default_factory=dict)
    parse_failures: int = 0
    failed_files: frozenset[str] = frozenset()

    def merge(self, other: CorpusStats) -> CorpusStats:
        """Combine stats of two disjoint repository sets."""
        merged: dict[str, Any] = {}
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, (int, LagBuckets)):
                merged[f.name] = a + b
            elif isinstance(a, frozenset):
                merged[f.name] = a | b
            elif f.name == "sensitive_scripts":
                merged[f.name] = {k: a.get(k, frozenset()) | b.get(k, frozenset()) for k in set(a) | set(b)}
            elif f.name in ("script_runtimes", "script_verified", "creators"):
                merged[f.name] = _union_maps(a, b)
            else:
                merged[f.name] = _add_counts(a, b)
        return CorpusStats(**merged)

    __add__ = merge

    @property
    def distinct_scripts(self) -> int:
        return len(self.scripts)

    @property
    def distinct_creators(self) -> int:
        return len(self.creators)

    def to_dict(self, top_n: int = 10) -> dict[str, Any]:
        repos = self.repo_count
        runtime_scripts = {k.value: 0 for k in RUNTIME_KINDS}
        for kind in self.script_runtimes.values():
            runtime_scripts[kind] = runtime_scripts.get(kind, 0) + 1
        verified_scripts = sum(1 for s in self.scripts if self.script_verified.get(s))
        verified_creators = sum(1 for v in self.creators.values() if v)

        def top(counts: Mapping[str, int], keep=lambda k: True) -> list[dict[str, Any]]:
            ranked = sorted(((k, n) for k, n in counts.items() if keep(k)), key=lambda kv: (-kv[1], kv[0]))
            return [{"name": k, "repos": n, "percent": _pct(n, repos)} for k, n in ranked[:top_n]]

        return {
            "repo_count": repos,
            "usage_count": self.usage_count,
            "distinct_scripts": self.distinct_scripts,
            "distinct_creators": self.distinct_creators,
            "runtime_distribution": {
                kind: {
                    "scripts": runtime_scripts.get(kind, 0),
                    "scripts_percent": _pct(runtime_scripts.get(kind, 0), self.distinct_scripts),
                    "influenced_repos": self.runtime_repos.get(kind, 0),
                    "influenced_repos_percent": _pct(self.runtime_repos.get(kind, 0), repos),
                }
                for kind in sorted(runtime_scripts)
            },
            "script_popularity": top(self.script_repos),
            "creator_influence": {
                "verified": {
                    "creators": verified_creators,
                    "scripts": verified_scripts,
                    "influenced_repos": self.repos_using_verified,
                    "influenced_repos_percent": _pct(self.repos_using_verified, repos),
                    "top": top(self.creator_repos, lambda c: self.creators.get(c, False)),
                },
                "unverified": {
                    "creators": self.distinct_creators - verified_creators,
                    "scripts": self.distinct_scripts - verified_scripts,
                    "influenced_repos": self.repos_using_unverified,
                    "influenced_repos_percent": _pct(self.repos_using_unverified, repos),
                    "top": top(self.creator_repos, lambda c: not self.creators.get(c, False)),
                },
            },
            "credential_histogram": {b: self.credential_histogram.get(b, 0) for b in CREDENTIAL_BINS},
            "ref_kind_repos": {
                k.value: {"repos": self.ref_kind_repos.get(k.value, 0),
                          "percent": _pct(self.ref_kind_repos.get(k.value, 0), repos)}
                for k in REF_KINDS
            },
            "sensitive_operations": {
                cat: {
                    "scripts": len(self.sensitive_scripts.get(cat, ())),
                    "repos": self.sensitive_repos.get(cat, 0),
                    "repos_percent": _pct(self.sensitive_repos.get(cat, 0), repos),
                }
                for cat in SENSITIVE
            },
            "lag": {
                "usage_buckets": self.usage_lag_buckets.to_dict(),
                "repo_buckets": self.repo_lag_buckets.to_dict(),
                "mean_usage_lag_days": round(self.lag_days_total / self.usage_lag_buckets.total, 2)
                if self.usage_lag_buckets.total else 0.0,
                "outdated_usages": self.outdated_usages,
                "outdated_usage_percent": _pct(self.outdated_usages, self.lag_known_usages),
                "repos_with_outdated": self.repos_with_outdated,
                "repos_with_outdated_percent": _pct(self.repos_with_outdated, repos),
            },
            "vulnerable_repos": sorted(self.vulnerable_repos),
            "advisory_repos": dict(sorted(self.advisory_repos.items())),
            "parse_failures": self.parse_failures,
            "failed_files": sorted(self.failed_files),
        }


def repo_stats(repo: RepoAnalysis) -> CorpusStats:
    """Stats contributed by a single repository."""
    usages = repo.usages
    scripts: set[str] = set()
    script_runtimes: dict[str, str] = {}
    script_verified: dict[str, bool] = {}
    creators: dict[str, bool] = {}
    runtimes: set[str] = set()
    ref_kinds: set[str] = set()
    sensitive: dict[str, set[str]] = {}
    advisories: set[str] = set()
    any_verified = any_unverified = False

    for ua in usages:
        ref = ua.usage.ref
        if isinstance(ref, DockerImageRef):
            runtimes.add(RuntimeKind.DOCKER.value)
            continue
        if not isinstance(ref, RepositoryRef):
            continue
        slug = ref.slug
        scripts.add(slug)
        runtime = ua.metadata.runtime.aggregate_kind.value if ua.metadata else RuntimeKind.UNKNOWN.value
        script_runtimes[slug] = runtime
        runtimes.add(runtime)
        script_verified[slug] = ua.verified
        creator = ua.creator or ref.owner
        creators[creator] = creators.get(creator, False) or ua.verified
        any_verified |= ua.verified
        any_unverified |= not ua.verified
        if ua.usage.kind is not None:
            ref_kinds.add(ua.usage.kind.value)
        for cat in ua.categories:
            if cat in SENSITIVE:
                sensitive.setdefault(cat, set()).add(slug)
        advisories.update(m.advisory.id for m in ua.assessment.matches)
    if any(wf.invalid_uses for wf in repo.workflows):
        ref_kinds.add(RefKind.INVALID.value)

    secrets = set()
    for wf in repo.workflows:
        secrets |= wf.distinct_secrets

    lags = [ua.lag for ua in usages]
    repo_lag = compute_repo_lag(lags, repo.repo)
    has_bucketed = repo_lag.contributing_usage is not None
    outdated = sum(1 for lag in lags if lag.status is LagStatus.OUTDATED)
    usage_buckets = bucket_lags(lags)

    return CorpusStats(
        repo_count=1,
        usage_count=repo.usage_count,
        scripts=frozenset(scripts),
        script_runtimes=script_runtimes,
        script_verified=script_verified,
        creators=creators,
        runtime_repos={k: 1 for k in runtimes},
        script_repos={s: 1 for s in scripts},
        creator_repos={c: 1 for c in creators},
        repos_using_verified=int(any_verified),
        repos_using_unverified=int(any_unverified),
        credential_histogram={credential_bin(len(secrets)): 1},
        ref_kind_repos={k: 1 for k in ref_kinds},
        sensitive_scripts={k: frozenset(v) for k, v in sensitive.items()},
        sensitive_repos={k: 1 for k in sensitive},
        usage_lag_buckets=usage_buckets,
        repo_lag_buckets=bucket_days([repo_lag.max_lag_days]) if has_bucketed else LagBuckets(),
        lag_days_total=sum(lag.lag_days for lag in lags if lag.bucketed),
        lag_known_usages=sum(1 for lag in lags if lag.status is not LagStatus.UNKNOWN),
        outdated_usages=outdated,
        repos_with_outdated=int(outdated > 0),
        vulnerable_repos=frozenset([repo.repo]) if advisories else frozenset(),
        advisory_repos={a: 1 for a in advisories},
        parse_failures=len(repo.failures),
        failed_files=frozenset(f.file for f in repo.failures),
    )


def aggregate_corpus(repos: Iterable[RepoAnalysis]) -> CorpusStats:
    return reduce(CorpusStats.merge, (repo_stats(r) for r in repos), CorpusStats())
