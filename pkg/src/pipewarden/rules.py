"""Rule catalog turning analyses into attack-surface-labelled findings."""

from __future__ import annotations

import enum
from collections.abc import Iterable
from dataclasses import dataclass, field

from pipewarden.advisories import Advisory, VulnMatch
from pipewarden.analysis import AnalysisContext, RepoAnalysis, UsageAnalysis, WorkflowAnalysis
from pipewarden.metadata import RuntimeKind
from pipewarden.model import CredentialScope, Location
from pipewarden.refs import DockerImageRef, RefKind, RepositoryRef, is_full_commit
from pipewarden.staleness import LagStatus

__all__ = [
    "AttackSurface",
    "CREDENTIAL_COUNT_WARNING",
    "Finding",
    "RULES",
    "RuleInfo",
    "Severity",
    "evaluate_rules",
    "severity_from_cvss",
]

CREDENTIAL_COUNT_WARNING = 5
SENSITIVE_CATEGORIES = ("artifact-release", "deployment")
STALE_LOW_DAYS = 90
STALE_MEDIUM_DAYS = 365


class Severity(enum.Enum):
    INFO = "info"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"

    @property
    def rank(self) -> int:
        return _SEVERITY_ORDER.index(self)

    def __ge__(self, other: Severity) -> bool:
        return self.rank >= other.rank

    def __gt__(self, other: Severity) -> bool:
        return self.rank > other.rank

    def __le__(self, other: Severity) -> bool:
        return self.rank <= other.rank

    def __lt__(self, other: Severity) -> bool:
        return self.rank < other.rank


_SEVERITY_ORDER = list(Severity)


class AttackSurface(enum.Enum):
    INPUT = "input"
    RUNTIME = "runtime"
    OUTPUT = "output"
    NONE = "none"


def severity_from_cvss(score: float) -> Severity:
    if score >= 9.0:
        return Severity.CRITICAL
    if score >= 7.0:
        return Severity.HIGH
    if score >= 4.0:
        return Severity.MEDIUM
    return Severity.LOW


@dataclass(frozen=True)
class RuleInfo:
    id: str
    name: str
    default_severity: Severity
    surface: AttackSurface
    description: str


RULES: dict[str, RuleInfo] = {
    r.id: r
    for r in (
        RuleInfo(
            "R-VULN-KNOWN", "KnownVulnerableScript", Severity.HIGH, AttackSurface.RUNTIME,
            "Script version affected by a published advisory.",
        ),
        RuleInfo(
            "R-CRED-BROAD", "BroadCredentialScope", Severity.MEDIUM, AttackSurface.INPUT,
            "Secret exposed at workflow or job env scope is readable by every step, including third-party scripts.",
        ),
        RuleInfo(
            "R-CRED-COUNT", "CredentialCount", Severity.INFO, AttackSurface.INPUT,
            "Number of distinct secrets passed into one workflow.",
        ),
        RuleInfo(
            "R-REF-MUTABLE", "MutableScriptReference", Severity.LOW, AttackSurface.RUNTIME,
            "Script referenced by tag or branch, which its owner can move; pin a full commit SHA.",
        ),
        RuleInfo(
            "R-REF-INVALID", "InvalidScriptReference", Severity.MEDIUM, AttackSurface.NONE,
            "Script reference names no known tag, branch or commit.",
        ),
        RuleInfo(
            "R-STALE", "OutdatedScriptVersion", Severity.LOW, AttackSurface.RUNTIME,
            "Pinned script version trails a newer release.",
        ),
        RuleInfo(
            "R-DOCKER-SOURCE", "UntrustedDockerSource", Severity.MEDIUM, AttackSurface.RUNTIME,
            "Docker image is not digest-pinned or comes from an unverified creator.",
        ),
        RuleInfo(
            "R-SENSITIVE-UNVERIFIED", "UnverifiedSensitiveScript", Severity.MEDIUM, AttackSurface.OUTPUT,
            "Artifact release or deployment performed by a script from an unverified creator.",
        ),
        RuleInfo(
            "R-TRIGGER-BROAD", "ExternallyTriggeredWithSecrets", Severity.MEDIUM, AttackSurface.INPUT,
            "Workflow holding secrets can be triggered by events any outside user can raise.",
        ),
    )
}


@dataclass(frozen=True)
class Finding:
    rule_id: str
    severity: Severity
    attack_surface: AttackSurface
    location: Location
    message: str
    evidence: dict[str, str] = field(default_factory=dict)

    def sort_key(self) -> tuple:
        return (*self.location.sort_key(), self.rule_id, self.message)

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "severity": self.severity.value,
            "attack_surface": self.attack_surface.value,
            "location": self.location.to_dict(),
            "message": self.message,
            "evidence": dict(sorted(self.evidence.items())),
        }


def _finding(rule_id: str, location: Location, message: str, evidence: dict[str, str], severity: Severity | None = None,
             surface: AttackSurface | None = None) -> Finding:
    rule = RULES[rule_id]
    return Finding(rule_id, severity or rule.default_severity, surface or rule.surface, location, message, evidence)


def _surface_for_impact(impact: str) -> AttackSurface:
    text = impact.lower()
    if "credential" in text or "leak" in text or "disclosure" in text:
        return AttackSurface.INPUT
    return AttackSurface.RUNTIME


def _vuln_finding(match: VulnMatch) -> Finding:
    adv: Advisory = match.advisory
    evidence = {
        "advisory": adv.id,
        "cvss": f"{adv.cvss:.1f}",
        "impact": adv.impact,
        "referenced_version": match.referenced_version,
        "reason": match.reason.value,
        "verified_creator": str(adv.verified_creator).lower(),
    }
    evidence["fixed_in" if adv.fixed_in is not None else "last_vulnerable"] = adv.boundary
    return _finding(
        "R-VULN-KNOWN",
        match.location,
        f"{adv.slug}@{match.referenced_version} is affected by {adv.id} ({adv.impact}, CVSS {adv.cvss:.1f})",
        evidence,
        severity=severity_from_cvss(adv.cvss),
        surface=_surface_for_impact(adv.impact),
    )


def _docker_image_mutable(image: str | None) -> bool:
    if not image or not image.startswith("docker://"):
        # Dockerfile builds come from the script's own pinned source
        return False
    return "@sha256:" not in image


def _usage_findings(ua: UsageAnalysis, ctx: AnalysisContext) -> list[Finding]:
    found = [_vuln_finding(m) for m in ua.assessment.matches]
    ref = ua.usage.ref
    loc = ua.location

    if isinstance(ref, DockerImageRef):
        namespace = ref.image.split("/")[0].lower() if "/" in ref.image else ""
        verified = namespace in ctx.verified_creators
        if not ref.pinned_by_digest or not verified:
            found.append(_finding(
                "R-DOCKER-SOURCE", loc,
                f"Docker image {ref.raw} is {'not digest-pinned' if not ref.pinned_by_digest else 'from an unverified publisher'}",
                {"image": ref.raw, "digest_pinned": str(ref.pinned_by_digest).lower(), "verified": str(verified).lower()},
            ))
        return found
    if not isinstance(ref, RepositoryRef):
        return found

    kind = ua.usage.kind
    if kind in (RefKind.TAG, RefKind.BRANCH, RefKind.UNRESOLVED) and not is_full_commit(ref.ref):
        evidence = {"ref": ref.ref, "ref_kind": kind.value}
        if kind is RefKind.BRANCH and ua.metadata is not None:
            evidence["default_branch"] = str(ref.ref == ua.metadata.default_branch).lower()
        found.append(_finding(
            "R-REF-MUTABLE", loc, f"{ref.raw} is not pinned to a full commit SHA", evidence,
        ))
    elif kind is RefKind.INVALID:
        found.append(_finding(
            "R-REF-INVALID", loc, f"{ref.raw} does not name a known tag, branch or commit",
            {"ref": ref.ref or "(none)"},
        ))

    lag = ua.lag
    if lag.status is LagStatus.OUTDATED and lag.lag_days >= STALE_LOW_DAYS:
        severity = Severity.MEDIUM if lag.lag_days >= STALE_MEDIUM_DAYS else Severity.LOW
        evidence = {"lag_days": str(lag.lag_days), "ref": ref.ref}
        if lag.first_newer_release_date is not None:
            evidence["first_newer_release"] = lag.first_newer_release_date.strftime("%Y-%m-%dT%H:%M:%SZ")
        found.append(_finding(
            "R-STALE", loc, f"{ref.raw} is {lag.lag_days} days behind a newer release", evidence, severity=severity,
        ))

    meta = ua.metadata
    if meta is not None and meta.runtime.kind is RuntimeKind.DOCKER:
        mutable = _docker_image_mutable(meta.runtime.detail)
        if mutable or not ua.verified:
            found.append(_finding(
                "R-DOCKER-SOURCE", loc,
                f"{ref.slug} runs in Docker image {meta.runtime.detail or '(unknown)'}"
                + (" with a mutable tag" if mutable else " from an unverified creator"),
                {"image": meta.runtime.detail or "", "mutable_tag": str(mutable).lower(),
                 "verified": str(ua.verified).lower()},
            ))

    sensitive = sorted(c for c in ua.categories if c in SENSITIVE_CATEGORIES)
    if sensitive and not ua.verified:
        found.append(_finding(
            "R-SENSITIVE-UNVERIFIED", loc,
            f"{ref.slug} performs {' and '.join(sensitive)} but its creator {ua.creator} is not verified",
            {"categories": ",".join(sensitive), "creator": ua.creator or ref.owner},
        ))
    return found


def _workflow_findings(wa: WorkflowAnalysis, ctx: AnalysisContext) -> list[Finding]:
    found: list[Finding] = []
    for ua in wa.usages:
        found += _usage_findings(ua, ctx)
    for bad in wa.invalid_uses:
        found.append(_finding(
            "R-REF-INVALID", bad.location, f"uses value {bad.raw!r} is not a valid script reference",
            {"ref": bad.raw, "error": bad.error},
        ))

    for cred in wa.credentials:
        if cred.scope in (CredentialScope.WORKFLOW_ENV, CredentialScope.JOB_ENV) and cred.note is None:
            where = "workflow" if cred.scope is CredentialScope.WORKFLOW_ENV else f"job {cred.location.job!r}"
            found.append(_finding(
                "R-CRED-BROAD", cred.location,
                f"secret {cred.secret_name} is set in {where} env and is visible to every step",
                {"secret": cred.secret_name, "scope": cred.scope.value, "expression": cred.expression},
            ))

    file_loc = Location(wa.workflow.source_path)
    secrets = sorted(wa.distinct_secrets)
    if secrets:
        over = len(secrets) > CREDENTIAL_COUNT_WARNING
        found.append(_finding(
            "R-CRED-COUNT", file_loc,
            f"workflow passes {len(secrets)} distinct secret{'s' if len(secrets) != 1 else ''}"
            + (f" (more than {CREDENTIAL_COUNT_WARNING})" if over else ""),
            {"count": str(len(secrets)), "secrets": ",".join(secrets)},
            severity=Severity.LOW if over else Severity.INFO,
        ))
        external = sorted(set(wa.workflow.triggers) & ctx.external_triggers)
        if external:
            found.append(_finding(
                "R-TRIGGER-BROAD", file_loc,
                f"workflow with secrets can be triggered by {', '.join(external)}",
                {"triggers": ",".join(external), "secrets": ",".join(secrets)},
            ))
    return found


def evaluate_rules(analyses: Iterable[WorkflowAnalysis | RepoAnalysis], ctx: AnalysisContext) -> list[Finding]:
    """Apply the full catalog; findings come back sorted by file, job, step, rule."""
    findings: list[Finding] = []
    for item in analyses:
        workflows = item.workflows if isinstance(item, RepoAnalysis) else (item,)
        for wa in workflows:
            findings += _workflow_findings(wa, ctx)
    return sorted(findings, key=Finding.sort_key)
