"""Serialize findings and corpus statistics as json, text or SARIF 2.1.0."""

from __future__ import annotations

import json
from collections.abc import Sequence
from typing import Any

from pipewarden import __version__
from pipewarden.analysis import ParseFailure
from pipewarden.corpus import CorpusStats
from pipewarden.rules import RULES, AttackSurface, Finding, Severity

__all__ = ["FORMATS", "UnsupportedFormat", "render_findings", "render_report", "render_stats"]

TOOL_NAME = "pipewarden"
FORMATS = ("json", "text", "sarif")
SARIF_SCHEMA = "https://json.schemastore.org/sarif-2.1.0.json"

_SARIF_LEVEL = {
    Severity.CRITICAL: "error",
    Severity.HIGH: "error",
    Severity.MEDIUM: "warning",
    Severity.LOW: "note",
    Severity.INFO: "note",
}

LEGEND = {
    "invalid_ref": "Invalid = not a known release tag, not a known branch, not a hex commit id.",
    "job_level_uses": "Job-level reusable-workflow calls are counted as script usages.",
    "lag": "Lag is measured from the first strictly newer release to the analysis time (or the per-file config time); "
    "release date is the tagged commit's timestamp; 1 month = 30 days.",
}


class UnsupportedFormat(ValueError):
    pass


def _dumps(payload: Any) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _summary(findings: Sequence[Finding]) -> dict[str, Any]:
    by_severity = {s.value: 0 for s in Severity}
    by_surface = {a.value: 0 for a in AttackSurface}
    for f in findings:
        by_severity[f.severity.value] += 1
        by_surface[f.attack_surface.value] += 1
    return {"total": len(findings), "by_severity": by_severity, "by_attack_surface": by_surface}


def _json_findings(findings: Sequence[Finding], failures: Sequence[ParseFailure], scripts: Sequence[str]) -> bytes:
    return _dumps({
        "tool": {"name": TOOL_NAME, "version": __version__},
        "findings": [f.to_dict() for f in findings],
        "summary": _summary(findings),
        "diagnostics": [d.to_dict() for d in failures],
        "scripts": sorted(scripts),
        "legend": LEGEND,
    })


def _text_findings(findings: Sequence[Finding], failures: Sequence[ParseFailure]) -> bytes:
    rows = [("SEVERITY", "SURFACE", "RULE", "LOCATION", "MESSAGE")]
    for f in findings:
        loc = f.location.file
        if f.location.job is not None:
            loc += f":{f.location.job}"
        if f.location.step is not None:
            loc += f"#{f.location.step}"
        rows.append((f.severity.value.upper(), f.attack_surface.value, f.rule_id, loc, f.message))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r[:4], widths)) + "  " + r[4] for r in rows]
    for d in failures:
        lines.append(f"parse error: {d.file}: {d.kind}{': ' + d.detail if d.detail else ''}")
    summary = _summary(findings)
    counts = ", ".join(f"{k}={v}" for k, v in summary["by_severity"].items() if v)
    lines.append(f"{summary['total']} finding(s)" + (f" ({counts})" if counts else ""))
    return ("\n".join(line.rstrip() for line in lines) + "\n").encode("utf-8")


def _sarif_findings(findings: Sequence[Finding], failures: Sequence[ParseFailure]) -> bytes:
    rule_ids = list(RULES)
    rules = [
        {
            "id": r.id,
            "name": r.name,
            "shortDescription": {"text": r.description},
            "defaultConfiguration": {"level": _SARIF_LEVEL[r.default_severity]},
            "properties": {"attack_surface": r.surface.value, "severity": r.default_severity.value},
        }
        for r in RULES.values()
    ]
    results = []
    for f in findings:
        props: dict[str, Any] = {"severity": f.severity.value, "attack_surface": f.attack_surface.value,
                                 "evidence": dict(sorted(f.evidence.items()))}
        if f.location.job is not None:
            props["job"] = f.location.job
        if f.location.step is not None:
            props["step"] = f.location.step
        results.append({
            "ruleId": f.rule_id,
            "ruleIndex": rule_ids.index(f.rule_id),
            "level": _SARIF_LEVEL[f.severity],
            "message": {"text": f.message},
            "locations": [{"physicalLocation": {"artifactLocation": {"uri": f.location.file}}}],
            "properties": props,
        })
    notifications = [
        {"level": "error", "message": {"text": f"{d.kind}: {d.detail}" if d.detail else d.kind},
         "locations": [{"physicalLocation": {"artifactLocation": {"uri": d.file}}}]}
        for d in failures
    ]
    run: dict[str, Any] = {
        "tool": {"driver": {"name": TOOL_NAME, "version": __version__, "rules": rules}},
        "results": results,
    }
    if notifications:
        run["invocations"] = [{"executionSuccessful": False, "toolExecutionNotifications": notifications}]
    return _dumps({"$schema": SARIF_SCHEMA, "version": "2.1.0", "runs": [run]})


def render_findings(
    findings: Sequence[Finding],
    fmt: str = "json",
    failures: Sequence[ParseFailure] = (),
    scripts: Sequence[str] = (),
) -> bytes:
    if fmt == "json":
        return _json_findings(findings, failures, scripts)
    if fmt == "text":
        return _text_findings(findings, failures)
    if fmt == "sarif":
        return _sarif_findings(findings, failures)
    raise UnsupportedFormat(fmt)


def _text_stats(data: dict[str, Any], indent: int = 0) -> list[str]:
    lines = []
    pad = "  " * indent
    for key, value in data.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines += _text_stats(value, indent + 1)
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            lines.append(f"{pad}{key}:")
            for item in value:
                lines.append(f"{pad}  - " + ", ".join(f"{k}={v}" for k, v in item.items()))
        elif isinstance(value, list):
            lines.append(f"{pad}{key}: {', '.join(map(str, value)) if value else '-'}")
        else:
            lines.append(f"{pad}{key}: {value}")
    return lines


def render_stats(stats: CorpusStats, fmt: str = "json", top_n: int = 10) -> bytes:
    data = stats.to_dict(top_n)
    if fmt == "json":
        return _dumps({"tool": {"name": TOOL_NAME, "version": __version__}, "stats": data, "legend": LEGEND})
    if fmt == "text":
        return ("\n".join(_text_stats(data)) + "\n").encode("utf-8")
    raise UnsupportedFormat(fmt)


def render_report(subject: Sequence[Finding] | CorpusStats, fmt: str = "json") -> bytes:
    if isinstance(subject, CorpusStats):
        return render_stats(subject, fmt)
    return render_findings(subject, fmt)
