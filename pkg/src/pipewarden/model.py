"""Typed pipeline model for GitHub Actions workflow files.

Workflows are loaded with a string-only YAML loader: every scalar stays the
text the author wrote, so ``on:`` is never coerced to ``True`` and
``${{ ... }}`` expressions are kept verbatim for lexical inspection.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import yaml

__all__ = [
    "CredentialScope",
    "CredentialUse",
    "Job",
    "Location",
    "ParseError",
    "ParseErrorKind",
    "RunStep",
    "Step",
    "UsesStep",
    "Workflow",
    "discover_workflows",
    "extract_credentials",
    "extract_script_usages",
    "parse_workflow",
]

EXPRESSION_RE = re.compile(r"\$\{\{.*?\}\}", re.DOTALL)
SECRET_ACCESSOR_RE = re.compile(
    r"""\bsecrets\s*(?:\.\s*([A-Za-z_][A-Za-z0-9_-]*)|\[\s*['"]([^'"\]]+)['"]\s*\])"""
)


class ParseErrorKind(enum.Enum):
    MALFORMED_YAML = "MalformedYaml"
    MISSING_JOBS = "MissingJobs"
    MISSING_TRIGGER = "MissingTrigger"
    INVALID_JOB = "InvalidJob"
    INVALID_STEP = "InvalidStep"


class ParseError(Exception):
    def __init__(self, kind: ParseErrorKind, source_path: str, detail: str = ""):
        self.kind = kind
        self.source_path = source_path
        self.detail = detail
        msg = f"{source_path}: {kind.value}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True, order=True)
class Location:
    """Where something sits in a workflow: file, optional job id, optional step."""

    file: str
    job: str | None = None
    step: int | None = None

    def sort_key(self) -> tuple:
        return (self.file, self.job or "", -1 if self.step is None else self.step)

    def to_dict(self) -> dict[str, Any]:
        return {"file": self.file, "job": self.job, "step": self.step}


@dataclass(frozen=True)
class UsesStep:
    raw_uses: str
    with_args: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RunStep:
    script_text: str
    shell: str | None = None


StepBody = Union[UsesStep, RunStep]


@dataclass(frozen=True)
class Step:
    index: int
    body: StepBody
    display_name: str | None = None
    env: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Job:
    id: str
    steps: tuple[Step, ...]
    display_name: str | None = None
    runs_on: tuple[str, ...] = ()
    env: dict[str, str] = field(default_factory=dict)
    # reusable-workflow call at job level
    uses: str | None = None
    with_args: dict[str, str] = field(default_factory=dict)
    secrets: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Workflow:
    source_path: str
    triggers: tuple[str, ...]
    jobs: tuple[Job, ...]
    name: str | None = None
    env: dict[str, str] = field(default_factory=dict)
    permissions: str | None = None


class CredentialScope(enum.Enum):
    WORKFLOW_ENV = "WorkflowEnv"
    JOB_ENV = "JobEnv"
    STEP_ENV = "StepEnv"
    STEP_WITH = "StepWith"


@dataclass(frozen=True)
class CredentialUse:
    secret_name: str
    expression: str
    scope: CredentialScope
    location: Location
    note: str | None = None


class _StringLoader(yaml.BaseLoader):
    """BaseLoader keeps every scalar as text; subclassed so we never mutate it."""


def _text(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True)


def _string_map(value: Any) -> dict[str, str]:
    if not isinstance(value, dict):
        return {}
    return {str(k): _text(v) for k, v in value.items()}


def _optional_text(value: Any) -> str | None:
    if value is None or value == "":
        return None
    return _text(value)


def _triggers(value: Any) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value.strip(),) if value.strip() else ()
    if isinstance(value, list):
        return tuple(v for v in (_text(x).strip() for x in value) if v)
    if isinstance(value, dict):
        return tuple(str(k) for k in value)
    return ()


def _runs_on(value: Any) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    if isinstance(value, list):
        return tuple(_text(v) for v in value)
    if isinstance(value, dict):
        labels = value.get("labels", ())
        if isinstance(labels, str):
            return (labels,)
        if isinstance(labels, list):
            return tuple(_text(v) for v in labels)
    return ()


def _parse_step(raw: Any, index: int, job_id: str, source_path: str) -> Step:
    if not isinstance(raw, dict):
        raise ParseError(ParseErrorKind.INVALID_STEP, source_path, f"job {job_id!r} step {index} is not a mapping")
    has_uses = "uses" in raw
    has_run = "run" in raw
    if has_uses == has_run:
        raise ParseError(
            ParseErrorKind.INVALID_STEP,
            source_path,
            f"job {job_id!r} step {index} must define exactly one of 'uses' or 'run'",
        )
    body: StepBody
    if has_uses:
        body = UsesStep(raw_uses=_text(raw["uses"]).strip(), with_args=_string_map(raw.get("with")))
    else:
        body = RunStep(script_text=_text(raw["run"]), shell=_optional_text(raw.get("shell")))
    return Step(index=index, body=body, display_name=_optional_text(raw.get("name")), env=_string_map(raw.get("env")))


def _parse_job(job_id: str, raw: Any, source_path: str) -> Job:
    if not isinstance(raw, dict):
        raise ParseError(ParseErrorKind.INVALID_JOB, source_path, f"job {job_id!r} is not a mapping")
    uses = _optional_text(raw.get("uses"))
    raw_steps = raw.get("steps")
    if raw_steps in (None, ""):
        raw_steps = []
    if not isinstance(raw_steps, list):
        raise ParseError(ParseErrorKind.INVALID_JOB, source_path, f"job {job_id!r} steps is not a list")
    steps = tuple(_parse_step(s, i, job_id, source_path) for i, s in enumerate(raw_steps))
    if not steps and uses is None:
        raise ParseError(ParseErrorKind.INVALID_JOB, source_path, f"job {job_id!r} has no steps")
    secrets = raw.get("secrets")
    return Job(
        id=job_id,
        steps=steps,
        display_name=_optional_text(raw.get("name")),
        runs_on=_runs_on(raw.get("runs-on")),
        env=_string_map(raw.get("env")),
        uses=uses.strip() if uses else None,
        with_args=_string_map(raw.get("with")),
        secrets=_string_map(secrets) if isinstance(secrets, dict) else ({"*": secrets} if isinstance(secrets, str) else {}),
    )


def parse_workflow(text: str | bytes, source_path: str | Path) -> Workflow:
    """Parse one workflow file into a :class:`Workflow`.

    Raises :class:`ParseError` for invalid YAML, a missing ``on:`` trigger,
    an absent or empty ``jobs:`` map, or a job/step violating the model.
    Unknown keys are ignored.
    """
    source = Path(source_path).as_posix() if isinstance(source_path, Path) else str(source_path)
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(ParseErrorKind.MALFORMED_YAML, source, f"not UTF-8: {exc}") from None
    try:
        doc = yaml.load(text, Loader=_StringLoader)
    except (yaml.YAMLError, RecursionError, ValueError) as exc:
        raise ParseError(ParseErrorKind.MALFORMED_YAML, source, str(exc).splitlines()[0] if str(exc) else "") from None
    if not isinstance(doc, dict):
        raise ParseError(ParseErrorKind.MALFORMED_YAML, source, "top level is not a mapping")

    triggers = _triggers(doc.get("on"))
    if not triggers:
        raise ParseError(ParseErrorKind.MISSING_TRIGGER, source)
    raw_jobs = doc.get("jobs")
    if not isinstance(raw_jobs, dict) or not raw_jobs:
        raise ParseError(ParseErrorKind.MISSING_JOBS, source)

    jobs = tuple(_parse_job(str(job_id), raw, source) for job_id, raw in raw_jobs.items())
    permissions = doc.get("permissions")
    return Workflow(
        source_path=source,
        triggers=triggers,
        jobs=jobs,
        name=_optional_text(doc.get("name")),
        env=_string_map(doc.get("env")),
        permissions=None if permissions in (None, "") else _text(permissions),
    )


def extract_script_usages(workflow: Workflow) -> list[tuple[Location, str]]:
    """Every ``uses:`` occurrence in job order, then step order.

    A job-level reusable-workflow call is reported with ``step=None``.
    """
    usages = []
    for job in workflow.jobs:
        if job.uses is not None:
            usages.append((Location(workflow.source_path, job.id, None), job.uses))
        for step in job.steps:
            if isinstance(step.body, UsesStep):
                usages.append((Location(workflow.source_path, job.id, step.index), step.body.raw_uses))
    return usages


def _scan_secrets(
    value: str, scope: CredentialScope, location: Location, note: str | None = None
) -> list[CredentialUse]:
    found = []
    for expr in EXPRESSION_RE.finditer(value):
        for accessor in SECRET_ACCESSOR_RE.finditer(expr.group(0)):
            name = accessor.group(1) or accessor.group(2)
            found.append(CredentialUse(name, expr.group(0), scope, location, note))
    return found


def extract_credentials(workflow: Workflow) -> list[CredentialUse]:
    """Report each ``secrets.<name>`` accessor inside a ``${{ }}`` expression.

    Env values and ``with:`` arguments are covered at every level. Accessors
    inside ``run:`` scripts are reported as step-scoped with a note.
    """
    path = workflow.source_path
    creds: list[CredentialUse] = []
    for value in workflow.env.values():
        creds += _scan_secrets(value, CredentialScope.WORKFLOW_ENV, Location(path))
    for job in workflow.jobs:
        job_loc = Location(path, job.id)
        for value in job.env.values():
            creds += _scan_secrets(value, CredentialScope.JOB_ENV, job_loc)
        for value in job.with_args.values():
            creds += _scan_secrets(value, CredentialScope.JOB_ENV, job_loc, "reusable workflow input")
        for value in job.secrets.values():
            creds += _scan_secrets(value, CredentialScope.JOB_ENV, job_loc, "reusable workflow secret")
        for step in job.steps:
            loc = Location(path, job.id, step.index)
            for value in step.env.values():
                creds += _scan_secrets(value, CredentialScope.STEP_ENV, loc)
            if isinstance(step.body, UsesStep):
                for value in step.body.with_args.values():
                    creds += _scan_secrets(value, CredentialScope.STEP_WITH, loc)
            else:
                creds += _scan_secrets(step.body.script_text, CredentialScope.STEP_ENV, loc, "referenced in run script")
    return creds


def discover_workflows(repo_root: str | Path) -> list[Path]:
    """Workflow files under ``.github/workflows``, sorted by name."""
    wf_dir = Path(repo_root) / ".github" / "workflows"
    if not wf_dir.is_dir():
        return []
    return sorted(p for p in wf_dir.iterdir() if p.is_file() and p.suffix in (".yml", ".yaml"))
