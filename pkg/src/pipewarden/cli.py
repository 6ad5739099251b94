"""Command-line entry point: ``scan``, ``corpus stats``, ``fetch-metadata``, ``version``.

Exit codes for ``scan``: 0 clean, 1 a finding at or above ``--fail-on``,
2 usage error, 3 a workflow file failed to parse. Reports go to stdout (or
``--out``); everything else goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from pipewarden import __version__
from pipewarden.advisories import AdvisoryError, load_advisories, load_bundled_advisories
from pipewarden.analysis import (
    AnalysisContext,
    ParseFailure,
    WorkflowAnalysis,
    analyze_file,
    collect,
    workflow_files,
)
from pipewarden.corpus import aggregate_corpus
from pipewarden.metadata import MetadataStore, SnapshotError, load_category_map, load_snapshot, parse_timestamp
from pipewarden.refs import RepositoryRef
from pipewarden.report import FORMATS, render_findings, render_stats
from pipewarden.rules import Severity, evaluate_rules

log = logging.getLogger("pipewarden")

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_PARSE = 3


class UsageError(Exception):
    pass


def _timestamp(text: str) -> datetime:
    try:
        return parse_timestamp(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an RFC 3339 timestamp: {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_analysis_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--metadata", type=Path, help="metadata snapshot JSON (default: none, refs stay unresolved)")
    p.add_argument("--advisories", type=Path, help="advisory db JSON (default: bundled)")
    p.add_argument("--categories", type=Path, help="extra script category map JSON")
    p.add_argument("--as-of", type=_timestamp, help="analysis time, RFC 3339 (default: now)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel workers")
    p.add_argument("--offline", action="store_true", help="never touch the network")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipewarden", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan", help="scan repositories or workflow files")
    scan.add_argument("targets", nargs="*", default=["."], help="repository directories or workflow files")
    _add_analysis_options(scan)
    scan.add_argument("--format", choices=FORMATS, default="json")
    scan.add_argument("--fail-on", choices=[s.value for s in Severity], default="high")
    scan.add_argument(
        "--config-mtime", action="append", default=[], metavar="FILE=TIME",
        help="measure lag for FILE (as reported) up to TIME instead of the analysis time",
    )

    corpus = sub.add_parser("corpus", help="corpus-level statistics")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)
    stats = corpus_sub.add_parser("stats", help="aggregate statistics over a directory of repositories")
    stats.add_argument("corpus_dir", type=Path)
    _add_analysis_options(stats)
    stats.add_argument("--format", choices=("json", "text"), default="json")
    stats.add_argument("--top", type=_positive_int, default=10, help="entries in popularity tables")

    fetch = sub.add_parser("fetch-metadata", help="build a metadata snapshot from the REST API")
    fetch.add_argument("--scripts", nargs="*", default=[], help="owner/repo slugs (space or comma separated)")
    fetch.add_argument("--from-scan", type=Path, help="take slugs from a prior JSON scan report")
    fetch.add_argument("--out", type=Path, required=True, help="snapshot file to create or merge into")
    fetch.add_argument("--api-base", default=None, help="API endpoint (default: https://api.github.com)")
    fetch.add_argument("--jobs", type=_positive_int, default=4)
    fetch.add_argument("--rate", type=float, default=0.0, help="max requests per second, 0 = unlimited")
    fetch.add_argument("--offline", action="store_true")

    sub.add_parser("version", help="print the version")
    return parser


def _context(args: argparse.Namespace) -> AnalysisContext:
    try:
        metadata = load_snapshot(args.metadata) if args.metadata else MetadataStore()
        advisories = load_advisories(args.advisories) if args.advisories else load_bundled_advisories()
        categories = load_category_map()
        if args.categories:
            for slug, cats in load_category_map(args.categories).items():
                categories[slug] = categories.get(slug, frozenset()) | cats
    except (OSError, SnapshotError, AdvisoryError, ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    config_times = {}
    for item in getattr(args, "config_mtime", []):
        file, sep, when = item.rpartition("=")
        if not sep or not file:
            raise UsageError(f"--config-mtime expects FILE=TIME, got {item!r}")
        try:
            config_times[file] = parse_timestamp(when)
        except ValueError:
            raise UsageError(f"bad timestamp in --config-mtime {item!r}") from None
    return AnalysisContext(
        metadata=metadata,
        advisories=advisories,
        categories=categories,
        analysis_time=args.as_of or datetime.now(timezone.utc),
        config_times=config_times,
    )


def _emit(data: bytes, out: Path | None) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        out.write_bytes(data)


def _scan_units(targets: list[str]) -> list[tuple[Path, str]]:
    units = []
    for target in targets:
        path = Path(target)
        if path.is_file():
            units.append((path, path.as_posix()))
        elif path.is_dir():
            units += workflow_files(path, target if len(targets) > 1 else "")
        else:
            raise UsageError(f"no such file or directory: {target}")
    return units


def cmd_scan(args: argparse.Namespace) -> int:
    ctx = _context(args)
    units = _scan_units(args.targets)
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(lambda u: analyze_file(u[0], u[1], ctx), units))
    repo = collect("scan", results)
    for failure in repo.failures:
        log.error("parse error: %s: %s %s", failure.file, failure.kind, failure.detail)
    findings = evaluate_rules([repo], ctx)
    scripts = sorted({ua.usage.ref.slug for ua in repo.usages if isinstance(ua.usage.ref, RepositoryRef)})
    _emit(render_findings(findings, args.format, repo.failures, scripts), args.out)
    if repo.failures:
        return EXIT_PARSE
    threshold = Severity(args.fail_on)
    return EXIT_FINDINGS if any(f.severity >= threshold for f in findings) else EXIT_OK


def _analyze_corpus_repo(repo_dir: Path, ctx: AnalysisContext):
    name = repo_dir.name
    results: list[WorkflowAnalysis | ParseFailure] = [
        analyze_file(path, shown, ctx) for path, shown in workflow_files(repo_dir, name)
    ]
    return collect(name, results)


def cmd_corpus_stats(args: argparse.Namespace) -> int:
    if not args.corpus_dir.is_dir():
        raise UsageError(f"not a directory: {args.corpus_dir}")
    ctx = _context(args)
    repo_dirs = sorted(p for p in args.corpus_dir.iterdir() if p.is_dir() and not p.name.startswith("."))
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        repos = list(pool.map(lambda d: _analyze_corpus_repo(d, ctx), repo_dirs))
    stats = aggregate_corpus(repos)
    if stats.parse_failures:
        log.warning("%d workflow file(s) failed to parse", stats.parse_failures)
    _emit(render_stats(stats, args.format, args.top), args.out)
    return EXIT_OK


def _slugs_from_scan(path: Path) -> list[str]:
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
        return list(report["scripts"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read scripts from scan report {path}: {exc}") from None


def cmd_fetch_metadata(args: argparse.Namespace) -> int:
    from pipewarden.fetch import DEFAULT_API_BASE, TOKEN_ENV, fetch_metadata

    if args.offline:
        raise UsageError("fetch-metadata needs network access; drop --offline")
    slugs = [s for item in args.scripts for s in item.split(",") if s.strip()]
    if args.from_scan:
        slugs += _slugs_from_scan(args.from_scan)
    try:
        store = fetch_metadata(
            slugs,
            args.out,
            api_base=args.api_base or DEFAULT_API_BASE,
            token=os.environ.get(TOKEN_ENV),
            jobs=args.jobs,
            min_interval=1.0 / args.rate if args.rate > 0 else 0.0,
        )
    except OSError as exc:
        log.error("cannot write snapshot %s: %s", args.out, exc)
        return 1
    partial = sorted(slug for slug in store if store[slug].partial)
    for slug in partial:
        log.warning("partial entry for %s: %s", slug, store[slug].fetch_error)
    log.info("snapshot %s holds %d script(s), %d partial", args.out, len(store), len(partial))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        if args.command == "scan":
            return cmd_scan(args)
        if args.command == "corpus":
            return cmd_corpus_stats(args)
        if args.command == "fetch-metadata":
            return cmd_fetch_metadata(args)
        print(__version__)
        return EXIT_OK
    except UsageError as exc:
        print(f"pipewarden: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
