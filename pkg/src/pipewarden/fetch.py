"""Build metadata snapshots from a GitHub-compatible REST API."""

from __future__ import annotations

import base64
import logging
import os
import tempfile
import threading
import time
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import requests

from pipewarden.metadata import (
    MetadataStore,
    Release,
    Runtime,
    ScriptMetadata,
    SnapshotError,
    classify_runtime,
    load_category_map,
    load_snapshot,
    load_verified_creators,
    parse_timestamp,
)

__all__ = ["DEFAULT_API_BASE", "TOKEN_ENV", "FetchError", "GitHubClient", "fetch_metadata", "fetch_script"]

log = logging.getLogger(__name__)

DEFAULT_API_BASE = "https://api.github.com"
TOKEN_ENV = "PIPEWARDEN_TOKEN"
PER_PAGE = 100


class FetchError(Exception):
    def __init__(self, status: int | None, url: str, detail: str = ""):
        self.status = status
        self.url = url
        super().__init__(f"HTTP {status} for {url}" if status else f"{url}: {detail}")


class GitHubClient:
    """Thin REST client with pagination, a global request-rate ceiling and rate-limit backoff."""

    def __init__(
        self,
        api_base: str = DEFAULT_API_BASE,
        token: str | None = None,
        session: requests.Session | None = None,
        min_interval: float = 0.0,
        max_retries: int = 3,
        max_wait: float = 60.0,
        timeout: float = 30.0,
    ):
        self.api_base = api_base.rstrip("/")
        self.session = session or requests.Session()
        self.session.headers.setdefault("Accept", "application/vnd.github+json")
        self.session.headers.setdefault("User-Agent", "pipewarden")
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"
        self.min_interval = min_interval
        self.max_retries = max_retries
        self.max_wait = max_wait
        self.timeout = timeout
        self._lock = threading.Lock()
        self._last_request = 0.0

    def _throttle(self) -> None:
        if self.min_interval <= 0:
            return
        with self._lock:
            wait = self._last_request + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    def _backoff(self, resp: requests.Response) -> float | None:
        if resp.status_code not in (403, 429):
            return None
        retry_after = resp.headers.get("Retry-After")
        if retry_after is not None:
            try:
                return min(float(retry_after), self.max_wait)
            except ValueError:
                return self.max_wait
        if resp.headers.get("X-RateLimit-Remaining") == "0":
            reset = resp.headers.get("X-RateLimit-Reset")
            try:
                return min(max(float(reset) - time.time(), 0.0), self.max_wait) if reset else self.max_wait
            except ValueError:
                return self.max_wait
        return None

    def get(self, url: str, params: dict[str, Any] | None = None) -> requests.Response:
        if not url.startswith(("http://", "https://")):
            url = f"{self.api_base}/{url.lstrip('/')}"
        for attempt in range(self.max_retries + 1):
            self._throttle()
            resp = self.session.get(url, params=params, timeout=self.timeout)
            wait = self._backoff(resp)
            if wait is None or attempt == self.max_retries:
                return resp
            log.warning("rate limited on %s, retrying in %.1fs", url, wait)
            time.sleep(wait)
        return resp

    def get_json(self, url: str, params: dict[str, Any] | None = None) -> Any:
        resp = self.get(url, params)
        if resp.status_code != 200:
            raise FetchError(resp.status_code, resp.url)
        return resp.json()

    def paginate(self, url: str, params: dict[str, Any] | None = None) -> list[Any]:
        items: list[Any] = []
        next_url: str | None = url
        next_params = {"per_page": PER_PAGE, **(params or {})}
        while next_url:
            resp = self.get(next_url, next_params)
            if resp.status_code != 200:
                raise FetchError(resp.status_code, resp.url)
            items.extend(resp.json())
            next_url = resp.links.get("next", {}).get("url")
            # the next link already carries the query string
            next_params = None
        return items


def _manifest_text(client: GitHubClient, owner: str, repo: str, subpath: str | None, ref: str) -> str | None:
    prefix = f"{subpath.strip('/')}/" if subpath else ""
    for name in ("action.yml", "action.yaml"):
        resp = client.get(f"repos/{owner}/{repo}/contents/{prefix}{name}", {"ref": ref} if ref else None)
        if resp.status_code == 404:
            continue
        if resp.status_code != 200:
            raise FetchError(resp.status_code, resp.url)
        body = resp.json()
        if body.get("encoding") == "base64":
            return base64.b64decode(body.get("content", "")).decode("utf-8", errors="replace")
        return body.get("content")
    return None


def fetch_script(
    client: GitHubClient,
    slug: str,
    verified_creators: frozenset[str] = frozenset(),
    categories: dict[str, frozenset[str]] | None = None,
) -> ScriptMetadata:
    """Fetch one script; failures come back as a partial entry instead of raising."""
    parts = slug.split("/")
    cats = (categories or {}).get(slug.lower(), frozenset())
    if len(parts) < 2 or not parts[0] or not parts[1]:
        return ScriptMetadata(slug, categories=cats, fetch_error="not an owner/repo slug")
    owner, repo = parts[0], parts[1]
    subpath = "/".join(parts[2:]) or None
    try:
        info = client.get_json(f"repos/{owner}/{repo}")
        creator = info.get("owner", {}).get("login", owner)
        verified = creator.lower() in verified_creators
        if not verified and info.get("owner", {}).get("type") == "Organization":
            org = client.get(f"orgs/{creator}")
            verified = org.status_code == 200 and bool(org.json().get("is_verified"))
        default_branch = info.get("default_branch", "")

        commit_dates: dict[str, str] = {}
        releases = []
        for tag in client.paginate(f"repos/{owner}/{repo}/tags"):
            sha = tag["commit"]["sha"]
            if sha not in commit_dates:
                commit = client.get_json(f"repos/{owner}/{repo}/commits/{sha}")
                commit_dates[sha] = commit["commit"]["committer"]["date"]
            releases.append(Release(tag["name"], parse_timestamp(commit_dates[sha]), sha))
        branches = frozenset(b["name"] for b in client.paginate(f"repos/{owner}/{repo}/branches"))
        runtime = classify_runtime(_manifest_text(client, owner, repo, subpath, default_branch))
        return ScriptMetadata(
            slug=slug,
            creator=creator,
            verified=verified,
            default_branch=default_branch,
            branches=branches,
            releases=tuple(releases),
            runtime=runtime,
            categories=cats,
        )
    except (FetchError, requests.RequestException, KeyError, TypeError, ValueError) as exc:
        log.warning("fetch failed for %s: %s", slug, exc)
        return ScriptMetadata(slug, creator=owner, runtime=Runtime(), categories=cats, fetch_error=str(exc))


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def fetch_metadata(
    slugs: Iterable[str],
    out_path: str | Path,
    api_base: str = DEFAULT_API_BASE,
    token: str | None = None,
    jobs: int = 4,
    min_interval: float = 0.0,
    client: GitHubClient | None = None,
) -> MetadataStore:
    """Fetch metadata for ``slugs`` and merge it by slug into the snapshot at ``out_path``.

    Only an unwritable output raises; per-script failures are stored as
    partial entries.
    """
    out_path = Path(out_path)
    unique = sorted(set(s.strip() for s in slugs if s.strip()))
    client = client or GitHubClient(api_base, token, min_interval=min_interval)
    verified = load_verified_creators()
    categories = load_category_map()

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        fetched = list(pool.map(lambda s: fetch_script(client, s, verified, categories), unique))

    store = MetadataStore(fetched)
    if out_path.exists():
        try:
            store = load_snapshot(out_path).merged(store)
        except SnapshotError as exc:
            log.warning("existing snapshot %s is unreadable (%s); overwriting", out_path, exc)
    _write_atomic(out_path, store.to_json())
    return store
