import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
AS_OF = "2022-06-01T00:00:00Z"

_acceptance: dict[str, str] = {}


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def _route_key(raw_path: str) -> str:
    parts = urlsplit(raw_path)
    page = parse_qs(parts.query).get("page", ["1"])[0]
    return parts.path if page == "1" else f"{parts.path}?page={page}"


class ReplayServer:
    """Serves canned API responses from ``fixtures/api/routes.json`` and logs requests."""

    def __init__(self, routes: dict):
        self.routes = routes
        self.requests: list[str] = []
        owner = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                owner.requests.append(self.path)
                route = owner.routes.get(_route_key(self.path))
                status = route.get("status", 200) if route else 404
                body = json.dumps(route["body"] if route else {"message": "Not Found"}).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                for name, value in (route or {}).get("headers", {}).items():
                    self.send_header(name, value.replace("{base}", owner.base))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.base = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def api_server():
    routes = json.loads((FIXTURES / "api" / "routes.json").read_text())
    with ReplayServer(routes) as server:
        yield server


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion, summarized at the end")


def pytest_runtest_logreport(report):
    label = report.user_properties and dict(report.user_properties).get("acceptance")
    if not label:
        return
    if report.when == "call" or report.failed:
        if report.failed or label not in _acceptance:
            _acceptance[label] = "FAIL" if report.failed else "PASS"


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("acceptance")
    if marker:
        item.user_properties.append(("acceptance", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_acceptance, key=lambda s: int(s.split()[0][2:])):
        terminalreporter.write_line(f"{_acceptance[label]}  {label}")
