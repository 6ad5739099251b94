import json
import shutil

import pytest

from pipewarden import __version__
from pipewarden.cli import main
from pipewarden.metadata import load_snapshot

from conftest import AS_OF


def run(capsysbinary, *argv):
    code = main(list(argv))
    out, err = capsysbinary.readouterr()
    return code, out, err.decode()


@pytest.fixture
def gajira_repo(tmp_path, fixtures):
    repo = tmp_path / "gajira"
    shutil.copytree(fixtures / "corpus15" / "v05", repo)
    return repo


def test_version(capsysbinary):
    code, out, _ = run(capsysbinary, "version")
    assert code == 0 and out.decode().strip() == __version__


def test_scan_vulnerable_repo_fails(capsysbinary, gajira_repo, fixtures):
    code, out, _ = run(
        capsysbinary, "scan", str(gajira_repo), "--metadata", str(fixtures / "snapshots" / "vulnerable15.json"),
        "--as-of", AS_OF, "--fail-on", "high", "--offline",
    )
    doc = json.loads(out)
    assert code == 1
    assert doc["summary"]["by_severity"]["critical"] == 1
    (crit,) = [f for f in doc["findings"] if f["severity"] == "critical"]
    assert crit["rule_id"] == "R-VULN-KNOWN"
    assert crit["location"]["file"] == ".github/workflows/ci.yml"


def test_fail_on_threshold(capsysbinary, gajira_repo, fixtures):
    meta = str(fixtures / "snapshots" / "vulnerable15.json")
    code, _, _ = run(capsysbinary, "scan", str(gajira_repo), "--metadata", meta, "--as-of", AS_OF,
                     "--fail-on", "critical")
    assert code == 1
    code, _, _ = run(capsysbinary, "scan", str(gajira_repo), "--as-of", AS_OF, "--fail-on", "low")
    assert code == 1  # mutable refs are low
    code, _, _ = run(capsysbinary, "scan", str(gajira_repo), "--as-of", AS_OF)
    assert code == 0  # without metadata nothing reaches high


def test_scan_empty_repo(capsysbinary, tmp_path):
    code, out, err = run(capsysbinary, "scan", str(tmp_path), "--as-of", AS_OF)
    assert code == 0
    assert json.loads(out)["findings"] == []
    assert err == ""


def test_scan_super_linter_text(capsysbinary, fixtures):
    code, out, _ = run(capsysbinary, "scan", str(fixtures / "workflows" / "super_linter.yml"), "--format", "text")
    text = out.decode()
    assert code == 0
    assert text.count("R-REF-MUTABLE") == 2 and "R-CRED-COUNT" in text
    assert text.endswith("3 finding(s) (info=1, low=2)\n")


@pytest.mark.parametrize(
    "argv",
    [
        ["scan", ".", "--format", "bogus"],
        ["scan", "/no/such/path"],
        ["scan", ".", "--jobs", "0"],
        ["scan", ".", "--as-of", "yesterday"],
        ["scan", ".", "--metadata", "/no/such/snapshot.json"],
        ["scan", ".", "--config-mtime", "nonsense"],
        ["bogus"],
        [],
    ],
)
def test_usage_errors(capsysbinary, argv):
    code, out, _ = run(capsysbinary, *argv)
    assert code == 2
    assert out == b""


def test_parse_error_exit_and_diagnostics(capsysbinary, caplog, fixtures):
    code, out, _ = run(capsysbinary, "scan", str(fixtures / "corpus_malformed" / "broken"), "--as-of", AS_OF,
                       "--fail-on", "info")
    assert code == 3
    doc = json.loads(out)
    assert doc["diagnostics"] == [{"detail": doc["diagnostics"][0]["detail"], "file": ".github/workflows/ci.yml",
                                   "kind": "MalformedYaml"}]
    assert "parse error" in caplog.text


def test_multiple_targets_prefix_paths(capsysbinary, fixtures):
    a, b = fixtures / "corpus10" / "r01", fixtures / "corpus10" / "r02"
    _, out, _ = run(capsysbinary, "scan", str(a), str(b), "--as-of", AS_OF)
    files = {f["location"]["file"] for f in json.loads(out)["findings"]}
    assert files == {f"{a}/.github/workflows/ci.yml", f"{b}/.github/workflows/ci.yml"}


def test_config_mtime_overrides_lag(capsysbinary, fixtures):
    repo = fixtures / "corpus10" / "r06"
    meta = str(fixtures / "snapshots" / "corpus10.json")
    _, out, _ = run(capsysbinary, "scan", str(repo), "--metadata", meta, "--as-of", AS_OF)
    (stale,) = [f for f in json.loads(out)["findings"] if f["rule_id"] == "R-STALE"]
    assert stale["evidence"]["lag_days"] == "730"
    _, out, _ = run(capsysbinary, "scan", str(repo), "--metadata", meta, "--as-of", AS_OF,
                    "--config-mtime", ".github/workflows/ci.yml=2020-10-01T00:00:00Z")
    (stale,) = [f for f in json.loads(out)["findings"] if f["rule_id"] == "R-STALE"]
    assert stale["evidence"]["lag_days"] == "122"


def test_scan_writes_out_file(capsysbinary, tmp_path, fixtures):
    target = tmp_path / "report.sarif"
    code, out, _ = run(capsysbinary, "scan", str(fixtures / "workflows" / "super_linter.yml"), "--format", "sarif",
                       "--out", str(target))
    assert code == 0 and out == b""
    assert json.loads(target.read_text())["version"] == "2.1.0"


def test_corpus_stats_golden(capsysbinary, fixtures):
    code, out, _ = run(capsysbinary, "corpus", "stats", str(fixtures / "corpus10"),
                       "--metadata", str(fixtures / "snapshots" / "corpus10.json"), "--as-of", AS_OF, "--offline")
    assert code == 0
    assert out == (fixtures / "corpus10_stats.json").read_bytes()


def test_corpus_stats_empty_dir(capsysbinary, tmp_path):
    code, out, _ = run(capsysbinary, "corpus", "stats", str(tmp_path), "--as-of", AS_OF)
    stats = json.loads(out)["stats"]
    assert code == 0
    assert stats["repo_count"] == stats["usage_count"] == stats["parse_failures"] == 0


def test_corpus_stats_malformed(capsysbinary, caplog, fixtures):
    code, out, _ = run(capsysbinary, "corpus", "stats", str(fixtures / "corpus_malformed"), "--as-of", AS_OF)
    assert code == 0
    assert json.loads(out)["stats"]["parse_failures"] == 1
    assert "failed to parse" in caplog.text


def test_corpus_stats_text_and_usage(capsysbinary, tmp_path):
    code, out, _ = run(capsysbinary, "corpus", "stats", str(tmp_path), "--format", "text")
    assert code == 0 and b"repo_count: 0" in out
    assert run(capsysbinary, "corpus", "stats", str(tmp_path / "missing"))[0] == 2
    assert run(capsysbinary, "corpus", "stats", str(tmp_path), "--format", "sarif")[0] == 2


def test_fetch_metadata_replay(capsysbinary, tmp_path, api_server):
    out = tmp_path / "snap.json"
    code, stdout, _ = run(capsysbinary, "fetch-metadata", "--scripts", "actions/checkout",
                          "--api-base", api_server.base, "--out", str(out))
    assert code == 0 and stdout == b""
    meta = load_snapshot(out)["actions/checkout"]
    assert [r.tag for r in meta.releases] == ["v1", "v2", "v3"]
    assert meta.release("v2").commit == "b" * 40
    assert meta.verified and meta.creator == "actions"
    assert meta.branches == {"main", "releases/v2"}
    assert (meta.runtime.kind.value, meta.runtime.detail) == ("NodeJs", "16")
    assert any("page=2" in p for p in api_server.requests)


def test_fetch_metadata_partial_on_404(capsysbinary, caplog, tmp_path, api_server):
    out = tmp_path / "snap.json"
    code, _, _ = run(capsysbinary, "fetch-metadata", "--scripts", "actions/checkout,octo-org/no-such-action",
                     "--api-base", api_server.base, "--out", str(out))
    assert code == 0
    store = load_snapshot(out)
    assert not store["actions/checkout"].partial
    assert "404" in store["octo-org/no-such-action"].fetch_error
    assert "partial entry" in caplog.text


def test_fetch_metadata_empty_and_errors(capsysbinary, tmp_path, api_server):
    out = tmp_path / "snap.json"
    assert run(capsysbinary, "fetch-metadata", "--out", str(out), "--api-base", api_server.base)[0] == 0
    assert out.read_text() == "{}\n"
    assert api_server.requests == []
    assert run(capsysbinary, "fetch-metadata", "--scripts", "actions/checkout")[0] == 2
    assert run(capsysbinary, "fetch-metadata", "--offline", "--out", str(out))[0] == 2


def test_fetch_metadata_from_scan(capsysbinary, tmp_path, fixtures, api_server):
    report = tmp_path / "scan.json"
    run(capsysbinary, "scan", str(fixtures / "workflows" / "super_linter.yml"), "--out", str(report))
    assert json.loads(report.read_text())["scripts"] == ["actions/checkout", "github/super-linter"]
    out = tmp_path / "snap.json"
    code, _, _ = run(capsysbinary, "fetch-metadata", "--from-scan", str(report),
                     "--api-base", api_server.base, "--out", str(out))
    store = load_snapshot(out)
    assert code == 0
    assert set(store) == {"actions/checkout", "github/super-linter"}
    assert store["github/super-linter"].partial


def test_fetch_metadata_unwritable(capsysbinary, tmp_path, api_server):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, _ = run(capsysbinary, "fetch-metadata", "--api-base", api_server.base, "--out", str(blocker / "x.json"))
    assert code == 1
