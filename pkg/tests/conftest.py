import gzip
import json
import os
import shutil
import stat
import sys
from pathlib import Path

import pytest

from satheritage.cnf import CnfFormula, pigeonhole, serialize_dimacs
from satheritage.archive import cache_path
from satheritage.registry import load_registry
from satheritage.runtime import ContainerBackend, ProcessBackend

FIXTURES = Path(__file__).parent / "fixtures"
REGISTRY_DIR = FIXTURES / "registry"
GOLDEN = Path(__file__).parent / "golden"


def install_scripts(source: Path, dest: Path) -> Path:
    """Copy fixture scripts, pointing their shebang at the running interpreter."""
    dest.mkdir(parents=True, exist_ok=True)
    for script in sorted(source.iterdir()):
        lines = script.read_text().splitlines(keepends=True)
        if lines and lines[0].startswith("#!") and "python" in lines[0]:
            lines[0] = f"#!{sys.executable}\n"
        target = dest / script.name
        target.write_text("".join(lines))
        target.chmod(target.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return dest


@pytest.fixture(scope="session", autouse=True)
def _private_tmp(tmp_path_factory):
    root = tmp_path_factory.mktemp("satex-tmp")
    old = os.environ.get("SATHERITAGE_TMPDIR")
    os.environ["SATHERITAGE_TMPDIR"] = str(root)
    yield root
    if old is None:
        os.environ.pop("SATHERITAGE_TMPDIR", None)
    else:
        os.environ["SATHERITAGE_TMPDIR"] = old


@pytest.fixture(scope="session")
def registry():
    return load_registry(REGISTRY_DIR)


@pytest.fixture(scope="session")
def bin_dir(tmp_path_factory):
    return install_scripts(FIXTURES / "bin", tmp_path_factory.mktemp("bin"))


@pytest.fixture(scope="session")
def backend(bin_dir):
    return ProcessBackend(bin_dir)


# Six tiny instances; ground truth is asserted against the oracle in the tests.
TINY = {
    "sat_chain.cnf": CnfFormula(3, [[1, -2], [2, -3], [3]]),
    "sat_pair.cnf": CnfFormula(2, [[1, -2], [2]]),
    "sat_wide.cnf.gz": CnfFormula(4, [[1, 2, 3, 4], [-1, -2], [-3, -4], [1, 3]]),
    "unsat_units.cnf": CnfFormula(1, [[1], [-1]]),
    "unsat_php32.cnf": pigeonhole(3, 2),
    "unsat_xor.cnf": CnfFormula(2, [[1, 2], [-1, 2], [1, -2], [-1, -2]]),
}


def write_instances(folder: Path) -> dict:
    folder.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, formula in TINY.items():
        data = serialize_dimacs(formula).encode()
        if name.endswith(".gz"):
            data = gzip.compress(data, mtime=0)
        (folder / name).write_bytes(data)
        paths[name] = folder / name
    return paths


@pytest.fixture(scope="session")
def instances(tmp_path_factory):
    return write_instances(tmp_path_factory.mktemp("instances"))


@pytest.fixture
def registry_copy(tmp_path):
    target = tmp_path / "registry"
    shutil.copytree(REGISTRY_DIR, target)
    return target


@pytest.fixture(scope="session")
def source_blobs(registry):
    """Fixture archives keyed by their registry URL."""
    return {
        entry.source.url: (FIXTURES / "sources" / entry.source.url.rsplit("/", 1)[1]).read_bytes()
        for entry in registry.entries()
    }


@pytest.fixture
def primed_cache(tmp_path, registry, source_blobs):
    cache = tmp_path / "cache"
    cache.mkdir()
    for entry in registry.entries():
        cache_path(cache, entry.source.sha256).write_bytes(source_blobs[entry.source.url])
    return cache


class FakeDocker:
    def __init__(self, script: Path, state: Path):
        self.cli = str(script)
        self.state = state
        self.backend = ContainerBackend(self.cli)

    def calls(self):
        path = self.state / "calls.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture
def fake_docker(tmp_path, monkeypatch):
    """A recording stand-in for the container CLI (no real images involved)."""
    tools = tmp_path / "tools"
    tools.mkdir()
    lines = (FIXTURES / "fake_docker").read_text().splitlines(keepends=True)
    lines[0] = f"#!{sys.executable}\n"
    script = tools / "docker"
    script.write_text("".join(lines))
    script.chmod(0o755)
    state = tmp_path / "docker-state"
    monkeypatch.setenv("FAKE_DOCKER_STATE", str(state))
    monkeypatch.delenv("FAKE_DOCKER_REMOTE", raising=False)
    monkeypatch.delenv("FAKE_DOCKER_FAIL_BUILD", raising=False)
    return FakeDocker(script, state)


# acceptance report: one line per criterion, printed after the run
ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    criterion = getattr(report, "criterion", None)
    for key, value in report.user_properties:
        if key == "criterion":
            criterion = value
    if criterion is None:
        return
    number, title, budget = criterion
    if report.when == "call" or (report.when == "setup" and (report.failed or report.skipped)):
        if report.passed:
            outcome = "PASS"
        elif report.skipped:
            outcome = "SKIP"
        else:
            outcome = "FAIL"
        detail = f"{report.duration:.2f}s (budget {budget:g}s)"
        if report.skipped and isinstance(report.longrepr, tuple):
            detail += f"; {report.longrepr[2]}"
        ACCEPTANCE[number] = f"{outcome}  criterion {number}: {title}  [{detail}]"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])


@pytest.fixture(autouse=True)
def _tag_criterion(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", tuple(marker.args)))
    yield
