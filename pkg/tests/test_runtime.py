import json
import os
import time
from pathlib import Path

import pytest

from satheritage.archive import MemoryTransport, sha256_file
from satheritage.cnf import Status
from satheritage.errors import (
    BackendUnavailable,
    BuildFailed,
    DestinationNotWritable,
    ImageUnavailable,
    InputMissing,
)
from satheritage.recipes import recipe_for
from satheritage.runtime import (
    LOCAL_ONLY,
    PREFER_REMOTE,
    PROVENANCE_STUB,
    ContainerBackend,
    ImageHandle,
    ProcessBackend,
    ResourceLimits,
    build_image,
    build_solver,
    extract_binary,
    fetch_or_build,
    make_backend,
    run_solver,
)

from conftest import FIXTURES, install_scripts


def stub(tmp_path, name, body):
    path = tmp_path / name
    path.write_text("#!/bin/sh\n" + body)
    path.chmod(0o755)
    return path


def process_gone(pid, wait=2.0):
    deadline = time.monotonic() + wait
    while time.monotonic() < deadline:
        try:
            state = Path(f"/proc/{pid}/stat").read_text().split(")")[-1].split()[0]
        except FileNotFoundError:
            return True
        if state == "Z":
            return True
        time.sleep(0.05)
    return False


def test_stub_output_is_captured(tmp_path):
    exe = stub(tmp_path, "solver", 'echo "s SATISFIABLE"\nexit 0\n')
    cnf = tmp_path / "f.cnf"
    cnf.write_text("p cnf 0 0\n")
    outcome = run_solver(ProcessBackend(tmp_path), exe, cnf, workdir=tmp_path / "w")
    assert outcome.raw_exit_code == 0
    assert outcome.status == Status.UNKNOWN
    assert outcome.stdout_text() == "s SATISFIABLE\n"
    assert outcome.proof_path is None


def test_timeout_kills_the_whole_tree(backend, registry, instances, tmp_path):
    handle = fetch_or_build(backend, registry, "sleeper:2019")
    limits = ResourceLimits(wall_timeout=0.5)
    outcome = run_solver(backend, handle, instances["sat_chain.cnf"], limits=limits, workdir=tmp_path)
    assert outcome.status == Status.TIMEOUT
    assert limits.wall_timeout <= outcome.wall_time <= limits.wall_timeout + 0.5
    pid = int((tmp_path / "sleeper.pids").read_text())
    assert process_gone(pid)


def test_proof_file_is_reported(backend, registry, instances, tmp_path):
    handle = fetch_or_build(backend, registry, "toy:2000")
    proof = tmp_path / "proof.drup"
    outcome = run_solver(backend, handle, instances["unsat_php32.cnf"], proof, workdir=tmp_path / "w")
    assert outcome.raw_exit_code == 20
    assert outcome.proof_path == proof and proof.stat().st_size > 0


def test_gzipped_input_through_wrapper(backend, registry, instances, tmp_path):
    handle = fetch_or_build(backend, registry, "toy:2000")
    outcome = run_solver(backend, handle, instances["sat_wide.cnf.gz"], workdir=tmp_path)
    assert outcome.raw_exit_code == 10
    assert "s SATISFIABLE" in outcome.stdout_text()


def test_raw_args_bypass_wrapper(backend, registry, tmp_path):
    handle = fetch_or_build(backend, registry, "toy:2000")
    outcome = run_solver(backend, handle, None, raw_args=["--help", "two words"], workdir=tmp_path)
    assert outcome.raw_exit_code == 0
    assert "toy fixture solver" in outcome.stdout_text()


def test_missing_input(backend, registry, tmp_path):
    handle = fetch_or_build(backend, registry, "toy:2000")
    with pytest.raises(InputMissing):
        run_solver(backend, handle, tmp_path / "absent.cnf")


def test_process_backend_cannot_build(registry):
    with pytest.raises(BackendUnavailable):
        build_image(ProcessBackend("."), recipe_for(registry, "toy:2000"), "satex/toy:2000")


def test_process_backend_missing_executable(registry, tmp_path):
    with pytest.raises(ImageUnavailable):
        fetch_or_build(ProcessBackend(tmp_path), registry, "toy:2000")


def test_versioned_bin_folder_takes_precedence(registry, tmp_path):
    flat = install_scripts(FIXTURES / "bin", tmp_path / "flat")
    versioned = tmp_path / "flat" / "toy-2000"
    versioned.mkdir()
    (versioned / "toy").write_bytes((flat / "toy").read_bytes())
    (versioned / "toy").chmod(0o755)
    handle = fetch_or_build(ProcessBackend(flat), registry, "toy:2000")
    assert Path(handle.bin_dir) == versioned


def test_extract_process_backend(backend, registry, tmp_path):
    first = extract_binary(backend, registry, "toy:2000", tmp_path / "a")
    second = extract_binary(backend, registry, "toy:2000", tmp_path / "a")
    assert [p.name for p in first] == ["toy", "satex-run", PROVENANCE_STUB]
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]
    stub_doc = json.loads((tmp_path / "a" / PROVENANCE_STUB).read_text())
    assert stub_doc["image"] == "satex/toy:2000"
    assert stub_doc["files"]["toy"] == sha256_file(tmp_path / "a" / "toy")


def test_extract_unwritable_destination(backend, registry, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DestinationNotWritable):
        extract_binary(backend, registry, "toy:2000", blocker / "sub")


def test_make_backend():
    assert make_backend("process", "x").kind == "process"
    assert make_backend("container", cli="docker").kind == "container"
    with pytest.raises(BackendUnavailable):
        make_backend("vm")


# container backend against a recording stand-in CLI



def test_build_tags_image_and_labels_digest(fake_docker, registry, source_blobs, tmp_path):
    transport = MemoryTransport(source_blobs)
    handle = build_solver(fake_docker.backend, registry, "toy:2000", tmp_path / "cache", transport)
    assert handle.ref == "satex/toy:2000"
    assert handle.image_id.startswith("sha256:")
    digest = recipe_for(registry, "toy:2000").inputs_digest
    assert fake_docker.backend.image_label("satex/toy:2000", "satex.inputs_digest") == digest
    build = [c for c in fake_docker.calls() if c[0] == "build"][0]
    assert build[build.index("--tag") + 1] == "satex/toy:2000"
    # rebuilding an unchanged recipe records the same digest and image
    again = build_solver(fake_docker.backend, registry, "toy:2000", tmp_path / "cache", transport)
    assert again.image_id == handle.image_id and transport.calls == 1


def test_build_context_holds_verified_sources(fake_docker, registry, source_blobs, tmp_path):
    build_solver(fake_docker.backend, registry, "cadical:2019", tmp_path / "cache", MemoryTransport(source_blobs))
    context = tmp_path / "docker-state" / "images" / "satex_cadical__2019" / "context"
    entry = registry.entry("cadical:2019")
    assert sha256_file(context / "sources" / entry.source.sha256) == entry.source.sha256
    assert os.access(context / "satex-run", os.X_OK)
    assert (context / "Dockerfile").read_text() == recipe_for(registry, "cadical:2019").text


def test_build_failure_carries_log(fake_docker, registry, source_blobs, tmp_path, monkeypatch):
    monkeypatch.setenv("FAKE_DOCKER_FAIL_BUILD", "satex/toy:2000")
    with pytest.raises(BuildFailed) as info:
        build_solver(fake_docker.backend, registry, "toy:2000", tmp_path / "cache", MemoryTransport(source_blobs))
    assert "Error 2" in info.value.log


def test_fetch_or_build_policies(fake_docker, registry, source_blobs, tmp_path, monkeypatch):
    backend = fake_docker.backend
    # absent locally, no sources cached, local-only: nothing to do
    with pytest.raises(ImageUnavailable):
        fetch_or_build(backend, registry, "toy:2000", LOCAL_ONLY, cache=tmp_path / "empty")
    # prefer-remote with a successful pull
    monkeypatch.setenv("FAKE_DOCKER_REMOTE", "satex/toy:2000")
    pulled = fetch_or_build(backend, registry, "toy:2000", PREFER_REMOTE, cache=tmp_path / "empty")
    assert ["pull", "satex/toy:2000"] in fake_docker.calls()
    # now present locally: no further pull
    before = len(fake_docker.calls())
    hit = fetch_or_build(backend, registry, "toy:2000", LOCAL_ONLY)
    assert hit.image_id == pulled.image_id
    assert not any(c[0] in ("pull", "build") for c in fake_docker.calls()[before:])


def test_prefer_remote_falls_back_to_build(fake_docker, registry, source_blobs, tmp_path):
    handle = fetch_or_build(fake_docker.backend, registry, "liar:2000", PREFER_REMOTE,
                            cache=tmp_path / "cache", transport=MemoryTransport(source_blobs))
    kinds = [c[0] for c in fake_docker.calls()]
    assert "pull" in kinds and "build" in kinds
    assert handle.ref == "satex/liar:2000"


def test_container_extract(fake_docker, registry, source_blobs, tmp_path):
    build_solver(fake_docker.backend, registry, "toy:2000", tmp_path / "cache", MemoryTransport(source_blobs))
    files = extract_binary(fake_docker.backend, registry, "toy:2000", tmp_path / "out")
    assert sorted(p.name for p in files) == sorted(["toy", "satex-run", PROVENANCE_STUB])
    stub_doc = json.loads((tmp_path / "out" / PROVENANCE_STUB).read_text())
    assert stub_doc["image_id"].startswith("sha256:")
    kinds = [c[0] for c in fake_docker.calls()]
    assert kinds.count("cp") == 2 and "rm" in kinds


def test_container_run_argv(fake_docker, registry, instances, tmp_path):
    # the stand-in has no "run"; check the argv the backend would use
    handle = ImageHandle("satex/toy:2000", "sha256:0", "container", "toy:2000", "toy")
    outcome = run_solver(fake_docker.backend, handle, instances["sat_chain.cnf"], tmp_path / "p.drup",
                         ResourceLimits(5, memory_limit=1 << 30, cpu_count=1), workdir=tmp_path / "w")
    argv = outcome.command
    assert argv[1:3] == ["run", "--rm"]
    assert ["--network", "none"] == argv[argv.index("--network"):argv.index("--network") + 2]
    assert argv[argv.index("--memory") + 1] == str(1 << 30)
    assert argv[-3:] == ["satex/toy:2000", "/satex/in/sat_chain.cnf", "/satex/out/p.drup"]


def test_missing_container_cli(registry):
    backend = ContainerBackend("/nonexistent/docker")
    assert not backend.available()
    with pytest.raises(BackendUnavailable):
        backend.image_id("satex/toy:2000")
