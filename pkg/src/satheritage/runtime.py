"""Execution backends: a container runtime driven through its CLI, and plain processes.

The process backend runs solvers found in a local bin directory through
the same generated wrapper the images use, so container-free test runs
exercise the real invocation contract.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import signal
import subprocess
import tempfile
import threading
import time
import uuid
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from . import archive
from .cnf import Status
from .errors import (
    BackendUnavailable,
    BuildFailed,
    DestinationNotWritable,
    ImageUnavailable,
    InputMissing,
    NothingToExtract,
    SatexError,
    SpawnFailure,
)
from .recipes import (
    BIN_DIR,
    WRAPPER_NAME,
    context_source_path,
    era_for,
    generate_build_recipe,
    generate_run_wrapper,
)
from .registry import Registry, SolverSpec, image_name

log = logging.getLogger(__name__)

CONTAINER = "container"
PROCESS = "process"
PREFER_REMOTE = "prefer-remote"
LOCAL_ONLY = "local-only"
PROVENANCE_STUB = "satex-provenance.json"
MEMOUT_MARKERS = ("MemoryError", "std::bad_alloc", "out of memory", "Cannot allocate memory")


def temp_root() -> Path:
    root = os.environ.get("SATHERITAGE_TMPDIR")
    return Path(root) if root else Path(tempfile.gettempdir())


@dataclass(frozen=True)
class ResourceLimits:
    wall_timeout: float
    memory_limit: int | None = None
    cpu_count: int | None = None

    def __post_init__(self):
        if not self.wall_timeout > 0:
            raise ValueError("wall_timeout must be positive")
        if self.memory_limit is not None and self.memory_limit <= 0:
            raise ValueError("memory_limit must be positive")
        if self.cpu_count is not None and self.cpu_count < 1:
            raise ValueError("cpu_count must be at least 1")


@dataclass
class RunOutcome:
    status: Status
    raw_exit_code: int
    wall_time: float
    stdout_path: Path
    stderr_path: Path
    proof_path: Path | None = None
    wall_timeout: float | None = None
    command: list = field(default_factory=list)

    def stdout_text(self) -> str:
        return Path(self.stdout_path).read_text(encoding="utf-8", errors="replace")

    def stderr_text(self) -> str:
        return Path(self.stderr_path).read_text(encoding="utf-8", errors="replace")


@dataclass(frozen=True)
class ImageHandle:
    """A runnable solver: a container image, or a local bin directory plus wrapper."""

    ref: str
    image_id: str
    backend: str
    spec: str = ""
    executable: str = ""
    bin_dir: Path | None = None
    wrapper: Path | None = None
    inputs_digest: str | None = None


# --------------------------------------------------------------------------
# backends


class ProcessBackend:
    kind = PROCESS
    can_build = False
    can_extract = True

    def __init__(self, bin_root=None):
        bin_root = bin_root or os.environ.get("SATHERITAGE_BIN") or "bin"
        self.bin_root = Path(bin_root)

    def available(self) -> bool:
        return True

    def locate(self, spec: SolverSpec, executable: str) -> Path | None:
        for folder in (self.bin_root / f"{spec.name}-{spec.version}", self.bin_root):
            candidate = folder / executable
            if candidate.is_file() and os.access(candidate, os.X_OK):
                return folder
        return None

    def wrapper_dir(self) -> Path:
        return temp_root() / "satex-wrappers"


class ContainerBackend:
    kind = CONTAINER
    can_build = True
    can_extract = True

    def __init__(self, cli=None):
        self.cli = cli or os.environ.get("SATHERITAGE_CONTAINER_CLI") or _default_cli()

    def available(self) -> bool:
        return shutil.which(self.cli) is not None

    def _require(self):
        if not self.available():
            raise BackendUnavailable(f"container runtime {self.cli!r} not found on PATH")

    def command(self, *args, check=False, timeout=None) -> subprocess.CompletedProcess:
        self._require()
        argv = [self.cli, *args]
        log.debug("running %s", argv)
        return subprocess.run(
            argv, capture_output=True, text=True, check=check, timeout=timeout, stdin=subprocess.DEVNULL
        )

    def image_id(self, tag: str) -> str | None:
        result = self.command("image", "inspect", "--format", "{{.Id}}", tag)
        if result.returncode != 0:
            return None
        return result.stdout.strip() or None

    def image_label(self, tag: str, label: str) -> str | None:
        result = self.command("image", "inspect", "--format", f'{{{{index .Config.Labels "{label}"}}}}', tag)
        if result.returncode != 0:
            return None
        value = result.stdout.strip()
        return value if value and value != "<no value>" else None

    def pull(self, tag: str) -> bool:
        return self.command("pull", tag).returncode == 0


def _default_cli() -> str:
    for candidate in ("docker", "podman"):
        if shutil.which(candidate):
            return candidate
    return "docker"


def make_backend(kind=None, bin_root=None, cli=None):
    kind = kind or os.environ.get("SATHERITAGE_BACKEND") or CONTAINER
    if kind == PROCESS:
        return ProcessBackend(bin_root)
    if kind == CONTAINER:
        return ContainerBackend(cli)
    raise BackendUnavailable(f"unknown backend {kind!r} (expected container or process)")


# --------------------------------------------------------------------------
# images

_tag_locks = defaultdict(threading.Lock)
_tag_guard = threading.Lock()


def _tag_lock(tag: str) -> threading.Lock:
    with _tag_guard:
        return _tag_locks[tag]


def build_image(backend, recipe, tag: str, context=None) -> str:
    """Build ``recipe`` under ``tag``; ``context`` maps relative paths to bytes or files."""
    if not backend.can_build:
        raise BackendUnavailable(f"{backend.kind} backend cannot build images (can_build=false)")
    backend._require()
    with _tag_lock(tag), tempfile.TemporaryDirectory(prefix="satex-build-", dir=temp_root()) as tmp:
        ctx = Path(tmp) / "context"
        ctx.mkdir()
        (ctx / "Dockerfile").write_text(recipe.text, encoding="utf-8", newline="\n")
        for name, payload in sorted((context or {}).items()):
            path = ctx / name
            path.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(payload, (bytes, str)):
                path.write_bytes(payload.encode() if isinstance(payload, str) else payload)
            else:
                shutil.copyfile(payload, path)
            if name == WRAPPER_NAME:
                path.chmod(0o755)
        iidfile = Path(tmp) / "iid"
        result = backend.command(
            "build",
            "--tag", tag,
            "--label", f"satex.inputs_digest={recipe.inputs_digest}",
            "--iidfile", str(iidfile),
            str(ctx),
        )
        if result.returncode != 0:
            raise BuildFailed(tag, result.stdout + result.stderr)
        if iidfile.is_file() and iidfile.read_text().strip():
            return iidfile.read_text().strip()
        image = backend.image_id(tag)
        if image is None:
            raise BuildFailed(tag, result.stdout + result.stderr + "\nno image id reported")
        return image


def build_solver(backend, registry: Registry, spec, cache, transport=None, offline=False) -> ImageHandle:
    """Fetch sources (through the cache), render the recipe and build the image."""
    entry = registry.entry(spec)
    era = era_for(registry, entry.spec)
    recipe = generate_build_recipe(entry, era)
    if offline:
        path = archive.cache_path(cache, entry.source.sha256)
        if not path.is_file() or archive.sha256_file(path) != entry.source.sha256:
            raise ImageUnavailable(f"{entry.spec}: sources not cached and network use is disabled")
    else:
        path = archive.fetch(entry.source, cache, transport)
    context = {context_source_path(entry): path, WRAPPER_NAME: generate_run_wrapper(entry)}
    tag = image_name(entry.spec)
    image = build_image(backend, recipe, tag, context)
    return ImageHandle(tag, image, CONTAINER, str(entry.spec), entry.run.executable,
                       inputs_digest=recipe.inputs_digest)


def _recipe_digest(registry, entry) -> str | None:
    try:
        return generate_build_recipe(entry, era_for(registry, entry.spec)).inputs_digest
    except SatexError:
        return None


def local_handle(backend: ProcessBackend, registry: Registry, spec) -> ImageHandle:
    entry = registry.entry(spec)
    exe = entry.run.executable
    folder = backend.locate(entry.spec, exe)
    if folder is None:
        raise ImageUnavailable(f"{entry.spec}: no executable {exe!r} under {backend.bin_root}")
    wrapper = folder / WRAPPER_NAME
    if not (wrapper.is_file() and os.access(wrapper, os.X_OK)):
        text = generate_run_wrapper(entry)
        digest = archive.sha256_bytes(text.encode())[:16]
        wrapper = backend.wrapper_dir() / f"{entry.spec.name}-{entry.spec.version}-{digest}" / WRAPPER_NAME
        if not wrapper.is_file():
            wrapper.parent.mkdir(parents=True, exist_ok=True)
            partial = wrapper.with_name(f".{WRAPPER_NAME}.{uuid.uuid4().hex}")
            partial.write_text(text, encoding="utf-8", newline="\n")
            partial.chmod(0o755)
            os.replace(partial, wrapper)
    return ImageHandle(
        ref=str(folder),
        image_id=str(folder.resolve()),
        backend=PROCESS,
        spec=str(entry.spec),
        executable=exe,
        bin_dir=folder,
        wrapper=wrapper,
        inputs_digest=_recipe_digest(registry, entry),
    )


def fetch_or_build(backend, registry: Registry, spec, policy=PREFER_REMOTE, cache=None, transport=None) -> ImageHandle:
    """Return a usable image: local hit, else pull (prefer-remote), else a local build."""
    if policy not in (PREFER_REMOTE, LOCAL_ONLY):
        raise ValueError(f"unknown policy {policy!r}")
    entry = registry.entry(spec)
    if backend.kind == PROCESS:
        return local_handle(backend, registry, entry.spec)
    tag = image_name(entry.spec)
    digest = _recipe_digest(registry, entry)
    existing = backend.image_id(tag)
    if existing:
        return ImageHandle(tag, existing, CONTAINER, str(entry.spec), entry.run.executable, inputs_digest=digest)
    if policy == PREFER_REMOTE and backend.pull(tag):
        pulled = backend.image_id(tag)
        if pulled:
            return ImageHandle(tag, pulled, CONTAINER, str(entry.spec), entry.run.executable, inputs_digest=digest)
    if cache is None:
        cache = default_cache()
    try:
        return build_solver(backend, registry, entry.spec, cache, transport, offline=policy == LOCAL_ONLY)
    except (ImageUnavailable, BackendUnavailable):
        raise
    except SatexError as exc:
        raise ImageUnavailable(f"{entry.spec}: cannot pull or build ({exc})") from exc


def default_cache() -> Path:
    root = os.environ.get("SATHERITAGE_CACHE")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "satex" / "sources"


# --------------------------------------------------------------------------
# running


def _limit_child(limits: ResourceLimits):
    def apply():
        import resource

        if limits.memory_limit:
            resource.setrlimit(resource.RLIMIT_AS, (limits.memory_limit, limits.memory_limit))
        if limits.cpu_count and hasattr(os, "sched_setaffinity"):
            cpus = sorted(os.sched_getaffinity(0))[: limits.cpu_count]
            os.sched_setaffinity(0, cpus)

    return apply


def _kill_group(pgid: int):
    try:
        os.killpg(pgid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def run_solver(backend, target, input_path, proof_out=None, limits=None, workdir=None, raw_args=None) -> RunOutcome:
    """Run one solver on one instance and capture everything to files.

    ``target`` is an :class:`ImageHandle` or, for the process backend, a
    path to an executable taking ``INPUT [PROOF]``. With ``raw_args`` the
    wrapper is bypassed and the arguments go verbatim to the solver.
    The returned status is UNKNOWN unless a limit was hit; see
    :func:`satheritage.cnf.normalize_outcome`.
    """
    limits = limits or ResourceLimits(wall_timeout=3600.0)
    input_path = Path(input_path).absolute() if input_path is not None else None
    if raw_args is None and (input_path is None or not input_path.is_file()):
        raise InputMissing(f"input file {input_path} does not exist")
    proof_out = Path(proof_out).absolute() if proof_out is not None else None
    if proof_out is not None and not proof_out.parent.is_dir():
        raise InputMissing(f"proof directory {proof_out.parent} does not exist")
    if workdir is None:
        temp_root().mkdir(parents=True, exist_ok=True)
        workdir = Path(tempfile.mkdtemp(prefix="satex-run-", dir=temp_root()))
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    scratch = workdir / "tmp"
    scratch.mkdir(exist_ok=True)
    stdout_path = workdir / "stdout.txt"
    stderr_path = workdir / "stderr.txt"

    container_name = None
    env = dict(os.environ)
    env["TMPDIR"] = str(scratch)
    preexec = None
    if backend.kind == PROCESS:
        argv, env = _process_argv(target, input_path, proof_out, raw_args, env)
        preexec = _limit_child(limits)
    else:
        container_name = f"satex-{uuid.uuid4().hex[:12]}"
        argv = _container_argv(backend, target, input_path, proof_out, raw_args, limits, container_name)

    with open(stdout_path, "wb") as out, open(stderr_path, "wb") as err:
        start = time.monotonic()
        try:
            child = subprocess.Popen(
                argv, stdout=out, stderr=err, stdin=subprocess.DEVNULL, env=env,
                cwd=str(workdir), start_new_session=True, preexec_fn=preexec,
            )
        except OSError as exc:
            raise SpawnFailure(f"cannot start {argv[0]}: {exc}") from exc
        status = Status.UNKNOWN
        try:
            code = child.wait(timeout=limits.wall_timeout)
        except subprocess.TimeoutExpired:
            status = Status.TIMEOUT
            _kill_group(child.pid)
            if container_name:
                subprocess.run([backend.cli, "kill", container_name], capture_output=True)
            code = child.wait()
        wall = time.monotonic() - start
        if status != Status.TIMEOUT and wall >= limits.wall_timeout:
            status = Status.TIMEOUT
        # stragglers left in the session after a normal exit
        _kill_group(child.pid)

    if status == Status.UNKNOWN and limits.memory_limit:
        tail = stderr_path.read_text(errors="replace")[-4096:]
        if any(marker in tail for marker in MEMOUT_MARKERS):
            status = Status.MEMOUT
    proof_path = proof_out if proof_out is not None and proof_out.exists() else None
    return RunOutcome(status, code, wall, stdout_path, stderr_path, proof_path, limits.wall_timeout, argv)


def _process_argv(target, input_path, proof_out, raw_args, env):
    if isinstance(target, ImageHandle):
        if target.bin_dir is not None:
            env["PATH"] = f"{Path(target.bin_dir).absolute()}{os.pathsep}{env.get('PATH', '')}"
        if raw_args is not None:
            exe = Path(target.bin_dir) / target.executable
            return [str(exe.absolute()), *raw_args], env
        program = str(Path(target.wrapper).absolute())
    else:
        program = str(Path(target).absolute())
        if raw_args is not None:
            return [program, *raw_args], env
    argv = [program, str(input_path)]
    if proof_out is not None:
        argv.append(str(proof_out))
    return argv, env


def _container_argv(backend, target, input_path, proof_out, raw_args, limits, name):
    ref = target.ref if isinstance(target, ImageHandle) else str(target)
    argv = [backend.cli, "run", "--rm", "--name", name, "--network", "none"]
    if limits.memory_limit:
        argv += ["--memory", str(limits.memory_limit)]
    if limits.cpu_count:
        argv += ["--cpus", str(limits.cpu_count)]
    if raw_args is not None:
        exe = target.executable if isinstance(target, ImageHandle) else ""
        if exe:
            argv += ["--entrypoint", f"{BIN_DIR}/{exe}"]
        return argv + [ref, *raw_args]
    inner_input = f"/satex/in/{input_path.name}"
    argv += ["-v", f"{input_path}:{inner_input}:ro"]
    tail = [inner_input]
    if proof_out is not None:
        argv += ["-v", f"{proof_out.parent}:/satex/out"]
        tail.append(f"/satex/out/{proof_out.name}")
    return argv + [ref, *tail]


# --------------------------------------------------------------------------
# extraction


def _prepare_dest(dest) -> Path:
    dest = Path(dest)
    try:
        dest.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DestinationNotWritable(f"cannot create {dest}: {exc}") from exc
    if not dest.is_dir() or not os.access(dest, os.W_OK):
        raise DestinationNotWritable(f"{dest} is not a writable directory")
    return dest


def extract_binary(backend, registry: Registry, spec, dest, handle=None) -> list:
    """Copy the solver executable and wrapper out of an image, plus a provenance stub."""
    dest = _prepare_dest(dest)
    entry = registry.entry(spec)
    if not backend.can_extract:
        raise BackendUnavailable(f"{backend.kind} backend cannot extract")
    if handle is None:
        handle = fetch_or_build(backend, registry, entry.spec, policy=LOCAL_ONLY)
    exe = entry.run.executable
    names = [exe, WRAPPER_NAME]
    with tempfile.TemporaryDirectory(prefix="satex-extract-", dir=temp_root()) as tmp:
        staged = Path(tmp)
        if backend.kind == PROCESS:
            source = Path(handle.bin_dir) / exe
            if not source.is_file():
                raise NothingToExtract(f"{entry.spec}: {source} missing")
            shutil.copyfile(source, staged / exe)
            shutil.copyfile(handle.wrapper, staged / WRAPPER_NAME)
        else:
            _container_copy(backend, handle, names, staged)
        for name in names:
            (staged / name).chmod(0o755)
        stub = {
            "spec": str(entry.spec),
            "image": image_name(entry.spec),
            "image_id": handle.image_id if backend.kind == CONTAINER else None,
            "inputs_digest": handle.inputs_digest,
            "source": {"url": entry.source.url, "sha256": entry.source.sha256, "doi": entry.source.doi},
            "files": {name: archive.sha256_file(staged / name) for name in names},
        }
        (staged / PROVENANCE_STUB).write_text(json.dumps(stub, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written = []
        for name in names + [PROVENANCE_STUB]:
            target = dest / name
            shutil.copyfile(staged / name, target)
            shutil.copymode(staged / name, target)
            written.append(target)
    return written


def _container_copy(backend, handle, names, staged: Path):
    name = f"satex-extract-{uuid.uuid4().hex[:12]}"
    created = backend.command("create", "--name", name, handle.ref)
    if created.returncode != 0:
        raise ImageUnavailable(f"{handle.ref}: {created.stderr.strip()}")
    try:
        for item in names:
            copied = backend.command("cp", f"{name}:{BIN_DIR}/{item}", str(staged / item))
            if copied.returncode != 0 or not (staged / item).is_file():
                raise NothingToExtract(f"{handle.ref}: {BIN_DIR}/{item} not found in image")
    finally:
        backend.command("rm", "-f", name)
