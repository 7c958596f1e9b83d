"""Declarative solver catalog: loading, validation and pattern queries.

On-disk layout::

    <root>/
      eras.json             optional; extends/overrides the default era table
      <set_id>/
        setup.json          set-level config (version, era, shared defaults)
        solvers.json        list of solver entries
"""

from __future__ import annotations

import copy
import fnmatch
import hashlib
import json
import re
import shlex
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .archive import BINARY_ARCHIVE, SOURCE_KINDS, SourceRef, is_sha256
from .errors import (
    BadPlaceholder,
    DuplicateSpec,
    InvalidSpec,
    MalformedFile,
    MissingField,
    NoMatch,
    UnknownSpec,
)

IDENT = re.compile(r"^[a-z0-9._-]+$")
IMAGE_PREFIX = "satex/"
INPUT = "INPUT"
PROOF = "PROOF"
_PLACEHOLDER = r"(?<![A-Za-z0-9_]){}(?![A-Za-z0-9_])"
_INPUT_RE = re.compile(_PLACEHOLDER.format(INPUT))
_PROOF_RE = re.compile(_PLACEHOLDER.format(PROOF))


@dataclass(frozen=True, order=True)
class SolverSpec:
    name: str
    version: str

    def __post_init__(self):
        for label, value in (("name", self.name), ("version", self.version)):
            if not isinstance(value, str) or not IDENT.match(value):
                raise InvalidSpec(f"solver {label} {value!r} must match [a-z0-9._-]+")

    def __str__(self):
        return f"{self.name}:{self.version}"

    @classmethod
    def parse(cls, text: str) -> "SolverSpec":
        """Parse ``name:version``; a leading ``satex/`` image prefix is accepted."""
        text = text.strip().lower()
        if text.startswith(IMAGE_PREFIX):
            text = text[len(IMAGE_PREFIX):]
        name, sep, version = text.partition(":")
        if not sep:
            raise InvalidSpec(f"expected name:version, got {text!r}")
        return cls(name, version)


@dataclass(frozen=True)
class EraConfig:
    version_token: str
    builder_base: str
    runtime_base: str
    distribution: str = ""

    def __post_init__(self):
        if not self.builder_base or not self.runtime_base:
            raise ValueError("era needs both builder_base and runtime_base")


@dataclass(frozen=True)
class BuildConfig:
    commands: tuple = ()
    artifact: str | None = None
    builder_image: str | None = None


@dataclass(frozen=True)
class RunConfig:
    template: str
    options: tuple = ()
    proof: bool = False

    @property
    def executable(self) -> str:
        return shlex.split(self.template)[0]


@dataclass(frozen=True)
class SolverEntry:
    spec: SolverSpec
    source: SourceRef
    build: BuildConfig
    run: RunConfig
    meta: dict = field(default_factory=dict, hash=False)
    era: EraConfig | None = None
    set_id: str = ""
    location: str = field(default="", compare=False)

    @property
    def is_binary(self) -> bool:
        return self.source.kind == BINARY_ARCHIVE

    def canonical(self) -> dict:
        data = asdict(self)
        data.pop("location")
        data["spec"] = str(self.spec)
        return data


@dataclass(frozen=True)
class SolverSet:
    set_id: str
    entries: tuple
    era: EraConfig | None = None
    description: str = ""
    location: str = field(default="", compare=False)


@dataclass(frozen=True)
class Registry:
    sets: tuple = ()
    era_table: dict = field(default_factory=dict, hash=False)
    root: str = field(default="", compare=False)

    def entries(self):
        return [entry for s in self.sets for entry in s.entries]

    def specs(self):
        return sorted(entry.spec for entry in self.entries())

    def entry(self, spec) -> SolverEntry:
        if isinstance(spec, str):
            spec = SolverSpec.parse(spec)
        for entry in self.entries():
            if entry.spec == spec:
                return entry
        raise UnknownSpec(spec)

    def solver_set(self, set_id: str) -> SolverSet:
        for s in self.sets:
            if s.set_id == set_id:
                return s
        raise KeyError(set_id)

    def __contains__(self, spec):
        try:
            self.entry(spec)
        except UnknownSpec:
            return False
        return True

    def digest(self) -> str:
        payload = {
            "sets": [
                {
                    "set_id": s.set_id,
                    "era": asdict(s.era) if s.era else None,
                    "entries": [e.canonical() for e in s.entries],
                }
                for s in self.sets
            ],
            "eras": {k: asdict(v) for k, v in sorted(self.era_table.items())},
        }
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------
# templates


def check_template(template: str, proof_capable: bool, where: str = "") -> None:
    prefix = f"{where}: " if where else ""
    inputs = len(_INPUT_RE.findall(template))
    proofs = len(_PROOF_RE.findall(template))
    if inputs != 1:
        raise BadPlaceholder(f"{prefix}template {template!r} must contain INPUT exactly once")
    if proofs > 1:
        raise BadPlaceholder(f"{prefix}template {template!r} contains PROOF more than once")
    if bool(proofs) != bool(proof_capable):
        state = "proof-capable" if proof_capable else "not proof-capable"
        raise BadPlaceholder(f"{prefix}template {template!r} disagrees with entry being {state}")
    try:
        tokens = shlex.split(template)
    except ValueError as exc:
        raise BadPlaceholder(f"{prefix}template {template!r}: {exc}") from None
    if not tokens or _INPUT_RE.search(tokens[0]) or _PROOF_RE.search(tokens[0]):
        raise BadPlaceholder(f"{prefix}template {template!r} must start with the executable")


def render_command(run: RunConfig, input_path: str, proof_path: str | None = None) -> list:
    """Argument vector for one run; tokens mentioning PROOF vanish without a proof path."""
    tokens = shlex.split(run.template)
    argv = [tokens[0], *run.options]
    for token in tokens[1:]:
        if _PROOF_RE.search(token):
            if proof_path is None or not run.proof:
                continue
            token = _PROOF_RE.sub(lambda _: proof_path, token)
        token = _INPUT_RE.sub(lambda _: input_path, token)
        argv.append(token)
    return argv


# --------------------------------------------------------------------------
# loading


def default_era_table() -> dict:
    text = resources.files("satheritage").joinpath("data/eras.json").read_text(encoding="utf-8")
    return _era_table(json.loads(text), "<default eras.json>")


def _era_table(document, path) -> dict:
    rows = document.get("eras", document) if isinstance(document, dict) else None
    if not isinstance(rows, dict):
        raise MalformedFile(path, "era table must be an object")
    table = {}
    for token, row in rows.items():
        if token.startswith("_"):
            continue
        table[str(token).lower()] = _era(row, path, str(token).lower())
    return table


def _era(row, path, token) -> EraConfig:
    if not isinstance(row, dict):
        raise MalformedFile(path, f"era {token!r} must be an object")
    for key in ("builder_base", "runtime_base"):
        if not row.get(key):
            raise MissingField(path, key, f"era {token}")
    return EraConfig(token, row["builder_base"], row["runtime_base"], row.get("distribution", ""))


def _read_json(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile(path, f"not UTF-8: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(path, exc.msg, exc.lineno) from None


def deep_merge(base, override):
    """Merge nested dicts; ``override`` wins, lists and scalars are replaced."""
    if not isinstance(base, dict) or not isinstance(override, dict):
        return copy.deepcopy(override)
    merged = copy.deepcopy(base)
    for key, value in override.items():
        merged[key] = deep_merge(merged[key], value) if key in merged else copy.deepcopy(value)
    return merged


def _ident(value, path, what) -> str:
    if not isinstance(value, str) or not IDENT.match(value.lower()):
        raise MalformedFile(path, f"{what} {value!r} must match [a-z0-9._-]+")
    return value.lower()


def _entry(raw, defaults, set_id, version_default, path, index) -> SolverEntry:
    where = f"entry #{index}"
    if not isinstance(raw, dict):
        raise MalformedFile(path, f"{where} must be an object")
    data = deep_merge(defaults, raw)
    if "name" not in data:
        raise MissingField(path, "name", where)
    name = _ident(data["name"], path, "solver name")
    version = _ident(str(data.get("version", version_default)), path, "solver version")
    spec = SolverSpec(name, version)
    where = f"{spec}"

    source = data.get("source")
    if not isinstance(source, dict):
        raise MissingField(path, "source", where)
    for key in ("url", "sha256", "kind"):
        if not source.get(key):
            raise MissingField(path, f"source.{key}", where)
    sha = str(source["sha256"]).lower()
    if not is_sha256(sha):
        raise MalformedFile(path, f"{where}: source.sha256 is not a 64-digit hex digest")
    if source["kind"] not in SOURCE_KINDS:
        raise MalformedFile(path, f"{where}: source.kind must be one of {SOURCE_KINDS}")
    doi = source.get("doi") or data.get("meta", {}).get("doi")
    src = SourceRef(source["url"], sha, source["kind"], doi)

    build = data.get("build", {}) or {}
    commands = build.get("commands", [])
    if isinstance(commands, str) or not all(isinstance(c, str) for c in commands):
        raise MalformedFile(path, f"{where}: build.commands must be a list of strings")
    if src.kind == BINARY_ARCHIVE and commands:
        raise MalformedFile(path, f"{where}: binary archives take no build commands")
    build_cfg = BuildConfig(tuple(commands), build.get("artifact"), build.get("builder_image"))

    run = data.get("run")
    if not isinstance(run, dict) or "template" not in run:
        raise MissingField(path, "run.template", where)
    proof = bool(run.get("proof", False))
    check_template(run["template"], proof, f"{path} {where}")
    options = run.get("options", [])
    if isinstance(options, str) or not all(isinstance(o, str) for o in options):
        raise MalformedFile(path, f"{where}: run.options must be a list of strings")
    run_cfg = RunConfig(run["template"], tuple(options), proof)

    meta = data.get("meta", {}) or {}
    if not isinstance(meta, dict):
        raise MalformedFile(path, f"{where}: meta must be an object")
    era = _era(data["era"], path, version) if data.get("era") else None
    return SolverEntry(spec, src, build_cfg, run_cfg, meta, era, set_id, str(path))


def _load_set(folder: Path) -> SolverSet:
    setup_path = folder / "setup.json"
    solvers_path = folder / "solvers.json"
    setup = _read_json(setup_path) if setup_path.is_file() else {}
    if not isinstance(setup, dict):
        raise MalformedFile(setup_path, "setup.json must hold an object")
    if not solvers_path.is_file():
        raise MissingField(folder, "solvers.json")
    listing = _read_json(solvers_path)
    if isinstance(listing, dict):
        listing = listing.get("solvers")
    if not isinstance(listing, list):
        raise MalformedFile(solvers_path, "expected a list of solvers")
    set_id = folder.name.lower()
    version = str(setup.get("version", set_id))
    defaults = setup.get("defaults", {}) or {}
    era = _era(setup["era"], setup_path, version) if setup.get("era") else None
    entries = tuple(
        _entry(raw, defaults, set_id, version, solvers_path, i) for i, raw in enumerate(listing, 1)
    )
    return SolverSet(set_id, entries, era, setup.get("description", ""), str(folder))


def load_registry(root) -> Registry:
    root = Path(root)
    if not root.is_dir():
        raise MalformedFile(root, "registry root is not a readable directory")
    eras = default_era_table()
    if (root / "eras.json").is_file():
        eras.update(_era_table(_read_json(root / "eras.json"), root / "eras.json"))
    sets = []
    seen = {}
    for folder in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")):
        if not (folder / "solvers.json").exists() and not (folder / "setup.json").exists():
            continue
        solver_set = _load_set(folder)
        for entry in solver_set.entries:
            if entry.spec in seen:
                raise DuplicateSpec(entry.spec, seen[entry.spec], entry.location)
            seen[entry.spec] = entry.location
        sets.append(solver_set)
    return Registry(tuple(sets), eras, str(root))


# --------------------------------------------------------------------------
# queries


def resolve(registry: Registry, pattern: str) -> list:
    """Specs matching ``NAMEGLOB[:VERSIONGLOB]`` in lexicographic order."""
    text = pattern.strip().lower()
    if text.startswith(IMAGE_PREFIX):
        text = text[len(IMAGE_PREFIX):]
    name_glob, _, version_glob = text.partition(":")
    version_glob = version_glob or "*"
    found = {
        spec
        for spec in registry.specs()
        if fnmatch.fnmatchcase(spec.name, name_glob) and fnmatch.fnmatchcase(spec.version, version_glob)
    }
    if not found:
        raise NoMatch(pattern)
    return sorted(found)


def image_name(spec: SolverSpec) -> str:
    return f"{IMAGE_PREFIX}{spec.name}:{spec.version}"


@dataclass
class InfoReport:
    spec: str
    image: str
    set_id: str
    meta: dict
    era: dict | None
    source: dict
    doi: str | None
    proof_capable: bool
    command: list
    proof_command: list | None

    def as_dict(self) -> dict:
        return asdict(self)

    def render(self) -> str:
        lines = [
            f"solver:        {self.spec}",
            f"image:         {self.image}",
            f"set:           {self.set_id}",
        ]
        if self.era:
            lines.append(f"builder base:  {self.era['builder_base']}")
            lines.append(f"runtime base:  {self.era['runtime_base']}")
        else:
            lines.append("era:           (none configured)")
        lines.append(f"source:        {self.source['url']} ({self.source['kind']})")
        lines.append(f"sha256:        {self.source['sha256']}")
        if self.doi:
            lines.append(f"doi:           {self.doi}")
        lines.append(f"run:           {shlex.join(self.command)}")
        if self.proof_command:
            lines.append(f"run + proof:   {shlex.join(self.proof_command)}")
        for key in sorted(self.meta):
            if key != "doi":
                lines.append(f"{key + ':':<15}{self.meta[key]}")
        return "\n".join(lines) + "\n"


def info(registry: Registry, spec, input_name: str = "file.cnf", proof_name: str = "proof") -> InfoReport:
    from .errors import NoEraConfigured
    from .recipes import era_for

    entry = registry.entry(spec)
    try:
        era = asdict(era_for(registry, entry.spec))
    except NoEraConfigured:
        era = None
    source = asdict(entry.source)
    return InfoReport(
        spec=str(entry.spec),
        image=image_name(entry.spec),
        set_id=entry.set_id,
        meta=dict(entry.meta),
        era=era,
        source=source,
        doi=entry.source.doi,
        proof_capable=entry.run.proof,
        command=render_command(entry.run, input_name),
        proof_command=render_command(entry.run, input_name, proof_name) if entry.run.proof else None,
    )
