"""Deterministic container recipes and the unified ``satex-run`` wrapper."""

from __future__ import annotations

import hashlib
import json
import re
import shlex
from dataclasses import asdict, dataclass

from .errors import EmptyBuildCommands, MissingArtifactPath, NoEraConfigured
from .registry import (
    EraConfig,
    Registry,
    SolverEntry,
    SolverSpec,
    _INPUT_RE,
    _PROOF_RE,
    image_name,
)

RECIPE_FORMAT = "satex-recipe/1"
WRAPPER_NAME = "satex-run"
BIN_DIR = "/usr/local/bin"
WORK = "/satex"
ARCHIVE_IN_IMAGE = f"{WORK}/source.archive"


@dataclass(frozen=True)
class BuildRecipe:
    text: str
    stage_count: int
    inputs_digest: str
    spec: str = ""


def era_for(registry: Registry, spec) -> EraConfig:
    """Entry override, then set override, then the registry's era table."""
    entry = registry.entry(spec)
    era = entry.era
    if era is None:
        era = registry.solver_set(entry.set_id).era
    if era is None:
        era = registry.era_table.get(entry.spec.version)
    if era is None:
        raise NoEraConfigured(f"no build environment configured for version {entry.spec.version!r}")
    if entry.build.builder_image:
        era = EraConfig(era.version_token, entry.build.builder_image, era.runtime_base, era.distribution)
    return era


def inputs_digest(entry: SolverEntry, era: EraConfig) -> str:
    payload = {"format": RECIPE_FORMAT, "entry": entry.canonical(), "era": asdict(era)}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def context_source_path(entry: SolverEntry) -> str:
    """Where the fetched archive sits inside the build context."""
    return f"sources/{entry.source.sha256}"


def _unpack(url: str, archive: str, dest: str) -> str | None:
    lowered = url.lower().split("?", 1)[0]
    if lowered.endswith((".tar.gz", ".tgz")):
        return f"mkdir -p {dest} && tar -xzf {archive} -C {dest}"
    if lowered.endswith((".tar.bz2", ".tbz2", ".tbz")):
        return f"mkdir -p {dest} && tar -xjf {archive} -C {dest}"
    if lowered.endswith((".tar.xz", ".txz")):
        return f"mkdir -p {dest} && tar -xJf {archive} -C {dest}"
    if lowered.endswith(".tar"):
        return f"mkdir -p {dest} && tar -xf {archive} -C {dest}"
    if lowered.endswith(".zip"):
        return f"mkdir -p {dest} && unzip -q {archive} -d {dest}"
    return None


def _label_value(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def generate_build_recipe(entry: SolverEntry, era: EraConfig) -> BuildRecipe:
    """Render the Dockerfile-format recipe for one entry.

    Source archives get a builder stage (fetch, verify, compile) and a
    runtime stage that only receives the artifact and the wrapper; binary
    archives use the runtime stage alone.
    """
    digest = inputs_digest(entry, era)
    exe = entry.run.executable
    sha = entry.source.sha256
    target = f"{BIN_DIR}/{exe}"
    # the archive was verified host-side on fetch; re-check inside the image
    # when the era ships sha256sum (coreutils gained it in 2006)
    fetch_lines = [
        f"COPY {context_source_path(entry)} {ARCHIVE_IN_IMAGE}",
        f"RUN if type sha256sum >/dev/null 2>&1; then"
        f' echo "{sha}  {ARCHIVE_IN_IMAGE}" | sha256sum -c -; fi',
    ]
    header = [
        f"# satex build recipe for {entry.spec} ({RECIPE_FORMAT})",
        f"# inputs digest {digest}",
        "# generated file; edit the registry entry instead",
    ]
    unpack = _unpack(entry.source.url, ARCHIVE_IN_IMAGE, f"{WORK}/src")
    lines = list(header)
    if entry.is_binary:
        stages = 1
        lines.append(f"FROM {era.runtime_base}")
        lines.extend(fetch_lines)
        if unpack is None:
            lines.append(f"RUN mkdir -p {BIN_DIR} && cp {ARCHIVE_IN_IMAGE} {target} && rm -f {ARCHIVE_IN_IMAGE}")
        else:
            if not entry.build.artifact:
                raise MissingArtifactPath(f"{entry.spec}: binary archive needs build.artifact")
            lines.append(
                f"RUN {unpack} && mkdir -p {BIN_DIR} && cp {WORK}/src/{entry.build.artifact} {target}"
                f" && rm -rf {WORK}/src {ARCHIVE_IN_IMAGE}"
            )
    else:
        stages = 2
        if not entry.build.commands:
            raise EmptyBuildCommands(f"{entry.spec}: source archive without build.commands")
        if not entry.build.artifact:
            raise MissingArtifactPath(f"{entry.spec}: source archive needs build.artifact")
        lines.append(f"FROM {era.builder_base} AS builder")
        lines.extend(fetch_lines)
        if unpack is None:
            lines.append(f"RUN mkdir -p {WORK}/src && cp {ARCHIVE_IN_IMAGE} {WORK}/src/")
        else:
            lines.append(f"RUN {unpack}")
        lines.append(f"WORKDIR {WORK}/src")
        lines.extend(f"RUN {command}" for command in entry.build.commands)
        lines.append("")
        lines.append(f"FROM {era.runtime_base}")
        lines.append(f"COPY --from=builder {WORK}/src/{entry.build.artifact} {target}")
    lines.append(f"COPY {WRAPPER_NAME} {BIN_DIR}/{WRAPPER_NAME}")
    lines.append(f"RUN chmod 0755 {target} {BIN_DIR}/{WRAPPER_NAME}")
    labels = [
        ("satex.spec", str(entry.spec)),
        ("satex.image", image_name(entry.spec)),
        ("satex.inputs_digest", digest),
        ("satex.source.url", entry.source.url),
        ("satex.source.sha256", sha),
    ]
    if entry.source.doi:
        labels.append(("satex.source.doi", entry.source.doi))
    lines.append("LABEL " + " \\\n      ".join(f"{k}={_label_value(v)}" for k, v in labels))
    lines.append(f'ENTRYPOINT ["{BIN_DIR}/{WRAPPER_NAME}"]')
    text = "\n".join(lines) + "\n"
    return BuildRecipe(text, stages, digest, str(entry.spec))


def recipe_for(registry: Registry, spec: SolverSpec) -> BuildRecipe:
    return generate_build_recipe(registry.entry(spec), era_for(registry, spec))


# --------------------------------------------------------------------------
# run wrapper

_PLACEHOLDERS = re.compile(f"{_INPUT_RE.pattern}|{_PROOF_RE.pattern}")


def _shell_word(token: str) -> str:
    """Quote a template token, turning INPUT/PROOF into quoted variable expansions."""
    parts = []
    pos = 0
    for match in _PLACEHOLDERS.finditer(token):
        if match.start() > pos:
            parts.append(shlex.quote(token[pos:match.start()]))
        parts.append('"$input"' if match.group(0) == "INPUT" else '"$proof"')
        pos = match.end()
    if pos < len(token):
        parts.append(shlex.quote(token[pos:]))
    return "".join(parts) or "''"


def _command_line(entry: SolverEntry, with_proof: bool) -> str:
    tokens = shlex.split(entry.run.template)
    words = [shlex.quote(tokens[0])]
    words.extend(shlex.quote(option) for option in entry.run.options)
    for token in tokens[1:]:
        if _PROOF_RE.search(token) and not with_proof:
            continue
        words.append(_shell_word(token))
    return " ".join(words)


WRAPPER_TEMPLATE = """\
#!/bin/sh
# satex run wrapper for {spec}; generated, do not edit
# usage: {name} INPUT.cnf[.gz] [PROOF]
# exit: 10 satisfiable, 20 unsatisfiable, 0 unknown, 1 error
set -u
if [ "$#" -lt 1 ] || [ "$#" -gt 2 ]; then
  echo "usage: {name} INPUT.cnf[.gz] [PROOF]" >&2
  exit 1
fi
input=$1
work=$(mktemp -d "${{TMPDIR:-/tmp}}/satex.XXXXXX" 2>/dev/null) || {{
  # old mktemp builds lack -d
  work=${{TMPDIR:-/tmp}}/satex.$$
  mkdir "$work" || exit 1
}}
trap 'rm -rf "$work"' EXIT
trap 'exit 143' TERM
trap 'exit 130' INT
case $input in
  *.gz)
    gzip -dc < "$input" > "$work/input.cnf" || exit 1
    input=$work/input.cnf
    ;;
esac
if [ "$#" -eq 2 ]; then
  proof=$2
  {{ {proof_command}; echo "$?" > "$work/code"; }} | tee "$work/stdout"
else
  {{ {plain_command}; echo "$?" > "$work/code"; }} | tee "$work/stdout"
fi
code=$(cat "$work/code" 2>/dev/null || echo 1)
answer=$(sed -n 's/^s[[:space:]][[:space:]]*//p' "$work/stdout" | tail -n 1 | sed 's/[[:space:]]*$//')
case $answer in
  SATISFIABLE) exit 10 ;;
  UNSATISFIABLE) exit 20 ;;
esac
case $code in
  0|10|20) exit "$code" ;;
esac
exit 1
"""


def generate_run_wrapper(entry: SolverEntry) -> str:
    plain = _command_line(entry, with_proof=False)
    with_proof = _command_line(entry, with_proof=True) if entry.run.proof else plain
    return WRAPPER_TEMPLATE.format(
        spec=entry.spec,
        name=WRAPPER_NAME,
        plain_command=plain,
        proof_command=with_proof,
    )
