import dataclasses
import gzip
import json
import os
import subprocess
import sys

import pytest

from satheritage.errors import EmptyBuildCommands, MissingArtifactPath, NoEraConfigured
from satheritage.recipes import (
    era_for,
    generate_build_recipe,
    generate_run_wrapper,
    inputs_digest,
    recipe_for,
)
from satheritage.registry import BuildConfig, EraConfig, load_registry

from conftest import GOLDEN

SHA = "cd" * 32


def entry_registry(tmp_path, set_id="2019", **overrides):
    entry = {
        "name": "cadical",
        "source": {"url": "https://example.invalid/c.tar.gz", "sha256": SHA, "kind": "source-archive"},
        "build": {"commands": ["make"], "artifact": "build/cadical"},
        "run": {"template": "cadical INPUT PROOF", "proof": True},
    }
    entry.update(overrides)
    folder = tmp_path / "reg" / set_id
    folder.mkdir(parents=True)
    (folder / "solvers.json").write_text(json.dumps([entry]))
    return load_registry(tmp_path / "reg")


def test_recipes_match_golden_files(registry):
    for spec in registry.specs():
        golden = GOLDEN / f"{spec.name}-{spec.version}.Dockerfile"
        assert recipe_for(registry, spec).text == golden.read_text(), spec


def test_wrappers_match_golden_files(registry):
    for spec in registry.specs():
        golden = GOLDEN / f"{spec.name}-{spec.version}.satex-run"
        assert generate_run_wrapper(registry.entry(spec)) == golden.read_text(), spec


def test_recipe_generation_is_deterministic(registry):
    for spec in registry.specs():
        first = recipe_for(registry, spec)
        for _ in range(100):
            assert recipe_for(registry, spec) == first


def test_stage_count_follows_source_kind(registry):
    for entry in registry.entries():
        recipe = recipe_for(registry, entry.spec)
        assert recipe.stage_count == (1 if entry.is_binary else 2)
        assert recipe.text.count("\nFROM ") == recipe.stage_count


def test_recipe_verifies_checksum_and_labels(registry):
    recipe = recipe_for(registry, "cadical:2019")
    assert "sha256sum -c" in recipe.text
    assert 'satex.image="satex/cadical:2019"' in recipe.text
    assert 'satex.source.doi="10.5281/zenodo.0000000"' in recipe.text
    assert recipe.inputs_digest in recipe.text


def test_era_examples(registry, tmp_path):
    assert "potato" in era_for(registry, "toy:2000").builder_base
    assert "potato" in era_for(registry, "toy:2000").runtime_base
    with pytest.raises(NoEraConfigured):
        era_for(entry_registry(tmp_path, set_id="1987"), "cadical:1987")


def test_entry_era_override_wins(tmp_path):
    era = {"builder_base": "custom/build:1", "runtime_base": "custom/run:1"}
    registry = entry_registry(tmp_path, set_id="1987", era=era)
    assert era_for(registry, "cadical:1987").builder_base == "custom/build:1"


def test_set_era_beats_table(registry):
    assert era_for(registry, "sat13:knuth").runtime_base == "debian/eol:buster-slim"


def test_builder_image_replaces_only_builder(tmp_path):
    registry = entry_registry(tmp_path, build={"commands": ["make"], "artifact": "c", "builder_image": "gcc:4"})
    era = era_for(registry, "cadical:2019")
    assert era.builder_base == "gcc:4"
    assert "buster" in era.runtime_base


def test_digest_tracks_inputs(registry):
    entry = registry.entry("toy:2000")
    era = era_for(registry, entry.spec)
    other = EraConfig("2000", "other:1", era.runtime_base)
    assert inputs_digest(entry, era) != inputs_digest(entry, other)
    changed = dataclasses.replace(entry, build=BuildConfig(("make -j2 toy",), "toy/toy"))
    assert inputs_digest(entry, era) != inputs_digest(changed, era)


def test_recipe_preconditions(registry):
    entry = registry.entry("toy:2000")
    era = era_for(registry, entry.spec)
    with pytest.raises(EmptyBuildCommands):
        generate_build_recipe(dataclasses.replace(entry, build=BuildConfig((), "toy/toy")), era)
    with pytest.raises(MissingArtifactPath):
        generate_build_recipe(dataclasses.replace(entry, build=BuildConfig(("make",), None)), era)


# running the wrapper with a recording stand-in for the solver

RECORDER = """#!{python}
import json, os, sys
with open(os.environ["RECORD"], "w") as out:
    json.dump(sys.argv[1:], out)
print("c first input line:", open(sys.argv[-2 if os.environ.get("WITH_PROOF") else -1]).readline().strip())
print(os.environ.get("ANSWER", "s UNSATISFIABLE"))
sys.exit(int(os.environ.get("CODE", "0")))
"""


@pytest.fixture
def wrapper_env(tmp_path):
    def make(entry, name="cadical"):
        bindir = tmp_path / "bin"
        bindir.mkdir(exist_ok=True)
        exe = bindir / name
        exe.write_text(RECORDER.format(python=sys.executable))
        exe.chmod(0o755)
        wrapper = bindir / "satex-run"
        wrapper.write_text(generate_run_wrapper(entry))
        wrapper.chmod(0o755)
        env = dict(os.environ, PATH=f"{bindir}{os.pathsep}{os.environ['PATH']}", RECORD=str(tmp_path / "argv.json"))

        def run(*args, **extra):
            result = subprocess.run(["sh", str(wrapper), *map(str, args)], capture_output=True, text=True,
                                    env={**env, **extra}, cwd=tmp_path)
            recorded = json.loads((tmp_path / "argv.json").read_text()) if (tmp_path / "argv.json").exists() else None
            return result, recorded

        return run

    return make


def test_wrapper_with_and_without_proof(registry, wrapper_env, tmp_path):
    run = wrapper_env(registry.entry("cadical:2019"))
    cnf = tmp_path / "file.cnf"
    cnf.write_text("p cnf 1 1\n1 0\n")
    result, argv = run(cnf, tmp_path / "proof", WITH_PROOF="1")
    assert argv == [str(cnf), str(tmp_path / "proof")]
    assert result.returncode == 20
    assert "s UNSATISFIABLE" in result.stdout
    result, argv = run(cnf)
    assert argv == [str(cnf)]


def test_wrapper_gunzips(registry, wrapper_env, tmp_path):
    run = wrapper_env(registry.entry("cadical:2019"))
    packed = tmp_path / "file.cnf.gz"
    packed.write_bytes(gzip.compress(b"p cnf 1 1\n1 0\n"))
    result, argv = run(packed)
    assert argv[0] != str(packed) and argv[0].endswith("input.cnf")
    assert "c first input line: p cnf 1 1" in result.stdout
    assert not os.path.exists(argv[0])  # temporary copy removed


@pytest.mark.parametrize(
    "answer, code, expected",
    [
        ("s SATISFIABLE", "0", 10),
        ("s UNSATISFIABLE", "1", 20),
        ("s UNKNOWN", "0", 0),
        ("c nothing", "10", 10),
        ("c nothing", "20", 20),
        ("c nothing", "139", 1),
        ("s SATISFIABLEX", "3", 1),
    ],
)
def test_wrapper_exit_normalization(registry, wrapper_env, tmp_path, answer, code, expected):
    run = wrapper_env(registry.entry("cadical:2019"))
    cnf = tmp_path / "f.cnf"
    cnf.write_text("p cnf 0 0\n")
    result, _ = run(cnf, ANSWER=answer, CODE=code)
    assert result.returncode == expected


def test_wrapper_usage_error(registry, wrapper_env):
    result, _ = wrapper_env(registry.entry("cadical:2019"))()
    assert result.returncode == 1 and "usage" in result.stderr


def test_wrapper_quotes_everything(tmp_path, wrapper_env):
    registry = entry_registry(
        tmp_path,
        run={"template": "cadical --tag='a b;$(touch pwned)' INPUT --proof=PROOF", "proof": True,
             "options": ["--x=`touch pwned2`", "$HOME"]},
    )
    run = wrapper_env(registry.entry("cadical:2019"))
    cnf = tmp_path / "we ird $name;'q'.cnf"
    cnf.write_text("p cnf 0 0\n")
    _, argv = run(cnf, tmp_path / "p r$oof", WITH_PROOF="1")
    assert argv == [
        "--x=`touch pwned2`", "$HOME", "--tag=a b;$(touch pwned)", str(cnf), f"--proof={tmp_path / 'p r$oof'}",
    ]
    assert not (tmp_path / "pwned").exists() and not (tmp_path / "pwned2").exists()
