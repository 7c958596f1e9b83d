"""``satex`` command line.

Exit codes: 0 success, 1 negative domain outcome (no match, failed build,
invalid proof), 2 usage or environment error. ``run`` exits with the
normalized solver status (10 SAT, 20 UNSAT, 0 UNKNOWN, 1 otherwise) and
``run-raw`` with the solver's own exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__, archive
from .cnf import Evaluation, Status, normalize_outcome, parse_solver_output, read_dimacs, verify_model
from .errors import DimacsError, NoMatch, SatexError
from .harness import (
    JobMatrix,
    detect_disagreements,
    render_rows,
    render_summary,
    run_matrix,
    summarize,
    summary_csv,
)
from .proof import Verdict, check_proof, parse_drup
from .registry import image_name, info, load_registry, resolve
from .runtime import (
    LOCAL_ONLY,
    PREFER_REMOTE,
    ResourceLimits,
    build_solver,
    default_cache,
    extract_binary,
    fetch_or_build,
    make_backend,
    run_solver,
)

log = logging.getLogger("satex")

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    registry_root: str
    backend: str
    bin_dir: str
    cache: str
    verbosity: int
    color: bool
    strict_dimacs: bool


def resolve_config(args) -> CliConfig:
    env = os.environ
    color = getattr(args, "color", None)
    if color is None:
        color = sys.stdout.isatty() and "NO_COLOR" not in env
    return CliConfig(
        registry_root=getattr(args, "registry", None) or env.get("SATHERITAGE_REGISTRY") or "./registry",
        backend=getattr(args, "backend", None) or env.get("SATHERITAGE_BACKEND") or "container",
        bin_dir=getattr(args, "bin_dir", None) or env.get("SATHERITAGE_BIN") or "./bin",
        cache=getattr(args, "cache", None) or str(default_cache()),
        verbosity=getattr(args, "verbose", 0) or 0,
        color=bool(color),
        strict_dimacs=bool(getattr(args, "strict_dimacs", False)),
    )


def _paint(text: str, code: str, config: CliConfig) -> str:
    return f"\033[{code}m{text}\033[0m" if config.color else text


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("global options")
    group.add_argument("--registry", metavar="PATH", default=argparse.SUPPRESS,
                       help="registry directory (env SATHERITAGE_REGISTRY, default ./registry)")
    group.add_argument("--backend", choices=["container", "process"], default=argparse.SUPPRESS,
                       help="execution backend (env SATHERITAGE_BACKEND, default container)")
    group.add_argument("--bin-dir", metavar="PATH", default=argparse.SUPPRESS,
                       help="local executables for the process backend (env SATHERITAGE_BIN, default ./bin)")
    group.add_argument("--cache", metavar="PATH", default=argparse.SUPPRESS,
                       help="source cache directory (env SATHERITAGE_CACHE)")
    group.add_argument("--strict-dimacs", action="store_true", default=argparse.SUPPRESS,
                       help="treat DIMACS header mismatches as errors")
    group.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    group.add_argument("--color", dest="color", action="store_true", default=argparse.SUPPRESS)
    group.add_argument("--no-color", dest="color", action="store_false", default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="satex", parents=[common],
        description="Archive, build and run SAT solvers through one invocation contract.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    p = add("list", "list registered solvers, optionally filtered by NAME[:VERSION] glob")
    p.add_argument("pattern", nargs="?", default="*")

    p = add("info", "show solver metadata, environment and the exact run commands")
    p.add_argument("spec")
    p.add_argument("--json", action="store_true", help="machine-readable output")

    p = add("run", "run a solver on a DIMACS file (optionally gzipped), optionally writing a proof")
    p.add_argument("spec")
    p.add_argument("cnf")
    p.add_argument("proof", nargs="?")
    p.add_argument("--timeout", type=float, default=None, help="wall-clock limit in seconds")
    p.add_argument("--memory", type=int, default=None, help="memory limit in bytes")
    p.add_argument("--local-only", action="store_true", help="never pull images or download sources")
    p.add_argument("--no-verify", action="store_true", help="skip model verification of SAT answers")

    p = add("run-raw", "run a solver with custom arguments: satex run-raw SPEC -- ARGS...")
    p.add_argument("spec")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--local-only", action="store_true")

    p = add("build", "build images for every solver matching a pattern, e.g. '*:2000'")
    p.add_argument("pattern")
    p.add_argument("--jobs", "-j", type=int, default=1)
    p.add_argument("--local-only", action="store_true", help="use cached sources only")

    p = add("extract", "copy a solver binary, its wrapper and a provenance stub out of its image")
    p.add_argument("spec")
    p.add_argument("dest")

    p = add("bench", "run a solver x instance campaign described by a JSON file")
    p.add_argument("matrix")
    p.add_argument("--jobs", "-j", type=int, default=None)
    p.add_argument("--out", default=None, help="campaign output directory")
    p.add_argument("--local-only", action="store_true")

    p = add("fetch", "download and verify sources of matching solvers into the cache")
    p.add_argument("pattern")
    p.add_argument("--manifest", default=None, help="write a provenance manifest here")

    p = add("check-proof", "check a DRUP proof against a DIMACS formula")
    p.add_argument("cnf")
    p.add_argument("proof")

    add("config", "print the resolved configuration")
    return parser


# --------------------------------------------------------------------------
# commands


def _single(registry, pattern):
    matches = resolve(registry, pattern)
    if len(matches) > 1:
        listing = "\n".join(f"  {m}" for m in matches)
        raise UsageError(f"{pattern!r} is ambiguous; candidates:\n{listing}")
    return matches[0]


def cmd_list(args, config) -> int:
    registry = load_registry(config.registry_root)
    try:
        specs = resolve(registry, args.pattern)
    except NoMatch:
        return EXIT_NEGATIVE
    for spec in specs:
        print(spec)
    return EXIT_OK


def cmd_info(args, config) -> int:
    registry = load_registry(config.registry_root)
    spec = _single(registry, args.spec)
    report = info(registry, spec)
    if args.json:
        print(json.dumps(report.as_dict(), indent=2))
    else:
        sys.stdout.write(report.render())
    return EXIT_OK


def _policy(args) -> str:
    return LOCAL_ONLY if getattr(args, "local_only", False) else PREFER_REMOTE


def _echo(path, stream):
    with open(path, encoding="utf-8", errors="replace") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), ""):
            stream.write(chunk)
    stream.flush()


def cmd_run(args, config) -> int:
    registry = load_registry(config.registry_root)
    spec = _single(registry, args.spec)
    backend = make_backend(config.backend, config.bin_dir)
    handle = fetch_or_build(backend, registry, spec, policy=_policy(args), cache=config.cache)
    limits = ResourceLimits(args.timeout or 1e9, args.memory)
    outcome = run_solver(backend, handle, args.cnf, args.proof, limits)
    try:
        _echo(outcome.stdout_path, sys.stdout)
        _echo(outcome.stderr_path, sys.stderr)
        claim, model = parse_solver_output(outcome.stdout_text())
        verification = None
        if claim == Status.SAT and not args.no_verify and model is not None:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    formula = read_dimacs(args.cnf, strict=config.strict_dimacs)
                verification = verify_model(formula, model)
            except DimacsError as exc:
                log.warning("cannot verify model: %s", exc)
        normalized = normalize_outcome(outcome, claim, verification)
        if verification == Evaluation.FALSIFIED:
            print("c satex: model verification FAILED", file=sys.stderr)
        log.info("status %s (raw exit %s, %.3fs)", normalized.status, outcome.raw_exit_code, outcome.wall_time)
        return normalized.normalized_exit
    finally:
        shutil.rmtree(Path(outcome.stdout_path).parent, ignore_errors=True)


def cmd_run_raw(args, config, raw_args) -> int:
    registry = load_registry(config.registry_root)
    spec = _single(registry, args.spec)
    backend = make_backend(config.backend, config.bin_dir)
    handle = fetch_or_build(backend, registry, spec, policy=_policy(args), cache=config.cache)
    limits = ResourceLimits(args.timeout or 1e9)
    outcome = run_solver(backend, handle, None, None, limits, raw_args=raw_args)
    try:
        _echo(outcome.stdout_path, sys.stdout)
        _echo(outcome.stderr_path, sys.stderr)
        code = outcome.raw_exit_code
        return code if code >= 0 else 128 - code
    finally:
        shutil.rmtree(Path(outcome.stdout_path).parent, ignore_errors=True)


def cmd_build(args, config) -> int:
    registry = load_registry(config.registry_root)
    specs = resolve(registry, args.pattern)
    backend = make_backend(config.backend, config.bin_dir)
    if not backend.can_build:
        raise UsageError(f"the {backend.kind} backend cannot build images; use --backend container")
    if not backend.available():
        raise UsageError(f"container runtime {backend.cli!r} not found")

    def one(spec):
        try:
            handle = build_solver(backend, registry, spec, config.cache, offline=args.local_only)
            return spec, True, handle.image_id
        except SatexError as exc:
            return spec, False, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(one, specs))
    failed = 0
    for spec, ok, detail in results:
        if ok:
            print(f"built   {image_name(spec)}  {detail}")
        else:
            failed += 1
            print(f"FAILED  {image_name(spec)}  {detail.splitlines()[0] if detail else ''}")
    print(f"{len(results) - failed} built, {failed} failed")
    return EXIT_OK if not failed else EXIT_NEGATIVE


def cmd_extract(args, config) -> int:
    registry = load_registry(config.registry_root)
    spec = _single(registry, args.spec)
    backend = make_backend(config.backend, config.bin_dir)
    for path in extract_binary(backend, registry, spec, args.dest):
        print(path)
    return EXIT_OK


def cmd_bench(args, config) -> int:
    registry = load_registry(config.registry_root)
    matrix = JobMatrix.from_file(args.matrix, registry, parallelism=args.jobs)
    backend = make_backend(config.backend, config.bin_dir)
    out = Path(args.out) if args.out else Path(args.matrix).with_suffix("").with_name(Path(args.matrix).stem + "-results")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = run_matrix(registry, matrix, backend, out, policy=_policy(args), strict_dimacs=config.strict_dimacs)
    summaries = summarize(table)
    text = render_summary(summaries)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    (out / "summary.csv").write_text(summary_csv(summaries), encoding="utf-8")
    sys.stdout.write(render_rows(table))
    sys.stdout.write("\n" + text)
    print(f"results: {table.metadata['results_file']}")
    disagreements = detect_disagreements(table)
    for instance, rows in disagreements:
        claims = ", ".join(f"{r.solver}={r.claim.value}" for r in rows)
        print(f"DISAGREEMENT on {instance}: {claims}", file=sys.stderr)
    return EXIT_NEGATIVE if disagreements else EXIT_OK


def cmd_fetch(args, config) -> int:
    registry = load_registry(config.registry_root)
    specs = resolve(registry, args.pattern)
    from .recipes import recipe_for

    entries = []
    failed = 0
    for spec in specs:
        entry = registry.entry(spec)
        try:
            path = archive.fetch(entry.source, config.cache)
        except SatexError as exc:
            failed += 1
            print(f"FAILED  {spec}  {exc}")
            continue
        try:
            digest = recipe_for(registry, spec).inputs_digest
        except SatexError:
            digest = None
        entries.append(archive.manifest_entry(spec, entry.source, path, digest))
        print(f"ok      {spec}  {path}")
    if args.manifest:
        archive.write_manifest(entries, args.manifest)
        print(f"manifest: {args.manifest}")
    return EXIT_OK if not failed else EXIT_NEGATIVE


def cmd_check_proof(args, config) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        formula = read_dimacs(args.cnf, strict=config.strict_dimacs)
    proof = parse_drup(Path(args.proof).read_text(encoding="utf-8", errors="replace"))
    verdict = check_proof(formula, proof)
    for note in verdict.warnings:
        log.warning(note)
    if verdict.verdict == Verdict.VERIFIED:
        print(_paint("VERIFIED", "32", config))
        return EXIT_OK
    if verdict.verdict == Verdict.INVALID:
        print(_paint("INVALID", "31", config) + f" at step {verdict.step}: {verdict.reason}")
    else:
        print(_paint("INCOMPLETE", "33", config) + f": {verdict.reason}")
    return EXIT_NEGATIVE


def cmd_config(args, config) -> int:
    for key, value in asdict(config).items():
        print(f"{key} = {value}")
    return EXIT_OK


COMMANDS = {
    "list": cmd_list,
    "info": cmd_info,
    "run": cmd_run,
    "build": cmd_build,
    "extract": cmd_extract,
    "bench": cmd_bench,
    "fetch": cmd_fetch,
    "check-proof": cmd_check_proof,
    "config": cmd_config,
}


def _split_raw(argv):
    """Separate ``run-raw`` passthrough arguments at the first ``--``."""
    if "run-raw" not in argv:
        return argv, None
    position = argv.index("run-raw")
    if "--" not in argv[position:]:
        return argv, None
    cut = argv.index("--", position)
    return argv[:cut], argv[cut + 1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    argv, raw_args = _split_raw(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    config = resolve_config(args)
    level = logging.WARNING - 10 * min(config.verbosity, 2)
    logging.basicConfig(level=level, format="satex: %(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        if args.command == "run-raw":
            if raw_args is None:
                print("usage: satex run-raw SPEC -- ARGS...  (the -- separator is required)", file=sys.stderr)
                return EXIT_USAGE
            return cmd_run_raw(args, config, raw_args)
        return COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"satex: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SatexError, OSError, ValueError) as exc:
        print(f"satex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
