"""Solver x instance campaigns: run, verify, audit and summarize."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .cnf import (
    Evaluation,
    Status,
    claim_from_exit_code,
    normalize_outcome,
    parse_solver_output,
    read_dimacs,
    verify_model,
)
from .errors import InputMissing, SatexError
from .proof import check_proof, parse_drup
from .registry import Registry, SolverSpec, resolve
from .runtime import PREFER_REMOTE, ResourceLimits, fetch_or_build, run_solver

log = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
SOLVED = (Status.SAT, Status.UNSAT)


@dataclass
class JobMatrix:
    solvers: list
    instances: list
    limits: ResourceLimits
    parallelism: int = 1
    verify_models: bool = True
    check_proofs: bool = False

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        self.solvers = [s if isinstance(s, SolverSpec) else SolverSpec.parse(s) for s in self.solvers]
        self.instances = [Path(p) for p in self.instances]
        for path in self.instances:
            if not path.is_file():
                raise InputMissing(f"instance {path} does not exist")

    @classmethod
    def from_file(cls, path, registry: Registry, parallelism=None) -> "JobMatrix":
        """Load a JSON campaign description; solver entries may be glob patterns.

        Keys: ``solvers``, ``instances`` (relative to the file), ``timeout``
        (seconds), optional ``memory_limit``, ``cpu_count``, ``parallelism``,
        ``verify_models``, ``check_proofs``.
        """
        path = Path(path)
        config = json.loads(path.read_text(encoding="utf-8"))
        specs = []
        for pattern in config["solvers"]:
            for spec in resolve(registry, pattern):
                if spec not in specs:
                    specs.append(spec)
        instances = [(path.parent / p) for p in config["instances"]]
        limits = ResourceLimits(
            float(config.get("timeout", 60.0)), config.get("memory_limit"), config.get("cpu_count")
        )
        return cls(
            specs,
            instances,
            limits,
            parallelism or int(config.get("parallelism", 1)),
            bool(config.get("verify_models", True)),
            bool(config.get("check_proofs", False)),
        )


@dataclass
class ResultRow:
    solver: str
    instance: str
    status: Status
    normalized_exit: int
    claim: Status
    wall_time: float
    raw_exit_code: int | None = None
    model_verified: bool | None = None
    proof_verdict: str | None = None
    error: str = ""
    stdout_path: str = ""

    @property
    def solved(self) -> bool:
        return self.status in SOLVED

    def to_record(self) -> dict:
        record = asdict(self)
        record["status"] = self.status.value
        record["claim"] = self.claim.value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "ResultRow":
        record = {k: v for k, v in record.items() if k != "record"}
        record["status"] = Status(record["status"])
        record["claim"] = Status(record["claim"])
        return cls(**record)


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def by_instance(self) -> dict:
        grouped = {}
        for row in self.rows:
            grouped.setdefault(row.instance, []).append(row)
        return grouped

    def statuses(self) -> dict:
        return {(row.solver, row.instance): row.status for row in self.rows}


class ResultWriter:
    """Append-only JSON-lines sink; each record is flushed to disk as written."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "a", encoding="utf-8")

    def write(self, record: dict):
        self._handle.write(json.dumps(record, sort_keys=True) + "\n")
        self._handle.flush()
        os.fsync(self._handle.fileno())

    def close(self):
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_results(path) -> ResultTable:
    """Reload a results file; a torn final line from a crash is skipped."""
    table = ResultTable()
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for index, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            if index == len(lines) - 1:
                log.warning("ignoring truncated last record in %s", path)
                continue
            raise
        if record.get("record") == "campaign":
            table.metadata = {k: v for k, v in record.items() if k != "record"}
        elif record.get("record") == "row":
            table.rows.append(ResultRow.from_record(record))
    return table


def _crash_row(spec, instance, message, wall=0.0) -> ResultRow:
    return ResultRow(str(spec), str(instance), Status.CRASH, 1, Status.UNKNOWN, wall, error=message)


def _run_one(backend, handle, entry, instance, formula_loader, matrix, workdir) -> ResultRow:
    proof_out = workdir / "proof.drup" if (matrix.check_proofs and entry.run.proof) else None
    workdir.mkdir(parents=True, exist_ok=True)
    outcome = run_solver(backend, handle, instance, proof_out, matrix.limits, workdir=workdir)
    claim, model = parse_solver_output(outcome.stdout_text())
    verification = None
    verified = None
    verdict = None
    note = ""
    if outcome.status not in (Status.TIMEOUT, Status.MEMOUT):
        if claim == Status.UNKNOWN:
            claim = claim_from_exit_code(outcome.raw_exit_code)
        if claim == Status.SAT and matrix.verify_models:
            if model is None:
                # exit-code-only solvers: nothing to check, nothing refuted
                note = "no model printed; not verified"
            else:
                verification = verify_model(formula_loader(instance), model)
                verified = verification == Evaluation.SATISFIED
        if claim == Status.UNSAT and proof_out is not None:
            if outcome.proof_path is None:
                verdict = "MISSING"
            else:
                formula = formula_loader(instance)
                try:
                    proof = parse_drup(Path(outcome.proof_path).read_text(encoding="utf-8", errors="replace"))
                    verdict = check_proof(formula, proof).verdict.value
                except SatexError as exc:
                    verdict = f"MALFORMED: {exc}"
    else:
        claim = Status.UNKNOWN
    normalized = normalize_outcome(outcome, claim, verification)
    return ResultRow(
        solver=str(entry.spec),
        instance=str(instance),
        status=normalized.status,
        normalized_exit=normalized.normalized_exit,
        claim=claim,
        wall_time=round(outcome.wall_time, 6),
        raw_exit_code=outcome.raw_exit_code,
        model_verified=verified,
        proof_verdict=verdict,
        error=note,
        stdout_path=str(outcome.stdout_path),
    )


def run_matrix(registry: Registry, matrix: JobMatrix, backend, out_dir=None, policy=PREFER_REMOTE, strict_dimacs=False) -> ResultTable:
    """Run every (solver, instance) pair once, streaming rows to ``results.jsonl``.

    Per-row failures become CRASH_OR_ERROR rows; only solvers missing from
    the registry abort the campaign.
    """
    entries = [registry.entry(spec) for spec in matrix.solvers]
    out_dir = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="satex-bench-"))
    out_dir.mkdir(parents=True, exist_ok=True)
    metadata = {
        "started": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "backend": backend.kind,
        "registry_digest": registry.digest(),
        "limits": asdict(matrix.limits),
        "parallelism": matrix.parallelism,
        "verify_models": matrix.verify_models,
        "check_proofs": matrix.check_proofs,
        "solvers": [str(e.spec) for e in entries],
        "instances": [str(p) for p in matrix.instances],
    }

    formulas = {}

    def load_formula(path):
        # concurrent duplicate parses are harmless
        if path not in formulas:
            formulas[path] = read_dimacs(path, strict=strict_dimacs)
        return formulas[path]

    handles = {}
    for entry in entries:
        try:
            handles[entry.spec] = fetch_or_build(backend, registry, entry.spec, policy=policy)
        except SatexError as exc:
            handles[entry.spec] = exc

    rows = {}
    results_path = out_dir / RESULTS_FILE
    with ResultWriter(results_path) as writer:
        writer.write({"record": "campaign", **metadata})
        with ThreadPoolExecutor(max_workers=matrix.parallelism) as pool:
            futures = {}
            for si, entry in enumerate(entries):
                handle = handles[entry.spec]
                for ii, instance in enumerate(matrix.instances):
                    key = (si, ii)
                    if isinstance(handle, Exception):
                        row = _crash_row(entry.spec, instance, str(handle))
                        rows[key] = row
                        writer.write({"record": "row", **row.to_record()})
                        continue
                    workdir = out_dir / "runs" / f"{entry.spec.name}-{entry.spec.version}" / f"{ii:04d}"
                    future = pool.submit(_run_one, backend, handle, entry, instance, load_formula, matrix, workdir)
                    futures[future] = (key, entry, instance)
            for future in as_completed(futures):
                key, entry, instance = futures[future]
                try:
                    row = future.result()
                except Exception as exc:  # a row failure never aborts the campaign
                    log.warning("run %s on %s failed: %s", entry.spec, instance, exc)
                    row = _crash_row(entry.spec, instance, f"{type(exc).__name__}: {exc}")
                rows[key] = row
                writer.write({"record": "row", **row.to_record()})
    metadata["results_file"] = str(results_path)
    return ResultTable([rows[k] for k in sorted(rows)], metadata)


def detect_disagreements(table: ResultTable) -> list:
    """Instances where one row claims SAT and another claims UNSAT."""
    flagged = []
    for instance, rows in table.by_instance().items():
        sat = [r for r in rows if r.claim == Status.SAT]
        unsat = [r for r in rows if r.claim == Status.UNSAT]
        if sat and unsat:
            flagged.append((instance, sat + unsat))
    return sorted(flagged, key=lambda item: item[0])


@dataclass
class SolverSummary:
    solver: str
    instances: int = 0
    solved: int = 0
    sat: int = 0
    unsat: int = 0
    par2: float = 0.0
    mean_time_solved: float = 0.0


def summarize(table: ResultTable, timeout: float | None = None) -> list:
    """Per-solver counts and PAR-2, best first (solved desc, PAR-2 asc, name)."""
    if timeout is None:
        timeout = float(table.metadata.get("limits", {}).get("wall_timeout", 0.0))
    names = list(table.metadata.get("solvers", []))
    for row in table.rows:
        if row.solver not in names:
            names.append(row.solver)
    summaries = {name: SolverSummary(name) for name in names}
    solved_time = {name: 0.0 for name in names}
    for row in table.rows:
        summary = summaries[row.solver]
        summary.instances += 1
        if row.solved:
            summary.solved += 1
            summary.sat += row.status == Status.SAT
            summary.unsat += row.status == Status.UNSAT
            summary.par2 += row.wall_time
            solved_time[row.solver] += row.wall_time
        else:
            summary.par2 += 2 * timeout
    for name, summary in summaries.items():
        if summary.solved:
            summary.mean_time_solved = solved_time[name] / summary.solved
    return sorted(summaries.values(), key=lambda s: (-s.solved, s.par2, s.solver))


SUMMARY_FIELDS = ("solver", "instances", "solved", "sat", "unsat", "par2", "mean_time_solved")


def render_summary(summaries) -> str:
    header = ["solver", "instances", "solved", "sat", "unsat", "PAR-2", "mean solved (s)"]
    body = [
        [s.solver, str(s.instances), str(s.solved), str(s.sat), str(s.unsat), f"{s.par2:.2f}", f"{s.mean_time_solved:.3f}"]
        for s in summaries
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for i, row in enumerate([header] + body):
        cells = [c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def summary_csv(summaries) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SUMMARY_FIELDS)
    for s in summaries:
        writer.writerow([s.solver, s.instances, s.solved, s.sat, s.unsat, f"{s.par2:.6f}", f"{s.mean_time_solved:.6f}"])
    return buffer.getvalue()


def render_rows(table: ResultTable) -> str:
    lines = []
    for row in table.rows:
        extra = []
        if row.model_verified is not None:
            extra.append("model ok" if row.model_verified else "model BAD")
        if row.proof_verdict:
            extra.append(f"proof {row.proof_verdict}")
        if row.error:
            extra.append(row.error)
        suffix = f"  ({'; '.join(extra)})" if extra else ""
        lines.append(f"{row.solver:<20} {Path(row.instance).name:<28} {row.status.value:<15} {row.wall_time:8.3f}s{suffix}")
    return "\n".join(lines) + ("\n" if lines else "")
