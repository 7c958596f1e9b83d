"""DIMACS CNF handling, solver output grammar and status normalization.

Also home of the brute-force/DPLL oracle used to cross-check solvers,
model verification and proof checking.
"""

from __future__ import annotations

import gzip
import io
import os
import re
import warnings
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, Union

from .errors import (
    DimacsError,
    GzipCorrupt,
    HeaderMismatch,
    LiteralOutOfRange,
    MalformedValueLine,
    NoProblemLine,
    TooLarge,
    UnterminatedClause,
)

Assignment = dict  # variable (1..num_vars) -> bool; may be partial

GZIP_MAGIC = b"\x1f\x8b"
ENUMERATE_MAX_VARS = 24


class Status(str, Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    UNKNOWN = "UNKNOWN"
    TIMEOUT = "TIMEOUT"
    MEMOUT = "MEMOUT"
    CRASH = "CRASH_OR_ERROR"

    def __str__(self):
        return self.value


# The one place the exit-code convention lives.
EXIT_SAT = 10
EXIT_UNSAT = 20
EXIT_UNKNOWN = 0
EXIT_OTHER = 1
EXIT_CODES = {Status.SAT: EXIT_SAT, Status.UNSAT: EXIT_UNSAT, Status.UNKNOWN: EXIT_UNKNOWN}


def exit_code_for(status: Status) -> int:
    return EXIT_CODES.get(status, EXIT_OTHER)


class Evaluation(str, Enum):
    SATISFIED = "satisfied"
    FALSIFIED = "falsified"
    UNDETERMINED = "undetermined"


class HeaderMismatchWarning(UserWarning):
    pass


@dataclass
class CnfFormula:
    num_vars: int
    clauses: list = field(default_factory=list)
    declared_clauses: int | None = None

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars must be non-negative")
        self.clauses = [list(c) for c in self.clauses]
        for clause in self.clauses:
            for lit in clause:
                if lit == 0:
                    raise ValueError("literal 0 inside a clause")
                if abs(lit) > self.num_vars:
                    raise LiteralOutOfRange(
                        f"literal {lit} exceeds declared {self.num_vars} variables"
                    )

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def __eq__(self, other):
        if not isinstance(other, CnfFormula):
            return NotImplemented
        return self.num_vars == other.num_vars and self.clauses == other.clauses


@dataclass(frozen=True)
class NormalizedStatus:
    status: Status
    normalized_exit: int

    @classmethod
    def of(cls, status: Status) -> "NormalizedStatus":
        return cls(status, exit_code_for(status))


# --------------------------------------------------------------------------
# DIMACS


def _maybe_gunzip(data: bytes) -> bytes:
    if not data.startswith(GZIP_MAGIC):
        return data
    try:
        return gzip.decompress(data)
    except (OSError, EOFError, zlib.error) as exc:
        raise GzipCorrupt(f"corrupt gzip stream: {exc}") from exc


def parse_dimacs(source: Union[bytes, str, BinaryIO], *, strict: bool = False) -> CnfFormula:
    """Parse DIMACS CNF text, plain or gzip-compressed.

    ``source`` is raw bytes, a text string or a binary stream. Clauses may
    span lines; only the ``0`` terminators delimit them. A declared clause
    count that disagrees with the body emits :class:`HeaderMismatchWarning`,
    or raises :class:`HeaderMismatch` when ``strict``.
    """
    if isinstance(source, str):
        data = source.encode()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    text = _maybe_gunzip(data).decode("utf-8", errors="replace")

    num_vars = None
    declared = None
    clauses = []
    current = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            # SATLIB files end with "%\n0\n"
            break
        if line.startswith("p"):
            if num_vars is not None:
                raise DimacsError("second problem line", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"bad problem line {line!r}", lineno)
            try:
                num_vars, declared = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(f"bad problem line {line!r}", lineno) from None
            if num_vars < 0 or declared < 0:
                raise DimacsError(f"negative count in {line!r}", lineno)
            continue
        if num_vars is None:
            raise NoProblemLine("clause data before the problem line", lineno)
        for token in line.split():
            try:
                lit = int(token)
            except ValueError:
                raise DimacsError(f"not an integer: {token!r}", lineno) from None
            if lit == 0:
                clauses.append(current)
                current = []
            elif abs(lit) > num_vars:
                raise LiteralOutOfRange(
                    f"literal {lit} exceeds declared {num_vars} variables", lineno
                )
            else:
                current.append(lit)
    if num_vars is None:
        raise NoProblemLine("no 'p cnf' line found")
    if current:
        raise UnterminatedClause(f"last clause {current} has no terminating 0")
    if declared != len(clauses):
        message = f"header declares {declared} clauses, body has {len(clauses)}"
        if strict:
            raise HeaderMismatch(message)
        warnings.warn(message, HeaderMismatchWarning, stacklevel=2)
    return CnfFormula(num_vars, clauses, declared_clauses=declared)


def read_dimacs(path: Union[str, os.PathLike], *, strict: bool = False) -> CnfFormula:
    with open(path, "rb") as handle:
        return parse_dimacs(handle, strict=strict)


def serialize_dimacs(formula: CnfFormula) -> str:
    lines = [f"p cnf {formula.num_vars} {len(formula.clauses)}"]
    lines.extend(" ".join(map(str, clause + [0])) for clause in formula.clauses)
    return "\n".join(lines) + "\n"


def write_dimacs(formula: CnfFormula, path: Union[str, os.PathLike], *, compress=None) -> Path:
    path = Path(path)
    data = serialize_dimacs(formula).encode()
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        data = gzip.compress(data, mtime=0)
    path.write_bytes(data)
    return path


# --------------------------------------------------------------------------
# assignments


def evaluate(formula: CnfFormula, assignment: Assignment) -> Evaluation:
    undetermined = False
    for clause in formula.clauses:
        unassigned = False
        for lit in clause:
            value = assignment.get(abs(lit))
            if value is None:
                unassigned = True
            elif value == (lit > 0):
                break
        else:
            if not unassigned:
                return Evaluation.FALSIFIED
            undetermined = True
    return Evaluation.UNDETERMINED if undetermined else Evaluation.SATISFIED


def verify_model(formula: CnfFormula, assignment: Assignment) -> Evaluation:
    """Evaluate a solver model with unassigned variables read as false."""
    full = {v: False for v in range(1, formula.num_vars + 1)}
    full.update({v: b for v, b in assignment.items() if 1 <= v <= formula.num_vars})
    return evaluate(formula, full)


# --------------------------------------------------------------------------
# solver output


_OUTPUT_LINE = re.compile(r"^([sv])(?:\s+(.*))?$")


def parse_solver_output(text: str):
    """Return ``(claimed status, assignment or None)`` from c/s/v output."""
    status = Status.UNKNOWN
    values = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        match = _OUTPUT_LINE.match(raw)
        if not match:
            continue
        kind, rest = match.groups()
        if kind == "s":
            rest = rest.rstrip()
            if rest == "SATISFIABLE":
                status = Status.SAT
            elif rest == "UNSATISFIABLE":
                status = Status.UNSAT
            else:
                status = Status.UNKNOWN
            continue
        if values is None:
            values = {}
        for token in rest.split():
            try:
                lit = int(token)
            except ValueError:
                raise MalformedValueLine(
                    f"line {lineno}: non-integer value token {token!r}"
                ) from None
            if lit != 0:
                values[abs(lit)] = lit > 0
    return status, values


def claim_from_exit_code(code: int) -> Status:
    if code == EXIT_SAT:
        return Status.SAT
    if code == EXIT_UNSAT:
        return Status.UNSAT
    return Status.UNKNOWN


def normalize_outcome(raw, claim: Status, verification: Evaluation | None = None) -> NormalizedStatus:
    """Fold a raw run, its stdout claim and an optional model check into one status.

    ``raw`` is anything with ``status`` and ``raw_exit_code`` attributes
    (normally a :class:`satheritage.runtime.RunOutcome`).
    """
    raw_status = getattr(raw, "status", Status.UNKNOWN)
    if raw_status in (Status.TIMEOUT, Status.MEMOUT):
        return NormalizedStatus.of(raw_status)
    raw_exit = getattr(raw, "raw_exit_code", 0)
    if claim == Status.UNKNOWN:
        # exit-code-only solvers: 10/20 still count as a claim
        claim = claim_from_exit_code(raw_exit)
        if claim == Status.UNKNOWN and raw_exit != EXIT_UNKNOWN:
            return NormalizedStatus.of(Status.CRASH)
    if claim == Status.SAT and verification is not None and verification != Evaluation.SATISFIED:
        return NormalizedStatus.of(Status.CRASH)
    return NormalizedStatus.of(claim)


# --------------------------------------------------------------------------
# oracle


def _enumerate(formula: CnfFormula):
    # imported here so solver wrappers and the CLI start without numpy
    import numpy as np

    n = formula.num_vars
    if n > ENUMERATE_MAX_VARS:
        raise TooLarge(f"enumeration limited to {ENUMERATE_MAX_VARS} variables, got {n}")
    if any(len(c) == 0 for c in formula.clauses):
        return Status.UNSAT, None
    chunk_bits = min(n, 16)
    low = np.arange(1 << chunk_bits, dtype=np.int64)
    shifts = np.arange(n, dtype=np.int64)
    for high in range(1 << (n - chunk_bits)):
        codes = low | (high << chunk_bits)
        # bits[k, v] = value of variable v+1 in assignment k
        bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(bool)
        alive = np.ones(len(codes), dtype=bool)
        for clause in formula.clauses:
            sat = np.zeros(len(codes), dtype=bool)
            for lit in clause:
                col = bits[:, abs(lit) - 1]
                sat |= col if lit > 0 else ~col
            alive &= sat
            if not alive.any():
                break
        hits = np.flatnonzero(alive)
        if hits.size:
            row = bits[hits[0]]
            return Status.SAT, {v + 1: bool(row[v]) for v in range(n)}
    return Status.UNSAT, None


def unit_propagate(clauses: Iterable, assignment: dict) -> bool:
    """Extend ``assignment`` in place by unit propagation; False on conflict."""
    changed = True
    while changed:
        changed = False
        for clause in clauses:
            pending = None
            free = 0
            for lit in clause:
                value = assignment.get(abs(lit))
                if value is None:
                    free += 1
                    pending = lit
                elif value == (lit > 0):
                    break
            else:
                if free == 0:
                    return False
                if free == 1:
                    assignment[abs(pending)] = pending > 0
                    changed = True
    return True


def pick_branch_variable(clauses, assignment):
    for clause in clauses:
        if any(assignment.get(abs(l)) == (l > 0) for l in clause):
            continue
        for lit in clause:
            if abs(lit) not in assignment:
                return abs(lit)
    return None


def _dpll(clauses, assignment):
    if not unit_propagate(clauses, assignment):
        return None
    var = pick_branch_variable(clauses, assignment)
    if var is None:
        return assignment
    for value in (True, False):
        result = _dpll(clauses, {**assignment, var: value})
        if result is not None:
            return result
    return None


def solve_oracle(formula: CnfFormula, method: str = "dpll"):
    """Decide a small formula; returns ``(Status.SAT, model)`` or ``(Status.UNSAT, None)``."""
    if method == "enumerate":
        return _enumerate(formula)
    if method != "dpll":
        raise ValueError(f"unknown oracle method {method!r}")
    model = _dpll(formula.clauses, {})
    if model is None:
        return Status.UNSAT, None
    full = {v: model.get(v, False) for v in range(1, formula.num_vars + 1)}
    return Status.SAT, full


def pigeonhole(pigeons: int, holes: int) -> CnfFormula:
    """PHP(p, h): variable (i-1)*h + j means pigeon i sits in hole j."""
    var = lambda i, j: (i - 1) * holes + j  # noqa: E731
    clauses = [[var(i, j) for j in range(1, holes + 1)] for i in range(1, pigeons + 1)]
    for j in range(1, holes + 1):
        for a in range(1, pigeons + 1):
            for b in range(a + 1, pigeons + 1):
                clauses.append([-var(a, j), -var(b, j)])
    return CnfFormula(pigeons * holes, clauses)


def random_formula(rng, max_vars: int = 12, max_clauses: int = 40, max_width: int = 4) -> CnfFormula:
    """Random formula for property tests; ``rng`` is a :class:`random.Random`."""
    n = rng.randint(0, max_vars)
    if n == 0:
        return CnfFormula(0, [])
    clauses = []
    for _ in range(rng.randint(0, max_clauses)):
        width = rng.randint(1, min(max_width, n))
        chosen = rng.sample(range(1, n + 1), width)
        clauses.append([v if rng.random() < 0.5 else -v for v in chosen])
    return CnfFormula(n, clauses)
