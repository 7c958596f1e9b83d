"""Forward checking of DRUP certificates (RUP additions plus deletions)."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

from .cnf import CnfFormula, unit_propagate, pick_branch_variable
from .errors import MalformedLine


@dataclass(frozen=True)
class Step:
    delete: bool
    clause: tuple

    def render(self) -> str:
        body = " ".join(map(str, self.clause + (0,)))
        return f"d {body}" if self.delete else body


def Add(clause) -> Step:
    return Step(False, tuple(clause))


def Delete(clause) -> Step:
    return Step(True, tuple(clause))


@dataclass
class ProofLog:
    steps: list = field(default_factory=list)

    def render(self) -> str:
        return "".join(step.render() + "\n" for step in self.steps)


class Verdict(str, Enum):
    VERIFIED = "VERIFIED"
    INVALID = "INVALID"
    INCOMPLETE = "INCOMPLETE"

    def __str__(self):
        return self.value


@dataclass
class ProofVerdict:
    verdict: Verdict
    steps_checked: int
    step: int | None = None  # 1-based index of the failing step
    reason: str = ""
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.verdict == Verdict.VERIFIED


def parse_drup(text: str) -> ProofLog:
    steps = []
    for index, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0] == "c":
            continue
        delete = tokens[0] == "d"
        if delete:
            tokens = tokens[1:]
        try:
            literals = [int(t) for t in tokens]
        except ValueError:
            raise MalformedLine(index, raw) from None
        if not literals or literals[-1] != 0 or 0 in literals[:-1]:
            raise MalformedLine(index, raw)
        steps.append(Step(delete, tuple(literals[:-1])))
    return ProofLog(steps)


def _key(clause) -> frozenset:
    return frozenset(clause)


class ClauseDatabase:
    """Clause multiset with occurrence lists for queue-driven propagation."""

    def __init__(self, clauses=()):
        self._clauses = {}
        self._by_key = defaultdict(list)
        self._occurs = defaultdict(set)
        self._next = 0
        self._empty = 0
        for clause in clauses:
            self.add(clause)

    def __len__(self):
        return len(self._clauses)

    def clauses(self):
        return list(self._clauses.values())

    def add(self, clause):
        clause = tuple(clause)
        cid = self._next
        self._next += 1
        self._clauses[cid] = clause
        self._by_key[_key(clause)].append(cid)
        for lit in clause:
            self._occurs[lit].add(cid)
        if not clause:
            self._empty += 1
        return cid

    def remove(self, clause) -> bool:
        ids = self._by_key.get(_key(clause))
        if not ids:
            return False
        cid = ids.pop()
        removed = self._clauses.pop(cid)
        for lit in removed:
            self._occurs[lit].discard(cid)
        if not removed:
            self._empty -= 1
        return True

    def containing(self, lit):
        return [self._clauses[cid] for cid in sorted(self._occurs.get(lit, ()))]

    def propagates_to_conflict(self, assumptions) -> bool:
        if self._empty:
            return True
        value = {}
        for lit in assumptions:
            known = value.get(abs(lit))
            if known is not None and known != (lit > 0):
                return True
            value[abs(lit)] = lit > 0
        work = list(self._clauses)
        queued = set(work)
        while work:
            cid = work.pop()
            queued.discard(cid)
            pending = None
            free = 0
            for lit in self._clauses[cid]:
                v = value.get(abs(lit))
                if v is None:
                    free += 1
                    pending = lit
                    if free > 1:
                        break
                elif v == (lit > 0):
                    break
            else:
                if free == 0:
                    return True
                value[abs(pending)] = pending > 0
                for other in self._occurs.get(-pending, ()):
                    if other not in queued:
                        queued.add(other)
                        work.append(other)
        return False


def check_rup(database, clause) -> bool:
    """True iff assuming the negation of ``clause`` propagates to a conflict."""
    if not isinstance(database, ClauseDatabase):
        database = ClauseDatabase(database)
    return database.propagates_to_conflict([-lit for lit in clause])


def _is_rat(database: ClauseDatabase, clause) -> bool:
    pivot = clause[0]
    for other in database.containing(-pivot):
        resolvent = set(clause) | (set(other) - {-pivot})
        if any(-lit in resolvent for lit in resolvent):
            continue
        if not check_rup(database, resolvent):
            return False
    return True


def check_proof(formula: CnfFormula, proof: ProofLog, *, ignore_deletions: bool = False) -> ProofVerdict:
    db = ClauseDatabase(formula.clauses)
    notes = []
    checked = 0
    for index, step in enumerate(proof.steps, start=1):
        checked = index
        if step.delete:
            if ignore_deletions:
                continue
            if not db.remove(step.clause):
                notes.append(f"step {index}: deleted clause {list(step.clause)} not in database")
            continue
        if not check_rup(db, step.clause):
            if step.clause and _is_rat(db, step.clause):
                reason = "RAT addition (not RUP); only RUP steps are supported"
            else:
                reason = f"clause {list(step.clause)} has no RUP"
            return ProofVerdict(Verdict.INVALID, checked, index, reason, notes)
        if not step.clause:
            return ProofVerdict(Verdict.VERIFIED, checked, warnings=notes)
        db.add(step.clause)
    return ProofVerdict(Verdict.INCOMPLETE, checked, reason="no empty clause derived", warnings=notes)


def refute(formula: CnfFormula) -> ProofLog | None:
    """Produce a DRUP refutation from a plain DPLL search tree.

    Every closed subtree contributes the negation of its decision path;
    children are deleted once their parent is derived. Returns None when
    the formula is satisfiable.
    """
    steps = []

    def search(decisions, assignment):
        negated = tuple(-d for d in decisions)
        if not unit_propagate(formula.clauses, assignment):
            steps.append(Add(negated))
            return True
        var = pick_branch_variable(formula.clauses, assignment)
        if var is None:
            return False
        for lit in (var, -var):
            if not search(decisions + [lit], {**assignment, var: lit > 0}):
                return False
        steps.append(Add(negated))
        if decisions:
            steps.extend(Delete(negated + (-lit,)) for lit in (var, -var))
        return True

    if not search([], {}):
        return None
    return ProofLog(steps)
