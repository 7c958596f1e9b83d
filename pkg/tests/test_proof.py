import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satheritage.cnf import CnfFormula, Status, pigeonhole, random_formula, solve_oracle
from satheritage.errors import MalformedLine
from satheritage.proof import (
    Add,
    ClauseDatabase,
    Delete,
    ProofLog,
    Verdict,
    check_proof,
    check_rup,
    parse_drup,
    refute,
)


def test_parse_examples():
    assert parse_drup("1 2 0\nd 1 2 0\n0\n").steps == [Add([1, 2]), Delete([1, 2]), Add([])]
    assert parse_drup("").steps == []
    with pytest.raises(MalformedLine):
        parse_drup("x 1 0")


def test_parse_skips_comments_and_blank_lines():
    assert parse_drup("c hi\n\n  -1 0\n").steps == [Add([-1])]


@pytest.mark.parametrize("line", ["1 2", "1 0 2 0", "d", "d x 0"])
def test_parse_rejects(line):
    with pytest.raises(MalformedLine) as info:
        parse_drup("1 0\n" + line + "\n")
    assert info.value.index == 2


def test_render_round_trip():
    log = ProofLog([Add([1, -2]), Delete([1, -2]), Add([])])
    assert log.render() == "1 -2 0\nd 1 -2 0\n0\n"
    assert parse_drup(log.render()) == log


def test_check_rup_examples():
    assert check_rup([[1]], [1, 2])
    assert check_rup([], [3, -3])
    assert not check_rup([[1, 2]], [1])


def test_check_proof_examples():
    verified = check_proof(CnfFormula(1, [[1], [-1]]), parse_drup("0\n"))
    assert verified.verdict == Verdict.VERIFIED and verified.steps_checked == 1 and verified.ok

    invalid = check_proof(CnfFormula(2, [[1, 2]]), parse_drup("1 0\n0\n"))
    assert invalid.verdict == Verdict.INVALID and invalid.step == 1

    incomplete = check_proof(CnfFormula(1, [[1]]), parse_drup(""))
    assert incomplete.verdict == Verdict.INCOMPLETE


def test_rat_step_gets_its_own_reason():
    invalid = check_proof(CnfFormula(2, [[1, 2]]), parse_drup("1 0\n0\n"))
    assert "RAT" in invalid.reason
    plain = check_proof(CnfFormula(2, [[1, 2], [-1, 2]]), parse_drup("-2 0\n"))
    assert plain.verdict == Verdict.INVALID and "RAT" not in plain.reason


def test_unknown_deletion_is_only_a_warning():
    verdict = check_proof(CnfFormula(1, [[1], [-1]]), parse_drup("d 5 0\n0\n"))
    assert verdict.ok
    assert verdict.warnings


def test_deletion_matches_as_a_set():
    db = ClauseDatabase([[1, 2, 3]])
    assert db.remove([3, 1, 2])
    assert len(db) == 0


def test_deletion_can_break_a_proof():
    f = CnfFormula(1, [[1], [-1]])
    assert check_proof(f, parse_drup("d 1 0\n0\n")).verdict == Verdict.INVALID
    assert check_proof(f, parse_drup("d 1 0\n0\n"), ignore_deletions=True).ok


def test_refute_pigeonhole():
    php = pigeonhole(3, 2)
    proof = refute(php)
    assert proof.steps[-1] == Add([])
    assert check_proof(php, proof).ok
    assert refute(CnfFormula(2, [[1, 2]])) is None


def random_proof(rng, n):
    steps = []
    for _ in range(rng.randint(0, 6)):
        width = rng.randint(0, min(3, n))
        clause = [v if rng.random() < 0.5 else -v for v in rng.sample(range(1, n + 1), width)]
        steps.append(Delete(clause) if rng.random() < 0.2 else Add(clause))
    steps.append(Add([]))
    return ProofLog(steps)


def test_soundness_on_random_instances():
    rng = random.Random(20240501)
    verified = 0
    for _ in range(600):
        f = random_formula(rng, max_vars=6, max_clauses=30, max_width=3)
        status, _ = solve_oracle(f)
        n = max(f.num_vars, 1)
        for proof in (random_proof(rng, n), refute(f) or random_proof(rng, n)):
            verdict = check_proof(f, proof)
            if verdict.ok:
                verified += 1
                assert status == Status.UNSAT
                assert check_proof(f, proof, ignore_deletions=True).ok
    assert verified > 50


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_refute_is_complete_for_unsat(seed):
    rng = random.Random(seed)
    f = random_formula(rng, max_vars=7, max_clauses=35, max_width=3)
    status, _ = solve_oracle(f, "enumerate")
    proof = refute(f)
    if status == Status.UNSAT:
        assert check_proof(f, proof).ok
    else:
        assert proof is None
