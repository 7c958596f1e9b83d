"""
Checking unsatisfiability certificates
======================================

A DRUP proof lists clauses that each follow by unit propagation; the
last one is the empty clause. Here a proof is produced from a DPLL
search tree, checked, then damaged in a few ways.
"""
from satheritage.cnf import pigeonhole
from satheritage.proof import Add, ProofLog, check_proof, parse_drup, refute

php = pigeonhole(4, 3)
proof = refute(php)
print(len(proof.steps), "steps")
print(proof.render()[:200], "...")

verdict = check_proof(php, proof)
print(verdict.verdict, "after", verdict.steps_checked, "steps")

# dropping the lemmas leaves a bare empty clause, which has no RUP here
print(check_proof(php, ProofLog([Add([])])))

# stopping early: nothing wrong, just not finished
print(check_proof(php, ProofLog(proof.steps[:-1])).verdict)

# deleting an original clause too early can break the rest
broken = parse_drup("d 1 2 3 0\n").steps + proof.steps
print(check_proof(php, ProofLog(broken)).verdict)
print(check_proof(php, ProofLog(broken), ignore_deletions=True).verdict)
