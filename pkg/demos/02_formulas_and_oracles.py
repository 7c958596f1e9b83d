"""
Formulas, oracles and a phase transition
========================================

Random 3-SAT instances near a clause/variable ratio of 4.26 flip from
mostly satisfiable to mostly unsatisfiable. The two reference oracles
(DPLL and vectorized enumeration) must agree on every one of them.
"""
import random
import time

import numpy as np

from satheritage.cnf import CnfFormula, Status, parse_dimacs, pigeonhole, serialize_dimacs, solve_oracle

# DIMACS in and out
f = parse_dimacs("c tiny\np cnf 3 2\n1 -2 0\n2 3 0\n")
print(f.clauses, solve_oracle(f))
print(serialize_dimacs(pigeonhole(3, 2)))

rng = random.Random(0)
n = 10


def random_3sat(m):
    clauses = []
    for _ in range(m):
        chosen = rng.sample(range(1, n + 1), 3)
        clauses.append([v if rng.random() < 0.5 else -v for v in chosen])
    return CnfFormula(n, clauses)


ratios = np.arange(2.0, 7.01, 0.5)
sat_fraction = []
timings = {"dpll": 0.0, "enumerate": 0.0}
for ratio in ratios:
    answers = []
    for _ in range(40):
        formula = random_3sat(int(round(ratio * n)))
        results = {}
        for method in timings:
            start = time.perf_counter()
            results[method] = solve_oracle(formula, method)[0]
            timings[method] += time.perf_counter() - start
        assert results["dpll"] == results["enumerate"]
        answers.append(results["dpll"] == Status.SAT)
    sat_fraction.append(np.mean(answers))

for ratio, frac in zip(ratios, sat_fraction):
    print(f"m/n = {ratio:.1f}  satisfiable {frac:5.0%}  " + "#" * int(frac * 40))
print({k: round(v, 2) for k, v in timings.items()})
