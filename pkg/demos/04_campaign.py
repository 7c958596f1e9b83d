"""
A small benchmark campaign
==========================

Runs three fixture solvers (an honest one, one that lies about models and
one that never answers) on six tiny instances with the process backend,
then prints the PAR-2 table and the disagreements it found.
"""
import stat
import sys
import tempfile
from pathlib import Path

from satheritage.cnf import CnfFormula, pigeonhole, write_dimacs
from satheritage.harness import JobMatrix, detect_disagreements, render_rows, render_summary, run_matrix, summarize
from satheritage.registry import load_registry
from satheritage.runtime import ProcessBackend, ResourceLimits

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"
work = Path(tempfile.mkdtemp(prefix="satex-demo-"))

# the fixture solvers are python scripts; point them at this interpreter
bin_dir = work / "bin"
bin_dir.mkdir()
for script in (FIXTURES / "bin").iterdir():
    lines = script.read_text().splitlines(keepends=True)
    lines[0] = f"#!{sys.executable}\n"
    target = bin_dir / script.name
    target.write_text("".join(lines))
    target.chmod(target.stat().st_mode | stat.S_IXUSR)

instances = [
    write_dimacs(CnfFormula(3, [[1, -2], [2, -3], [3]]), work / "chain.cnf"),
    write_dimacs(CnfFormula(2, [[1, -2], [2]]), work / "pair.cnf"),
    write_dimacs(CnfFormula(4, [[1, 2, 3, 4], [-1, -2], [-3, -4]]), work / "wide.cnf.gz"),
    write_dimacs(CnfFormula(1, [[1], [-1]]), work / "units.cnf"),
    write_dimacs(pigeonhole(3, 2), work / "php32.cnf"),
    write_dimacs(pigeonhole(4, 3), work / "php43.cnf"),
]

registry = load_registry(FIXTURES / "registry")
matrix = JobMatrix(["toy:2000", "liar:2000", "sleeper:2019"], instances, ResourceLimits(wall_timeout=2.0),
                   parallelism=4)
table = run_matrix(registry, matrix, ProcessBackend(bin_dir), work / "campaign")

print(render_rows(table))
print(render_summary(summarize(table)))
for instance, rows in detect_disagreements(table):
    print("disagreement on", Path(instance).name, [(r.solver, r.claim.value) for r in rows])
print("results streamed to", table.metadata["results_file"])
