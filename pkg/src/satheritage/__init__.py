"""Archive, build and run SAT solvers through one invocation contract."""

__version__ = "0.1.0"

from .cnf import (  # noqa: E402
    CnfFormula,
    Evaluation,
    NormalizedStatus,
    Status,
    evaluate,
    normalize_outcome,
    parse_dimacs,
    parse_solver_output,
    read_dimacs,
    serialize_dimacs,
    solve_oracle,
)
from .proof import ProofLog, ProofVerdict, check_proof, check_rup, parse_drup  # noqa: E402
from .registry import Registry, SolverSpec, image_name, info, load_registry, resolve  # noqa: E402
from .recipes import era_for, generate_build_recipe, generate_run_wrapper  # noqa: E402
from .runtime import ResourceLimits, RunOutcome, build_image, extract_binary, fetch_or_build, run_solver  # noqa: E402
from .harness import JobMatrix, ResultTable, detect_disagreements, run_matrix, summarize  # noqa: E402
from .archive import ManifestEntry, SourceRef, fetch, write_manifest  # noqa: E402

__all__ = [
    "CnfFormula", "Evaluation", "NormalizedStatus", "Status", "evaluate", "normalize_outcome",
    "parse_dimacs", "parse_solver_output", "read_dimacs", "serialize_dimacs", "solve_oracle",
    "ProofLog", "ProofVerdict", "check_proof", "check_rup", "parse_drup",
    "Registry", "SolverSpec", "image_name", "info", "load_registry", "resolve",
    "era_for", "generate_build_recipe", "generate_run_wrapper",
    "ResourceLimits", "RunOutcome", "build_image", "extract_binary", "fetch_or_build", "run_solver",
    "JobMatrix", "ResultTable", "detect_disagreements", "run_matrix", "summarize",
    "ManifestEntry", "SourceRef", "fetch", "write_manifest",
]
