from .benchmarks import (
    PROBLEMS,
    BenchmarkProblem,
    CornerSolution,
    InterfaceAudit,
    constant_patch,
    example_71,
    example_72,
    get_problem,
    interface_audit,
    laplacian_defect,
    linear_patch,
    quadrant_of,
)
