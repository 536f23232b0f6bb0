from .assembly import (
    MfmfeSystem,
    VertexBlocks,
    assemble,
    assemble_system,
    dirichlet_load,
    factorize_vertex_blocks,
    schur_complement,
    schur_min_eigenvalue,
    symmetry_defect,
)
from .solvers import (
    DiscreteSolution,
    SolverDiagnostics,
    SolverDifference,
    SolverMethod,
    SolverOptions,
    eliminate_and_solve,
    saddle_residual,
    solve,
    solve_mixed_exact,
    solve_saddle_direct,
    solver_difference,
)
