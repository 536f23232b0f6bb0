"""
Solvers for the assembled mixed system.

`eliminate_and_solve` realizes the cell-centered MFMFE scheme: A⁻¹ is the
blockwise inverse built from per-vertex Cholesky factors, and the SPD pressure
system S P = B A⁻¹ G - F is solved directly (sparse LU) or by Jacobi-preconditioned
CG on large meshes. `solve_mixed_exact` solves the full saddle system with
the exactly integrated pairing.
"""

from dataclasses import dataclass, field
from typing import Optional
import logging
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..fem.quadrature import GAUSS7, VERTEX_RULE, QuadRule, local_mass_matrices
from ..fem.spaces import PressureField, VelocityField
from ..mesh.mesh import Mesh
from ..utils.validators import NumericalError, require
from .assembly import (
    MfmfeSystem,
    assemble,
    factorize_vertex_blocks,
    schur_complement,
    schur_min_eigenvalue,
    symmetry_defect,
    SYMMETRY_TOL,
)

logger = logging.getLogger(__name__)

RESIDUAL_FAIL_TOL = 1e-8


class SolverMethod:
    MFMFE = "mfmfe"
    MIXED_EXACT = "mixed_exact"
    CHOICES = (MFMFE, MIXED_EXACT)


@dataclass
class SolverOptions:
    """Knobs of the pressure solve; mirrors the solver section of the settings."""
    direct_max_elements: int = 50000
    cg_rtol: float = 1e-12
    cg_maxiter: int = 20000
    residual_tol: float = 1e-10
    audit_schur_max_elements: int = 2000

    @classmethod
    def from_settings(cls, settings) -> "SolverOptions":
        return cls(
            direct_max_elements=settings.direct_max_elements,
            cg_rtol=settings.cg_rtol,
            cg_maxiter=settings.cg_maxiter,
            residual_tol=settings.residual_tol,
            audit_schur_max_elements=settings.audit_schur_max_elements,
        )


@dataclass
class SolverDiagnostics:
    """Structure audits and solve statistics of one solve."""
    method: str
    pressure_solver: str = "direct"
    iterations: int = 0
    residual: float = 0.0
    symmetry_defect: float = 0.0
    off_block: Optional[float] = None
    n_blocks: Optional[int] = None
    max_block: Optional[int] = None
    schur_min_eigenvalue: Optional[float] = None
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    """
    Velocity and pressure of one discrete solve.

    Attributes:
        mesh: Mesh solved on
        velocity: u_h (BDM1)
        pressure: p_h (P0)
        method: "mfmfe" or "mixed_exact"
        diagnostics: Audits and statistics of the solve
    """
    mesh: Mesh
    velocity: VelocityField
    pressure: PressureField
    method: str
    diagnostics: SolverDiagnostics = field(default_factory=lambda: SolverDiagnostics("mfmfe"))

    @property
    def quadrature_free(self) -> bool:
        """True when the pairing was integrated exactly, so η_Q plays no role in bounds."""
        return self.method == SolverMethod.MIXED_EXACT


def saddle_residual(system: MfmfeSystem, U: np.ndarray, P: np.ndarray) -> float:
    """Relative residual of [[A, Bᵀ], [B, 0]] [U; P] = [G; F]."""
    r_u = system.A @ U + system.B.T @ P - system.G
    r_p = system.B @ U - system.F
    rhs = np.sqrt(np.dot(system.G, system.G) + np.dot(system.F, system.F))
    res = np.sqrt(np.dot(r_u, r_u) + np.dot(r_p, r_p))
    return float(res / rhs) if rhs > 0 else float(res)


def _check_residual(residual: float, options: SolverOptions, what: str) -> None:
    if residual > RESIDUAL_FAIL_TOL:
        raise NumericalError(f"{what} residual {residual:.3e} exceeds {RESIDUAL_FAIL_TOL:.0e}")
    if residual > options.residual_tol:
        logger.warning(f"{what} residual {residual:.3e} above target {options.residual_tol:.0e}")


def _solve_pressure(schur: sp.csr_matrix, rhs: np.ndarray, options: SolverOptions,
                    diagnostics: SolverDiagnostics) -> np.ndarray:
    n = schur.shape[0]
    if n <= options.direct_max_elements:
        try:
            lu = spla.splu(schur.tocsc())
        except RuntimeError as e:
            raise NumericalError(f"Factorization of the pressure system failed: {e}")
        P = lu.solve(rhs)
        # one step of iterative refinement
        P += lu.solve(rhs - schur @ P)
        diagnostics.pressure_solver = "direct"
        return P

    diag = schur.diagonal()
    require(bool((diag > 0).all()), "Pressure system has a non-positive diagonal entry")
    preconditioner = sp.diags(1.0 / diag)
    counter = {"iterations": 0}

    def count(_):
        counter["iterations"] += 1

    P, info = spla.cg(schur, rhs, rtol=options.cg_rtol, maxiter=options.cg_maxiter,
                      M=preconditioner, callback=count)
    diagnostics.pressure_solver = "pcg-jacobi"
    diagnostics.iterations = counter["iterations"]
    if info != 0:
        raise NumericalError(
            f"CG on the pressure system stopped after {counter['iterations']} iterations "
            f"(info = {info})"
        )
    return P


def eliminate_and_solve(system: MfmfeSystem, options: Optional[SolverOptions] = None,
                        audit_schur: Optional[bool] = None) -> DiscreteSolution:
    """
    Eliminate the velocity vertex by vertex and solve for the pressure.

    Args:
        system: Assembled MFMFE system (BDM1, vertex rule)
        options: Pressure solver options
        audit_schur: Force or skip the SPD audit of S; by default it runs on
            meshes up to `options.audit_schur_max_elements` elements

    Returns:
        DiscreteSolution with the structure audits in its diagnostics

    Raises:
        NumericalError: On a failed audit, factorization or residual check
    """
    options = options or SolverOptions()
    start = time.perf_counter()
    diagnostics = SolverDiagnostics(SolverMethod.MFMFE)

    try:
        diagnostics.symmetry_defect = symmetry_defect(system.A)
        if diagnostics.symmetry_defect > SYMMETRY_TOL:
            raise NumericalError(f"A is not symmetric (defect {diagnostics.symmetry_defect:.3e})")

        blocks = factorize_vertex_blocks(system)
        diagnostics.off_block = blocks.off_block
        diagnostics.n_blocks = blocks.n_blocks
        diagnostics.max_block = int(blocks.sizes.max())

        schur = schur_complement(system, blocks)
        if audit_schur is None:
            audit_schur = system.n_pressure <= options.audit_schur_max_elements
        if audit_schur:
            diagnostics.schur_min_eigenvalue = schur_min_eigenvalue(schur)
            if not diagnostics.schur_min_eigenvalue > 0:
                raise NumericalError(
                    f"Schur complement is not positive definite "
                    f"(smallest eigenvalue {diagnostics.schur_min_eigenvalue:.3e})"
                )

        rhs = system.B @ blocks.solve(system.G) - system.F
        P = _solve_pressure(schur, rhs, options, diagnostics)
        U = blocks.solve(system.G - system.B.T @ P)

        diagnostics.residual = saddle_residual(system, U, P)
        _check_residual(diagnostics.residual, options, "Saddle system")
    except NumericalError as e:
        logger.error(f"MFMFE solve failed: {e}")
        raise

    diagnostics.seconds = time.perf_counter() - start
    logger.info(
        f"MFMFE solve on {system.n_pressure} elements: {diagnostics.n_blocks} vertex blocks, "
        f"{diagnostics.pressure_solver} pressure solve, residual {diagnostics.residual:.2e}"
    )
    mesh = system.mesh
    velocity = VelocityField(mesh, system.dofs, system.expand(U))
    return DiscreteSolution(mesh, velocity, PressureField(mesh, P), SolverMethod.MFMFE, diagnostics)


def solve_saddle_direct(system: MfmfeSystem, options: Optional[SolverOptions] = None):
    """
    Solve the full indefinite system with a sparse direct factorization.

    Returns:
        (U, P, residual)
    """
    options = options or SolverOptions()
    rhs = np.concatenate([system.G, system.F])
    try:
        solution = spla.spsolve(system.saddle_matrix(), rhs)
    except RuntimeError as e:
        raise NumericalError(f"Direct factorization of the saddle system failed: {e}")
    if not np.all(np.isfinite(solution)):
        raise NumericalError("Direct saddle solve returned non-finite values")
    U, P = solution[:system.n_velocity], solution[system.n_velocity:]
    residual = saddle_residual(system, U, P)
    _check_residual(residual, options, "Saddle system")
    return U, P, residual


def solve_mixed_exact(mesh: Mesh, problem, options: Optional[SolverOptions] = None) -> DiscreteSolution:
    """
    BDM1/P0 mixed solution with the pairing integrated by the seven-point rule.

    Raises:
        NumericalError: If the direct solve fails
    """
    start = time.perf_counter()
    system = assemble(mesh, problem, rule=GAUSS7)
    diagnostics = SolverDiagnostics(SolverMethod.MIXED_EXACT, pressure_solver="direct-saddle")
    diagnostics.symmetry_defect = symmetry_defect(system.A)
    try:
        U, P, diagnostics.residual = solve_saddle_direct(system, options)
    except NumericalError as e:
        logger.error(f"Mixed solve failed: {e}")
        raise
    diagnostics.seconds = time.perf_counter() - start
    logger.info(f"Exact mixed solve on {mesh.n_elements} elements, residual {diagnostics.residual:.2e}")
    velocity = VelocityField(mesh, system.dofs, system.expand(U))
    return DiscreteSolution(mesh, velocity, PressureField(mesh, P), SolverMethod.MIXED_EXACT,
                            diagnostics)


def solve(mesh: Mesh, problem, method: str = SolverMethod.MFMFE,
          options: Optional[SolverOptions] = None, rule: QuadRule = VERTEX_RULE) -> DiscreteSolution:
    """Assemble and solve with the requested method."""
    if method == SolverMethod.MFMFE:
        return eliminate_and_solve(assemble(mesh, problem, rule), options)
    if method == SolverMethod.MIXED_EXACT:
        return solve_mixed_exact(mesh, problem, options)
    raise ValueError(f"Unknown solver method: {method}")


@dataclass(frozen=True)
class SolverDifference:
    """‖K^{-1/2}(u_h^MFMFE - u_h^mixed)‖ and pressure difference on one mesh."""
    velocity: float
    pressure: float


def solver_difference(mfmfe: DiscreteSolution, mixed: DiscreteSolution, problem) -> SolverDifference:
    """Compare two solutions on the same mesh in the K⁻¹-weighted norm (seven-point rule)."""
    mesh = mfmfe.mesh
    dofs = mfmfe.velocity.dofs
    diff = (mfmfe.velocity.coefficients - mixed.velocity.coefficients)[dofs.element_dofs]
    local = local_mass_matrices(mesh, problem.coefficient(mesh), dofs, GAUSS7)
    velocity = float(np.sqrt(max(np.einsum("tk,tkl,tl->", diff, local, diff), 0.0)))
    dp = mfmfe.pressure.values - mixed.pressure.values
    pressure = float(np.sqrt(np.sum(mesh.areas * dp ** 2)))
    return SolverDifference(velocity, pressure)
