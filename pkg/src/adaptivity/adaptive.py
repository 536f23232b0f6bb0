"""
Dörfler marking and the solve, estimate, mark, refine loop.

The loop records one history row per solved mesh and writes the per-iteration
artifacts through a FileHandler. It stops after `max_iterations` solves, or
before solving a mesh with more than `max_elements` elements.
"""

from dataclasses import dataclass, field, fields, astuple
from typing import List, Optional, Tuple, Union
import logging
import time

import numpy as np

from ..analysis.errors import ExactErrors, exact_errors
from ..analysis.estimator import EstimatorReport, compute_report, efficiency_index
from ..analysis.postprocess import build_l_h, nodal_average_pressure, solve_auxiliary_rt0
from ..mesh.mesh import Mesh, audit_conformity, build_initial_mesh
from ..mesh.refinement import MarkedSet, refine, uniform_refine
from ..solver.assembly import assemble, factorize_vertex_blocks, schur_complement
from ..solver.solvers import DiscreteSolution, SolverMethod, SolverOptions, solve
from ..utils.validators import AdaptiveRunError, MeshError, NumericalError, ValidationError, validate_theta

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iter", "N", "ndof_u", "ndof_p", "h_max", "h_min", "eta_h", "eta_Q",
                   "eta_total", "err_u", "err_p", "err_Qhp", "eff_index", "seconds")
CENTROID = np.array([[1.0 / 3.0, 1.0 / 3.0]])


def dorfler_mark(indicators: Union[EstimatorReport, np.ndarray], theta: float) -> MarkedSet:
    """
    Smallest set of elements carrying a θ share of the squared indicators.

    Elements are taken by η²_T descending, ties by index ascending, until the
    running sum reaches θ times the total.

    Args:
        indicators: EstimatorReport or (nt,) squared indicators
        theta: Marking parameter in (0, 1]

    Returns:
        MarkedSet, empty when every indicator vanishes
    """
    validate_theta(theta)
    eta_sq = np.asarray(getattr(indicators, "eta_sq", indicators), dtype=float)
    n = eta_sq.size
    if n == 0 or not eta_sq.sum() > 0:
        return MarkedSet(np.empty(0, dtype=np.int64))

    order = np.lexsort((np.arange(n), -eta_sq))
    cumsum = np.cumsum(eta_sq[order])
    count = min(int(np.searchsorted(cumsum, theta * cumsum[-1], side="left")) + 1, n)
    marked = MarkedSet.of(order[:count])
    logger.debug(f"Marked {count} of {n} elements (theta = {theta})")
    return marked


@dataclass(frozen=True)
class HistoryRow:
    """One line of history.csv; errors are None when no exact solution exists."""
    iteration: int
    n_elements: int
    ndof_u: int
    ndof_p: int
    h_max: float
    h_min: float
    eta_h: float
    eta_Q: float
    eta_total: float
    err_u: Optional[float]
    err_p: Optional[float]
    err_Qhp: Optional[float]
    eff_index: Optional[float]
    seconds: float

    def values(self) -> tuple:
        return astuple(self)


@dataclass
class ConvergenceHistory:
    rows: List[HistoryRow] = field(default_factory=list)

    columns = HISTORY_COLUMNS

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: HistoryRow) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        """Values of one history column; missing values become nan."""
        attribute = {"iter": "iteration", "N": "n_elements"}.get(name, name)
        if attribute not in {f.name for f in fields(HistoryRow)}:
            raise KeyError(f"Unknown history column: {name}")
        return np.array([np.nan if getattr(r, attribute) is None else getattr(r, attribute)
                         for r in self.rows], dtype=float)

    def value_rows(self) -> List[tuple]:
        return [row.values() for row in self.rows]

    def slope(self, name: str = "err_u", tail: int = 4) -> float:
        return fit_slope(self.column("N"), self.column(name), tail)


def fit_slope(n_elements: np.ndarray, values: np.ndarray, tail: int = 4) -> float:
    """
    Least-squares slope of log(values) against log(N) over the last `tail` points.

    Raises:
        ValueError: With fewer than two usable points
    """
    n_elements = np.asarray(n_elements, dtype=float)
    values = np.asarray(values, dtype=float)
    usable = np.isfinite(values) & (values > 0) & (n_elements > 0)
    x = np.log(n_elements[usable])[-tail:]
    y = np.log(values[usable])[-tail:]
    if x.size < 2:
        raise ValueError("A slope needs at least two positive values")
    return float(np.polyfit(x, y, 1)[0])


@dataclass(frozen=True, eq=False)
class AdaptiveResult:
    """
    Outcome of a run.

    Attributes:
        history: One row per solved mesh
        mesh: Last solved mesh
        solution: Solution on that mesh
        report: Estimator on that mesh
        errors: Exact errors on that mesh, None without an exact solution
        stop_reason: "max_iterations", "max_elements" or "nothing_marked"
        shape_violations: Iterations whose mesh broke the minimum angle floor
    """
    history: ConvergenceHistory
    mesh: Mesh
    solution: DiscreteSolution
    report: EstimatorReport
    errors: Optional[ExactErrors]
    stop_reason: str
    shape_violations: Tuple[int, ...] = ()


def starting_mesh(problem, uniform_levels: int = 0) -> Mesh:
    """Initial mesh of the problem's domain refined uniformly `uniform_levels` times."""
    mesh = build_initial_mesh(problem.domain)
    for _ in range(uniform_levels):
        mesh = uniform_refine(mesh)
    return mesh


def _write_artifacts(file_handler, mesh: Mesh, iteration: int, problem, solution: DiscreteSolution,
                     report: EstimatorReport, errors: Optional[ExactErrors], output) -> None:
    regions = problem.element_regions(mesh)
    if output.write_vtk:
        auxiliary = solve_auxiliary_rt0(mesh, problem)
        l_h = build_l_h(mesh, auxiliary.velocity, auxiliary.pressure, auxiliary.mean)
        file_handler.write_mesh(mesh, iteration, regions)
        file_handler.write_solution(
            mesh, iteration,
            pressure=solution.pressure.values,
            velocity=solution.velocity.evaluate(CENTROID)[:, 0, :],
            nodal_pressure=nodal_average_pressure(mesh, solution.pressure),
            eta_sq=report.eta_sq,
            regions=regions,
            l_h=l_h.vertex_values(),
        )
    if output.write_reports:
        columns = {
            "element": np.arange(mesh.n_elements),
            "region": regions,
            "h_T": mesh.diameters,
            "residual": report.residual,
            "oscillation": report.oscillation,
            "jump": report.jump,
            "eta_q_sq": report.eta_q_sq,
            "eta_sq": report.eta_sq,
        }
        if errors is not None:
            columns["err_u_sq"] = errors.velocity_sq
            columns["err_p_sq"] = errors.pressure_sq
        file_handler.write_report(iteration, columns)
    if output.dump_matrices and solution.method == SolverMethod.MFMFE:
        system = assemble(mesh, problem)
        S = schur_complement(system, factorize_vertex_blocks(system))
        file_handler.write_matrices(iteration, A=system.A, B=system.B, S=S)


def _check_mesh(mesh: Mesh, iteration: int, min_angle_floor: float) -> bool:
    """
    Conformity and shape audit of a mesh about to be solved.

    Returns:
        False if the minimum angle is below the floor

    Raises:
        MeshError: If the mesh is not conforming
    """
    problems = audit_conformity(mesh)
    if problems:
        raise MeshError(f"Refined mesh is not conforming: {'; '.join(problems)}")
    if mesh.min_angle() < min_angle_floor:
        logger.warning(f"Iteration {iteration}: minimum angle {np.degrees(mesh.min_angle()):.3f} deg "
                       f"below half the initial minimum")
        return False
    return True


def run_adaptive(problem, settings, file_handler=None, initial_mesh: Optional[Mesh] = None) -> AdaptiveResult:
    """
    Run the solve, estimate, mark, refine loop.

    Args:
        problem: BenchmarkProblem
        settings: ApplicationSettings; the adaptive, solver, estimator and
            output sections are used
        file_handler: FileHandler receiving the artifacts, None to write nothing
        initial_mesh: Starting mesh, by default the problem's initial mesh
            refined `settings.problem.uniform_levels` times

    Returns:
        AdaptiveResult of the last solved mesh

    Raises:
        AdaptiveRunError: If an iteration fails; the history up to the failure
            has been written
    """
    adaptive = settings.adaptive
    output = settings.output
    options = SolverOptions.from_settings(settings.solver)
    include_hot = settings.estimator.include_hot
    uniform = adaptive.mode == "uniform"

    mesh = initial_mesh if initial_mesh is not None else starting_mesh(problem, settings.problem.uniform_levels)
    min_angle_floor = 0.5 * mesh.min_angle()
    history = ConvergenceHistory()
    stop_reason = "max_iterations"
    shape_violations: List[int] = []
    state = None

    logger.info(f"Starting {adaptive.mode} run of {problem.name} on {mesh.n_elements} elements")
    for iteration in range(adaptive.max_iterations):
        if mesh.n_elements > adaptive.max_elements:
            stop_reason = "max_elements"
            logger.info(f"Stopping: {mesh.n_elements} elements exceed {adaptive.max_elements}")
            break

        start = time.perf_counter()
        try:
            if not _check_mesh(mesh, iteration, min_angle_floor):
                shape_violations.append(iteration)
            solution = solve(mesh, problem, settings.solver.method, options)
            report = compute_report(mesh, solution, problem, include_hot)
            errors = exact_errors(mesh, solution, problem) if problem.has_exact else None
            seconds = time.perf_counter() - start

            row = HistoryRow(
                iteration=iteration,
                n_elements=mesh.n_elements,
                ndof_u=solution.velocity.dofs.n_dofs,
                ndof_p=mesh.n_elements,
                h_max=mesh.h_max,
                h_min=mesh.h_min,
                eta_h=report.eta_h,
                eta_Q=report.eta_Q,
                eta_total=report.eta_total,
                err_u=errors.err_u if errors else None,
                err_p=errors.err_p if errors else None,
                err_Qhp=errors.err_Qhp if errors else None,
                eff_index=efficiency_index(report, errors.err_u) if errors else None,
                seconds=seconds if output.record_timings else 0.0,
            )
            history.append(row)
            state = (mesh, solution, report, errors)

            if file_handler is not None:
                _write_artifacts(file_handler, mesh, iteration, problem, solution, report, errors, output)
                file_handler.write_history(history.columns, history.value_rows())
        except (NumericalError, ValidationError) as e:
            logger.error(f"Iteration {iteration} failed: {e}")
            if file_handler is not None:
                file_handler.write_history(history.columns, history.value_rows())
            raise AdaptiveRunError(f"Iteration {iteration} failed: {e}", iteration) from e

        logger.info(
            f"Iteration {iteration}: N = {row.n_elements}, eta_h = {row.eta_h:.4e}, "
            f"eta_Q = {row.eta_Q:.4e}"
            + (f", err_u = {row.err_u:.4e}" if row.err_u is not None else "")
        )
        if not uniform and iteration >= 3 and row.eta_total > history.rows[-2].eta_total:
            logger.warning(f"Iteration {iteration}: total estimator grew from "
                           f"{history.rows[-2].eta_total:.4e} to {row.eta_total:.4e}")

        if iteration == adaptive.max_iterations - 1:
            break
        marked = MarkedSet.everything(mesh) if uniform else dorfler_mark(report, adaptive.theta)
        if len(marked) == 0:
            stop_reason = "nothing_marked"
            logger.info("Stopping: every indicator vanishes")
            break
        mesh = refine(mesh, marked)

    if state is None:
        raise AdaptiveRunError("No mesh was solved: the starting mesh exceeds max_elements", 0)
    mesh, solution, report, errors = state
    if shape_violations:
        logger.error(f"Minimum angle floor broken at iterations {shape_violations}")
    return AdaptiveResult(history, mesh, solution, report, errors, stop_reason, tuple(shape_violations))
