"""
Residual a posteriori estimators for the mixed Darcy discretization.

Per element T the discretization indicator collects

    h_T² ‖f - ∇·u_h‖²_T  +  Σ_{E ⊂ ∂T} h_E J_E²

where J_E measures the tangential jump of K⁻¹u_h across interior edges and
its mismatch with the tangential derivative of g on Dirichlet edges. The
quadrature indicator is h_T² ‖u_h‖²_{1,T}. Interior jumps enter once for each
of their two elements.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np

from ..fem.projections import project_Q_h
from ..fem.quadrature import GAUSS7, QuadRule, edge_gauss, integrate_elements, local_norm_matrices
from ..mesh.mesh import BoundaryTag, Mesh
from ..utils.validators import ConfigurationError
from .errors import ExactErrors

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EstimatorReport:
    """
    Elementwise and global indicator values.

    Attributes:
        residual: h_T²‖f - ∇·u_h‖²_T where counted (zero with include_hot off)
        oscillation: h_T²‖f - ∇·u_h‖²_T, always computed
        jump: Σ_{E∈ε_T} h_E J_E²
        eta_q_sq: h_T²(‖u_h‖²_T + ‖∇u_h‖²_T)
        eta_sq: Marking indicator residual + jump + eta_q_sq
        edge_jump: J_E per edge
        edge_hot: ‖∂²g/∂t²‖²_E on Dirichlet edges, zero elsewhere
        eta_h, eta_Q: Global indicators
        quadrature_free: The solution came from the exactly integrated scheme,
            so η_Q is reported but counts as zero in the bounds
    """
    residual: np.ndarray
    oscillation: np.ndarray
    jump: np.ndarray
    eta_q_sq: np.ndarray
    eta_sq: np.ndarray
    edge_jump: np.ndarray
    edge_hot: np.ndarray
    eta_h: float
    eta_Q: float
    include_hot: bool = True
    quadrature_free: bool = False

    @property
    def eta_Q_bound(self) -> float:
        """η_Q as it enters reliability and efficiency bounds."""
        return 0.0 if self.quadrature_free else self.eta_Q

    @property
    def eta_total(self) -> float:
        return float(np.hypot(self.eta_h, self.eta_Q_bound))

    @property
    def n_elements(self) -> int:
        return int(self.eta_sq.size)


def tangential_jump(
    mesh: Mesh,
    velocity,
    coefficient,
    dirichlet_gradient=None,
    dirichlet_hessian=None,
    include_hot: bool = True,
    rule: Optional[QuadRule] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    J_E for every edge.

    Interior: ‖[γ_t(K⁻¹u_h)]‖_E. Dirichlet: (‖γ_t(K⁻¹u_h) + ∂g/∂t‖²_E
    + h_E²‖∂²g/∂t²‖²_E)^{1/2}, where t = (-n₂, n₁). Neumann: 0.

    Args:
        mesh: Mesh
        velocity: u_h
        coefficient: Permeability with `inverse_at(points, elements)`
        dirichlet_gradient: ∇g as an element-aware field
        dirichlet_hessian: Hessian of g as an element-aware field
        include_hot: Keep the second derivative term
        rule: Edge rule, 3-point Gauss by default

    Returns:
        (J per edge, ‖∂²g/∂t²‖²_E per edge)

    Raises:
        ConfigurationError: If Dirichlet edges exist but g derivatives are missing
    """
    rule = rule or edge_gauss(3)
    params = rule.points
    nq = params.size
    pts = mesh.edge_points(params)
    flat = pts.reshape(-1, 2)
    tangents = mesh.edge_tangents

    gamma = []
    for side in (0, 1):
        owner = mesh.edge_elements[:, side]
        safe = np.where(owner >= 0, owner, 0)
        trace = velocity.edge_trace(side, params)
        kinv = coefficient.inverse_at(flat, np.repeat(safe, nq)).reshape(-1, nq, 2, 2)
        gamma.append(np.einsum("eqab,eqb,ea->eq", kinv, trace, tangents))

    weights = rule.weights
    jump_sq = np.zeros(mesh.n_edges)
    hot_sq = np.zeros(mesh.n_edges)

    interior = mesh.boundary_tags == BoundaryTag.INTERIOR
    diff = gamma[0][interior] - gamma[1][interior]
    jump_sq[interior] = mesh.edge_lengths[interior] * ((diff ** 2) @ weights)

    dirichlet = mesh.dirichlet_edges
    if dirichlet.size:
        if dirichlet_gradient is None or dirichlet_hessian is None:
            raise ConfigurationError("Dirichlet edges need the tangential derivatives of g")
        lengths = mesh.edge_lengths[dirichlet]
        d_pts = pts[dirichlet].reshape(-1, 2)
        d_elems = np.repeat(mesh.edge_elements[dirichlet, 0], nq)
        t = np.repeat(tangents[dirichlet], nq, axis=0)
        dg = np.einsum("na,na->n", dirichlet_gradient(d_pts, d_elems), t).reshape(-1, nq)
        d2g = np.einsum("na,nab,nb->n", t, dirichlet_hessian(d_pts, d_elems), t).reshape(-1, nq)
        hot_sq[dirichlet] = lengths * ((d2g ** 2) @ weights)
        jump_sq[dirichlet] = lengths * (((gamma[0][dirichlet] + dg) ** 2) @ weights)
        if include_hot:
            jump_sq[dirichlet] += lengths ** 2 * hot_sq[dirichlet]

    return np.sqrt(jump_sq), hot_sq


def compute_report(mesh: Mesh, solution, problem, include_hot: bool = True) -> EstimatorReport:
    """
    Evaluate η_h and η_Q with their elementwise parts for a discrete solution.

    Args:
        mesh: Mesh of the solution
        solution: DiscreteSolution from either solver
        problem: BenchmarkProblem supplying K, f and g
        include_hot: Keep ‖h(f - ∇·u_h)‖ and the ∂²g/∂t² term in η_h
    """
    velocity = solution.velocity
    coefficient = problem.coefficient(mesh)
    source = problem.element_field(mesh, problem.source)

    div = velocity.divergence()
    defect = integrate_elements(mesh, lambda x, t: (source(x, t) - div[t]) ** 2, GAUSS7)
    h_sq = mesh.diameters ** 2
    oscillation = h_sq * defect
    residual = oscillation if include_hot else np.zeros_like(oscillation)

    edge_jump, edge_hot = tangential_jump(
        mesh, velocity, coefficient,
        problem.element_field(mesh, problem.dirichlet_gradient),
        problem.element_field(mesh, problem.dirichlet_hessian),
        include_hot,
    )
    weighted = mesh.edge_lengths * edge_jump ** 2
    jump = weighted[mesh.element_edges].sum(axis=1)

    mass, stiffness = local_norm_matrices(mesh, velocity.dofs)
    local = velocity.local_coefficients()
    h1_sq = np.einsum("tk,tkl,tl->t", local, mass + stiffness, local)
    eta_q_sq = h_sq * np.maximum(h1_sq, 0.0)

    quadrature_free = bool(getattr(solution, "quadrature_free", False))
    eta_sq = residual + jump + (0.0 if quadrature_free else eta_q_sq)

    report = EstimatorReport(
        residual=residual,
        oscillation=oscillation,
        jump=jump,
        eta_q_sq=eta_q_sq,
        eta_sq=eta_sq,
        edge_jump=edge_jump,
        edge_hot=edge_hot,
        eta_h=float(np.sqrt(np.sum(residual + jump))),
        eta_Q=float(np.sqrt(np.sum(eta_q_sq))),
        include_hot=include_hot,
        quadrature_free=quadrature_free,
    )
    logger.info(f"Estimator on {mesh.n_elements} elements: eta_h = {report.eta_h:.4e}, "
                f"eta_Q = {report.eta_Q:.4e}")
    return report


# -- bounds ----------------------------------------------------------------------

def _ratio(numerator: float, denominator: float) -> float:
    """numerator / denominator with 0/0 = 0."""
    if denominator > 0:
        return numerator / denominator
    return 0.0 if numerator == 0 else float("inf")


@dataclass(frozen=True)
class ReliabilityCheck:
    """C_rel = err_u / (η_h² + η_Q²)^{1/2}; flagged when the estimator vanishes but the error does not."""
    c_rel: float
    error: float
    estimator: float
    flagged: bool


ZERO_TOL = 1e-14


def reliability_check(report: EstimatorReport, err_u: float) -> ReliabilityCheck:
    estimator = report.eta_total
    flagged = estimator <= ZERO_TOL and err_u > ZERO_TOL
    if flagged:
        logger.warning(f"Estimator vanishes while the velocity error is {err_u:.3e}")
        c_rel = float("inf")
    elif estimator <= ZERO_TOL:
        c_rel = 0.0
    else:
        c_rel = err_u / estimator
    return ReliabilityCheck(c_rel, err_u, estimator, flagged)


@dataclass(frozen=True)
class EfficiencyCheck:
    """
    Both sides of the efficiency bound and the two pressure bounds.

    Attributes:
        lhs, rhs, ratio: η_h + η_Q + h_max⁻¹‖hK⁻¹u_h‖ against
            err_u + ‖h⁻¹(p - p_h)‖ + ‖h(f - Q_h f)‖ + (Σ h_E³‖∂²g/∂t²‖²_E)^{1/2}
        pressure_lhs, pressure_rhs, pressure_ratio: ‖Q_h p - p_h‖ against
            h_max(η_h + η_Q) + ‖h(f - ∇·u_h)‖
        full_pressure_lhs, full_pressure_rhs, full_pressure_ratio: ‖p - p_h‖ against
            h_max(η_h + η_Q) + ‖hK⁻¹u_h‖ + ‖h(f - ∇·u_h)‖
    """
    lhs: float
    rhs: float
    ratio: float
    pressure_lhs: float
    pressure_rhs: float
    pressure_ratio: float
    full_pressure_lhs: float
    full_pressure_rhs: float
    full_pressure_ratio: float


def efficiency_check(mesh: Mesh, solution, problem, report: EstimatorReport,
                     errors: ExactErrors) -> EfficiencyCheck:
    """Evaluate the efficiency inequality and both pressure bounds."""
    h = mesh.diameters
    h_max = mesh.h_max
    coefficient = problem.coefficient(mesh)
    source = problem.element_field(mesh, problem.source)

    uh = solution.velocity.evaluate(GAUSS7.points)
    pts = mesh.map_points(GAUSS7.points)
    nt, nq = pts.shape[:2]
    kinv = coefficient.inverse_at(pts.reshape(-1, 2), np.repeat(np.arange(nt), nq)).reshape(nt, nq, 2, 2)
    flux = np.einsum("tqab,tqb->tqa", kinv, uh)
    h_kinv_u = float(np.sqrt(np.sum(h ** 2 * mesh.dets * (np.sum(flux ** 2, axis=2) @ GAUSS7.weights))))

    h_inv_p = float(np.sqrt(np.sum(errors.pressure_sq / h ** 2)))
    qhf = project_Q_h(mesh, source).values
    osc_f = float(np.sqrt(np.sum(h ** 2 * integrate_elements(
        mesh, lambda x, t: (source(x, t) - qhf[t]) ** 2, GAUSS7))))
    boundary_hot = float(np.sqrt(np.sum(mesh.edge_lengths ** 3 * report.edge_hot)))
    osc_div = float(np.sqrt(np.sum(report.oscillation)))

    eta_sum = report.eta_h + report.eta_Q_bound
    lhs = eta_sum + h_kinv_u / h_max
    rhs = errors.err_u + h_inv_p + osc_f + boundary_hot
    p_rhs = h_max * eta_sum + osc_div
    full_rhs = h_max * eta_sum + h_kinv_u + osc_div

    return EfficiencyCheck(
        lhs=lhs, rhs=rhs, ratio=_ratio(lhs, rhs),
        pressure_lhs=errors.err_Qhp, pressure_rhs=p_rhs,
        pressure_ratio=_ratio(errors.err_Qhp, p_rhs),
        full_pressure_lhs=errors.err_p, full_pressure_rhs=full_rhs,
        full_pressure_ratio=_ratio(errors.err_p, full_rhs),
    )


def efficiency_index(report: EstimatorReport, err_u: float) -> float:
    """Estimated over true velocity error, 0 when both vanish."""
    return _ratio(report.eta_total, err_u)
