"""
Verification constructions built on a discrete solution.

The auxiliary problem solves the RT0/P0 mixed system with the elementwise
mean K̄⁻¹ of K⁻¹, integrated exactly. Its velocity ũ_h is affine with a
scalar divergence part on each element, so -K̄⁻¹ũ_h is the gradient of a
quadratic l_h, fixed by its element mean p̃_h. The interior-edge means of l_h
match across elements and equal the means of g on Dirichlet edges.
"""

from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from ..fem.projections import interpolate_Pi0
from ..fem.quadrature import (
    GAUSS7,
    InverseTensorCoefficient,
    edge_gauss,
    integrate_elements,
    local_mass_matrices,
)
from ..fem.spaces import PressureField, SpaceKind, VelocityField, build_dof_map
from ..mesh.mesh import BoundaryTag, Mesh
from ..solver.assembly import assemble_system
from ..solver.solvers import SolverOptions, solve_saddle_direct
from ..utils.validators import NumericalError

logger = logging.getLogger(__name__)

CENTROID = np.array([[1.0 / 3.0, 1.0 / 3.0]])
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MeanCoefficient:
    """Per element K̄⁻¹ = (1/|T|)∫_T K⁻¹, shape (nt, 2, 2)."""
    inverse: np.ndarray

    def eigenvalue_range(self):
        eig = np.linalg.eigvalsh(self.inverse)
        return float(eig.min()), float(eig.max())

    def as_coefficient(self) -> InverseTensorCoefficient:
        return InverseTensorCoefficient(self.inverse)


def mean_coefficient(mesh: Mesh, problem) -> MeanCoefficient:
    """Element means of K⁻¹ by the seven-point rule."""
    coefficient = problem.coefficient(mesh)
    inverse = integrate_elements(mesh, coefficient.inverse_at, GAUSS7) / mesh.areas[:, None, None]
    inverse = 0.5 * (inverse + inverse.transpose(0, 2, 1))
    return MeanCoefficient(inverse)


@dataclass(frozen=True, eq=False)
class AuxiliarySolution:
    velocity: VelocityField
    pressure: PressureField
    mean: MeanCoefficient
    residual: float


def solve_auxiliary_rt0(mesh: Mesh, problem, mean: Optional[MeanCoefficient] = None,
                        options: Optional[SolverOptions] = None) -> AuxiliarySolution:
    """
    RT0/P0 mixed solution with the exactly integrated pairing (K̄⁻¹ ·, ·).

    Raises:
        NumericalError: If the direct saddle solve fails
    """
    mean = mean or mean_coefficient(mesh, problem)
    dofs = build_dof_map(mesh, SpaceKind.RT0)
    system = assemble_system(
        mesh,
        mean.as_coefficient(),
        problem.element_field(mesh, problem.source),
        problem.element_field(mesh, problem.dirichlet),
        dofs,
        GAUSS7,
    )
    try:
        U, P, residual = solve_saddle_direct(system, options)
    except NumericalError as e:
        logger.error(f"Auxiliary RT0 solve failed: {e}")
        raise
    logger.debug(f"Auxiliary RT0 solve on {mesh.n_elements} elements, residual {residual:.2e}")
    return AuxiliarySolution(
        VelocityField(mesh, dofs, system.expand(U)), PressureField(mesh, P), mean, residual)


@dataclass(frozen=True, eq=False)
class PostprocessedPressure:
    """
    l_h(x) = d + c·y + ½ yᵀ M y with y = x - x_T on every element.

    Attributes:
        centers: (nt, 2) element centroids x_T
        constant: (nt,) d
        linear: (nt, 2) c
        quadratic: (nt, 2, 2) symmetric M
    """
    mesh: Mesh
    centers: np.ndarray
    constant: np.ndarray
    linear: np.ndarray
    quadratic: np.ndarray

    def evaluate(self, points: np.ndarray, elements: np.ndarray) -> np.ndarray:
        y = points - self.centers[elements]
        return (self.constant[elements] + np.einsum("na,na->n", self.linear[elements], y)
                + 0.5 * np.einsum("na,nab,nb->n", y, self.quadratic[elements], y))

    def gradient(self, points: np.ndarray, elements: np.ndarray) -> np.ndarray:
        y = points - self.centers[elements]
        return self.linear[elements] + np.einsum("nab,nb->na", self.quadratic[elements], y)

    def vertex_values(self) -> np.ndarray:
        """l_h at the three vertices of every element, shape (nt, 3)."""
        nt = self.mesh.n_elements
        corners = self.mesh.vertices[self.mesh.triangles].reshape(-1, 2)
        return self.evaluate(corners, np.repeat(np.arange(nt), 3)).reshape(nt, 3)


def build_l_h(mesh: Mesh, velocity: VelocityField, pressure: PressureField,
              mean: MeanCoefficient) -> PostprocessedPressure:
    """
    Quadratic with ∇l_h = -K̄⁻¹ũ_h and element mean p̃_h.

    Raises:
        NumericalError: If -K̄⁻¹∇ũ_h is not symmetric, i.e. ũ_h is not an RT0 field
    """
    centers = mesh.centroids.copy()
    at_center = velocity.evaluate(CENTROID)[:, 0, :]
    linear = -np.einsum("tab,tb->ta", mean.inverse, at_center)
    quadratic = -np.einsum("tab,tbc->tac", mean.inverse, velocity.gradient())

    scale = np.maximum(np.abs(quadratic).max(axis=(1, 2)), 1.0)
    asymmetry = np.abs(quadratic - quadratic.transpose(0, 2, 1)).max(axis=(1, 2)) / scale
    if asymmetry.max() > SYMMETRY_TOL:
        bad = int(np.argmax(asymmetry))
        raise NumericalError(
            f"Postprocessed pressure Hessian is not symmetric on element {bad} "
            f"(defect {asymmetry[bad]:.3e})"
        )
    quadratic = 0.5 * (quadratic + quadratic.transpose(0, 2, 1))

    def half_form(points, elements):
        y = points - centers[elements]
        return 0.5 * np.einsum("na,nab,nb->n", y, quadratic[elements], y)

    mean_quadratic = integrate_elements(mesh, half_form, GAUSS7) / mesh.areas
    constant = pressure.values - mean_quadratic
    return PostprocessedPressure(mesh, centers, constant, linear, quadratic)


@dataclass(frozen=True)
class PostprocessAudit:
    """Largest scaled defects of the l_h identities."""
    gradient_defect: float
    mean_defect: float
    continuity_defect: float
    dirichlet_defect: float

    def passed(self, tol: float = 1e-10) -> bool:
        return max(self.gradient_defect, self.mean_defect,
                   self.continuity_defect, self.dirichlet_defect) <= tol


def audit_l_h(mesh: Mesh, l_h: PostprocessedPressure, auxiliary: AuxiliarySolution,
              problem) -> PostprocessAudit:
    """
    Check ∇l_h = -K̄⁻¹ũ_h at the vertices, the element means, the interior
    mean-trace continuity and the Dirichlet mean match.

    Edge defects are |∫_E ...| / (h_E · scale) with scale = max(1, max|p̃_h|);
    the edge rule is the one that built the Dirichlet load.
    """
    nt = mesh.n_elements
    scale = max(1.0, float(np.abs(auxiliary.pressure.values).max()))

    corners = mesh.vertices[mesh.triangles].reshape(-1, 2)
    elements = np.repeat(np.arange(nt), 3)
    flux = auxiliary.velocity.vertex_values().reshape(-1, 2)
    target = -np.einsum("nab,nb->na", auxiliary.mean.inverse[elements], flux)
    grad_scale = max(1.0, float(np.abs(target).max()))
    gradient_defect = float(np.abs(l_h.gradient(corners, elements) - target).max() / grad_scale)

    means = integrate_elements(mesh, l_h.evaluate, GAUSS7) / mesh.areas
    mean_defect = float(np.abs(means - auxiliary.pressure.values).max() / scale)

    rule = edge_gauss(3)
    pts = mesh.edge_points(rule.points)
    nq = rule.size
    flat = pts.reshape(-1, 2)

    def edge_mean(side_elements):
        values = l_h.evaluate(flat, np.repeat(side_elements, nq)).reshape(-1, nq)
        return mesh.edge_lengths * (values @ rule.weights)

    first = edge_mean(mesh.edge_elements[:, 0])
    interior = mesh.boundary_tags == BoundaryTag.INTERIOR
    second = edge_mean(np.where(interior, mesh.edge_elements[:, 1], mesh.edge_elements[:, 0]))
    lengths = mesh.edge_lengths
    continuity = np.abs(first - second)[interior] / (lengths[interior] * scale)

    dirichlet = mesh.dirichlet_edges
    g = problem.element_field(mesh, problem.dirichlet)
    g_vals = np.asarray(g(flat, np.repeat(mesh.edge_elements[:, 0], nq))).reshape(-1, nq)
    g_int = lengths * (g_vals @ rule.weights)
    dirichlet_defect = np.abs(first - g_int)[dirichlet] / (lengths[dirichlet] * scale)

    audit = PostprocessAudit(
        gradient_defect=gradient_defect,
        mean_defect=mean_defect,
        continuity_defect=float(continuity.max()) if continuity.size else 0.0,
        dirichlet_defect=float(dirichlet_defect.max()) if dirichlet_defect.size else 0.0,
    )
    logger.debug(f"l_h audit: {audit}")
    return audit


def nodal_average_pressure(mesh: Mesh, pressure: PressureField) -> np.ndarray:
    """Unweighted mean of the incident element values at every vertex."""
    corners = mesh.triangles.ravel()
    totals = np.bincount(corners, weights=np.repeat(pressure.values, 3), minlength=mesh.n_vertices)
    counts = np.bincount(corners, minlength=mesh.n_vertices)
    return totals / np.maximum(counts, 1)


def auxiliary_gap(mesh: Mesh, auxiliary: AuxiliarySolution, velocity: VelocityField) -> float:
    """‖K̄^{-1/2}(ũ_h - Π₀u_h)‖, integrated exactly."""
    projected = interpolate_Pi0(mesh, velocity, auxiliary.velocity.dofs)
    diff = (auxiliary.velocity.coefficients - projected.coefficients)[auxiliary.velocity.dofs.element_dofs]
    local = local_mass_matrices(mesh, auxiliary.mean.as_coefficient(), auxiliary.velocity.dofs, GAUSS7)
    return float(np.sqrt(max(np.einsum("tk,tkl,tl->", diff, local, diff), 0.0)))
