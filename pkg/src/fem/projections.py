"""
Projection and interpolation operators: Q_h onto piecewise constants, Π₀
onto RT0 (edge-mean normal fluxes) and Π onto BDM1 (endpoint normal values).
"""

from typing import Callable, Optional, Union
import logging

import numpy as np

from ..mesh.mesh import Mesh
from .quadrature import GAUSS7, ElementField, QuadRule, edge_gauss, integrate_elements
from .spaces import DofMap, PressureField, SpaceKind, VelocityField, build_dof_map

logger = logging.getLogger(__name__)

VelocitySource = Union[VelocityField, ElementField]


def project_Q_h(mesh: Mesh, func: ElementField, rule: QuadRule = GAUSS7) -> PressureField:
    """
    L² projection onto piecewise constants: the element mean of `func`.

    Args:
        mesh: Mesh
        func: Scalar field f(points, elements)
        rule: Element rule, degree-5 Gauss by default

    Returns:
        PressureField with one mean per element
    """
    return PressureField(mesh, integrate_elements(mesh, func, rule) / mesh.areas)


def _edge_normal_samples(mesh: Mesh, func: ElementField, params: np.ndarray) -> np.ndarray:
    """v·n_E at edge parameters, evaluated from the element on side 0, shape (ne, nq)."""
    pts = mesh.edge_points(params)
    ne, nq = pts.shape[:2]
    values = np.asarray(func(pts.reshape(-1, 2), np.repeat(mesh.edge_elements[:, 0], nq)))
    values = values.reshape(ne, nq, 2)
    return np.einsum("eqa,ea->eq", values, mesh.edge_normals)


def interpolate_Pi0(
    mesh: Mesh,
    velocity: VelocitySource,
    dofs: Optional[DofMap] = None,
    rule: Optional[QuadRule] = None,
) -> VelocityField:
    """
    RT0 interpolant: each DOF is the mean normal component over its edge.

    Args:
        mesh: Mesh
        velocity: Discrete BDM1/RT0 field, or an element-aware vector field
        dofs: RT0 dof map to reuse
        rule: Edge rule for analytic input (3-point Gauss by default)
    """
    dofs = dofs or build_dof_map(mesh, SpaceKind.RT0)
    if isinstance(velocity, VelocityField):
        if velocity.dofs.kind is SpaceKind.RT0:
            return velocity
        # linear trace: the mean is the average of the two endpoint values
        coefficients = velocity.coefficients.reshape(-1, 2).mean(axis=1)
    else:
        rule = rule or edge_gauss(3)
        samples = _edge_normal_samples(mesh, velocity, rule.points)
        coefficients = samples @ rule.weights
    coefficients = np.where(dofs.constrained, 0.0, coefficients)
    return VelocityField(mesh, dofs, coefficients)


def interpolate_Pi(
    mesh: Mesh,
    velocity: VelocitySource,
    dofs: Optional[DofMap] = None,
) -> VelocityField:
    """
    BDM1 interpolant: DOFs are v·n_E at both endpoints of every edge.

    Analytic input is evaluated at the edge endpoints from the element on
    side 0, so it must be finite at mesh vertices.
    """
    dofs = dofs or build_dof_map(mesh, SpaceKind.BDM1)
    if isinstance(velocity, VelocityField):
        return velocity.as_bdm1(dofs)
    samples = _edge_normal_samples(mesh, velocity, np.array([0.0, 1.0]))
    coefficients = np.where(dofs.constrained, 0.0, samples.ravel())
    return VelocityField(mesh, dofs, coefficients)


def commuting_defect(mesh: Mesh, velocity: VelocitySource, divergence: ElementField) -> float:
    """max_T |∇·Π₀v − Q_h(∇·v)| for a velocity with known divergence."""
    projected = interpolate_Pi0(mesh, velocity).divergence()
    return float(np.max(np.abs(projected - project_Q_h(mesh, divergence).values)))


def as_element_field(func: Callable[[np.ndarray], np.ndarray]) -> ElementField:
    """Adapt a plain f(points) callable to the element-aware signature."""
    return lambda points, elements: func(points)
