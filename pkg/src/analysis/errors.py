"""Exact discretization errors for problems with known solutions."""

from dataclasses import dataclass
import logging

import numpy as np

from ..fem.projections import project_Q_h
from ..fem.quadrature import GAUSS7
from ..utils.validators import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExactErrors:
    """
    Global errors and their elementwise squares.

    Attributes:
        err_u: ‖K^{-1/2}(u - u_h)‖
        err_p: ‖p - p_h‖
        err_Qhp: ‖Q_h p - p_h‖
    """
    err_u: float
    err_p: float
    err_Qhp: float
    velocity_sq: np.ndarray
    pressure_sq: np.ndarray

    def as_dict(self) -> dict:
        return {"err_u": self.err_u, "err_p": self.err_p, "err_Qhp": self.err_Qhp}


def exact_errors(mesh, solution, problem) -> ExactErrors:
    """
    Errors against the exact fields, integrated with the seven-point rule.

    Raises:
        ConfigurationError: If the problem has no exact solution
    """
    if not problem.has_exact:
        raise ConfigurationError(f"Problem {problem.name} has no exact solution")

    regions = problem.element_regions(mesh)
    pts = mesh.map_points(GAUSS7.points)
    nt, nq = pts.shape[:2]
    flat = pts.reshape(-1, 2)
    flat_regions = np.repeat(regions, nq)

    u = problem.velocity(flat, flat_regions).reshape(nt, nq, 2)
    diff = u - solution.velocity.evaluate(GAUSS7.points)
    kinv = problem.coefficient(mesh).inverse_at(flat, np.repeat(np.arange(nt), nq)).reshape(nt, nq, 2, 2)
    weighted = np.einsum("tqa,tqab,tqb->tq", diff, kinv, diff)
    velocity_sq = mesh.dets * (weighted @ GAUSS7.weights)

    p = problem.pressure(flat, flat_regions).reshape(nt, nq)
    pressure_sq = mesh.dets * (((p - solution.pressure.values[:, None]) ** 2) @ GAUSS7.weights)

    qhp = project_Q_h(mesh, problem.element_field(mesh, problem.pressure)).values
    err_qhp = float(np.sqrt(np.sum(mesh.areas * (qhp - solution.pressure.values) ** 2)))

    errors = ExactErrors(
        err_u=float(np.sqrt(velocity_sq.sum())),
        err_p=float(np.sqrt(pressure_sq.sum())),
        err_Qhp=err_qhp,
        velocity_sq=velocity_sq,
        pressure_sq=pressure_sq,
    )
    logger.debug(f"Exact errors: u {errors.err_u:.4e}, p {errors.err_p:.4e}, Q_h p {errors.err_Qhp:.4e}")
    return errors
