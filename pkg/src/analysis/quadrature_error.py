"""
Measured constants of the quadrature error bounds.

For each element the largest possible ratio

    |σ_T(q, v)| / (h_T^k ‖q‖_{1,T} ‖v‖_T)       (q BDM1, v RT0, k = 1)
    |σ_T(q, v)| / (h_T^k ‖q‖_{1,T} ‖v‖_{1,T})   (q, v BDM1, k = 2)

is the spectral norm of the local σ matrix after whitening both arguments
with the Cholesky factors of their norm Gram matrices.
"""

from dataclasses import dataclass
import logging

import numpy as np

from ..fem.quadrature import GAUSS7, VERTEX_RULE, QuadRule, local_mass_matrices, local_norm_matrices
from ..fem.spaces import SpaceKind, build_dof_map, rt0_in_bdm1
from ..mesh.mesh import Mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SigmaBounds:
    """Largest elementwise constants of both bounds on one mesh."""
    rt0_constant: float
    bdm1_constant: float
    h_max: float
    n_elements: int


def local_sigma_matrices(mesh: Mesh, coefficient, vertex_rule: QuadRule = VERTEX_RULE) -> np.ndarray:
    """σ_T(ψ_l, ψ_k) for the BDM1 basis, shape (nt, 6, 6)."""
    dofs = build_dof_map(mesh, SpaceKind.BDM1)
    return (local_mass_matrices(mesh, coefficient, dofs, GAUSS7)
            - local_mass_matrices(mesh, coefficient, dofs, vertex_rule))


def _whitened_norm(sigma: np.ndarray, gram_v: np.ndarray, gram_q: np.ndarray) -> np.ndarray:
    lower_v = np.linalg.cholesky(gram_v)
    lower_q = np.linalg.cholesky(gram_q)
    inv_v = np.linalg.inv(lower_v)
    inv_q = np.linalg.inv(lower_q)
    whitened = np.einsum("tik,tkl,tjl->tij", inv_v, sigma, inv_q)
    return np.linalg.svd(whitened, compute_uv=False)[:, 0]


def sigma_bound_constants(mesh: Mesh, coefficient, vertex_rule: QuadRule = VERTEX_RULE) -> SigmaBounds:
    """
    Largest constants over the elements of `mesh` for both σ bounds.

    Args:
        mesh: Mesh
        coefficient: Permeability with `mapped_inverse`
        vertex_rule: Rule whose error is measured
    """
    dofs = build_dof_map(mesh, SpaceKind.BDM1)
    sigma = local_sigma_matrices(mesh, coefficient, vertex_rule)
    mass, stiffness = local_norm_matrices(mesh, dofs)
    h1 = mass + stiffness

    embed = rt0_in_bdm1()
    sigma_rt0 = np.einsum("ik,tkl->til", embed, sigma)
    mass_rt0 = np.einsum("ik,tkl,jl->tij", embed, mass, embed)

    h = mesh.diameters
    rt0 = _whitened_norm(sigma_rt0, mass_rt0, h1) / h
    bdm1 = _whitened_norm(sigma, h1, h1) / h ** 2
    bounds = SigmaBounds(float(rt0.max()), float(bdm1.max()), mesh.h_max, mesh.n_elements)
    logger.debug(f"Sigma constants on {mesh.n_elements} elements: RT0 {bounds.rt0_constant:.4e}, "
                 f"BDM1 {bounds.bdm1_constant:.4e}")
    return bounds


def sigma_exactness_defect(mesh: Mesh, coefficient, vertex_rule: QuadRule = VERTEX_RULE) -> float:
    """
    Largest |σ_T(q, v)| relative to |(K⁻¹q, v)_T| over constant q and linear v.

    Zero up to rounding for elementwise constant K: the integrand is then P1.
    """
    sigma = local_sigma_matrices(mesh, coefficient, vertex_rule)
    exact = local_mass_matrices(mesh, coefficient, build_dof_map(mesh, SpaceKind.BDM1), GAUSS7)
    constants = _constant_local_fields(mesh)
    num = np.abs(np.einsum("tck,tkl->tcl", constants, sigma))
    den = np.abs(np.einsum("tck,tkl->tcl", constants, exact)).max(axis=(1, 2))
    return float((num.max(axis=(1, 2)) / np.maximum(den, np.finfo(float).tiny)).max())


def _constant_local_fields(mesh: Mesh) -> np.ndarray:
    """
    Local BDM1 coefficients of the constant fields (1, 0) and (0, 1), shape (nt, 2, 6).

    A constant c has the value c·n_E at both endpoints of every edge.
    """
    normals = mesh.edge_normals[np.repeat(mesh.element_edges, 2, axis=1)]       # (nt, 6, 2)
    return normals.transpose(0, 2, 1).copy()
