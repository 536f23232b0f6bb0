"""
Finite element spaces on triangles: BDM1 and RT0 velocities, P0 pressures.

Reference element: T̂ with vertices (0,0), (1,0), (0,1). Local edge i is
opposite local vertex i. BDM1 local DOF k = 2i + j is the normal component on
edge i at its j-th endpoint (endpoints ordered as in LOCAL_EDGE_VERTICES).
Global BDM1 DOFs are (edge, endpoint) pairs carrying v·n_E with the global edge
normal; global RT0 DOFs carry the (constant) normal component v·n_E.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple
import logging

import numpy as np

from ..mesh.mesh import LOCAL_EDGE_VERTICES, Mesh

logger = logging.getLogger(__name__)

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_AREA = 0.5
REF_EDGE_LENGTHS = np.array([np.sqrt(2.0), 1.0, 1.0])
REF_NORMALS = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]) / REF_EDGE_LENGTHS[:, None]


class SpaceKind(str, Enum):
    BDM1 = "bdm1"
    RT0 = "rt0"
    P0 = "p0"


LOCAL_DOFS = {SpaceKind.BDM1: 6, SpaceKind.RT0: 3, SpaceKind.P0: 1}


# -- reference bases ---------------------------------------------------------

def _p1_vector_monomials(points: np.ndarray) -> np.ndarray:
    """(1,0), (x,0), (y,0), (0,1), (0,x), (0,y) at points, shape (n, 6, 2)."""
    x, y = points[:, 0], points[:, 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    first = np.stack([one, x, y, zero, zero, zero], axis=1)
    second = np.stack([zero, zero, zero, one, x, y], axis=1)
    return np.stack([first, second], axis=2)


_MONOMIAL_DIVERGENCE = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 1.0])


@lru_cache(maxsize=None)
def _bdm1_coefficients() -> np.ndarray:
    """Monomial coefficients of the nodal BDM1 basis (columns), solved once."""
    endpoints = REF_VERTICES[LOCAL_EDGE_VERTICES.ravel()]           # (6, 2), k = 2i + j
    normals = np.repeat(REF_NORMALS, 2, axis=0)                    # (6, 2)
    monomials = _p1_vector_monomials(endpoints)                    # (6, 6, 2)
    functionals = np.einsum("kma,ka->km", monomials, normals)
    coefficients = np.linalg.solve(functionals, np.eye(6))
    coefficients.setflags(write=False)
    return coefficients


def bdm1_reference_basis(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    The six BDM1 basis functions on T̂.

    Args:
        points: (n, 2) points in the closed reference triangle

    Returns:
        values (n, 6, 2) and constant divergences (6,)
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    coefficients = _bdm1_coefficients()
    values = np.einsum("nma,mk->nka", _p1_vector_monomials(points), coefficients)
    return values, _MONOMIAL_DIVERGENCE @ coefficients


def rt0_reference_basis(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    The three RT0 basis functions on T̂, ψ̂_i = |ê_i| (x̂ − r̂_i).

    Each has unit normal component on its own edge and zero on the others,
    so ∫_ê_i ψ̂_j·n̂_i = δ_ij |ê_i| and div ψ̂_j = |ê_j| / |T̂|.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = REF_EDGE_LENGTHS[None, :, None] * (points[:, None, :] - REF_VERTICES[None, :, :])
    return values, REF_EDGE_LENGTHS / REF_AREA


def rt0_in_bdm1() -> np.ndarray:
    """Coefficients (3, 6) of each RT0 basis function in the BDM1 basis."""
    embedding = np.zeros((3, 6))
    for i in range(3):
        embedding[i, 2 * i:2 * i + 2] = 1.0
    return embedding


def piola_map(jacobians: np.ndarray, dets: np.ndarray, ref_values: np.ndarray) -> np.ndarray:
    """
    Contravariant Piola transform v = (1/J) DF v̂.

    Args:
        jacobians: (nt, 2, 2)
        dets: (nt,)
        ref_values: (nt, ..., 2) or (..., 2) reference vectors

    Returns:
        (nt, ..., 2) physical vectors
    """
    ref_values = np.asarray(ref_values, dtype=float)
    if ref_values.ndim == 1 or ref_values.shape[0] != jacobians.shape[0]:
        ref_values = np.broadcast_to(ref_values, (jacobians.shape[0],) + ref_values.shape)
    mapped = np.einsum("tab,t...b->t...a", jacobians, ref_values)
    return mapped / dets.reshape((-1,) + (1,) * (mapped.ndim - 1))


def piola_divergence(dets: np.ndarray, ref_divergence: np.ndarray) -> np.ndarray:
    """div v = (1/J) div̂ v̂; ref_divergence is (nt, ...) or shared by every element."""
    ref_divergence = np.asarray(ref_divergence, dtype=float)
    if ref_divergence.ndim == 0 or ref_divergence.shape[0] != dets.shape[0]:
        ref_divergence = np.broadcast_to(ref_divergence, (dets.shape[0],) + ref_divergence.shape)
    return ref_divergence / dets.reshape((-1,) + (1,) * (ref_divergence.ndim - 1))


# -- degrees of freedom ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    """
    Global numbering of a space.

    Attributes:
        kind: BDM1, RT0 or P0
        n_dofs: Global count
        element_dofs: (nt, nloc) local to global map
        element_signs: (nt, nloc) ±1 reconciling global and local edge orientation
        local_scale: (nt, nloc) sign · |e| / |ê| so that the scaled, Piola mapped
            reference basis has unit global DOF
        owner_vertex: (n_dofs,) vertex each BDM1 DOF lives at, None otherwise
        dof_edge: (n_dofs,) edge of each velocity DOF, None for P0
        constrained: (n_dofs,) True on Neumann edges (u·n = 0)
    """
    kind: SpaceKind
    n_dofs: int
    element_dofs: np.ndarray
    element_signs: np.ndarray
    local_scale: np.ndarray
    owner_vertex: Optional[np.ndarray]
    dof_edge: Optional[np.ndarray]
    constrained: np.ndarray

    @property
    def n_local(self) -> int:
        return self.element_dofs.shape[1]

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)


def build_dof_map(mesh: Mesh, kind: SpaceKind) -> DofMap:
    """Number the DOFs of `kind` on `mesh`; Neumann edge DOFs are flagged constrained."""
    kind = SpaceKind(kind)
    nt = mesh.n_elements
    neumann = np.zeros(mesh.n_edges, dtype=bool)
    neumann[mesh.neumann_edges] = True

    if kind is SpaceKind.P0:
        return DofMap(kind, nt, np.arange(nt)[:, None], np.ones((nt, 1)), np.ones((nt, 1)),
                      None, None, np.zeros(nt, dtype=bool))

    edge_scale = mesh.edge_lengths[mesh.element_edges] / REF_EDGE_LENGTHS[None, :]
    signs = mesh.element_edge_signs

    if kind is SpaceKind.RT0:
        dof_edge = np.arange(mesh.n_edges)
        return DofMap(kind, mesh.n_edges, mesh.element_edges.copy(), signs.copy(),
                      signs * edge_scale, None, dof_edge, neumann[dof_edge])

    # BDM1: local k = 2i + j, endpoint j of local edge i
    endpoint = mesh.triangles[:, LOCAL_EDGE_VERTICES.ravel()]      # (nt, 6)
    edge = np.repeat(mesh.element_edges, 2, axis=1)                # (nt, 6)
    second = (endpoint != mesh.edges[edge, 0]).astype(np.int64)
    element_dofs = 2 * edge + second

    n_dofs = 2 * mesh.n_edges
    dof_edge = np.repeat(np.arange(mesh.n_edges), 2)
    owner = mesh.edges.ravel().copy()                              # dof 2e -> edges[e,0], 2e+1 -> edges[e,1]
    element_signs = np.repeat(signs, 2, axis=1)
    local_scale = np.repeat(signs * edge_scale, 2, axis=1)
    return DofMap(kind, n_dofs, element_dofs, element_signs, local_scale,
                  owner, dof_edge, neumann[dof_edge])


def reference_values(dofs: DofMap, ref_points: np.ndarray) -> np.ndarray:
    """
    Scaled reference basis ŝ_k ψ̂_k at reference points, shape (nt, nq, nloc, 2).
    """
    if dofs.kind is SpaceKind.BDM1:
        values, _ = bdm1_reference_basis(ref_points)
    elif dofs.kind is SpaceKind.RT0:
        values, _ = rt0_reference_basis(ref_points)
    else:
        raise ValueError("P0 has no vector basis")
    return dofs.local_scale[:, None, :, None] * values[None, :, :, :]


def reference_divergences(dofs: DofMap) -> np.ndarray:
    """Scaled reference divergences ŝ_k div̂ ψ̂_k, shape (nt, nloc)."""
    if dofs.kind is SpaceKind.BDM1:
        _, div = bdm1_reference_basis(REF_VERTICES[:1])
    elif dofs.kind is SpaceKind.RT0:
        _, div = rt0_reference_basis(REF_VERTICES[:1])
    else:
        raise ValueError("P0 has no vector basis")
    return dofs.local_scale * div[None, :]


# -- fields -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VelocityField:
    """
    Discrete velocity: a coefficient per global DOF of a BDM1 or RT0 space.

    Coefficients are normal components v·n_E in flux units.
    """
    mesh: Mesh
    dofs: DofMap
    coefficients: np.ndarray

    def local_coefficients(self) -> np.ndarray:
        return self.coefficients[self.dofs.element_dofs]

    def reference_field(self, ref_points: np.ndarray) -> np.ndarray:
        """q̂ = Σ_k c_k ŝ_k ψ̂_k at reference points, shape (nt, nq, 2)."""
        basis = reference_values(self.dofs, ref_points)
        return np.einsum("tk,tqka->tqa", self.local_coefficients(), basis)

    def evaluate(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical values at the images of reference points, shape (nt, nq, 2)."""
        return piola_map(self.mesh.jacobians, self.mesh.dets, self.reference_field(ref_points))

    def vertex_values(self) -> np.ndarray:
        """Values at the three element vertices, shape (nt, 3, 2)."""
        return self.evaluate(REF_VERTICES)

    def divergence(self) -> np.ndarray:
        """Elementwise constant divergence."""
        ref = np.einsum("tk,tk->t", self.local_coefficients(), reference_divergences(self.dofs))
        return piola_divergence(self.mesh.dets, ref)

    def gradient(self) -> np.ndarray:
        """Elementwise constant Jacobian ∂v_a/∂x_b, shape (nt, 2, 2)."""
        return np.einsum("tia,tib->tab", self.vertex_values(), self.mesh.barycentric_gradients())

    def edge_trace(self, side: int, params: np.ndarray) -> np.ndarray:
        """
        Trace along every edge from the element on `side` (0 or 1), at edge
        parameters s (x = (1-s) z0 + s z1). Shape (ne, nq, 2); zero where no element.
        """
        mesh = self.mesh
        owner = mesh.edge_elements[:, side]
        present = owner >= 0
        safe = np.where(present, owner, 0)
        corners = self.vertex_values()[safe]                           # (ne, 3, 2)
        local0 = np.argmax(mesh.triangles[safe] == mesh.edges[:, :1], axis=1)
        local1 = np.argmax(mesh.triangles[safe] == mesh.edges[:, 1:], axis=1)
        rows = np.arange(mesh.n_edges)
        v0, v1 = corners[rows, local0], corners[rows, local1]
        s = np.asarray(params)[None, :, None]
        trace = (1.0 - s) * v0[:, None, :] + s * v1[:, None, :]
        trace[~present] = 0.0
        return trace

    def as_bdm1(self, bdm1: Optional[DofMap] = None) -> "VelocityField":
        """The same field expressed in BDM1 coefficients."""
        if self.dofs.kind is SpaceKind.BDM1:
            return self
        bdm1 = bdm1 or build_dof_map(self.mesh, SpaceKind.BDM1)
        return VelocityField(self.mesh, bdm1, self.coefficients[bdm1.dof_edge])

    def scaled(self, factor: float) -> "VelocityField":
        return VelocityField(self.mesh, self.dofs, factor * self.coefficients)


@dataclass(frozen=True, eq=False)
class PressureField:
    """Piecewise constant pressure, one value per element."""
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.mesh.n_elements,):
            raise ValueError(
                f"Pressure needs {self.mesh.n_elements} values, got shape {self.values.shape}"
            )
