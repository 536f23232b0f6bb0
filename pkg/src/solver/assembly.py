"""
Assembly of the mixed Darcy system and the vertex-block structure of A.

Unknowns: velocity coefficients U over the free (non-Neumann) DOFs and one
pressure per element. The system reads

    A U + Bᵀ P = G
    B U        = F

with a_ij = (K⁻¹v_j, v_i)_Q, b_lj = -(∇·v_j, w_l), G = -<g, v·n>_{Γ_D} and
F = -(f, w_l). Under the vertex rule the BDM1 DOFs couple only when they
share an owner vertex, so A is block diagonal after sorting DOFs by owner.
"""

from dataclasses import dataclass
from typing import List, Optional
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..fem.quadrature import (
    GAUSS7,
    VERTEX_RULE,
    ElementField,
    QuadRule,
    edge_gauss,
    integrate_elements,
    local_mass_matrices,
)
from ..fem.spaces import DofMap, SpaceKind, build_dof_map, reference_divergences
from ..mesh.mesh import Mesh
from ..utils.validators import NumericalError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-13
BLOCK_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class MfmfeSystem:
    """
    Assembled saddle point system restricted to free velocity DOFs.

    Attributes:
        mesh: Mesh the system lives on
        dofs: Velocity dof map (BDM1 for MFMFE, RT0 for the auxiliary problem)
        A: (nu, nu) velocity mass matrix, CSR
        B: (nt, nu) divergence matrix, CSR
        G: (nu,) Dirichlet load
        F: (nt,) source load
        free: Global indices of the free velocity DOFs
        rule: Rule used for A
    """
    mesh: Mesh
    dofs: DofMap
    A: sp.csr_matrix
    B: sp.csr_matrix
    G: np.ndarray
    F: np.ndarray
    free: np.ndarray
    rule: QuadRule

    @property
    def n_velocity(self) -> int:
        return int(self.free.size)

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_elements

    @property
    def owner(self) -> Optional[np.ndarray]:
        """Owner vertex of each free DOF (BDM1 only)."""
        if self.dofs.owner_vertex is None:
            return None
        return self.dofs.owner_vertex[self.free]

    def saddle_matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csc")

    def expand(self, free_values: np.ndarray) -> np.ndarray:
        """Scatter free DOF values into a full coefficient vector (zeros on Neumann DOFs)."""
        full = np.zeros(self.dofs.n_dofs)
        full[self.free] = free_values
        return full


def dirichlet_load(mesh: Mesh, dirichlet: ElementField, dofs: DofMap,
                   rule: Optional[QuadRule] = None) -> np.ndarray:
    """
    -<g, v·n_E> on Dirichlet edges for every global velocity DOF.

    The normal trace of a BDM1 DOF on its edge is the nodal hat λ_z of its
    endpoint; an RT0 DOF has unit normal trace.
    """
    rule = rule or edge_gauss(3)
    load = np.zeros(dofs.n_dofs)
    edges = mesh.dirichlet_edges
    if edges.size == 0:
        return load
    s = rule.points
    z0 = mesh.vertices[mesh.edges[edges, 0]]
    z1 = mesh.vertices[mesh.edges[edges, 1]]
    pts = (1.0 - s)[None, :, None] * z0[:, None, :] + s[None, :, None] * z1[:, None, :]
    nq = s.size
    g = np.asarray(dirichlet(pts.reshape(-1, 2), np.repeat(mesh.edge_elements[edges, 0], nq)))
    g = g.reshape(edges.size, nq) * mesh.edge_lengths[edges, None]
    if dofs.kind is SpaceKind.BDM1:
        load[2 * edges] = -(g @ (rule.weights * (1.0 - s)))
        load[2 * edges + 1] = -(g @ (rule.weights * s))
    elif dofs.kind is SpaceKind.RT0:
        load[edges] = -(g @ rule.weights)
    else:
        raise ValueError("Dirichlet load needs a velocity space")
    return load


def assemble_system(
    mesh: Mesh,
    coefficient,
    source: ElementField,
    dirichlet: ElementField,
    dofs: Optional[DofMap] = None,
    rule: QuadRule = VERTEX_RULE,
) -> MfmfeSystem:
    """
    Assemble A, B, G and F for any velocity space and pairing rule.

    Args:
        mesh: Mesh
        coefficient: Object with `mapped_inverse(mesh, ref_points)`
        source: f as an element-aware field
        dirichlet: g as an element-aware field
        dofs: Velocity dof map, BDM1 by default
        rule: Quadrature for the velocity pairing

    Raises:
        NumericalError: If the mapped permeability is singular somewhere
    """
    dofs = dofs or build_dof_map(mesh, SpaceKind.BDM1)
    nt = mesh.n_elements
    nloc = dofs.n_local
    n = dofs.n_dofs

    local = local_mass_matrices(mesh, coefficient, dofs, rule)
    rows = np.repeat(dofs.element_dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs.element_dofs, (1, nloc)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    # (∇·v_k, 1)_T = |T| ŝ_k div̂ψ̂_k / J = |T̂| ŝ_k div̂ψ̂_k
    b_local = -0.5 * reference_divergences(dofs)
    B = sp.coo_matrix(
        (b_local.ravel(), (np.repeat(np.arange(nt), nloc), dofs.element_dofs.ravel())),
        shape=(nt, n),
    ).tocsr()

    G = dirichlet_load(mesh, dirichlet, dofs)
    F = -integrate_elements(mesh, source, GAUSS7)

    free = dofs.free
    A = A[free][:, free].tocsr()
    B = B[:, free].tocsr()
    A.sum_duplicates()
    B.sum_duplicates()
    logger.debug(f"Assembled {dofs.kind.value} system: {free.size} velocity and "
                 f"{nt} pressure unknowns, nnz(A) = {A.nnz}")
    return MfmfeSystem(mesh, dofs, A, B, G[free], F, free, rule)


def assemble(mesh: Mesh, problem, rule: QuadRule = VERTEX_RULE) -> MfmfeSystem:
    """
    Assemble the MFMFE system of a benchmark problem on `mesh`.

    Args:
        mesh: Mesh
        problem: BenchmarkProblem supplying K, f and g
        rule: Velocity pairing, the vertex rule unless a caller overrides it
    """
    try:
        return assemble_system(
            mesh,
            problem.coefficient(mesh),
            problem.element_field(mesh, problem.source),
            problem.element_field(mesh, problem.dirichlet),
            build_dof_map(mesh, SpaceKind.BDM1),
            rule,
        )
    except NumericalError as e:
        logger.error(f"Assembly failed: {e}")
        raise


# -- structure audits ----------------------------------------------------------

def symmetry_defect(matrix: sp.spmatrix) -> float:
    """max|A - Aᵀ| / max|A|."""
    scale = abs(matrix).max()
    if scale == 0:
        return 0.0
    return float(abs(matrix - matrix.T).max() / scale)


@dataclass(frozen=True, eq=False)
class VertexBlocks:
    """
    A sorted into per-vertex blocks, with the blockwise inverse.

    Attributes:
        order: Free DOF permutation sorting by owner vertex (stable)
        vertices: Owner vertex of every block
        sizes: Block sizes
        inverse: A⁻¹ as a sparse matrix in the original DOF order
        off_block: Largest entry coupling two blocks relative to max|A|
    """
    order: np.ndarray
    vertices: np.ndarray
    sizes: np.ndarray
    inverse: sp.csr_matrix
    off_block: float

    @property
    def n_blocks(self) -> int:
        return int(self.sizes.size)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.inverse @ rhs


def factorize_vertex_blocks(system: MfmfeSystem) -> VertexBlocks:
    """
    Verify that A is block diagonal by owner vertex and invert it blockwise.

    Raises:
        NumericalError: If entries couple different vertices beyond BLOCK_TOL,
            or a vertex block is not positive definite
    """
    owner = system.owner
    if owner is None:
        raise NumericalError("Vertex blocks need a BDM1 system")

    order = np.argsort(owner, kind="stable")
    vertices, starts, sizes = np.unique(owner[order], return_index=True, return_counts=True)
    block_of = np.empty(owner.size, dtype=np.int64)
    position = np.empty(owner.size, dtype=np.int64)
    block_ids = np.repeat(np.arange(vertices.size), sizes)
    block_of[order] = block_ids
    position[order] = np.arange(owner.size) - starts[block_ids]

    coo = system.A.tocoo()
    same = block_of[coo.row] == block_of[coo.col]
    scale = np.abs(coo.data).max() if coo.nnz else 1.0
    off_block = float(np.abs(coo.data[~same]).max() / scale) if (~same).any() else 0.0
    if off_block > BLOCK_TOL:
        bad = int(np.argmax(np.where(same, 0.0, np.abs(coo.data))))
        raise NumericalError(
            f"A couples vertices {owner[coo.row[bad]]} and {owner[coo.col[bad]]} "
            f"(relative entry {off_block:.3e})"
        )

    inv_rows: List[np.ndarray] = []
    inv_cols: List[np.ndarray] = []
    inv_vals: List[np.ndarray] = []
    for size in np.unique(sizes):
        group = np.flatnonzero(sizes == size)
        slot = np.full(vertices.size, -1, dtype=np.int64)
        slot[group] = np.arange(group.size)
        dense = np.zeros((group.size, size, size))
        pick = same & (slot[block_of[coo.row]] >= 0)
        np.add.at(dense, (slot[block_of[coo.row[pick]]], position[coo.row[pick]],
                          position[coo.col[pick]]), coo.data[pick])
        try:
            lower = np.linalg.cholesky(dense)
        except np.linalg.LinAlgError:
            eig = np.linalg.eigvalsh(dense).min(axis=1)
            bad = group[int(np.argmin(eig))]
            raise NumericalError(
                f"Vertex block at vertex {vertices[bad]} is not positive definite "
                f"(smallest eigenvalue {eig.min():.3e})"
            )
        lower_inv = np.linalg.inv(lower)
        block_inv = np.einsum("bki,bkj->bij", lower_inv, lower_inv)
        members = order[starts[group][:, None] + np.arange(size)[None, :]]
        inv_rows.append(np.repeat(members, size, axis=1).ravel())
        inv_cols.append(np.tile(members, (1, size)).ravel())
        inv_vals.append(block_inv.ravel())

    n = owner.size
    inverse = sp.coo_matrix(
        (np.concatenate(inv_vals), (np.concatenate(inv_rows), np.concatenate(inv_cols))),
        shape=(n, n),
    ).tocsr()
    logger.debug(f"Factorized {vertices.size} vertex blocks, sizes "
                 f"{sizes.min()}..{sizes.max()}, off-block ratio {off_block:.2e}")
    return VertexBlocks(order, vertices, sizes, inverse, off_block)


def schur_complement(system: MfmfeSystem, blocks: VertexBlocks) -> sp.csr_matrix:
    """S = B A⁻¹ Bᵀ, sparse and cell centered."""
    return (system.B @ blocks.inverse @ system.B.T).tocsr()


def schur_min_eigenvalue(schur: sp.spmatrix, dense_limit: int = 2000) -> float:
    """Smallest eigenvalue of S, exact for small systems, Lanczos otherwise."""
    n = schur.shape[0]
    if n <= dense_limit:
        return float(np.linalg.eigvalsh(schur.toarray()).min())
    value = spla.eigsh(schur.tocsc(), k=1, sigma=0.0, which="LM",
                       return_eigenvectors=False)
    return float(value[0])
