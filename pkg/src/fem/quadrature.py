"""
Quadrature rules, permeability coefficients and the velocity pairings.

The MFMFE bilinear form uses the vertex (trapezoidal) rule on the reference
triangle; the "exact" pairing uses the degree-5 seven-point Gauss rule. Both
act on the mapped tensor 𝒦⁻¹ = (1/J) DFᵀ K⁻¹ DF, where 𝒦 = J DF⁻¹ K DF⁻ᵀ is
inverted directly by the 2×2 adjugate formula.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Tuple
import logging

import numpy as np

from ..mesh.mesh import Mesh
from ..utils.validators import NumericalError
from .spaces import (
    DofMap,
    REF_VERTICES,
    SpaceKind,
    piola_map,
    reference_values,
)

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-14

# element-aware field: f(points (n, 2), elements (n,)) -> values (n, ...)
ElementField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class RuleKind(str, Enum):
    VERTEX = "vertex"
    GAUSS7 = "triangle-gauss-7"
    EDGE_GAUSS = "edge-gauss"


@dataclass(frozen=True)
class QuadRule:
    """
    Quadrature rule on the reference triangle or the unit interval.

    Attributes:
        kind: Rule family
        points: (nq, 2) reference coordinates, or (nq,) edge parameters in [0, 1]
        weights: (nq,) weights summing to the reference measure
        degree: Polynomial degree integrated exactly
    """
    kind: RuleKind
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return int(self.weights.size)


def _gauss7() -> QuadRule:
    s15 = np.sqrt(15.0)
    a1, a2 = (6.0 - s15) / 21.0, (6.0 + s15) / 21.0
    w1, w2 = (155.0 - s15) / 2400.0, (155.0 + s15) / 2400.0
    points = np.array([
        [1.0 / 3.0, 1.0 / 3.0],
        [a1, a1], [1.0 - 2.0 * a1, a1], [a1, 1.0 - 2.0 * a1],
        [a2, a2], [1.0 - 2.0 * a2, a2], [a2, 1.0 - 2.0 * a2],
    ])
    weights = np.array([9.0 / 80.0, w1, w1, w1, w2, w2, w2])
    return QuadRule(RuleKind.GAUSS7, points, weights, 5)


VERTEX_RULE = QuadRule(RuleKind.VERTEX, REF_VERTICES.copy(), np.full(3, 1.0 / 6.0), 1)
GAUSS7 = _gauss7()


@lru_cache(maxsize=None)
def edge_gauss(k: int = 3) -> QuadRule:
    """k-point Gauss-Legendre rule on [0, 1]."""
    if not 1 <= k <= 10:
        raise ValueError(f"Unsupported edge rule size: {k}")
    x, w = np.polynomial.legendre.leggauss(k)
    return QuadRule(RuleKind.EDGE_GAUSS, 0.5 * (x + 1.0), 0.5 * w, 2 * k - 1)


# -- integration helpers --------------------------------------------------

def integrate_elements(mesh: Mesh, func: ElementField, rule: QuadRule = GAUSS7) -> np.ndarray:
    """∫_T func for every element (func may be vector/tensor valued)."""
    pts = mesh.map_points(rule.points)                      # (nt, nq, 2)
    nt, nq = pts.shape[:2]
    elements = np.repeat(np.arange(nt), nq)
    values = np.asarray(func(pts.reshape(-1, 2), elements))
    values = values.reshape((nt, nq) + values.shape[1:])
    result = np.einsum("q,tq...->t...", rule.weights, values)
    return result * _expand(mesh.dets, result.ndim)


def _expand(values: np.ndarray, ndim: int) -> np.ndarray:
    """Append singleton axes so a per-entity array broadcasts against ndim-dimensional data."""
    return values.reshape(values.shape + (1,) * (ndim - 1))


def integrate_edges(
    mesh: Mesh,
    func: ElementField,
    rule: Optional[QuadRule] = None,
    side: int = 0,
) -> np.ndarray:
    """
    ∫_E func ds for every edge, evaluating element-aware data on the given side.

    Edges without an element on that side yield 0.
    """
    rule = rule or edge_gauss(3)
    pts = mesh.edge_points(rule.points)                     # (ne, nq, 2)
    ne, nq = pts.shape[:2]
    owner = mesh.edge_elements[:, side]
    present = owner >= 0
    values = np.asarray(func(pts.reshape(-1, 2), np.repeat(np.where(present, owner, 0), nq)))
    values = values.reshape((ne, nq) + values.shape[1:])
    result = np.einsum("q,eq...->e...", rule.weights, values)
    result = result * _expand(mesh.edge_lengths, result.ndim)
    result[~present] = 0.0
    return result


# -- tensors -----------------------------------------------------------------

def inverse_2x2(tensors: np.ndarray, what: str = "tensor") -> np.ndarray:
    """
    Invert a stack of 2×2 matrices by the adjugate formula.

    Raises:
        NumericalError: Naming the first (near-)singular entry
    """
    a, b = tensors[..., 0, 0], tensors[..., 0, 1]
    c, d = tensors[..., 1, 0], tensors[..., 1, 1]
    det = a * d - b * c
    scale = np.maximum(np.abs(tensors).max(axis=(-2, -1)) ** 2, np.finfo(float).tiny)
    singular = ~(np.abs(det) > SINGULAR_TOL * scale)
    if singular.any():
        idx = np.unravel_index(int(np.argmax(singular)), det.shape)
        raise NumericalError(f"Singular {what} at index {idx}")
    adj = np.empty_like(tensors)
    adj[..., 0, 0], adj[..., 0, 1] = d, -b
    adj[..., 1, 0], adj[..., 1, 1] = -c, a
    return adj / det[..., None, None]


class TensorCoefficient:
    """
    Permeability K given pointwise, with a region id per element.

    Args:
        func: K(points (n, 2), regions (n,)) -> (n, 2, 2)
        element_regions: Region id of every element
    """

    def __init__(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 element_regions: np.ndarray):
        self.func = func
        self.element_regions = np.asarray(element_regions)

    def tensor_at(self, points: np.ndarray, elements: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(points, self.element_regions[elements]), dtype=float)

    def inverse_at(self, points: np.ndarray, elements: np.ndarray) -> np.ndarray:
        return inverse_2x2(self.tensor_at(points, elements), "permeability")

    def mapped_inverse(self, mesh: Mesh, ref_points: np.ndarray) -> np.ndarray:
        """
        𝒦⁻¹ at reference points of every element, shape (nt, nq, 2, 2).

        Raises:
            NumericalError: Citing element and point where 𝒦 is singular
        """
        pts = mesh.map_points(ref_points)
        nt, nq = pts.shape[:2]
        k = self.tensor_at(pts.reshape(-1, 2), np.repeat(np.arange(nt), nq)).reshape(nt, nq, 2, 2)
        dfinv = inverse_2x2(mesh.jacobians, "element Jacobian")
        mapped = mesh.dets[:, None, None, None] * np.einsum(
            "tij,tqjk,tlk->tqil", dfinv, k, dfinv)
        try:
            return inverse_2x2(mapped, "mapped permeability")
        except NumericalError:
            det = mapped[..., 0, 0] * mapped[..., 1, 1] - mapped[..., 0, 1] * mapped[..., 1, 0]
            t, q = np.unravel_index(int(np.argmin(np.abs(det))), det.shape)
            vertex = int(mesh.triangles[t, q]) if np.array_equal(ref_points, REF_VERTICES) else None
            where = f"vertex {vertex}" if vertex is not None else f"quadrature point {q}"
            raise NumericalError(f"Singular mapped permeability on element {t} at {where}")


class InverseTensorCoefficient:
    """K⁻¹ given directly as one constant matrix per element (e.g. the mean K̄⁻¹)."""

    def __init__(self, inverse: np.ndarray):
        self.inverse = np.asarray(inverse, dtype=float)

    def inverse_at(self, points: np.ndarray, elements: np.ndarray) -> np.ndarray:
        return self.inverse[elements]

    def mapped_inverse(self, mesh: Mesh, ref_points: np.ndarray) -> np.ndarray:
        mapped = np.einsum("tji,tjk,tkl->til", mesh.jacobians, self.inverse, mesh.jacobians)
        mapped = mapped / mesh.dets[:, None, None]
        return np.broadcast_to(mapped[:, None], (mesh.n_elements, len(ref_points), 2, 2))


# -- pairings ------------------------------------------------------------------

def local_mass_matrices(
    mesh: Mesh,
    coefficient,
    dofs: DofMap,
    rule: QuadRule = VERTEX_RULE,
) -> np.ndarray:
    """
    Element matrices (K⁻¹ v_l, v_k)_T evaluated with `rule` in reference
    coordinates, shape (nt, nloc, nloc).
    """
    basis = reference_values(dofs, rule.points)             # (nt, nq, nloc, 2)
    kinv = coefficient.mapped_inverse(mesh, rule.points)    # (nt, nq, 2, 2)
    return np.einsum("q,tqka,tqab,tqlb->tkl", rule.weights, basis, kinv, basis)


def as_bdm1_local(local: np.ndarray, kind: SpaceKind) -> np.ndarray:
    """Expand RT0 local coefficients to the equivalent BDM1 local coefficients."""
    if kind is SpaceKind.RT0:
        return np.repeat(local, 2, axis=-1)
    return local


def _pairing(mesh, coefficient, dofs, q_local, v_local, rule) -> np.ndarray:
    matrices = local_mass_matrices(mesh, coefficient, dofs, rule)
    return np.einsum("tk,tkl,tl->t", v_local, matrices, q_local)


def vertex_quadrature_pairing(
    mesh: Mesh,
    coefficient,
    dofs: DofMap,
    q_local: np.ndarray,
    v_local: np.ndarray,
    rule: QuadRule = VERTEX_RULE,
) -> np.ndarray:
    """
    (K⁻¹q, v)_{Q,T} = (|T̂|/3) Σ_i 𝒦⁻¹(r̂_i) q̂(r̂_i)·v̂(r̂_i) for every element.

    Args:
        dofs: BDM1 dof map the local coefficients refer to
        q_local, v_local: (nt, 6) local coefficients (RT0 inputs are expanded by the caller)
    """
    return _pairing(mesh, coefficient, dofs, q_local, v_local, rule)


def exact_pairing(
    mesh: Mesh,
    coefficient,
    dofs: DofMap,
    q_local: np.ndarray,
    v_local: np.ndarray,
) -> np.ndarray:
    """(K⁻¹q, v)_T with the seven-point degree-5 rule, for every element."""
    return _pairing(mesh, coefficient, dofs, q_local, v_local, GAUSS7)


def sigma_T(
    mesh: Mesh,
    coefficient,
    dofs: DofMap,
    q_local: np.ndarray,
    v_local: np.ndarray,
    vertex_rule: QuadRule = VERTEX_RULE,
) -> np.ndarray:
    """Elementwise quadrature error σ_T = (K⁻¹q, v)_T − (K⁻¹q, v)_{Q,T}."""
    return (exact_pairing(mesh, coefficient, dofs, q_local, v_local)
            - vertex_quadrature_pairing(mesh, coefficient, dofs, q_local, v_local, vertex_rule))


def local_norm_matrices(mesh: Mesh, dofs: DofMap) -> Tuple[np.ndarray, np.ndarray]:
    """
    Element Gram matrices of the physical basis.

    Returns:
        mass (nt, nloc, nloc) for ‖v‖²_T and stiffness (nt, nloc, nloc) for
        ‖∇v‖²_T, both exact since the basis is linear on each element
    """
    identity = InverseTensorCoefficient(np.broadcast_to(np.eye(2), (mesh.n_elements, 2, 2)))
    mass = local_mass_matrices(mesh, identity, dofs, GAUSS7)
    corners = piola_map(mesh.jacobians, mesh.dets, reference_values(dofs, REF_VERTICES))
    grads = np.einsum("tika,tib->tkab", corners, mesh.barycentric_gradients())
    stiffness = mesh.areas[:, None, None] * np.einsum("tkab,tlab->tkl", grads, grads)
    return mass, stiffness
