"""
Conforming triangular meshes.

A `Mesh` is built once from coordinates, counterclockwise connectivity and
tagged boundary segments; every derived quantity (edges, adjacency, normals,
element maps) is computed in the constructor and stored as read-only arrays.
Refinement produces a new mesh (see `src.mesh.refinement`).
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import List, Optional, Tuple, Union
import logging

import numpy as np

from ..utils.validators import MeshError, validate_triangles

logger = logging.getLogger(__name__)

# Local edge i is opposite local vertex i and runs from vertex (i+1)%3 to (i+2)%3.
LOCAL_EDGE_VERTICES = np.array([[1, 2], [2, 0], [0, 1]])

LONGEST_EDGE_TIE_TOL = 1e-12


class BoundaryTag(IntEnum):
    INTERIOR = -1
    DIRICHLET = 0
    NEUMANN = 1


class DomainKind(str, Enum):
    L_SHAPE = "l_shape"
    SQUARE = "square"
    REFERENCE = "reference"
    CUSTOM = "custom"


@dataclass(frozen=True)
class DomainSpec:
    """
    Description of an initial mesh.

    For CUSTOM domains `vertices` and `triangles` are required; boundary
    segments not listed in `boundary_segments` default to Dirichlet.
    """
    kind: DomainKind
    vertices: Optional[np.ndarray] = None
    triangles: Optional[np.ndarray] = None
    boundary_segments: Optional[np.ndarray] = None
    boundary_tags: Optional[np.ndarray] = None
    element_tags: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ElementGeometry:
    """Affine element map F_T(x̂) = origin + DF x̂ from the unit reference triangle."""
    area: float
    diameter: float
    origin: np.ndarray
    jacobian: np.ndarray
    det: float

    def map(self, ref_points: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(ref_points) @ self.jacobian.T

    def inverse_map(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.jacobian, (np.asarray(points) - self.origin).T).T


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


class Mesh:
    """
    Conforming 2D simplicial mesh.

    Attributes:
        vertices (ndarray): (nv, 2) coordinates
        triangles (ndarray): (nt, 3) counterclockwise vertex indices
        edges (ndarray): (ne, 2) sorted vertex pairs; global edge orientation
        element_edges (ndarray): (nt, 3) global edge of local edge i
        edge_elements (ndarray): (ne, 2) adjacent elements, lower index first, -1 if absent
        edge_local (ndarray): (ne, 2) local edge index inside each adjacent element
        element_edge_signs (ndarray): (nt, 3) +1 where the global normal is outward
        edge_normals (ndarray): (ne, 2) unit normal, outward from edge_elements[:, 0]
        edge_tangents (ndarray): (ne, 2) (-n2, n1)
        boundary_tags (ndarray): (ne,) BoundaryTag values
        parent (ndarray): (nt,) element of the previous mesh this element came from, -1 for roots
        level (ndarray): (nt,) number of bisections since the initial mesh
    """

    def __init__(
        self,
        vertices: np.ndarray,
        triangles: np.ndarray,
        boundary_segments: Optional[np.ndarray] = None,
        boundary_tags: Optional[np.ndarray] = None,
        element_tags: Optional[np.ndarray] = None,
        parent: Optional[np.ndarray] = None,
        level: Optional[np.ndarray] = None,
    ):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        validate_triangles(vertices, triangles)

        nt = triangles.shape[0]
        self.vertices = _readonly(vertices)
        self.triangles = _readonly(triangles)
        self.element_tags = _readonly(
            np.zeros(nt, dtype=np.int64) if element_tags is None
            else np.asarray(element_tags, dtype=np.int64)
        )
        self.parent = _readonly(
            np.full(nt, -1, dtype=np.int64) if parent is None else np.asarray(parent, dtype=np.int64)
        )
        self.level = _readonly(
            np.zeros(nt, dtype=np.int64) if level is None else np.asarray(level, dtype=np.int64)
        )

        self._build_edges()
        self._build_geometry()
        self._tag_boundary(boundary_segments, boundary_tags)

    def __str__(self):
        return (f"Mesh with {self.n_vertices} vertices, {self.n_elements} triangles "
                f"and {self.n_edges} edges")

    def __repr__(self):
        return self.__str__()

    # -- construction -----------------------------------------------------

    def _build_edges(self) -> None:
        nv = self.vertices.shape[0]
        nt = self.triangles.shape[0]

        local_pairs = self.triangles[:, LOCAL_EDGE_VERTICES]          # (nt, 3, 2)
        lo = local_pairs.min(axis=2)
        hi = local_pairs.max(axis=2)
        keys = (lo * nv + hi).ravel()
        unique_keys, inverse = np.unique(keys, return_inverse=True)
        element_edges = inverse.reshape(nt, 3)
        edges = np.column_stack([unique_keys // nv, unique_keys % nv])
        ne = edges.shape[0]

        counts = np.bincount(inverse, minlength=ne)
        if counts.max() > 2:
            bad = int(np.argmax(counts > 2))
            raise MeshError(
                f"Edge {tuple(edges[bad])} is shared by {counts[bad]} elements"
            )

        owner = np.repeat(np.arange(nt), 3)
        local = np.tile(np.arange(3), nt)
        order = np.lexsort((owner, inverse))
        sorted_edges = inverse[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]

        edge_elements = np.full((ne, 2), -1, dtype=np.int64)
        edge_local = np.full((ne, 2), -1, dtype=np.int64)
        edge_elements[sorted_edges[first], 0] = owner[order][first]
        edge_local[sorted_edges[first], 0] = local[order][first]
        edge_elements[sorted_edges[~first], 1] = owner[order][~first]
        edge_local[sorted_edges[~first], 1] = local[order][~first]

        signs = np.where(owner == edge_elements[inverse, 0], 1.0, -1.0).reshape(nt, 3)

        self.edges = _readonly(edges)
        self.element_edges = _readonly(element_edges)
        self.edge_elements = _readonly(edge_elements)
        self.edge_local = _readonly(edge_local)
        self.element_edge_signs = _readonly(signs)

    def _build_geometry(self) -> None:
        p = self.vertices[self.triangles]                              # (nt, 3, 2)
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns b-a, c-a
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]

        edge_vec = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        edge_len = np.hypot(edge_vec[:, 0], edge_vec[:, 1])

        # outward normal of local edge i inside its first adjacent element
        first = self.edge_elements[:, 0]
        li = self.edge_local[:, 0]
        start = p[first, LOCAL_EDGE_VERTICES[li, 0]]
        stop = p[first, LOCAL_EDGE_VERTICES[li, 1]]
        d = stop - start
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / edge_len[:, None]
        tangents = np.column_stack([-normals[:, 1], normals[:, 0]])

        local_len = edge_len[self.element_edges]
        diam = local_len.max(axis=1)

        self.jacobians = _readonly(jac)
        self.dets = _readonly(det)
        self.areas = _readonly(0.5 * det)
        self.diameters = _readonly(diam)
        self.centroids = _readonly(p.mean(axis=1))
        self.edge_lengths = _readonly(edge_len)
        self.edge_normals = _readonly(normals)
        self.edge_tangents = _readonly(tangents)
        self.edge_midpoints = _readonly(
            0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        )
        self.longest_edge = _readonly(self._longest_local_edge(local_len))

    def _longest_local_edge(self, local_len: np.ndarray) -> np.ndarray:
        longest = local_len.max(axis=1, keepdims=True)
        candidate = local_len >= longest * (1.0 - LONGEST_EDGE_TIE_TOL)
        keyed = np.where(candidate, self.element_edges, np.iinfo(np.int64).max)
        return np.argmin(keyed, axis=1)

    def _tag_boundary(
        self,
        segments: Optional[np.ndarray],
        tags: Optional[np.ndarray]
    ) -> None:
        ne = self.edges.shape[0]
        on_boundary = self.edge_elements[:, 1] < 0
        boundary_tags = np.full(ne, BoundaryTag.INTERIOR, dtype=np.int64)

        if segments is None:
            boundary_tags[on_boundary] = BoundaryTag.DIRICHLET
        else:
            segments = np.asarray(segments, dtype=np.int64).reshape(-1, 2)
            tags = (np.full(segments.shape[0], BoundaryTag.DIRICHLET)
                    if tags is None else np.asarray(tags, dtype=np.int64))
            edge_ids = self.find_edges(segments)
            if (edge_ids < 0).any():
                bad = segments[np.argmax(edge_ids < 0)]
                raise MeshError(f"Boundary segment {tuple(bad)} is not a mesh edge")
            interior = ~on_boundary[edge_ids]
            if interior.any():
                bad = segments[np.argmax(interior)]
                raise MeshError(f"Boundary segment {tuple(bad)} is an interior edge")
            boundary_tags[edge_ids] = tags

        untagged = on_boundary & (boundary_tags == BoundaryTag.INTERIOR)
        if untagged.any():
            bad = int(np.argmax(untagged))
            raise MeshError(
                f"Boundary edge {tuple(self.edges[bad])} has no tag "
                f"(hanging node or missing segment)"
            )
        if not (boundary_tags == BoundaryTag.DIRICHLET).any():
            raise MeshError("Dirichlet boundary must be nonempty")

        self.boundary_tags = _readonly(boundary_tags)

    # -- queries ----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def h_min(self) -> float:
        return float(self.diameters.min())

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tags == BoundaryTag.INTERIOR)

    @property
    def dirichlet_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tags == BoundaryTag.DIRICHLET)

    @property
    def neumann_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tags == BoundaryTag.NEUMANN)

    @property
    def boundary_segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Boundary edges (as vertex pairs) and their tags."""
        ids = np.flatnonzero(self.boundary_tags != BoundaryTag.INTERIOR)
        return self.edges[ids], self.boundary_tags[ids]

    def find_edges(self, pairs: np.ndarray) -> np.ndarray:
        """Global edge index for each vertex pair, -1 when the pair is not an edge."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        nv = self.n_vertices
        edge_keys = self.edges[:, 0] * nv + self.edges[:, 1]
        keys = pairs.min(axis=1) * nv + pairs.max(axis=1)
        pos = np.searchsorted(edge_keys, keys)
        pos = np.clip(pos, 0, len(edge_keys) - 1)
        return np.where(edge_keys[pos] == keys, pos, -1)

    def geometry(self, element: int) -> ElementGeometry:
        """Area, diameter and affine map of one element."""
        if not 0 <= element < self.n_elements:
            raise IndexError(f"Element {element} is not in the mesh")
        return ElementGeometry(
            area=float(self.areas[element]),
            diameter=float(self.diameters[element]),
            origin=self.vertices[self.triangles[element, 0]].copy(),
            jacobian=self.jacobians[element].copy(),
            det=float(self.dets[element]),
        )

    def map_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Images F_T(x̂) of reference points on every element, shape (nt, nq, 2)."""
        origin = self.vertices[self.triangles[:, 0]]
        return origin[:, None, :] + np.einsum("tij,qj->tqi", self.jacobians, ref_points)

    def edge_points(self, ref_params: np.ndarray) -> np.ndarray:
        """Points x_E(s) = (1-s) z0 + s z1 along every edge, shape (ne, nq, 2)."""
        z0 = self.vertices[self.edges[:, 0]]
        z1 = self.vertices[self.edges[:, 1]]
        s = np.asarray(ref_params)[None, :, None]
        return (1.0 - s) * z0[:, None, :] + s * z1[:, None, :]

    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric coordinates, shape (nt, 3, 2)."""
        inv_t = np.linalg.inv(self.jacobians).transpose(0, 2, 1)     # DF^{-T}
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.einsum("tij,kj->tki", inv_t, ref)

    def angles(self) -> np.ndarray:
        """Interior angles (radians) at the three local vertices, shape (nt, 3)."""
        p = self.vertices[self.triangles]
        result = np.empty((self.n_elements, 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            result[:, i] = np.arccos(np.clip(cos, -1.0, 1.0))
        return result

    def min_angle(self) -> float:
        return float(self.angles().min())


def audit_conformity(mesh: Mesh) -> List[str]:
    """
    Edge-adjacency audit.

    Returns a list of human readable problems; empty when the mesh is
    conforming and positively oriented.
    """
    problems = []
    counts = (mesh.edge_elements >= 0).sum(axis=1)
    interior = mesh.boundary_tags == BoundaryTag.INTERIOR
    if (counts[interior] != 2).any():
        problems.append(f"{int((counts[interior] != 2).sum())} interior edges lack two elements")
    if (counts[~interior] != 1).any():
        problems.append(f"{int((counts[~interior] != 1).sum())} boundary edges touch two elements")
    if (mesh.areas <= 0).any():
        problems.append(f"element {int(np.argmax(mesh.areas <= 0))} has non-positive area")
    # every vertex of a boundary loop appears in exactly two boundary edges
    bnd = mesh.edges[~interior].ravel()
    degree = np.bincount(bnd, minlength=mesh.n_vertices)
    if ((degree != 0) & (degree != 2)).any():
        problems.append("boundary edges do not form closed loops")
    return problems


# -- initial meshes ----------------------------------------------------------

def _l_shape() -> Tuple[np.ndarray, np.ndarray]:
    vertices = np.array([
        [-1.0, -1.0], [0.0, -1.0], [-1.0, 0.0], [0.0, 0.0],
        [1.0, 0.0], [-1.0, 1.0], [0.0, 1.0], [1.0, 1.0],
    ])
    # three unit squares, each cut by the diagonal through the origin
    triangles = np.array([
        [0, 1, 3], [0, 3, 2],
        [3, 6, 5], [3, 5, 2],
        [3, 4, 7], [3, 7, 6],
    ])
    return vertices, triangles


def _square() -> Tuple[np.ndarray, np.ndarray]:
    vertices = np.array([
        [0.0, 0.0],
        [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [-1.0, 1.0],
        [-1.0, 0.0], [-1.0, -1.0], [0.0, -1.0], [1.0, -1.0],
    ])
    # one square per quadrant, split along the diagonal through the center
    triangles = np.array([
        [0, 1, 2], [0, 2, 3],
        [0, 3, 4], [0, 4, 5],
        [0, 5, 6], [0, 6, 7],
        [0, 7, 8], [0, 8, 1],
    ])
    return vertices, triangles


def build_initial_mesh(domain: DomainSpec) -> Mesh:
    """
    Build the initial mesh of a domain.

    Args:
        domain: Domain description

    Returns:
        Conforming mesh with all boundary edges Dirichlet unless the domain
        supplies its own tags

    Raises:
        MeshError: If custom coordinates are invalid
    """
    kind = DomainKind(domain.kind)
    if kind is DomainKind.L_SHAPE:
        vertices, triangles = _l_shape()
    elif kind is DomainKind.SQUARE:
        vertices, triangles = _square()
    elif kind is DomainKind.REFERENCE:
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        triangles = np.array([[0, 1, 2]])
    else:
        if domain.vertices is None or domain.triangles is None:
            raise MeshError("Custom domains need vertices and triangles")
        vertices, triangles = domain.vertices, domain.triangles

    segments, tags = domain.boundary_segments, domain.boundary_tags
    if segments is not None:
        # unlisted boundary edges default to Dirichlet
        candidate = Mesh(vertices, triangles, element_tags=domain.element_tags)
        all_segments, _ = candidate.boundary_segments
        all_tags = np.full(all_segments.shape[0], BoundaryTag.DIRICHLET, dtype=np.int64)
        given = candidate.find_edges(segments)
        if (given < 0).any():
            raise MeshError(f"Boundary segment {tuple(np.asarray(segments)[np.argmax(given < 0)])} is not a mesh edge")
        lookup = {int(e): int(t) for e, t in zip(
            given, tags if tags is not None else np.zeros(len(given), dtype=np.int64))}
        all_ids = candidate.find_edges(all_segments)
        all_tags = np.array([lookup.get(int(e), int(BoundaryTag.DIRICHLET)) for e in all_ids],
                            dtype=np.int64)
        segments, tags = all_segments, all_tags

    mesh = Mesh(vertices, triangles, segments, tags, element_tags=domain.element_tags)
    logger.debug(f"Built initial {kind.value} mesh: {mesh}")
    return mesh


# -- plain text format: "nv nt" / "x y" per vertex / "i j k tag" per triangle --

def format_mesh_text(mesh: Mesh) -> str:
    lines = [f"{mesh.n_vertices} {mesh.n_elements}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k} {tag}" for (i, j, k), tag in zip(mesh.triangles, mesh.element_tags)]
    return "\n".join(lines) + "\n"


def parse_mesh_text(text: str) -> Mesh:
    """
    Parse the plain text mesh format.

    Raises:
        MeshError: If the header counts do not match the body
    """
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows or len(rows[0]) != 2:
        raise MeshError("Mesh header must be 'nv nt'")
    nv, nt = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + nv + nt:
        raise MeshError(f"Expected {nv} vertex and {nt} triangle lines, got {len(rows) - 1} lines")
    try:
        vertices = np.array([[float(v) for v in r[:2]] for r in rows[1:1 + nv]])
        body = np.array([[int(v) for v in r[:4]] for r in rows[1 + nv:]], dtype=np.int64)
    except (ValueError, IndexError) as e:
        raise MeshError(f"Malformed mesh line: {e}")
    if body.shape[1] != 4:
        raise MeshError("Triangle lines must read 'i j k tag'")
    return Mesh(vertices, body[:, :3], element_tags=body[:, 3])


def load_mesh_text(path: Union[str, Path]) -> Mesh:
    with open(path, "r", encoding="utf-8") as f:
        return parse_mesh_text(f.read())
