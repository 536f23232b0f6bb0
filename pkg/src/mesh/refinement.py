"""
Conforming longest-edge bisection.

Marked elements select their longest edge. The closure then marks the longest
edge of every element that has any marked edge, until nothing changes. Each
refined element is split across its longest edge first; a child is split once
more when the other edge it inherited is marked as well. Old vertices keep
their indices and every marked edge gets exactly one new midpoint vertex, so
the result is conforming by construction.
"""

from dataclasses import dataclass
from typing import Iterable, Union
import logging

import numpy as np

from .mesh import Mesh
from ..utils.validators import validate_marked

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarkedSet:
    """Element indices selected for refinement."""
    elements: np.ndarray

    @classmethod
    def of(cls, elements: Union[Iterable[int], np.ndarray]) -> "MarkedSet":
        return cls(np.unique(np.asarray(list(elements) if not isinstance(elements, np.ndarray)
                                        else elements, dtype=np.int64)))

    @classmethod
    def everything(cls, mesh: Mesh) -> "MarkedSet":
        return cls(np.arange(mesh.n_elements, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.elements.size)


def close_marking(mesh: Mesh, marked: np.ndarray) -> np.ndarray:
    """
    Propagate edge marks until every element with a marked edge has its
    longest edge marked.

    Returns:
        Boolean mask over edges
    """
    rows = np.arange(mesh.n_elements)
    longest = mesh.element_edges[rows, mesh.longest_edge]
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[longest[marked]] = True

    sweeps = 0
    while True:
        touched = edge_marked[mesh.element_edges].any(axis=1)
        missing = touched & ~edge_marked[longest]
        if not missing.any():
            break
        edge_marked[longest[missing]] = True
        sweeps += 1

    logger.debug(f"Closure finished after {sweeps} sweeps, {int(edge_marked.sum())} edges marked")
    return edge_marked


def refine(mesh: Mesh, marked: MarkedSet) -> Mesh:
    """
    Refine marked elements by longest-edge bisection with conforming closure.

    Args:
        mesh: Current mesh
        marked: Elements to refine

    Returns:
        New mesh; the input mesh is returned unchanged when nothing is marked
    """
    elements = np.asarray(marked.elements, dtype=np.int64)
    validate_marked(elements, mesh.n_elements)
    if elements.size == 0:
        return mesh

    edge_marked = close_marking(mesh, elements)
    n_new = int(edge_marked.sum())
    midpoint = np.full(mesh.n_edges, -1, dtype=np.int64)
    midpoint[edge_marked] = mesh.n_vertices + np.arange(n_new)
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints[edge_marked]])

    nt = mesh.n_elements
    rows = np.arange(nt)
    r = mesh.longest_edge
    # rotate so the refinement edge is opposite local vertex a
    a = mesh.triangles[rows, r]
    b = mesh.triangles[rows, (r + 1) % 3]
    c = mesh.triangles[rows, (r + 2) % 3]
    m_bc = midpoint[mesh.element_edges[rows, r]]
    m_ca = midpoint[mesh.element_edges[rows, (r + 1) % 3]]
    m_ab = midpoint[mesh.element_edges[rows, (r + 2) % 3]]

    keep = m_bc < 0
    split = ~keep
    split_left = split & (m_ab >= 0)
    split_right = split & (m_ca >= 0)

    children, parents, ranks, depth = [], [], [], []

    def emit(mask, tri, rank, extra_depth):
        idx = np.flatnonzero(mask)
        children.append(np.column_stack(tri)[idx] if idx.size else np.empty((0, 3), dtype=np.int64))
        parents.append(idx)
        ranks.append(np.full(idx.size, rank))
        depth.append(np.full(idx.size, extra_depth))

    emit(keep, (mesh.triangles[:, 0], mesh.triangles[:, 1], mesh.triangles[:, 2]), 0, 0)
    emit(split & ~split_left, (a, b, m_bc), 0, 1)
    emit(split_left, (m_bc, a, m_ab), 0, 2)
    emit(split_left, (m_bc, m_ab, b), 1, 2)
    emit(split & ~split_right, (a, m_bc, c), 2, 1)
    emit(split_right, (m_bc, c, m_ca), 2, 2)
    emit(split_right, (m_bc, m_ca, a), 3, 2)

    children = np.vstack(children)
    parents = np.concatenate(parents)
    ranks = np.concatenate(ranks)
    depth = np.concatenate(depth)
    order = np.lexsort((ranks, parents))

    triangles = children[order]
    parent = parents[order]
    level = mesh.level[parent] + depth[order]
    element_tags = mesh.element_tags[parent]

    segments, tags = mesh.boundary_segments
    seg_edges = mesh.find_edges(segments)
    seg_mid = midpoint[seg_edges]
    whole = seg_mid < 0
    new_segments = np.vstack([
        segments[whole],
        np.column_stack([segments[~whole, 0], seg_mid[~whole]]),
        np.column_stack([seg_mid[~whole], segments[~whole, 1]]),
    ])
    new_tags = np.concatenate([tags[whole], tags[~whole], tags[~whole]])

    refined = Mesh(vertices, triangles, new_segments, new_tags,
                   element_tags=element_tags, parent=parent, level=level)
    logger.info(
        f"Refined {elements.size} marked of {nt} elements: "
        f"{refined.n_elements} elements, {n_new} new vertices"
    )
    return refined


def uniform_refine(mesh: Mesh) -> Mesh:
    """Refine every element once (equivalent to marking all elements)."""
    return refine(mesh, MarkedSet.everything(mesh))


def genealogy_area_defect(coarse: Mesh, fine: Mesh) -> float:
    """
    Largest relative mismatch between a parent's area and the summed area of
    its children.
    """
    child_area = np.bincount(fine.parent, weights=fine.areas, minlength=coarse.n_elements)
    return float(np.max(np.abs(child_area - coarse.areas) / coarse.areas))
