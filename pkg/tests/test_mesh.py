import pytest
import numpy as np

from src.mesh.mesh import (
    BoundaryTag,
    DomainKind,
    DomainSpec,
    Mesh,
    audit_conformity,
    build_initial_mesh,
    format_mesh_text,
    load_mesh_text,
    parse_mesh_text,
)
from src.mesh.refinement import MarkedSet, close_marking, genealogy_area_defect, refine, uniform_refine
from src.utils.validators import MeshError, ValidationError

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
UNIT_SQUARE_TRIANGLES = np.array([[0, 1, 2], [0, 2, 3]])


def corner_refinements(mesh, steps):
    """Repeatedly refine the elements touching the origin."""
    meshes = [mesh]
    for _ in range(steps):
        near = np.flatnonzero(np.linalg.norm(mesh.vertices[mesh.triangles], axis=2).min(axis=1) < 1e-12)
        mesh = refine(mesh, MarkedSet.of(near))
        meshes.append(mesh)
    return meshes


class TestInitialMeshes:
    def test_l_shape(self, l_shape_mesh):
        """The L-shape starts with six triangles covering area 3."""
        assert l_shape_mesh.n_elements == 6
        assert l_shape_mesh.n_vertices == 8
        assert l_shape_mesh.n_edges == 13
        assert l_shape_mesh.areas.sum() == pytest.approx(3.0)
        assert len(l_shape_mesh.dirichlet_edges) == 8

    def test_square(self, square_mesh):
        """The square starts with eight triangles around the origin."""
        assert square_mesh.n_elements == 8
        assert square_mesh.n_edges == 16
        assert square_mesh.areas.sum() == pytest.approx(4.0)
        assert np.allclose(square_mesh.vertices[0], 0.0)
        assert (square_mesh.triangles == 0).any(axis=1).all()

    def test_reference(self):
        """The reference domain is the unit triangle."""
        mesh = build_initial_mesh(DomainSpec(DomainKind.REFERENCE))
        assert mesh.n_elements == 1
        assert mesh.areas[0] == pytest.approx(0.5)
        assert mesh.diameters[0] == pytest.approx(np.sqrt(2.0))

    def test_conforming(self, l_shape_mesh, square_mesh):
        """Both initial meshes pass the conformity audit."""
        assert audit_conformity(l_shape_mesh) == []
        assert audit_conformity(square_mesh) == []

    def test_custom_neumann_segment(self):
        """Listed segments take their tag, the rest default to Dirichlet."""
        domain = DomainSpec(DomainKind.CUSTOM, UNIT_SQUARE, UNIT_SQUARE_TRIANGLES,
                            boundary_segments=np.array([[0, 1]]),
                            boundary_tags=np.array([BoundaryTag.NEUMANN]))
        mesh = build_initial_mesh(domain)
        assert len(mesh.neumann_edges) == 1
        assert tuple(mesh.edges[mesh.neumann_edges[0]]) == (0, 1)
        assert len(mesh.dirichlet_edges) == 3

    def test_custom_without_connectivity(self):
        """Custom domains need coordinates and triangles."""
        with pytest.raises(MeshError):
            build_initial_mesh(DomainSpec(DomainKind.CUSTOM))


class TestMeshTopology:
    def test_edge_orientation(self, fine_l_shape_mesh):
        """Edges are sorted pairs with the lower element on side 0."""
        mesh = fine_l_shape_mesh
        assert (mesh.edges[:, 0] < mesh.edges[:, 1]).all()
        interior = mesh.interior_edges
        assert (mesh.edge_elements[interior, 0] < mesh.edge_elements[interior, 1]).all()
        assert (mesh.edge_elements[mesh.dirichlet_edges, 1] == -1).all()

    def test_normals_point_out_of_side_zero(self, fine_l_shape_mesh):
        """Unit normals point from the side 0 element towards the other side."""
        mesh = fine_l_shape_mesh
        assert np.allclose(np.linalg.norm(mesh.edge_normals, axis=1), 1.0)
        outward = mesh.edge_midpoints - mesh.centroids[mesh.edge_elements[:, 0]]
        assert (np.einsum("ea,ea->e", outward, mesh.edge_normals) > 0).all()
        assert np.allclose(np.einsum("ea,ea->e", mesh.edge_normals, mesh.edge_tangents), 0.0)

    def test_element_edge_signs(self, fine_l_shape_mesh):
        """Signs are +1 exactly on the side 0 element of each edge."""
        mesh = fine_l_shape_mesh
        rows = np.arange(mesh.n_elements)[:, None]
        expected = np.where(mesh.edge_elements[mesh.element_edges, 0] == rows, 1.0, -1.0)
        assert np.array_equal(mesh.element_edge_signs, expected)

    def test_find_edges(self, l_shape_mesh):
        """Vertex pairs map to edges in either order; non-edges give -1."""
        ids = l_shape_mesh.find_edges(np.array([[3, 0], [0, 3], [0, 7]]))
        assert ids[0] == ids[1] >= 0
        assert ids[2] == -1

    def test_arrays_are_read_only(self, l_shape_mesh):
        """Derived arrays cannot be modified in place."""
        with pytest.raises(ValueError):
            l_shape_mesh.vertices[0, 0] = 5.0

    def test_element_geometry(self, l_shape_mesh):
        """The element map sends reference vertices to element vertices."""
        geometry = l_shape_mesh.geometry(2)
        ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        corners = l_shape_mesh.vertices[l_shape_mesh.triangles[2]]
        assert np.allclose(geometry.map(ref), corners)
        assert np.allclose(geometry.inverse_map(corners), ref)
        with pytest.raises(IndexError):
            l_shape_mesh.geometry(6)

    def test_min_angle(self, l_shape_mesh):
        """Right isosceles triangles have a 45 degree minimum angle."""
        assert np.degrees(l_shape_mesh.min_angle()) == pytest.approx(45.0)
        assert np.allclose(l_shape_mesh.angles().sum(axis=1), np.pi)


class TestMeshValidation:
    def test_clockwise_element(self):
        """Clockwise connectivity is rejected."""
        with pytest.raises(MeshError, match="counterclockwise"):
            Mesh(UNIT_SQUARE, np.array([[0, 2, 1], [0, 2, 3]]))

    def test_degenerate_element(self):
        """Collinear vertices are rejected."""
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(MeshError, match="degenerate"):
            Mesh(vertices, np.array([[0, 1, 2]]))

    def test_missing_vertex(self):
        """Indices beyond the vertex list are rejected."""
        with pytest.raises(MeshError, match="missing vertex"):
            Mesh(UNIT_SQUARE, np.array([[0, 1, 7]]))

    def test_edge_shared_three_times(self):
        """A non-manifold edge is rejected."""
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
        triangles = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
        with pytest.raises(MeshError):
            Mesh(vertices, triangles)

    def test_segment_not_on_boundary(self):
        """Boundary segments must be boundary edges of the mesh."""
        with pytest.raises(MeshError):
            Mesh(UNIT_SQUARE, UNIT_SQUARE_TRIANGLES, boundary_segments=np.array([[0, 2]]))

    def test_needs_dirichlet_boundary(self):
        """An all-Neumann boundary is rejected."""
        segments = np.array([[0, 1], [1, 2], [2, 3], [0, 3]])
        with pytest.raises(MeshError, match="Dirichlet"):
            Mesh(UNIT_SQUARE, UNIT_SQUARE_TRIANGLES, segments, np.ones(4, dtype=np.int64))


class TestRefinement:
    def test_nothing_marked(self, l_shape_mesh):
        """An empty marked set returns the same mesh."""
        assert refine(l_shape_mesh, MarkedSet.of([])) is l_shape_mesh

    def test_invalid_index(self, l_shape_mesh):
        """Marked indices must be elements of the mesh."""
        with pytest.raises(ValidationError):
            refine(l_shape_mesh, MarkedSet.of([6]))

    def test_marked_set(self, l_shape_mesh):
        """MarkedSet sorts and deduplicates indices."""
        assert MarkedSet.of([3, 1, 3]).elements.tolist() == [1, 3]
        assert len(MarkedSet.everything(l_shape_mesh)) == 6

    def test_uniform_refinement(self, l_shape_mesh):
        """Uniform refinement keeps area, conformity and vertex indices."""
        fine = uniform_refine(l_shape_mesh)
        assert fine.n_elements >= 2 * l_shape_mesh.n_elements
        assert fine.areas.sum() == pytest.approx(3.0)
        assert audit_conformity(fine) == []
        assert np.array_equal(fine.vertices[:l_shape_mesh.n_vertices], l_shape_mesh.vertices)
        assert genealogy_area_defect(l_shape_mesh, fine) <= 1e-12
        assert (fine.level >= 1).all()

    def test_local_refinement_is_conforming(self, l_shape_mesh):
        """Repeated corner refinement stays conforming with bounded angles."""
        meshes = corner_refinements(uniform_refine(l_shape_mesh), 8)
        floor = 0.5 * l_shape_mesh.min_angle()
        for coarse, fine in zip(meshes, meshes[1:]):
            assert audit_conformity(fine) == []
            assert fine.min_angle() >= floor
            assert genealogy_area_defect(coarse, fine) <= 1e-12
            assert fine.parent.max() < coarse.n_elements
        assert meshes[-1].h_min < 0.1

    def test_closure_marks_longest_edges(self, fine_l_shape_mesh):
        """After closure every element with a marked edge has its longest edge marked."""
        mesh = fine_l_shape_mesh
        marked = close_marking(mesh, np.array([0, 5]))
        longest = mesh.element_edges[np.arange(mesh.n_elements), mesh.longest_edge]
        touched = marked[mesh.element_edges].any(axis=1)
        assert marked[longest[touched]].all()

    def test_boundary_tags_follow_refinement(self):
        """Bisected Neumann segments stay Neumann."""
        domain = DomainSpec(DomainKind.CUSTOM, UNIT_SQUARE, UNIT_SQUARE_TRIANGLES,
                            boundary_segments=np.array([[0, 1]]),
                            boundary_tags=np.array([BoundaryTag.NEUMANN]))
        fine = uniform_refine(uniform_refine(build_initial_mesh(domain)))
        neumann = fine.vertices[fine.edges[fine.neumann_edges]]
        assert np.allclose(neumann[:, :, 1], 0.0)
        assert fine.edge_lengths[fine.neumann_edges].sum() == pytest.approx(1.0)


class TestMeshText:
    def test_round_trip(self, fine_l_shape_mesh, tmp_path):
        """The text format reproduces coordinates, connectivity and tags."""
        path = tmp_path / "mesh.txt"
        path.write_text(format_mesh_text(fine_l_shape_mesh))
        loaded = load_mesh_text(path)
        assert np.array_equal(loaded.vertices, fine_l_shape_mesh.vertices)
        assert np.array_equal(loaded.triangles, fine_l_shape_mesh.triangles)
        assert np.array_equal(loaded.element_tags, fine_l_shape_mesh.element_tags)

    def test_header_mismatch(self):
        """Header counts must match the body."""
        with pytest.raises(MeshError):
            parse_mesh_text("3 2\n0 0\n1 0\n0 1\n0 1 2 0\n")

    def test_bad_header(self):
        """The header needs exactly two numbers."""
        with pytest.raises(MeshError):
            parse_mesh_text("3\n0 0\n")
