from .mesh import (
    BoundaryTag,
    DomainKind,
    DomainSpec,
    ElementGeometry,
    Mesh,
    audit_conformity,
    build_initial_mesh,
    load_mesh_text,
    parse_mesh_text,
    format_mesh_text,
)
from .refinement import MarkedSet, refine, uniform_refine, genealogy_area_defect

__all__ = [
    'BoundaryTag', 'DomainKind', 'DomainSpec', 'ElementGeometry', 'Mesh',
    'audit_conformity', 'build_initial_mesh', 'load_mesh_text', 'parse_mesh_text',
    'format_mesh_text', 'MarkedSet', 'refine', 'uniform_refine', 'genealogy_area_defect',
]
