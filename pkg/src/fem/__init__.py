from .spaces import (
    REF_AREA,
    REF_EDGE_LENGTHS,
    REF_NORMALS,
    REF_VERTICES,
    DofMap,
    PressureField,
    SpaceKind,
    VelocityField,
    bdm1_reference_basis,
    build_dof_map,
    piola_divergence,
    piola_map,
    reference_divergences,
    reference_values,
    rt0_in_bdm1,
    rt0_reference_basis,
)
from .quadrature import (
    GAUSS7,
    VERTEX_RULE,
    InverseTensorCoefficient,
    QuadRule,
    RuleKind,
    TensorCoefficient,
    edge_gauss,
    exact_pairing,
    integrate_edges,
    integrate_elements,
    inverse_2x2,
    local_mass_matrices,
    local_norm_matrices,
    sigma_T,
    vertex_quadrature_pairing,
)
from .projections import (
    as_element_field,
    commuting_defect,
    interpolate_Pi,
    interpolate_Pi0,
    project_Q_h,
)
