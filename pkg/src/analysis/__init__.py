from .errors import ExactErrors, exact_errors
from .estimator import (
    EfficiencyCheck,
    EstimatorReport,
    ReliabilityCheck,
    compute_report,
    efficiency_check,
    efficiency_index,
    reliability_check,
    tangential_jump,
)
from .postprocess import (
    AuxiliarySolution,
    MeanCoefficient,
    PostprocessAudit,
    PostprocessedPressure,
    audit_l_h,
    auxiliary_gap,
    build_l_h,
    mean_coefficient,
    nodal_average_pressure,
    solve_auxiliary_rt0,
)
from .quadrature_error import (
    SigmaBounds,
    local_sigma_matrices,
    sigma_bound_constants,
    sigma_exactness_defect,
)
