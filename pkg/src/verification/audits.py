"""
Self-checks run by the `verify` command.

Every audit builds its own small problem, so the suite needs no input and a
fresh checkout passes it. An audit that raises counts as failed.
"""

from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Optional
import logging

import numpy as np

from ..adaptivity.adaptive import dorfler_mark
from ..analysis.errors import exact_errors
from ..analysis.estimator import compute_report
from ..analysis.postprocess import audit_l_h, build_l_h, solve_auxiliary_rt0
from ..analysis.quadrature_error import sigma_bound_constants, sigma_exactness_defect
from ..fem.projections import project_Q_h
from ..fem.quadrature import VERTEX_RULE, QuadRule
from ..fem.spaces import REF_NORMALS, REF_VERTICES, SpaceKind, VelocityField, bdm1_reference_basis, build_dof_map
from ..mesh.mesh import LOCAL_EDGE_VERTICES, BoundaryTag, audit_conformity, build_initial_mesh
from ..mesh.refinement import MarkedSet, genealogy_area_defect, refine, uniform_refine
from ..problems.benchmarks import constant_patch, example_71, example_72, interface_audit, linear_patch
from ..solver.assembly import assemble
from ..solver.solvers import eliminate_and_solve

logger = logging.getLogger(__name__)

TIGHT_TOL = 1e-12
SOLVE_TOL = 1e-10
SIGMA_DRIFT = 3.0


@dataclass(frozen=True)
class AuditResult:
    audit_id: str
    passed: bool
    detail: str


def _result(audit_id: str, passed: bool, detail: str) -> AuditResult:
    return AuditResult(audit_id, bool(passed), detail)


def _mesh_sequence():
    """Initial L-shape mesh, then alternating uniform and corner-local refinements."""
    mesh = build_initial_mesh(example_71().domain)
    meshes = [mesh]
    for level in range(6):
        if level % 2 == 0:
            mesh = uniform_refine(mesh)
        else:
            near_origin = np.flatnonzero(np.linalg.norm(mesh.centroids, axis=1) < 0.3)
            mesh = refine(mesh, MarkedSet.of(near_origin))
        meshes.append(mesh)
    return meshes


def audit_mesh_conformity(vertex_rule: QuadRule) -> AuditResult:
    meshes = _mesh_sequence()
    floor = 0.5 * meshes[0].min_angle()
    issues = []
    for coarse, fine in zip(meshes, meshes[1:]):
        issues += audit_conformity(fine)
        if fine.min_angle() < floor:
            issues.append(f"minimum angle {np.degrees(fine.min_angle()):.2f} deg on {fine.n_elements} elements")
        if genealogy_area_defect(coarse, fine) > TIGHT_TOL:
            issues.append(f"children do not tile their parents on {fine.n_elements} elements")
    return _result("mesh-conformity", not issues,
                   "; ".join(issues) or f"{len(meshes)} meshes up to {meshes[-1].n_elements} elements")


def audit_bdm1_duality(vertex_rule: QuadRule) -> AuditResult:
    endpoints = REF_VERTICES[LOCAL_EDGE_VERTICES.ravel()]
    normals = np.repeat(REF_NORMALS, 2, axis=0)
    values, _ = bdm1_reference_basis(endpoints)
    functionals = np.einsum("mka,ma->mk", values, normals)
    defect = float(np.abs(functionals - np.eye(6)).max())
    return _result("bdm1-duality", defect <= TIGHT_TOL, f"max |N_m(psi_k) - delta_mk| = {defect:.2e}")


def audit_piola_flux(vertex_rule: QuadRule) -> AuditResult:
    mesh = _mesh_sequence()[3]
    dofs = build_dof_map(mesh, SpaceKind.BDM1)
    coefficients = np.sin(np.arange(dofs.n_dofs) + 1.0)
    field = VelocityField(mesh, dofs, coefficients)
    params = np.array([0.0, 1.0])
    expected = coefficients.reshape(-1, 2)

    first = np.einsum("eqa,ea->eq", field.edge_trace(0, params), mesh.edge_normals)
    second = np.einsum("eqa,ea->eq", field.edge_trace(1, params), mesh.edge_normals)
    interior = mesh.boundary_tags == BoundaryTag.INTERIOR
    defect = max(float(np.abs(first - expected).max()),
                 float(np.abs(second[interior] - expected[interior]).max()))
    return _result("piola-flux", defect <= 1e-11,
                   f"endpoint flux defect {defect:.2e} on {mesh.n_edges} edges")


def audit_sigma_exactness(vertex_rule: QuadRule) -> AuditResult:
    problem = example_72()
    mesh = uniform_refine(build_initial_mesh(problem.domain))
    defect = sigma_exactness_defect(mesh, problem.coefficient(mesh), vertex_rule)
    return _result("sigma-exactness", defect <= TIGHT_TOL,
                   f"relative vertex-rule error on constant x linear fields {defect:.2e}")


def audit_block_structure(vertex_rule: QuadRule) -> AuditResult:
    problem = example_72()
    mesh = uniform_refine(build_initial_mesh(problem.domain))
    solution = eliminate_and_solve(assemble(mesh, problem, vertex_rule), audit_schur=True)
    d = solution.diagnostics
    passed = d.symmetry_defect <= 1e-13 and d.off_block <= 1e-13 and d.schur_min_eigenvalue > 0
    return _result("block-structure", passed,
                   f"{d.n_blocks} vertex blocks (largest {d.max_block}), off-block {d.off_block:.1e}, "
                   f"min eig(S) {d.schur_min_eigenvalue:.3e}")


def audit_divergence_identity(vertex_rule: QuadRule) -> AuditResult:
    problem = replace(
        linear_patch(),
        name="linear_patch_with_source",
        source=lambda points, regions: np.sin(3.0 * points[:, 0]) + points[:, 1] ** 2,
    )
    mesh = _mesh_sequence()[2]
    solution = eliminate_and_solve(assemble(mesh, problem, vertex_rule))
    qhf = project_Q_h(mesh, problem.element_field(mesh, problem.source)).values
    defect = float(np.abs(solution.velocity.divergence() - qhf).max() / max(1.0, np.abs(qhf).max()))
    return _result("divergence-identity", defect <= SOLVE_TOL,
                   f"max |div u_h - Q_h f| = {defect:.2e} on {mesh.n_elements} elements")


def audit_patch_exactness(vertex_rule: QuadRule) -> AuditResult:
    details, passed = [], True
    for problem in (constant_patch(), linear_patch()):
        mesh = uniform_refine(build_initial_mesh(problem.domain))
        solution = eliminate_and_solve(assemble(mesh, problem, vertex_rule))
        report = compute_report(mesh, solution, problem)
        errors = exact_errors(mesh, solution, problem)
        ok = errors.err_u <= SOLVE_TOL and report.eta_h <= 1e-9
        if problem.name == "constant_patch":
            ok = ok and report.eta_Q <= 1e-9
        passed = passed and ok
        details.append(f"{problem.name}: err_u {errors.err_u:.1e}, eta_h {report.eta_h:.1e}")
    return _result("patch-exactness", passed, "; ".join(details))


def audit_postprocessing(vertex_rule: QuadRule) -> AuditResult:
    problem = example_72()
    mesh = uniform_refine(build_initial_mesh(problem.domain))
    auxiliary = solve_auxiliary_rt0(mesh, problem)
    l_h = build_l_h(mesh, auxiliary.velocity, auxiliary.pressure, auxiliary.mean)
    audit = audit_l_h(mesh, l_h, auxiliary, problem)
    return _result("postprocess-l_h", audit.passed(SOLVE_TOL),
                   f"gradient {audit.gradient_defect:.1e}, mean {audit.mean_defect:.1e}, "
                   f"continuity {audit.continuity_defect:.1e}, dirichlet {audit.dirichlet_defect:.1e}")


def audit_sigma_bounds(vertex_rule: QuadRule) -> AuditResult:
    problem = example_71(0.4)
    mesh = build_initial_mesh(problem.domain)
    rt0, bdm1 = [], []
    for level in range(5):
        if level:
            mesh = uniform_refine(mesh)
        bounds = sigma_bound_constants(mesh, problem.coefficient(mesh), vertex_rule)
        rt0.append(bounds.rt0_constant)
        bdm1.append(bounds.bdm1_constant)
    drift_rt0 = max(rt0) / min(rt0)
    drift_bdm1 = max(bdm1) / min(bdm1)
    return _result("sigma-bounds", max(drift_rt0, drift_bdm1) <= SIGMA_DRIFT,
                   f"RT0 constants {min(rt0):.3e}..{max(rt0):.3e}, "
                   f"BDM1 constants {min(bdm1):.3e}..{max(bdm1):.3e}")


def audit_marking(vertex_rule: QuadRule) -> AuditResult:
    issues = []
    if dorfler_mark(np.array([9.0, 4.0, 1.0]), 0.5).elements.tolist() != [0]:
        issues.append("{9, 4, 1} at 0.5 must mark element 0 only")
    for n in (7, 8):
        if len(dorfler_mark(np.ones(n), 0.5)) != (n + 1) // 2:
            issues.append(f"{n} equal indicators must mark {(n + 1) // 2}")

    eta_sq = ((np.arange(40) * 37) % 41 + 1.0) ** 1.5
    for theta in (0.1, 0.5, 0.8, 1.0):
        marked = dorfler_mark(eta_sq, theta).elements
        kept = np.sort(eta_sq[marked])
        if eta_sq[marked].sum() < theta * eta_sq.sum() * (1 - 1e-14):
            issues.append(f"theta {theta}: marked share too small")
        if kept.size and eta_sq[marked].sum() - kept[0] >= theta * eta_sq.sum():
            issues.append(f"theta {theta}: marked set not minimal")
        permutation = np.roll(np.arange(eta_sq.size), 13)
        again = permutation[dorfler_mark(eta_sq[permutation], theta).elements]
        if not np.array_equal(np.sort(again), marked):
            issues.append(f"theta {theta}: marking depends on row order")
    return _result("marking-minimality", not issues, "; ".join(issues) or "minimal and order independent")


def audit_interfaces(vertex_rule: QuadRule) -> AuditResult:
    audit = interface_audit(example_72())
    passed = audit.relative_flux_jump <= 1e-6 and audit.normal_derivative_jump > 1e-3
    return _result("interface-flux", passed,
                   f"relative flux jump {audit.relative_flux_jump:.1e}, "
                   f"normal derivative jump {audit.normal_derivative_jump:.3e}")


AUDITS: Dict[str, Callable[[QuadRule], AuditResult]] = {
    "mesh-conformity": audit_mesh_conformity,
    "bdm1-duality": audit_bdm1_duality,
    "piola-flux": audit_piola_flux,
    "sigma-exactness": audit_sigma_exactness,
    "block-structure": audit_block_structure,
    "divergence-identity": audit_divergence_identity,
    "patch-exactness": audit_patch_exactness,
    "postprocess-l_h": audit_postprocessing,
    "sigma-bounds": audit_sigma_bounds,
    "marking-minimality": audit_marking,
    "interface-flux": audit_interfaces,
}


def run_audits(vertex_rule: QuadRule = VERTEX_RULE, only: Optional[Iterable[str]] = None) -> List[AuditResult]:
    """
    Run the audit suite.

    Args:
        vertex_rule: Quadrature rule the scheme is assembled with; a perturbed
            rule makes the sigma-exactness audit fail
        only: Audit ids to run, all by default

    Returns:
        One AuditResult per audit, in suite order
    """
    names = list(AUDITS) if only is None else list(only)
    results = []
    for name in names:
        if name not in AUDITS:
            raise KeyError(f"Unknown audit: {name}")
        try:
            result = AUDITS[name](vertex_rule)
        except Exception as e:
            logger.error(f"Audit {name} raised: {e}")
            result = AuditResult(name, False, f"{type(e).__name__}: {e}")
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"Audit {name}: {'pass' if result.passed else 'FAIL'} ({result.detail})")
        results.append(result)
    return results
