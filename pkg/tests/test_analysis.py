import pytest
from dataclasses import replace
import numpy as np

from src.adaptivity.adaptive import run_adaptive
from src.analysis.errors import exact_errors
from src.analysis.estimator import (
    EstimatorReport,
    compute_report,
    efficiency_check,
    efficiency_index,
    reliability_check,
)
from src.analysis.postprocess import (
    audit_l_h,
    auxiliary_gap,
    build_l_h,
    mean_coefficient,
    nodal_average_pressure,
    solve_auxiliary_rt0,
)
from src.analysis.quadrature_error import (
    local_sigma_matrices,
    sigma_bound_constants,
    sigma_exactness_defect,
)
from src.fem.quadrature import VERTEX_RULE, QuadRule
from src.fem.spaces import PressureField
from src.mesh.mesh import build_initial_mesh
from src.mesh.refinement import uniform_refine
from src.problems.benchmarks import example_71, example_72
from src.solver.solvers import SolverMethod, solve

from .conftest import refined

PERTURBED_RULE = QuadRule(VERTEX_RULE.kind, VERTEX_RULE.points,
                          np.array([1.0 / 6.0 + 1e-3, 1.0 / 6.0, 1.0 / 6.0 - 1e-3]), 1)


def uniform_levels(mesh, count):
    """The mesh and its next count - 1 uniform refinements."""
    for _ in range(count):
        yield mesh
        mesh = uniform_refine(mesh)


def zero_report(n):
    zeros = np.zeros(n)
    return EstimatorReport(zeros, zeros, zeros, zeros, zeros, zeros, zeros, eta_h=0.0, eta_Q=0.0)


class TestExactErrors:
    def test_pressure_projection_bound(self, corner_state):
        """‖Q_h p - p_h‖ never exceeds ‖p - p_h‖."""
        mesh, problem, solution = corner_state
        errors = exact_errors(mesh, solution, problem)
        assert 0 < errors.err_Qhp <= errors.err_p
        assert errors.err_u == pytest.approx(np.sqrt(errors.velocity_sq.sum()))
        assert errors.velocity_sq.shape == (mesh.n_elements,)

    def test_velocity_error_decreases(self, l_shape_mesh):
        """Uniform refinement reduces the velocity error."""
        problem = example_71(0.4)
        coarse = refined(l_shape_mesh, 2)
        fine = refined(coarse, 2)
        err_coarse = exact_errors(coarse, solve(coarse, problem), problem).err_u
        err_fine = exact_errors(fine, solve(fine, problem), problem).err_u
        assert err_fine < err_coarse


class TestEstimator:
    def test_constant_patch_vanishes(self, constant_state):
        """Both indicators vanish for a constant pressure."""
        mesh, problem, solution = constant_state
        report = compute_report(mesh, solution, problem)
        assert report.eta_h <= 1e-9
        assert report.eta_Q <= 1e-9

    def test_linear_patch(self, linear_state):
        """η_h vanishes for a linear pressure; η_Q sees the constant velocity."""
        mesh, problem, solution = linear_state
        report = compute_report(mesh, solution, problem)
        assert report.eta_h <= 1e-9
        # h_T²‖u‖²_T with |u|² = 2
        assert report.eta_Q ** 2 == pytest.approx(np.sum(mesh.diameters ** 2 * 2.0 * mesh.areas))

    def test_global_sums(self, corner_state):
        """Global indicators are the square roots of the elementwise sums."""
        mesh, problem, solution = corner_state
        report = compute_report(mesh, solution, problem)
        assert report.n_elements == mesh.n_elements
        assert report.eta_h ** 2 == pytest.approx(np.sum(report.residual + report.jump))
        assert report.eta_Q ** 2 == pytest.approx(report.eta_q_sq.sum())
        assert np.allclose(report.eta_sq, report.residual + report.jump + report.eta_q_sq)
        assert report.eta_total == pytest.approx(np.hypot(report.eta_h, report.eta_Q))
        assert (report.eta_sq >= 0).all()

    def test_interior_jumps_counted_twice(self, corner_state):
        """Each interior edge contributes to both of its elements."""
        mesh, problem, solution = corner_state
        report = compute_report(mesh, solution, problem)
        weighted = mesh.edge_lengths * report.edge_jump ** 2
        interior = mesh.interior_edges
        boundary = np.setdiff1d(np.arange(mesh.n_edges), interior)
        expected = 2.0 * weighted[interior].sum() + weighted[boundary].sum()
        assert report.jump.sum() == pytest.approx(expected)

    def test_divergence_residual_vanishes_without_source(self, corner_state):
        """With f = 0 and ∇·u_h = Q_h f the residual term is zero."""
        mesh, problem, solution = corner_state
        report = compute_report(mesh, solution, problem)
        assert report.residual.max() <= 1e-18

    def test_without_higher_order_terms(self, corner_state):
        """include_hot off drops the residual and the ∂²g/∂t² term."""
        mesh, problem, solution = corner_state
        full = compute_report(mesh, solution, problem, include_hot=True)
        reduced = compute_report(mesh, solution, problem, include_hot=False)
        assert not reduced.include_hot
        assert np.allclose(reduced.residual, 0.0)
        assert np.allclose(reduced.oscillation, full.oscillation)
        assert reduced.eta_h <= full.eta_h
        assert reduced.eta_Q == pytest.approx(full.eta_Q)

    def test_quadrature_free_solution(self, corner_state):
        """For the exact mixed scheme η_Q is reported but not used in the bounds."""
        mesh, problem, _ = corner_state
        mixed = solve(mesh, problem, SolverMethod.MIXED_EXACT)
        report = compute_report(mesh, mixed, problem)
        assert report.quadrature_free
        assert report.eta_Q > 0
        assert report.eta_Q_bound == 0.0
        assert report.eta_total == pytest.approx(report.eta_h)
        assert np.allclose(report.eta_sq, report.residual + report.jump)

    @pytest.mark.parametrize("t", [3.0, 0.25])
    def test_velocity_homogeneity(self, corner_state, t):
        """Scaling u_h by t scales η_Q and every interior jump by t."""
        mesh, problem, solution = corner_state
        base = compute_report(mesh, solution, problem)
        scaled = compute_report(mesh, replace(solution, velocity=solution.velocity.scaled(t)), problem)
        interior = mesh.interior_edges
        assert scaled.eta_Q == pytest.approx(t * base.eta_Q, rel=1e-12)
        assert np.allclose(np.abs(scaled.edge_jump[interior]), t * np.abs(base.edge_jump[interior]),
                           rtol=1e-12, atol=1e-14 * np.abs(base.edge_jump).max())

    def test_singularity_dominates(self, corner_state):
        """The largest indicator sits at the re-entrant corner."""
        mesh, problem, solution = corner_state
        report = compute_report(mesh, solution, problem)
        worst = int(np.argmax(report.eta_sq))
        assert np.linalg.norm(mesh.vertices[mesh.triangles[worst]], axis=1).min() < 1e-12


class TestBounds:
    def test_reliability(self, corner_state):
        """C_rel is a moderate constant on a singular problem."""
        mesh, problem, solution = corner_state
        report = compute_report(mesh, solution, problem)
        check = reliability_check(report, exact_errors(mesh, solution, problem).err_u)
        assert not check.flagged
        assert 1e-2 < check.c_rel < 10.0

    def test_reliability_flags_vanishing_estimator(self):
        """A zero estimator with a nonzero error is flagged."""
        check = reliability_check(zero_report(4), 1.0)
        assert check.flagged
        assert check.c_rel == float("inf")
        assert reliability_check(zero_report(4), 0.0).c_rel == 0.0

    def test_efficiency_index(self):
        """0/0 is reported as 0."""
        assert efficiency_index(zero_report(3), 0.0) == 0.0

    def test_efficiency(self, quadrant_state):
        """Efficiency and pressure bounds produce finite positive ratios."""
        mesh, problem, solution = quadrant_state
        report = compute_report(mesh, solution, problem)
        errors = exact_errors(mesh, solution, problem)
        check = efficiency_check(mesh, solution, problem, report, errors)
        assert check.pressure_lhs == errors.err_Qhp
        assert check.full_pressure_lhs == errors.err_p
        for ratio in (check.ratio, check.pressure_ratio, check.full_pressure_ratio):
            assert 0 < ratio < np.inf

    @pytest.mark.slow
    @pytest.mark.parametrize("make_problem", [lambda: example_71(0.4), example_72])
    def test_reliability_band_under_uniform_refinement(self, make_problem):
        """C_rel stays within a factor 3 band over five uniform levels."""
        problem = make_problem()
        constants = []
        for mesh in uniform_levels(refined(build_initial_mesh(problem.domain), 1), 5):
            solution = solve(mesh, problem)
            report = compute_report(mesh, solution, problem)
            constants.append(reliability_check(report, exact_errors(mesh, solution, problem).err_u).c_rel)
        assert max(constants) / min(constants) <= 3.0

    @pytest.mark.slow
    @pytest.mark.parametrize("make_problem", [lambda: example_71(0.4), example_72])
    def test_reliability_band_under_adaptive_refinement(self, small_run, make_problem):
        """C_rel stays within a factor 3 band along an adaptive run."""
        result = run_adaptive(make_problem(), small_run(theta=0.5, max_iterations=12))
        history = result.history
        constants = (history.column("err_u") / history.column("eta_total"))[2:]
        assert constants.size >= 5
        assert max(constants) / min(constants) <= 3.0

    @pytest.mark.slow
    @pytest.mark.parametrize("make_problem", [lambda: example_71(0.4), example_72])
    def test_efficiency_band_under_uniform_refinement(self, make_problem):
        """The efficiency and pressure bound ratios stay within a factor 3 band over five levels."""
        problem = make_problem()
        efficiency, pressure = [], []
        for mesh in uniform_levels(refined(build_initial_mesh(problem.domain), 1), 5):
            solution = solve(mesh, problem)
            report = compute_report(mesh, solution, problem)
            check = efficiency_check(mesh, solution, problem, report, exact_errors(mesh, solution, problem))
            efficiency.append(check.ratio)
            pressure.append(check.pressure_ratio)
        assert max(efficiency) / min(efficiency) <= 3.0
        assert max(pressure) / min(pressure) <= 3.0


class TestPostprocessing:
    @pytest.mark.parametrize("make_problem", [example_72, lambda: example_71(0.4)])
    def test_l_h_identities(self, make_problem):
        """l_h matches the auxiliary gradient, means, edge continuity and boundary data."""
        problem = make_problem()
        mesh = refined(build_initial_mesh(problem.domain), 2)
        auxiliary = solve_auxiliary_rt0(mesh, problem)
        l_h = build_l_h(mesh, auxiliary.velocity, auxiliary.pressure, auxiliary.mean)
        audit = audit_l_h(mesh, l_h, auxiliary, problem)
        assert audit.passed(1e-10), audit
        assert l_h.vertex_values().shape == (mesh.n_elements, 3)

    def test_mean_coefficient(self, fine_square_mesh):
        """K̄⁻¹ = I / s_i on quadrant i."""
        problem = example_72()
        mean = mean_coefficient(fine_square_mesh, problem)
        scales = np.array([5.0, 1.0, 5.0, 1.0])[problem.element_regions(fine_square_mesh)]
        assert np.allclose(mean.inverse, np.eye(2)[None] / scales[:, None, None])
        assert mean.eigenvalue_range() == pytest.approx((0.2, 1.0))

    def test_nodal_average(self, square_mesh):
        """Averaging a constant pressure returns the constant."""
        pressure = PressureField(square_mesh, np.full(square_mesh.n_elements, 2.5))
        assert np.allclose(nodal_average_pressure(square_mesh, pressure), 2.5)

    def test_auxiliary_gap_on_patch(self, linear_state):
        """ũ_h = Π₀u_h when both reproduce the same constant velocity."""
        mesh, problem, solution = linear_state
        auxiliary = solve_auxiliary_rt0(mesh, problem)
        assert auxiliary_gap(mesh, auxiliary, solution.velocity) <= 1e-10

    def test_auxiliary_gap_positive(self, corner_state):
        """The gap is a quadrature effect of the size of η_Q or smaller."""
        mesh, problem, solution = corner_state
        gap = auxiliary_gap(mesh, solve_auxiliary_rt0(mesh, problem), solution.velocity)
        report = compute_report(mesh, solution, problem)
        assert 0 < gap < 10.0 * report.eta_Q

    @pytest.mark.slow
    def test_auxiliary_gap_band(self, l_shape_mesh):
        """The gap over η_Q stays within a factor 3 band over five uniform levels."""
        problem = example_71(0.4)
        ratios = []
        for mesh in uniform_levels(refined(l_shape_mesh, 1), 5):
            solution = solve(mesh, problem)
            gap = auxiliary_gap(mesh, solve_auxiliary_rt0(mesh, problem), solution.velocity)
            ratios.append(gap / compute_report(mesh, solution, problem).eta_Q)
        assert max(ratios) / min(ratios) <= 3.0


class TestQuadratureError:
    def test_exact_for_constants(self, fine_square_mesh):
        """The vertex rule is exact for constant q against linear v with piecewise constant K."""
        problem = example_72()
        assert sigma_exactness_defect(fine_square_mesh, problem.coefficient(fine_square_mesh)) <= 1e-12

    def test_perturbed_rule_detected(self, fine_square_mesh):
        """Perturbed weights break the exactness."""
        problem = example_72()
        defect = sigma_exactness_defect(fine_square_mesh, problem.coefficient(fine_square_mesh),
                                        PERTURBED_RULE)
        assert defect > 1e-6

    def test_local_sigma_symmetric(self, fine_square_mesh):
        """σ_T is a symmetric bilinear form."""
        sigma = local_sigma_matrices(fine_square_mesh, example_72().coefficient(fine_square_mesh))
        assert sigma.shape == (fine_square_mesh.n_elements, 6, 6)
        assert np.allclose(sigma, sigma.transpose(0, 2, 1), atol=1e-14)

    def test_bound_constants_stable(self, l_shape_mesh):
        """Measured constants vary by less than a factor 3 over five levels."""
        coefficient_problem = example_71(0.4)
        mesh = l_shape_mesh
        rt0, bdm1 = [], []
        for level in range(5):
            if level:
                mesh = uniform_refine(mesh)
            bounds = sigma_bound_constants(mesh, coefficient_problem.coefficient(mesh))
            assert bounds.n_elements == mesh.n_elements
            rt0.append(bounds.rt0_constant)
            bdm1.append(bounds.bdm1_constant)
        assert max(rt0) / min(rt0) <= 3.0
        assert max(bdm1) / min(bdm1) <= 3.0
        assert min(rt0) > 0 and min(bdm1) > 0
