import pytest
from dataclasses import replace
import numpy as np

from src.adaptivity.adaptive import (
    HISTORY_COLUMNS,
    ConvergenceHistory,
    HistoryRow,
    dorfler_mark,
    fit_slope,
    _check_mesh,
    run_adaptive,
    starting_mesh,
)
from src.mesh.mesh import DomainKind, DomainSpec, audit_conformity, build_initial_mesh
from src.problems.benchmarks import constant_patch, example_71, example_72, linear_patch
from src.utils.file_handlers import FileHandler
from src.utils.validators import AdaptiveRunError, ConfigurationError


def row(iteration, n, err_u=None):
    return HistoryRow(iteration, n, 2 * n, n, 1.0, 0.5, 0.1, 0.2, 0.3, err_u, err_u, err_u,
                      None if err_u is None else 1.5, 0.0)


def touches_corner_region(mesh, elements):
    """True if an element touches the origin or shares a vertex with one that does."""
    corner = np.flatnonzero(np.linalg.norm(mesh.vertices, axis=1) < 1e-12)
    touching = np.isin(mesh.triangles, corner).any(axis=1)
    near_vertices = np.unique(mesh.triangles[touching])
    neighbors = np.isin(mesh.triangles, near_vertices).any(axis=1)
    return bool(neighbors[elements].any())


class TestDorflerMarking:
    def test_single_dominant(self):
        """{9, 4, 1} at θ = 0.5 marks element 0 only."""
        assert dorfler_mark(np.array([9.0, 4.0, 1.0]), 0.5).elements.tolist() == [0]

    @pytest.mark.parametrize("theta,expected", [(0.7, [0, 1]), (0.9, [0, 1]), (1.0, [0, 1, 2])])
    def test_thresholds(self, theta, expected):
        """Marking stops as soon as the θ share is reached."""
        assert dorfler_mark(np.array([9.0, 4.0, 1.0]), theta).elements.tolist() == expected

    @pytest.mark.parametrize("n", [7, 8, 20])
    def test_equal_indicators(self, n):
        """Equal indicators mark ceil(n/2) elements at θ = 0.5."""
        assert len(dorfler_mark(np.ones(n), 0.5)) == (n + 1) // 2

    def test_ties_by_index(self):
        """Ties go to the lower element index."""
        assert dorfler_mark(np.array([1.0, 2.0, 1.0, 1.0, 2.0]), 0.5).elements.tolist() == [1, 4]

    def test_unordered_input(self):
        """The marked set does not depend on where the large values sit."""
        eta_sq = np.array([1.0, 16.0, 4.0, 9.0])
        assert dorfler_mark(eta_sq, 0.8).elements.tolist() == [1, 3]

    def test_zero_indicators(self):
        """Vanishing indicators mark nothing."""
        assert len(dorfler_mark(np.zeros(5), 0.5)) == 0

    @pytest.mark.parametrize("theta", [0.0, -0.1, 1.5, True])
    def test_invalid_theta(self, theta):
        """θ must lie in (0, 1]."""
        with pytest.raises(ConfigurationError):
            dorfler_mark(np.ones(3), theta)

    def test_accepts_report(self, corner_state):
        """An EstimatorReport can be marked directly."""
        from src.analysis.estimator import compute_report

        mesh, problem, solution = corner_state
        report = compute_report(mesh, solution, problem)
        assert np.array_equal(dorfler_mark(report, 0.5).elements, dorfler_mark(report.eta_sq, 0.5).elements)


class TestHistory:
    def test_columns(self):
        """History rows follow the history.csv column order."""
        history = ConvergenceHistory()
        history.append(row(0, 6, 0.5))
        assert history.columns == HISTORY_COLUMNS
        assert len(history.value_rows()[0]) == len(HISTORY_COLUMNS)
        assert history.value_rows()[0][:2] == (0, 6)

    def test_column_lookup(self):
        """Named columns come back as float arrays with nan for missing values."""
        history = ConvergenceHistory([row(0, 6), row(1, 12)])
        assert history.column("N").tolist() == [6.0, 12.0]
        assert history.column("iter").tolist() == [0.0, 1.0]
        assert np.isnan(history.column("err_u")).all()
        with pytest.raises(KeyError):
            history.column("err_x")

    def test_fit_slope(self):
        """The log-log slope of N^-1/2 is -1/2."""
        n = np.array([10.0, 100.0, 1000.0, 10000.0, 1e5])
        assert fit_slope(n, n ** -0.5) == pytest.approx(-0.5)
        assert fit_slope(n, 3.0 * n ** -0.2, tail=2) == pytest.approx(-0.2)

    def test_fit_slope_needs_two_points(self):
        """A single usable value has no slope."""
        with pytest.raises(ValueError):
            fit_slope(np.array([10.0, 20.0]), np.array([np.nan, 1.0]))

    def test_history_slope(self):
        """ConvergenceHistory.slope fits the tail of a column."""
        history = ConvergenceHistory([row(i, 6 * 4 ** i, 4.0 ** -i) for i in range(5)])
        assert history.slope("err_u") == pytest.approx(-1.0)


class TestAdaptiveLoop:
    def test_adaptive_run(self, small_run):
        """Four adaptive iterations on the corner problem."""
        result = run_adaptive(example_71(0.4), small_run(max_iterations=4))
        assert len(result.history) == 4
        assert result.stop_reason == "max_iterations"
        n = result.history.column("N")
        assert (np.diff(n) > 0).all()
        assert result.mesh.n_elements == n[-1]
        assert audit_conformity(result.mesh) == []
        assert result.errors is not None
        assert all(r.eff_index is not None and r.eff_index > 0 for r in result.history.rows)
        assert all(r.seconds == 0.0 for r in result.history.rows)
        assert result.shape_violations == ()

    def test_uniform_run(self, small_run):
        """Uniform mode refines every element."""
        result = run_adaptive(example_72(), small_run(mode="uniform", max_iterations=3))
        n = result.history.column("N")
        assert (n[1:] >= 2 * n[:-1]).all()
        assert (result.mesh.level >= 2).all()

    def test_max_elements(self, small_run):
        """The loop stops before solving a mesh above the limit."""
        result = run_adaptive(example_71(0.4), small_run(max_iterations=50, max_elements=20))
        assert result.stop_reason == "max_elements"
        assert result.history.column("N").max() <= 20

    def test_starting_mesh_too_large(self, small_run):
        """A starting mesh above the limit is an error."""
        with pytest.raises(AdaptiveRunError) as excinfo:
            run_adaptive(example_71(0.4), small_run(max_elements=5))
        assert excinfo.value.iteration == 0

    def test_uniform_levels(self, run_settings):
        """Starting meshes are pre-refined uniformly."""
        assert starting_mesh(example_71(0.4), 2).n_elements >= 24
        settings = replace(run_settings, problem=replace(run_settings.problem, uniform_levels=1),
                           adaptive=replace(run_settings.adaptive, max_iterations=1))
        result = run_adaptive(example_71(0.4), settings)
        assert result.history.rows[0].n_elements == starting_mesh(example_71(0.4), 1).n_elements

    def test_exact_mixed_method(self, small_run):
        """The loop also drives the exactly integrated scheme."""
        settings = small_run(max_iterations=2)
        settings = replace(settings, solver=replace(settings.solver, method="mixed_exact"))
        result = run_adaptive(example_71(0.4), settings)
        assert result.solution.quadrature_free
        last = result.history.rows[-1]
        assert last.eta_total == pytest.approx(last.eta_h)

    def test_shape_floor(self, l_shape_mesh):
        """The mesh check reports angles below the floor without raising."""
        assert _check_mesh(l_shape_mesh, 0, 0.5 * l_shape_mesh.min_angle())
        assert not _check_mesh(l_shape_mesh, 0, np.pi / 3.0)

    def test_shape_violations_recorded(self, small_run, monkeypatch):
        """Iterations on meshes below the angle floor are listed in the result."""
        import src.adaptivity.adaptive as adaptive

        square = build_initial_mesh(DomainSpec(DomainKind.CUSTOM, np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
                                               np.array([[0, 1, 2], [0, 2, 3]])))
        sliver = build_initial_mesh(DomainSpec(DomainKind.CUSTOM, np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.1], [0.0, 0.1]]),
                                               np.array([[0, 1, 2], [0, 2, 3]])))
        monkeypatch.setattr(adaptive, "refine", lambda mesh, marked: sliver)
        result = run_adaptive(linear_patch(), small_run(max_iterations=2), initial_mesh=square)
        assert result.shape_violations == (1,)
        assert len(result.history) == 2

    def test_artifacts(self, small_run, tmp_path):
        """Every iteration writes mesh, solution and report files plus the history."""
        handler = FileHandler(tmp_path / "artifacts")
        run_adaptive(example_71(0.4), small_run(max_iterations=3), handler)
        for i in range(3):
            assert (handler.mesh_dir / f"mesh_{i:04d}.vtk").exists()
            assert (handler.solution_dir / f"sol_{i:04d}.vtk").exists()
            assert (handler.report_dir / f"report_{i:04d}.csv").exists()
        lines = handler.history_path.read_text().splitlines()
        assert lines[0] == ",".join(HISTORY_COLUMNS)
        assert len(lines) == 4

    def test_report_columns(self, small_run, tmp_path):
        """Reports carry the indicator parts and the exact error contributions."""
        handler = FileHandler(tmp_path / "reports")
        result = run_adaptive(example_71(0.4), small_run(max_iterations=1), handler)
        lines = (handler.report_dir / "report_0000.csv").read_text().splitlines()
        assert lines[0].split(",") == ["element", "region", "h_T", "residual", "oscillation", "jump",
                                       "eta_q_sq", "eta_sq", "err_u_sq", "err_p_sq"]
        assert len(lines) == result.mesh.n_elements + 1

    def test_matrix_dump(self, small_run, tmp_path):
        """dump_matrices writes A, B and S per iteration."""
        settings = small_run(max_iterations=1)
        settings = replace(settings, output=replace(settings.output, dump_matrices=True, write_vtk=False))
        handler = FileHandler(tmp_path / "matrices")
        run_adaptive(constant_patch(), settings, handler)
        for name in ("A", "B", "S"):
            assert (handler.report_dir / f"{name}_0000.mtx").exists()
        assert not (handler.mesh_dir / "mesh_0000.vtk").exists()

    def test_history_reproducible(self, small_run, tmp_path):
        """Identical runs without timings give byte-identical history files."""
        contents = []
        for name in ("first", "second"):
            handler = FileHandler(tmp_path / name)
            settings = small_run(max_iterations=3)
            settings = replace(settings, output=replace(settings.output, write_vtk=False))
            run_adaptive(example_71(0.4), settings, handler)
            contents.append(handler.history_path.read_bytes())
        assert contents[0] == contents[1]

    def test_failure_keeps_history(self, small_run, tmp_path, monkeypatch):
        """A failing iteration raises AdaptiveRunError after writing the history so far."""
        import src.adaptivity.adaptive as adaptive
        from src.utils.validators import NumericalError

        real_solve = adaptive.solve
        calls = {"n": 0}

        def failing_solve(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 3:
                raise NumericalError("injected failure")
            return real_solve(*args, **kwargs)

        monkeypatch.setattr(adaptive, "solve", failing_solve)
        handler = FileHandler(tmp_path / "failing")
        settings = small_run(max_iterations=5)
        settings = replace(settings, output=replace(settings.output, write_vtk=False))
        with pytest.raises(AdaptiveRunError) as excinfo:
            run_adaptive(example_71(0.4), settings, handler)
        assert excinfo.value.iteration == 2
        assert len(handler.history_path.read_text().splitlines()) == 3


@pytest.mark.slow
class TestConvergenceStudies:
    def test_uniform_rate(self, small_run):
        """Uniform refinement converges like N^(-r/2) on the corner problem."""
        result = run_adaptive(example_71(0.4), small_run(mode="uniform", max_iterations=11))
        assert result.history.slope("err_u") == pytest.approx(-0.2, abs=0.07)

    def test_adaptive_beats_uniform(self, small_run):
        """Adaptive refinement recovers the optimal rate N^(-1/2)."""
        result = run_adaptive(example_71(0.4), small_run(theta=0.5, max_iterations=40, max_elements=8000))
        n = result.history.column("N")
        assert n[-1] > 1000
        tail = n > 1000
        slope = fit_slope(n[tail], result.history.column("err_u")[tail], tail=int(tail.sum()))
        assert slope == pytest.approx(-0.5, abs=0.1)

    @pytest.mark.parametrize("problem_id,theta", [("example71_r04", 0.5), ("example71_r01", 0.8)])
    def test_estimator_balance(self, small_run, problem_id, theta):
        """η_h and η_Q stay of comparable size during adaptive runs."""
        from src.problems.benchmarks import get_problem

        result = run_adaptive(get_problem(problem_id), small_run(theta=theta, max_iterations=10))
        ratios = result.history.column("eta_h")[3:] / result.history.column("eta_Q")[3:]
        assert (ratios >= 0.2).all() and (ratios <= 5.0).all()

    @pytest.mark.parametrize("make_problem", [lambda: example_71(0.4), example_72])
    def test_singularity_capture(self, small_run, make_problem):
        """The smallest elements gather at the singular point."""
        result = run_adaptive(make_problem(), small_run(theta=0.5, max_iterations=16))
        mesh = result.mesh
        smallest = np.flatnonzero(mesh.diameters <= mesh.h_min * (1.0 + 1e-12))
        assert touches_corner_region(mesh, smallest)
        assert result.shape_violations == ()
        assert mesh.h_min / mesh.h_max < 1e-2
