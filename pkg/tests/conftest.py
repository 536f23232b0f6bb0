import pytest
from dataclasses import replace
from pathlib import Path

from src.config.settings import ApplicationSettings, OutputSettings
from src.mesh.mesh import build_initial_mesh
from src.mesh.refinement import uniform_refine
from src.problems.benchmarks import constant_patch, example_71, example_72, linear_patch
from src.solver.assembly import assemble
from src.solver.solvers import eliminate_and_solve

REPO_ROOT = Path(__file__).resolve().parent.parent


def refined(mesh, levels):
    for _ in range(levels):
        mesh = uniform_refine(mesh)
    return mesh


@pytest.fixture
def l_shape_mesh():
    """Initial L-shape mesh (six right triangles)."""
    return build_initial_mesh(example_71().domain)


@pytest.fixture
def square_mesh():
    """Initial (-1, 1)² mesh (eight triangles around the origin)."""
    return build_initial_mesh(example_72().domain)


@pytest.fixture
def fine_square_mesh(square_mesh):
    """Square mesh refined uniformly twice."""
    return refined(square_mesh, 2)


@pytest.fixture
def fine_l_shape_mesh(l_shape_mesh):
    """L-shape mesh refined uniformly three times."""
    return refined(l_shape_mesh, 3)


@pytest.fixture
def constant_state(fine_square_mesh):
    """Constant patch problem solved by MFMFE."""
    problem = constant_patch()
    return fine_square_mesh, problem, eliminate_and_solve(assemble(fine_square_mesh, problem))


@pytest.fixture
def linear_state(fine_square_mesh):
    """Linear patch problem solved by MFMFE."""
    problem = linear_patch()
    return fine_square_mesh, problem, eliminate_and_solve(assemble(fine_square_mesh, problem))


@pytest.fixture
def corner_state(fine_l_shape_mesh):
    """Corner singularity (r = 0.4) solved by MFMFE."""
    problem = example_71(0.4)
    return fine_l_shape_mesh, problem, eliminate_and_solve(assemble(fine_l_shape_mesh, problem))


@pytest.fixture
def quadrant_state(fine_square_mesh):
    """Four-quadrant problem solved by MFMFE."""
    problem = example_72()
    return fine_square_mesh, problem, eliminate_and_solve(assemble(fine_square_mesh, problem))


@pytest.fixture
def run_settings(tmp_path):
    """Default settings writing into a temporary directory, no timings."""
    settings = ApplicationSettings()
    settings.output = OutputSettings(output_dir=tmp_path / "run", record_timings=False)
    return settings


@pytest.fixture
def small_run(run_settings):
    """Factory for settings of a short run: small(mode=..., theta=..., ...)."""
    def make(**adaptive):
        defaults = {"max_iterations": 4, "max_elements": 100000}
        defaults.update(adaptive)
        return replace(run_settings, adaptive=replace(run_settings.adaptive, **defaults))
    return make
