"""
Manufactured Darcy problems with exact solutions.

The corner-singularity benchmarks share one form: in region i the pressure is
p = Im(c_i z^r) = ρ^r (a_i sin(rθ) + b_i cos(rθ)), harmonic inside each region,
with the angle θ taken on a per-region branch so the formula is single valued.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple
import logging

import numpy as np

from ..fem.quadrature import ElementField, TensorCoefficient
from ..mesh.mesh import DomainKind, DomainSpec, Mesh
from ..utils.validators import ConfigurationError

logger = logging.getLogger(__name__)

# f(points (n, 2), regions (n,)) -> (n, ...)
RegionField = Callable[[np.ndarray, np.ndarray], np.ndarray]

EXAMPLE_72_EXPONENT = 0.53544095
EXAMPLE_72_SCALES = np.array([5.0, 1.0, 5.0, 1.0])
EXAMPLE_72_A = np.array([0.44721360, -0.74535599, -0.94411759, -2.40170264])
EXAMPLE_72_B = np.array([1.00000000, 2.33333333, 0.55555555, -0.48148148])


@dataclass(frozen=True)
class CornerSolution:
    """
    p = Im(c_i z^r) on region i with θ in [branch_i, branch_i + 2π).

    Attributes:
        exponent: r
        coefficients: Complex c_i = a_i + i b_i per region
        branches: Start of the θ branch per region
    """
    exponent: float
    coefficients: np.ndarray
    branches: np.ndarray

    def _polar(self, points: np.ndarray, regions: np.ndarray):
        x, y = points[:, 0], points[:, 1]
        rho = np.hypot(x, y)
        start = self.branches[regions]
        theta = start + np.mod(np.arctan2(y, x) - start, 2.0 * np.pi)
        return rho, theta, self.coefficients[regions]

    def _power(self, rho, theta, shift):
        # c·ρ^(r-shift) e^{i(r-shift)θ}, with the limit 0 at the corner
        exponent = self.exponent - shift
        with np.errstate(divide="ignore", invalid="ignore"):
            magnitude = np.where(rho > 0.0, rho ** exponent, 0.0)
        return magnitude * np.exp(1j * exponent * theta)

    def pressure(self, points: np.ndarray, regions: np.ndarray) -> np.ndarray:
        rho, theta, c = self._polar(points, regions)
        return np.imag(c * self._power(rho, theta, 0))

    def gradient(self, points: np.ndarray, regions: np.ndarray) -> np.ndarray:
        rho, theta, c = self._polar(points, regions)
        d1 = c * self.exponent * self._power(rho, theta, 1)
        return np.column_stack([np.imag(d1), np.real(d1)])

    def hessian(self, points: np.ndarray, regions: np.ndarray) -> np.ndarray:
        rho, theta, c = self._polar(points, regions)
        d2 = c * self.exponent * (self.exponent - 1.0) * self._power(rho, theta, 2)
        pxx, pxy = np.imag(d2), np.real(d2)
        return np.stack([np.stack([pxx, pxy], axis=1), np.stack([pxy, -pxx], axis=1)], axis=1)


def _isotropic(scales: np.ndarray) -> RegionField:
    def permeability(points: np.ndarray, regions: np.ndarray) -> np.ndarray:
        return scales[regions][:, None, None] * np.eye(2)[None, :, :]
    return permeability


def _zero_scalar(points: np.ndarray, regions: np.ndarray) -> np.ndarray:
    return np.zeros(points.shape[0])


def _single_region(centroids: np.ndarray) -> np.ndarray:
    return np.zeros(centroids.shape[0], dtype=np.int64)


def quadrant_of(points: np.ndarray) -> np.ndarray:
    """Quadrant index 0..3 counted counterclockwise from {x > 0, y > 0}."""
    theta = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)
    return np.clip(np.floor(theta / (0.5 * np.pi)).astype(np.int64), 0, 3)


@dataclass(frozen=True)
class BenchmarkProblem:
    """
    Darcy problem u = -K∇p, ∇·u = f, p = g on Γ_D, u·n = 0 on Γ_N.

    All data callables take (points, regions). The Dirichlet gradient and
    Hessian supply the tangential derivatives of g along boundary edges.
    """
    name: str
    domain: DomainSpec
    permeability: RegionField
    source: RegionField
    dirichlet: RegionField
    dirichlet_gradient: RegionField
    dirichlet_hessian: RegionField
    k_bounds: Tuple[float, float] = (1.0, 1.0)
    region_of: Callable[[np.ndarray], np.ndarray] = _single_region
    pressure: Optional[RegionField] = None
    pressure_gradient: Optional[RegionField] = None
    description: str = ""

    @property
    def has_exact(self) -> bool:
        return self.pressure is not None and self.pressure_gradient is not None

    def element_regions(self, mesh: Mesh) -> np.ndarray:
        return np.asarray(self.region_of(mesh.centroids), dtype=np.int64)

    def coefficient(self, mesh: Mesh) -> TensorCoefficient:
        return TensorCoefficient(self.permeability, self.element_regions(mesh))

    def element_field(self, mesh: Mesh, func: RegionField) -> ElementField:
        """Bind a region-aware callable to the element regions of `mesh`."""
        regions = self.element_regions(mesh)
        return lambda points, elements: func(points, regions[elements])

    def velocity(self, points: np.ndarray, regions: np.ndarray) -> np.ndarray:
        """Exact u = -K∇p."""
        if not self.has_exact:
            raise ConfigurationError(f"Problem {self.name} has no exact solution")
        k = self.permeability(points, regions)
        return -np.einsum("nab,nb->na", k, self.pressure_gradient(points, regions))


def example_71(r: float = 0.4) -> BenchmarkProblem:
    """
    Corner singularity on the L-shape: p = ρ^r sin(rθ), K = I, f = 0.

    θ is measured counterclockwise from the edge along the positive x-axis,
    so θ ∈ [0, 3π/2] on the domain and p vanishes on that edge.
    """
    if not 0.0 < r < 1.0:
        raise ConfigurationError(f"Corner exponent must lie in (0, 1), got {r}")
    exact = CornerSolution(r, np.array([1.0 + 0.0j]), np.array([0.0]))
    return BenchmarkProblem(
        name=f"example71_r{r:g}",
        domain=DomainSpec(DomainKind.L_SHAPE),
        permeability=_isotropic(np.array([1.0])),
        source=_zero_scalar,
        dirichlet=exact.pressure,
        dirichlet_gradient=exact.gradient,
        dirichlet_hessian=exact.hessian,
        pressure=exact.pressure,
        pressure_gradient=exact.gradient,
        description=f"L-shape corner singularity, r = {r:g}",
    )


def example_72() -> BenchmarkProblem:
    """
    Four-quadrant problem on (-1, 1)² with K = s_i I, s = (5, 1, 5, 1).

    Region i is quadrant i + 1 counted counterclockwise; each region's θ branch
    starts π/4 before the quadrant so both bounding rays lie inside it.
    """
    exact = CornerSolution(
        EXAMPLE_72_EXPONENT,
        EXAMPLE_72_A + 1j * EXAMPLE_72_B,
        np.arange(4) * 0.5 * np.pi - 0.25 * np.pi,
    )
    return BenchmarkProblem(
        name="example72",
        domain=DomainSpec(DomainKind.SQUARE),
        permeability=_isotropic(EXAMPLE_72_SCALES),
        source=_zero_scalar,
        dirichlet=exact.pressure,
        dirichlet_gradient=exact.gradient,
        dirichlet_hessian=exact.hessian,
        k_bounds=(1.0, 5.0),
        region_of=quadrant_of,
        pressure=exact.pressure,
        pressure_gradient=exact.gradient,
        description="Discontinuous permeability, four quadrants",
    )


def _polynomial_problem(name: str, value, gradient, description: str) -> BenchmarkProblem:
    def pressure(points, regions):
        return value(points)

    def pressure_gradient(points, regions):
        return np.broadcast_to(np.asarray(gradient, dtype=float), (points.shape[0], 2)).copy()

    def hessian(points, regions):
        return np.zeros((points.shape[0], 2, 2))

    return BenchmarkProblem(
        name=name,
        domain=DomainSpec(DomainKind.SQUARE),
        permeability=_isotropic(np.array([1.0])),
        source=_zero_scalar,
        dirichlet=pressure,
        dirichlet_gradient=pressure_gradient,
        dirichlet_hessian=hessian,
        pressure=pressure,
        pressure_gradient=pressure_gradient,
        description=description,
    )


def linear_patch() -> BenchmarkProblem:
    """p = x + y, K = I, u = (-1, -1)."""
    return _polynomial_problem("linear_patch", lambda x: x[:, 0] + x[:, 1], (1.0, 1.0),
                               "Linear pressure patch test")


def constant_patch() -> BenchmarkProblem:
    """g ≡ 1, so p ≡ 1 and u = 0."""
    return _polynomial_problem("constant_patch", lambda x: np.ones(x.shape[0]), (0.0, 0.0),
                               "Constant pressure patch test")


PROBLEMS: Dict[str, Callable[[], BenchmarkProblem]] = {
    "example71_r04": lambda: example_71(0.4),
    "example71_r01": lambda: example_71(0.1),
    "example72": example_72,
    "linear_patch": linear_patch,
    "constant_patch": constant_patch,
}


def get_problem(problem_id: str) -> BenchmarkProblem:
    """
    Look up a problem by its configuration id.

    Raises:
        ConfigurationError: If the id is unknown
    """
    try:
        return PROBLEMS[problem_id]()
    except KeyError:
        raise ConfigurationError(
            f"problem.id must be one of {', '.join(PROBLEMS)}; got {problem_id!r}"
        )


# -- self-consistency audits ---------------------------------------------------

@dataclass(frozen=True)
class InterfaceAudit:
    """Largest jumps across the quadrant interfaces at the sampled points."""
    flux_jump: float
    pressure_jump: float
    normal_derivative_jump: float
    flux_scale: float
    samples: int

    @property
    def relative_flux_jump(self) -> float:
        return self.flux_jump / self.flux_scale if self.flux_scale > 0 else 0.0


def interface_audit(problem: BenchmarkProblem, n_radii: int = 50) -> InterfaceAudit:
    """
    Sample the four rays θ = kπ/2 and compare the traces of both adjacent regions.

    The normal flux -K∇p·n must match; the normal derivative ∂p/∂n jumps where K does.
    """
    if not problem.has_exact:
        raise ConfigurationError(f"Problem {problem.name} has no exact solution")
    radii = np.linspace(0.0, 1.0, n_radii + 2)[1:-1]
    flux, pressure, derivative, scale = 0.0, 0.0, 0.0, 0.0
    for k in range(4):
        angle = 0.5 * np.pi * k
        normal = np.array([-np.sin(angle), np.cos(angle)])
        points = radii[:, None] * np.array([np.cos(angle), np.sin(angle)])[None, :]
        above = np.full(n_radii, k, dtype=np.int64)
        below = np.full(n_radii, (k - 1) % 4, dtype=np.int64)
        grad_a = problem.pressure_gradient(points, above)
        grad_b = problem.pressure_gradient(points, below)
        flux_a = problem.velocity(points, above) @ normal
        flux_b = problem.velocity(points, below) @ normal
        flux = max(flux, float(np.max(np.abs(flux_a - flux_b))))
        scale = max(scale, float(np.max(np.abs(flux_a))))
        pressure = max(pressure, float(np.max(np.abs(
            problem.pressure(points, above) - problem.pressure(points, below)))))
        derivative = max(derivative, float(np.max(np.abs((grad_a - grad_b) @ normal))))
    logger.debug(f"Interface audit for {problem.name}: flux jump {flux:.3e}, "
                 f"pressure jump {pressure:.3e}, normal derivative jump {derivative:.3e}")
    return InterfaceAudit(flux, pressure, derivative, scale, 4 * n_radii)


def laplacian_defect(problem: BenchmarkProblem, points: np.ndarray, regions: np.ndarray,
                     step: float = 1e-4) -> float:
    """Largest |Δp| by central differences at the given points (f = 0 problems)."""
    total = np.zeros(points.shape[0])
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = step
        total += (problem.pressure(points + shift, regions) - 2.0 * problem.pressure(points, regions)
                  + problem.pressure(points - shift, regions)) / step ** 2
    return float(np.max(np.abs(total)))
