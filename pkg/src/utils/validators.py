from typing import Iterable, Optional, Union
from pathlib import Path
import os

import numpy as np


class ValidationError(Exception):
    """Custom exception for validation errors."""
    pass


class ConfigurationError(ValidationError):
    """Raised when a run configuration is malformed or inconsistent."""
    pass


class MeshError(ValidationError):
    """Raised when mesh input violates the conforming-mesh requirements."""
    pass


class NumericalError(Exception):
    """Raised when a numerical step (factorization, solve, tensor inversion) fails."""
    pass


class AdaptiveRunError(NumericalError):
    """
    Raised when the adaptive loop fails part way through.

    Attributes:
        iteration: Index of the iteration that failed
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


def validate_theta(theta: float, field: str = "theta") -> None:
    """
    Validate the Dörfler marking parameter.

    Args:
        theta: Marking fraction, must lie in (0, 1]
        field: Name of the configuration field, used in messages

    Raises:
        ConfigurationError: If theta is outside (0, 1]
    """
    if not isinstance(theta, (int, float)) or isinstance(theta, bool):
        raise ConfigurationError(f"{field} must be a number, got {theta!r}")
    if not 0.0 < float(theta) <= 1.0:
        raise ConfigurationError(f"{field} must lie in (0, 1], got {theta}")


def validate_positive_int(value: int, field: str, allow_zero: bool = False) -> None:
    """
    Validate an integer count such as an iteration or element limit.

    Raises:
        ConfigurationError: If the value is not a (positive) integer
    """
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigurationError(f"{field} must be an integer, got {value!r}")
    lower = 0 if allow_zero else 1
    if value < lower:
        raise ConfigurationError(f"{field} must be >= {lower}, got {value}")


def validate_positive_float(value: float, field: str) -> None:
    """Validate a strictly positive tolerance-like number."""
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ConfigurationError(f"{field} must be a positive number, got {value!r}")


def validate_choice(value: str, choices: Iterable[str], field: str) -> None:
    """
    Validate that a string option is one of the allowed values.

    Raises:
        ConfigurationError: If value is not among choices
    """
    choices = list(choices)
    if value not in choices:
        raise ConfigurationError(
            f"{field} must be one of {', '.join(choices)}; got {value!r}"
        )


def validate_output_dir(
    path: Union[str, Path],
    create_dirs: bool = True
) -> Path:
    """
    Validate an output directory for run artifacts.

    Args:
        path: Output directory
        create_dirs: Whether to create the directory if it doesn't exist

    Returns:
        The directory as a Path

    Raises:
        ValidationError: If the directory cannot be created or written to
    """
    path = Path(path) if isinstance(path, str) else path

    if not path.exists():
        if not create_dirs:
            raise ValidationError(f"Directory does not exist: {path}")
        try:
            path.mkdir(parents=True, exist_ok=True)
        except Exception as e:
            raise ValidationError(f"Failed to create directory: {e}")

    if not path.is_dir():
        raise ValidationError(f"Output path is not a directory: {path}")

    if not os.access(path, os.W_OK):
        raise ValidationError(f"Output directory is not writable: {path}")

    return path


def validate_triangles(
    vertices: np.ndarray,
    triangles: np.ndarray,
    rel_tol: float = 1e-14
) -> None:
    """
    Validate user supplied coordinates and connectivity.

    Args:
        vertices: (nv, 2) coordinates
        triangles: (nt, 3) vertex indices, counterclockwise
        rel_tol: Signed area threshold relative to the squared bounding box size

    Raises:
        MeshError: Naming the first offending element
    """
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError(f"Vertices must have shape (nv, 2), got {vertices.shape}")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError(f"Triangles must have shape (nt, 3), got {triangles.shape}")
    if triangles.shape[0] == 0:
        raise MeshError("Mesh contains no triangles")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("Vertex coordinates must be finite")

    out_of_range = np.flatnonzero(
        (triangles < 0).any(axis=1) | (triangles >= vertices.shape[0]).any(axis=1)
    )
    if out_of_range.size:
        raise MeshError(f"Element {out_of_range[0]} references a missing vertex")

    repeated = np.flatnonzero(
        (triangles[:, 0] == triangles[:, 1])
        | (triangles[:, 1] == triangles[:, 2])
        | (triangles[:, 2] == triangles[:, 0])
    )
    if repeated.size:
        raise MeshError(f"Element {repeated[0]} repeats a vertex")

    p0, p1, p2 = (vertices[triangles[:, i]] for i in range(3))
    signed = 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                    - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))
    extent = np.ptp(vertices, axis=0).max() if vertices.shape[0] > 1 else 1.0
    threshold = rel_tol * max(extent, 1e-300) ** 2

    degenerate = np.flatnonzero(np.abs(signed) <= threshold)
    if degenerate.size:
        raise MeshError(f"Element {degenerate[0]} is degenerate (zero area)")

    clockwise = np.flatnonzero(signed < 0)
    if clockwise.size:
        raise MeshError(
            f"Element {clockwise[0]} is not counterclockwise oriented"
        )


def validate_marked(marked: np.ndarray, n_elements: int) -> None:
    """
    Validate a set of element indices selected for refinement.

    Raises:
        ValidationError: If an index is outside the mesh
    """
    if marked.size and (marked.min() < 0 or marked.max() >= n_elements):
        bad = marked[(marked < 0) | (marked >= n_elements)][0]
        raise ValidationError(f"Marked element {bad} is not in the mesh")


def require(condition: bool, message: str, error: Optional[type] = None) -> None:
    """Raise `error` (NumericalError by default) with message unless condition holds."""
    if not condition:
        raise (error or NumericalError)(message)
