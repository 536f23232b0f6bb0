from typing import Dict, Any, Union
from pathlib import Path
import json
from dataclasses import dataclass, asdict, field, fields
import logging

from ..problems.benchmarks import PROBLEMS
from ..utils.validators import (
    ConfigurationError,
    validate_choice,
    validate_positive_float,
    validate_positive_int,
    validate_theta,
)

logger = logging.getLogger(__name__)

PROBLEM_IDS = tuple(PROBLEMS)
SOLVER_METHODS = ("mfmfe", "mixed_exact")
REFINEMENT_MODES = ("adaptive", "uniform")


@dataclass
class ProblemSettings:
    """
    Data class for the benchmark selection.
    """
    problem: str = "example71_r04"
    uniform_levels: int = 0


@dataclass
class SolverSettings:
    """
    Data class for the discrete solve.
    """
    method: str = "mfmfe"
    direct_max_elements: int = 50000
    cg_rtol: float = 1e-12
    cg_maxiter: int = 20000
    residual_tol: float = 1e-10
    audit_schur_max_elements: int = 2000


@dataclass
class EstimatorSettings:
    """
    Data class for the a posteriori estimator.
    """
    include_hot: bool = True


@dataclass
class AdaptiveSettings:
    """
    Data class for the solve-estimate-mark-refine loop.
    """
    mode: str = "adaptive"
    theta: float = 0.5
    max_iterations: int = 25
    max_elements: int = 100000


@dataclass
class OutputSettings:
    """
    Data class for output settings.
    """
    output_dir: Path = Path("output")
    write_vtk: bool = True
    write_reports: bool = True
    dump_matrices: bool = False
    record_timings: bool = True


@dataclass
class ApplicationSettings:
    """
    Main settings class that contains all configuration options.
    """
    problem: ProblemSettings = field(default_factory=ProblemSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
    adaptive: AdaptiveSettings = field(default_factory=AdaptiveSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    debug_mode: bool = False
    version: str = "1.0.0"


SECTIONS = {
    'problem': ProblemSettings,
    'solver': SolverSettings,
    'estimator': EstimatorSettings,
    'adaptive': AdaptiveSettings,
    'output': OutputSettings,
}
TOP_LEVEL_KEYS = ('debug_mode', 'version')


class SettingsManager:
    """
    Manages run settings including loading, validation and command-line overrides.

    Unlike a preferences file, a run configuration is never silently
    replaced: unknown or malformed entries raise ConfigurationError.
    """

    def __init__(self, config_path: Union[str, Path, None] = "config.json"):
        """
        Initialize settings manager.

        Args:
            config_path: JSON configuration file; None or a missing file means defaults
        """
        self.config_path = Path(config_path) if config_path is not None else None
        self.settings = ApplicationSettings()
        self._load_settings()
        self.validate()

    def _load_settings(self) -> None:
        """Load settings from the configuration file if it exists."""
        if self.config_path is None or not self.config_path.exists():
            logger.info("No configuration file, using default settings")
            return
        try:
            with open(self.config_path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Error loading settings: {e}")
            raise ConfigurationError(f"{self.config_path} is not valid JSON: {e}")
        self._update_settings(data)
        logger.info(f"Settings loaded from {self.config_path}")

    def save_settings(self, path: Union[str, Path, None] = None) -> Path:
        """
        Save current settings as JSON.

        Args:
            path: Target file, the loaded configuration path by default

        Returns:
            Path written
        """
        target = Path(path) if path is not None else (self.config_path or Path("config.json"))
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, 'w') as f:
                json.dump(self.to_dict(), f, indent=4)
            logger.info(f"Settings saved to {target}")
            return target
        except OSError as e:
            logger.error(f"Error saving settings: {e}")
            raise

    def to_dict(self) -> dict:
        """Convert settings to dictionary format."""
        return {
            'problem': asdict(self.settings.problem),
            'solver': asdict(self.settings.solver),
            'estimator': asdict(self.settings.estimator),
            'adaptive': asdict(self.settings.adaptive),
            'output': {
                **asdict(self.settings.output),
                'output_dir': str(self.settings.output.output_dir),
            },
            'debug_mode': self.settings.debug_mode,
            'version': self.settings.version,
        }

    def _update_settings(self, data: Dict[str, Any]) -> None:
        """
        Update settings from dictionary data.

        Args:
            data: Dictionary containing settings data

        Raises:
            ConfigurationError: On an unknown section or key
        """
        if not isinstance(data, dict):
            raise ConfigurationError("Configuration must be a JSON object")

        for key, value in data.items():
            if key in SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"Section {key} must be an object")
                self._update_section(key, value)
            elif key in TOP_LEVEL_KEYS:
                setattr(self.settings, key, value)
            else:
                raise ConfigurationError(f"Unknown configuration key: {key}")

    def _update_section(self, name: str, values: Dict[str, Any]) -> None:
        section = getattr(self.settings, name)
        known = {f.name for f in fields(section)}
        for key, value in values.items():
            if key not in known:
                raise ConfigurationError(f"Unknown configuration key: {name}.{key}")
            if name == 'output' and key == 'output_dir':
                value = Path(value)
            setattr(section, key, value)

    def override(self, **kwargs) -> None:
        """
        Apply command-line overrides given as section__key=value; None values are skipped.

        Raises:
            ConfigurationError: On an unknown key or an invalid result
        """
        for dotted, value in kwargs.items():
            if value is None:
                continue
            if dotted in TOP_LEVEL_KEYS:
                setattr(self.settings, dotted, value)
                continue
            name, _, key = dotted.partition('__')
            if name not in SECTIONS or not key:
                raise ConfigurationError(f"Unknown configuration key: {dotted}")
            self._update_section(name, {key: value})
        self.validate()

    def validate(self) -> None:
        """
        Check every invariant of the run configuration.

        Raises:
            ConfigurationError: Naming the offending field
        """
        s = self.settings
        validate_choice(s.problem.problem, PROBLEM_IDS, "problem.problem")
        validate_positive_int(s.problem.uniform_levels, "problem.uniform_levels", allow_zero=True)

        validate_choice(s.solver.method, SOLVER_METHODS, "solver.method")
        validate_positive_int(s.solver.direct_max_elements, "solver.direct_max_elements")
        validate_positive_float(s.solver.cg_rtol, "solver.cg_rtol")
        validate_positive_int(s.solver.cg_maxiter, "solver.cg_maxiter")
        validate_positive_float(s.solver.residual_tol, "solver.residual_tol")
        validate_positive_int(s.solver.audit_schur_max_elements, "solver.audit_schur_max_elements",
                              allow_zero=True)

        validate_choice(s.adaptive.mode, REFINEMENT_MODES, "adaptive.mode")
        validate_theta(s.adaptive.theta, "adaptive.theta")
        validate_positive_int(s.adaptive.max_iterations, "adaptive.max_iterations")
        validate_positive_int(s.adaptive.max_elements, "adaptive.max_elements")

        for section, names in (
            (s.estimator, ("include_hot",)),
            (s.output, ("write_vtk", "write_reports", "dump_matrices", "record_timings")),
        ):
            for name in names:
                if not isinstance(getattr(section, name), bool):
                    raise ConfigurationError(f"{name} must be true or false")
        if not isinstance(s.debug_mode, bool):
            raise ConfigurationError("debug_mode must be true or false")

    def get_problem_settings(self) -> ProblemSettings:
        return self.settings.problem

    def get_solver_settings(self) -> SolverSettings:
        return self.settings.solver

    def get_adaptive_settings(self) -> AdaptiveSettings:
        return self.settings.adaptive

    def get_output_settings(self) -> OutputSettings:
        return self.settings.output

