"""
MFMFE Darcy
-----------

Multipoint flux mixed finite elements (BDM1/P0 with vertex quadrature) for
Darcy flow on triangles, with residual a posteriori estimators and adaptive
longest-edge refinement.
"""

__version__ = "1.0.0"

from .config.settings import SettingsManager
from .problems.benchmarks import get_problem
from .adaptivity.adaptive import run_adaptive

__all__ = ['SettingsManager', 'get_problem', 'run_adaptive']
