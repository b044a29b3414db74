"""Fixed-effects panel least squares with alternating-projection absorption."""

from .absorb import Absorber, Convergence, absorb
from .backend import NAME as BACKEND
from .design import Design, PanelDataset, build_design
from .fit import AbsorbedSystem, Diagnostics, FitResult, fit, residual_diagnostics
from .spec import Factor, RegressionSpec, Term, column, interact, parse_spec

__all__ = [
    "AbsorbedSystem",
    "Absorber",
    "BACKEND",
    "Convergence",
    "Design",
    "Diagnostics",
    "Factor",
    "FitResult",
    "PanelDataset",
    "RegressionSpec",
    "Term",
    "absorb",
    "build_design",
    "column",
    "fit",
    "interact",
    "parse_spec",
    "residual_diagnostics",
]
