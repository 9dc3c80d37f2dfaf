"""Exception types shared across the package."""
from __future__ import annotations

import numpy as np


class CvsheetError(Exception):
    """Base class for all package errors."""


class SurfaceError(CvsheetError, ValueError):
    """Interface height violates the separation bound |f| <= 1 - c0."""


class SurfaceTooRoughError(SurfaceError):
    """No smoothing parameter keeps the flattening monotone enough."""

    def __init__(self, min_dz_rho: float, required: float):
        self.min_dz_rho = min_dz_rho
        self.required = required
        super().__init__(f"surface too rough: min dz(rho) = {min_dz_rho:.4g} "
                         f"< required {required:.4g} after 40 halvings of delta")


class NonConvergenceError(CvsheetError, RuntimeError):
    """An iterative solve hit its iteration cap."""

    def __init__(self, what: str, history):
        self.history = np.asarray(history, dtype=float)
        last = self.history[-1] if self.history.size else float("nan")
        super().__init__(f"{what} did not converge after {self.history.size} iterations "
                         f"(last relative residual {last:.3e})")


class CompatibilityError(CvsheetError, ValueError):
    """Div-curl data violates C1 (div omega = 0), C2 (lid flux) or C3 (zero net flux)."""

    def __init__(self, condition: str, defect: float, side: str | None = None):
        self.condition = condition
        self.defect = float(defect)
        self.side = side
        where = f" on the {side} side" if side else ""
        super().__init__(f"compatibility condition {condition} violated{where}: defect {defect:.3e}")


class CFLError(CvsheetError, ValueError):
    def __init__(self, dt: float, dt_max: float):
        self.dt, self.dt_max = dt, dt_max
        super().__init__(f"time step {dt:.4g} exceeds the CFL bound; use dt <= {dt_max:.4g}")


class ConfigError(CvsheetError, ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
