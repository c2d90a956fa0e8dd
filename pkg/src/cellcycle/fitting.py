"""Log-linear least squares for geometric decay curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSignal


@dataclass
class RateFit:
    C: float
    q: float
    r_squared: float
    n_range: tuple

    @property
    def geometric(self) -> bool:
        return 0.0 < self.q < 1.0


def loglinear_fit(n, d, min_points: int = 5) -> RateFit:
    """Fit ``d_n = C q**n`` by least squares on ``log d``; all ``d`` must be positive."""
    n = np.asarray(n, dtype=float)
    d = np.asarray(d, dtype=float)
    if len(n) < min_points:
        raise InsufficientSignal(f"{len(n)} usable points, need {min_points}")
    if np.any(d <= 0):
        raise InsufficientSignal("nonpositive values cannot be log-fitted")
    y = np.log(d)
    slope, intercept = np.polyfit(n, y, 1)
    pred = intercept + slope * n
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-24 else 0.0)
    return RateFit(C=float(np.exp(intercept)), q=float(np.exp(slope)), r_squared=max(0.0, min(1.0, r2)),
                   n_range=(int(n[0]), int(n[-1])))
