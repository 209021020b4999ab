"""Time-grid bookkeeping shared by the solvers.

Times are handled as integer step indices.  Periodic coefficients are
evaluated at the reduced time ``(j mod n_tau) * dt`` so that shifting by a
whole period reproduces every floating-point input exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_REL = 1e-9


def steps_in(length: float, dt: float, what: str = "length") -> int:
    """``length / dt`` as an exact integer, or ValueError."""
    n = int(round(length / dt))
    if abs(n * dt - length) > _REL * max(1.0, abs(length)):
        raise ValueError(f"{what}={length!r} is not an integer multiple of dt={dt!r}")
    return n


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_tau: int

    @classmethod
    def from_period(cls, dt: float, tau: float) -> "TimeGrid":
        if not dt > 0:
            raise ValueError("dt must be positive")
        return cls(float(dt), steps_in(tau, dt, "tau"))

    @property
    def tau(self) -> float:
        return self.n_tau * self.dt

    def index(self, t: float) -> int:
        return steps_in(t, self.dt, "t")

    def reduced(self, j) -> np.ndarray:
        """Time within the period for step indices ``j``."""
        return np.mod(np.asarray(j, dtype=np.int64), self.n_tau) * self.dt


def cut_steps(gap: float, dt: float, eps_trunc: float) -> int:
    """Steps needed so that ``exp(-gap * n * dt) <= eps_trunc``."""
    if not 0 < eps_trunc < 1:
        raise ValueError("eps_trunc must lie in (0, 1)")
    return int(math.ceil(math.log(1.0 / eps_trunc) / gap / dt - 1e-9))
