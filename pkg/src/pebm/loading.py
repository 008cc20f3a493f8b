"""Deformation-history generators for the material-point drivers.

A program is a time-parameterised deformation gradient t -> F(t) together
with its duration.  All bundled programs are exactly unimodular (det F = 1)
so the inelastic incompressibility is never disturbed by the loading itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import sym, unimodular

__all__ = [
    "ConfigError",
    "DeformationProgram",
    "keypoint_program",
    "shear_program",
    "isoerror_prestrain",
    "isoerror_deformation",
    "sample",
]


class ConfigError(ValueError):
    """Invalid program or run configuration."""


@dataclass(frozen=True)
class DeformationProgram:
    """Deformation-gradient history on [0, duration]."""
    duration: float
    F: Callable[[float], np.ndarray]
    label: str
    unimodular: bool = True
    # False for non-dimensional monotonic loading parameters (rate-independent
    # studies); viscous terms then have no physical time to refer to.
    time_physical: bool = True


# key points of the non-proportional program: uniaxial stretch, abrupt switch
# to simple shear, abrupt switch to transverse stretch
_F1 = np.eye(3)
_F2 = np.diag([2.0, 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)])
_F3 = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
_F4 = np.diag([1.0 / math.sqrt(2.0), 2.0, 1.0 / math.sqrt(2.0)])
_SEGMENT = 100.0


def keypoint_program() -> DeformationProgram:
    """Piecewise-linear key-point program over 300 s.

    The auxiliary path interpolates linearly between the four key points and
    is projected onto det F = 1; the path direction changes abruptly at
    t = 100 s and t = 200 s while the value stays continuous.
    """
    points = [_F1, _F2, _F3, _F4]

    def F(t: float) -> np.ndarray:
        if t <= 0.0:
            return points[0].copy()
        if t >= 3.0 * _SEGMENT:
            return points[3].copy()
        seg = min(int(t // _SEGMENT), 2)
        frac = t / _SEGMENT - seg
        Fp = (1.0 - frac) * points[seg] + frac * points[seg + 1]
        return unimodular(Fp)

    return DeformationProgram(duration=3.0 * _SEGMENT, F=F,
                              label="keypoint")


def shear_program(rate: float, reversal_times=(), duration: float = 10.0
                  ) -> DeformationProgram:
    """Simple shear at constant rate, sign flipping at each reversal time."""
    if rate <= 0.0:
        raise ConfigError("shear rate must be positive")
    reversal_times = tuple(float(t) for t in reversal_times)
    if list(reversal_times) != sorted(reversal_times):
        raise ConfigError("reversal times must be sorted ascending")
    if any(t <= 0.0 for t in reversal_times):
        raise ConfigError("reversal times must be positive")

    def gamma(t: float) -> float:
        g, t_prev, sign = 0.0, 0.0, 1.0
        for t_rev in reversal_times:
            if t <= t_rev:
                break
            g += sign * rate * (t_rev - t_prev)
            t_prev, sign = t_rev, -sign
        return g + sign * rate * (t - t_prev)

    def F(t: float) -> np.ndarray:
        out = np.eye(3)
        out[0, 1] = gamma(t)
        return out

    return DeformationProgram(duration=duration, F=F,
                              label=f"shear(rate={rate})")


def isoerror_deformation(F11: float, F12: float) -> np.ndarray:
    """Member of the incompressible tension/shear path family:
    F = F11 e1(x)e1 + F11^(-1/2) (e2(x)e2 + e3(x)e3) + F12 e1(x)e2."""
    if F11 <= 0.0:
        raise ConfigError("F11 must be positive")
    lat = F11 ** -0.5
    return np.array([[F11, F12, 0.0],
                     [0.0, lat, 0.0],
                     [0.0, 0.0, lat]])


def isoerror_prestrain(kind: str) -> DeformationProgram:
    """Prestrain path for the single-step error maps.

    ``tension`` ramps to 20% uniaxial tension; ``tension_shear`` combines 10%
    tension with 10% shear.  Time is a non-dimensional loading parameter on
    [0, 1].
    """
    if kind == "tension":
        coeff = (0.2, 0.0)
    elif kind == "tension_shear":
        coeff = (0.1, 0.1)
    else:
        raise ConfigError(f"unknown prestrain kind {kind!r}")

    def F(t: float) -> np.ndarray:
        return isoerror_deformation(1.0 + coeff[0] * t, coeff[1] * t)

    return DeformationProgram(duration=1.0, F=F, label=f"prestrain:{kind}",
                              time_physical=False)


def sample(program: DeformationProgram, n_steps: int
           ) -> list[tuple[float, np.ndarray]]:
    """Uniform time discretisation: n_steps + 1 nodes of (t, C) with C = F^T F."""
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    nodes = []
    for j in range(n_steps + 1):
        t = program.duration * j / n_steps
        F = program.F(t)
        nodes.append((t, sym(F.T @ F)))
    return nodes
