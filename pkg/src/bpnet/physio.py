"""Analytic pulse-transit utilities: PTT measurement, PWV, elasticity model.

Didactic baseline only; the learned estimator does not consume these
outputs.  The PTT variants mirror the three usual landmark conventions
(pulse onset, first-derivative maximum, systolic apex), and the pressure
inversion composes the velocity and exponential elasticity relations:

    c^2 = E h / (rho d),   E = E0 * exp(gamma * P)
    =>  P = ln(rho * d * c^2 / (h * E0)) / gamma
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PTT_VARIANTS = ("onset", "derivative-peak", "peak")
SEARCH_HORIZON_S = 2.0


class PhysioError(ValueError):
    pass


@dataclass(frozen=True)
class VesselModel:
    e0: float               # elastic modulus scale, same unit as E
    gamma: float            # 1/mmHg
    wall_thickness: float   # m
    blood_density: float    # kg/m^3
    diameter: float         # m
    distance: float         # m

    def __post_init__(self) -> None:
        for name, value in (
            ("e0", self.e0),
            ("gamma", self.gamma),
            ("wall_thickness", self.wall_thickness),
            ("blood_density", self.blood_density),
            ("diameter", self.diameter),
            ("distance", self.distance),
        ):
            if value <= 0:
                raise PhysioError(f"{name} must be strictly positive, got {value}")


def _next_apex(ppg: np.ndarray, fs: float, start: int, stop: int) -> int:
    """First systolic apex after `start`: a spacing-limited local maximum
    above the local midrange."""
    seg = ppg[start:stop]
    if seg.size < 3:
        raise PhysioError("no PPG samples after the R peak")
    lo, hi = float(np.min(seg)), float(np.max(seg))
    if hi - lo <= 0:
        raise PhysioError("flat PPG after the R peak")
    mid = 0.5 * (lo + hi)
    for k in range(1, seg.size - 1):
        if seg[k] > seg[k - 1] and seg[k] >= seg[k + 1] and seg[k] > mid:
            return start + k
    raise PhysioError("no qualifying PPG landmark within the search horizon")


def measure_ptt(r_peak_time: float, ppg: np.ndarray, fs: float, variant: str = "onset") -> float:
    """Pulse transit time from an R peak to the chosen PPG landmark, seconds.

    variant: "onset" (pulse foot), "derivative-peak" (steepest upstroke), or
    "peak" (systolic apex).
    """
    if variant not in PTT_VARIANTS:
        raise PhysioError(f"unknown variant {variant!r}; expected one of {PTT_VARIANTS}")
    x = np.asarray(ppg, dtype=float)
    start = int(math.ceil(r_peak_time * fs))
    if start < 0 or start >= x.size - 2:
        raise PhysioError("R peak falls after the recorded PPG")
    stop = min(x.size, start + int(SEARCH_HORIZON_S * fs))
    apex = _next_apex(x, fs, start + 1, stop)

    # Foot: walk down the upstroke to the preceding trough; stop at plateaus.
    foot = apex
    while foot > 0 and x[foot - 1] < x[foot]:
        foot -= 1

    if variant == "peak":
        landmark = apex
    elif variant == "onset":
        landmark = foot
    else:
        upstroke = np.diff(x[foot : apex + 1])
        if upstroke.size == 0:
            raise PhysioError("degenerate upstroke")
        landmark = foot + int(np.argmax(upstroke))

    ptt = landmark / fs - r_peak_time
    if ptt <= 0:
        raise PhysioError("landmark does not follow the R peak")
    return float(ptt)


def pwv_from_ptt(distance: float, ptt: float) -> float:
    """Pulse wave velocity = arterial path length / transit time."""
    if distance <= 0:
        raise PhysioError(f"distance must be positive, got {distance}")
    if ptt <= 0:
        raise PhysioError(f"PTT must be positive, got {ptt}")
    return distance / ptt


def analytic_bp_from_pwv(c: float, model: VesselModel) -> float:
    """Invert the velocity/elasticity relations for pressure in mmHg."""
    if c <= 0:
        raise PhysioError(f"velocity must be positive, got {c}")
    arg = model.blood_density * model.diameter * c * c / (model.wall_thickness * model.e0)
    if arg <= 0:
        raise PhysioError("log argument not positive")
    return math.log(arg) / model.gamma


def pwv_from_bp(pressure: float, model: VesselModel) -> float:
    """Forward map, handy for round-trip checks and synthetic truth."""
    e = model.e0 * math.exp(model.gamma * pressure)
    return math.sqrt(e * model.wall_thickness / (model.blood_density * model.diameter))
