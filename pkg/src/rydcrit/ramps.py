"""Detuning ramp synthesis.

Three generators: plain linear sweeps, gap-adaptive ramps that spend time
proportionally to ``1/E_g(Delta)**2`` over a tabulated gap profile, and the
closed-form ramp for a gap assumed linear in detuning.  The figure of merit
throughout is the adiabaticity ``gamma(t) = E_g(t)**2 / |dDelta/dt|``; the
adaptive constructions make it constant along the ramp.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .serialize import read_csv, write_csv
from .spectrum import GapProfile


@dataclass(frozen=True, eq=False)
class RampProfile:
    """Piecewise-linear schedule of detuning (and drive) versus time."""

    times: np.ndarray
    deltas: np.ndarray
    omegas: np.ndarray
    gamma: Optional[float] = None

    def __post_init__(self):
        t, d, o = self.times, self.deltas, self.omegas
        if not (t.shape == d.shape == o.shape) or t.ndim != 1 or t.size < 2:
            raise DomainError("ramp arrays must be 1D, equal length, >= 2 points")
        if t[0] != 0.0 or not np.all(np.diff(t) > 0):
            raise DomainError("ramp times must start at 0 and strictly increase")
        if np.any(o < 0):
            raise DomainError("ramp drive must be non-negative")

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def delta_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.deltas)

    def omega_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.omegas)

    def reversed(self) -> "RampProfile":
        """Same path traversed backwards in time."""
        t = self.duration - self.times[::-1]
        return RampProfile(
            times=np.ascontiguousarray(t),
            deltas=np.ascontiguousarray(self.deltas[::-1]),
            omegas=np.ascontiguousarray(self.omegas[::-1]),
            gamma=self.gamma,
        )

    def with_turn_on(self, t_on: float, n_points: int = 9) -> "RampProfile":
        """Prepend a linear drive turn-on at fixed initial detuning."""
        if t_on <= 0:
            raise DomainError("turn-on time must be positive")
        ts = np.linspace(0.0, t_on, n_points)
        return RampProfile(
            times=np.concatenate([ts[:-1], self.times + t_on]),
            deltas=np.concatenate([np.full(n_points - 1, self.deltas[0]), self.deltas]),
            omegas=np.concatenate([self.omegas[0] * ts[:-1] / t_on, self.omegas]),
            gamma=None,
        )

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "delta", "omega"], zip(self.times, self.deltas, self.omegas))

    @classmethod
    def from_csv(cls, path) -> "RampProfile":
        header, data = read_csv(path)
        if header != ["t", "delta", "omega"]:
            raise DomainError(f"unexpected ramp columns {header}")
        return cls(times=data[:, 0], deltas=data[:, 1], omegas=data[:, 2])


def linear_ramp(
    delta_start: float,
    delta_end: float,
    rate: float,
    omega: float,
    n_points: int = 65,
) -> RampProfile:
    """Constant-rate sweep; duration is ``|delta_end - delta_start| / rate``."""
    if rate <= 0:
        raise DomainError(f"sweep rate must be positive, got {rate}")
    if delta_end == delta_start:
        raise DomainError("sweep endpoints coincide")
    total = abs(delta_end - delta_start) / rate
    times = np.linspace(0.0, total, n_points)
    deltas = np.linspace(delta_start, delta_end, n_points)
    return RampProfile(times=times, deltas=deltas, omegas=np.full(n_points, float(omega)))


def gap_adaptive_ramp(
    profile: GapProfile,
    delta_start: float,
    delta_end: float,
    total_time: float,
    omega: float,
    n_points: int = 101,
) -> RampProfile:
    """Discrete constant-adiabaticity synthesis over a tabulated gap profile.

    On an equal-spacing detuning grid the time step for each cell is
    proportional to ``1 / E_g(midpoint)**2``, normalized so the endpoints are
    exact.  Midpoint evaluation keeps the centrally-differenced adiabaticity
    constant to second order in the grid spacing.
    """
    if total_time <= 0:
        raise DomainError("total_time must be positive")
    if delta_end == delta_start:
        raise DomainError("ramp endpoints coincide")
    if n_points < 3:
        raise DomainError("gap-adaptive ramp needs at least 3 grid points")
    deltas = np.linspace(delta_start, delta_end, n_points)
    mids = 0.5 * (deltas[:-1] + deltas[1:])
    e_mid = np.asarray(profile.gap_at(mids), dtype=float)
    if np.any(e_mid <= 0):
        raise DomainError("gap profile is non-positive inside the ramp range")
    weights = 1.0 / e_mid**2
    dts = total_time * weights / weights.sum()
    times = np.concatenate([[0.0], np.cumsum(dts)])
    times[-1] = total_time
    cell = abs(delta_end - delta_start) / (n_points - 1)
    gamma = total_time / (weights.sum() * cell)
    return RampProfile(
        times=times, deltas=deltas, omegas=np.full(n_points, float(omega)), gamma=float(gamma)
    )


def linear_gap_ramp(
    e_start: float,
    e_end: float,
    delta_start: float,
    delta_end: float,
    total_time: float,
    omega: float,
    n_points: int = 65,
) -> RampProfile:
    """Closed-form constant-adiabaticity ramp for a gap linear in detuning.

    Solves ``dDelta/dt = E_g(Delta)**2 / gamma`` with
    ``E_g`` interpolating linearly from ``e_start`` at ``delta_start`` to
    ``e_end`` at ``delta_end``; the constant is
    ``gamma = e_start * e_end * T / (delta_end - delta_start)``.
    """
    if e_start <= 0 or e_end <= 0:
        raise DomainError("endpoint gaps must be positive")
    if total_time <= 0:
        raise DomainError("total_time must be positive")
    if delta_end == delta_start:
        raise DomainError("ramp endpoints coincide")
    t = np.linspace(0.0, total_time, n_points)
    rem = total_time - t
    deltas = (e_start * delta_end * t + e_end * delta_start * rem) / (e_start * t + e_end * rem)
    deltas[0] = delta_start
    deltas[-1] = delta_end
    gamma = abs(e_start * e_end * total_time / (delta_end - delta_start))
    return RampProfile(
        times=t, deltas=deltas, omegas=np.full(n_points, float(omega)), gamma=float(gamma)
    )


def adiabaticity_series(ramp: RampProfile, gap_at: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``E_g(Delta(t_k))**2 / |dDelta/dt|`` recomputed by central differences.

    Points where the sweep is stationary give ``inf`` (locally perfectly
    adiabatic); callers minimizing over the series see only the finite values.
    """
    slope = np.gradient(ramp.deltas, ramp.times, edge_order=2)
    gaps = np.asarray(gap_at(ramp.deltas), dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(slope == 0.0, np.inf, gaps**2 / np.abs(slope))


def min_adiabaticity(ramp: RampProfile, gap_at: Callable[[np.ndarray], np.ndarray]) -> float:
    return float(np.min(adiabaticity_series(ramp, gap_at)))
