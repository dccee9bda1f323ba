"""Frequency-domain scans and time-series diagnostics.

Everything here is pure post-processing: impedance scans of the passive
network, pole-slip (loss of synchronism) detection on unwrapped rotor
angles, inertial-power estimation over a frequency ramp and FAW/SAW
trace comparison metrics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AxisMismatchError, ChannelMissingError, WindowError
from .farm import FarmModel, TimeSeries
from .perunit import PerUnitBase, change_base

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# Impedance scans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImpedanceScan:
    """Driving-point impedance over a frequency grid, on `base`."""

    bus: str
    f_hz: np.ndarray
    z_pu: np.ndarray
    base: PerUnitBase

    def __post_init__(self):
        if np.any(np.diff(self.f_hz) <= 0.0):
            raise ValueError("frequencies must be strictly increasing")

    def rebase(self, to_base: PerUnitBase) -> "ImpedanceScan":
        return ImpedanceScan(self.bus, self.f_hz,
                             change_base(self.z_pu, self.base, to_base), to_base)

    def at(self, f: float) -> complex:
        k = int(np.argmin(np.abs(self.f_hz - f)))
        return complex(self.z_pu[k])


def scan_impedance(model: FarmModel, bus: str, freqs_hz,
                   mode: str = "open") -> ImpedanceScan:
    """Scan the passive network impedance seen at a named bus.

    Converters are removed (``mode='open'``, the default) or replaced by
    their virtual admittance; the grid source is shorted behind its
    Thevenin impedance. Resonance singularities become inf markers
    rather than aborting the scan. The result is expressed on the bus's
    natural base (unit base at converter terminals, farm base elsewhere).
    """
    freqs = np.asarray(freqs_hz, dtype=float)
    if np.any(freqs <= 0.0):
        raise ValueError("scan frequencies must be positive")
    if bus not in model.bus_aliases:
        raise KeyError(
            f"unknown bus '{bus}'; available: {sorted(model.bus_aliases)}")
    node = model.bus_aliases[bus]
    base = model.bus_bases[bus]
    net = model.passive_network(mode)
    farm_v_base = PerUnitBase(model.s_farm, base.v_kv, model.f_base)
    z = np.empty(freqs.size, dtype=complex)
    for i, f in enumerate(freqs):
        z[i] = net.driving_point(node, f / model.f_base)
    z = change_base(z, farm_v_base, base)
    return ImpedanceScan(bus=bus, f_hz=freqs, z_pu=z, base=base)


# ---------------------------------------------------------------------------
# Loss of synchronism
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitLos:
    """Pole-slip statistics of one unit."""

    unit: int
    slips: int
    first_slip_s: float | None
    max_excursion_rad: float
    limiter_intervals: tuple = ()


@dataclass(frozen=True)
class LosReport:
    units: tuple

    @property
    def any_slip(self) -> bool:
        return any(u.slips > 0 for u in self.units)

    def unit(self, k: int) -> UnitLos:
        return self.units[k - 1]


def detect_los(ts: TimeSeries) -> LosReport:
    """Count pole slips on each unit's unwrapped grid-relative angle.

    A slip is one full 2*pi of excursion from the initial operating
    angle; loss of synchronism is declared when at least one slip
    occurred. Works on the unwrapped ``unit<k>_theta_rad`` channels and
    is therefore insensitive to decimation (slips evolve on swing time
    scales) and wrapping conventions.
    """
    reports = []
    for k in range(1, ts.n_units + 1):
        name = f"unit{k}_theta_rad"
        if name not in ts.channels:
            raise ChannelMissingError(f"channel '{name}' missing; cannot detect slips")
        theta = ts.channels[name]
        dev = theta - theta[0]
        excursion = np.maximum.accumulate(np.abs(dev))
        slips = int(excursion[-1] // TWO_PI)
        first = None
        if slips >= 1:
            first = float(ts.t[int(np.argmax(excursion >= TWO_PI))])
        lim = tuple(ts.limiter_intervals[k - 1]) if ts.limiter_intervals else ()
        reports.append(UnitLos(unit=k, slips=slips, first_slip_s=first,
                               max_excursion_rad=float(excursion[-1]),
                               limiter_intervals=lim))
    return LosReport(units=tuple(reports))


# ---------------------------------------------------------------------------
# Inertial power
# ---------------------------------------------------------------------------

def inertial_power(ts: TimeSeries, window: tuple[float, float] | None = None,
                   channel: str = "unit1_p_pu") -> float:
    """Mean power rise over a constant-RoCoF window, minus the pre-event level.

    For a converter tracking the ramp this equals 2H*|df/dt|/f_nom. The
    window must lie inside a constant-RoCoF interval of the scenario
    (past the initial transient); by default the second half of the
    first ramp is used. The pre-event baseline is averaged over the
    half-second before the ramp starts.
    """
    ramps = ts.meta.get("rocof_intervals") or []
    if not ramps:
        raise WindowError("time series has no RoCoF interval")
    t0, t1 = ramps[0]
    if window is None:
        window = (t0 + 0.5 * (t1 - t0), t1)
    w0, w1 = window
    inside = any(r0 - 1e-9 <= w0 < w1 <= r1 + 1e-9 for r0, r1 in ramps)
    if not inside:
        raise WindowError(
            f"window {window} not inside any constant-RoCoF interval {ramps}")
    p = ts.channel(channel)
    pre = (ts.t >= max(0.0, t0 - 0.5)) & (ts.t < t0)
    sel = (ts.t >= w0) & (ts.t <= w1)
    if not pre.any() or not sel.any():
        raise WindowError("window or baseline contains no samples")
    return float(p[sel].mean() - p[pre].mean())


# ---------------------------------------------------------------------------
# Trace comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceComparison:
    """Divergence metrics between two aligned traces.

    `rel_l2` is ||a-b|| / ||a|| (asymmetric in its normalization);
    `first_divergence_s` is the first instant |a-b| exceeds `tol`, None
    when the traces never separate that far.
    """

    max_abs: float
    rel_l2: float
    first_divergence_s: float | None
    tol: float = 0.0


def compare_traces(a: TimeSeries, b: TimeSeries, channel: str,
                   tol: float | None = None) -> TraceComparison:
    """Compare one channel of two runs sampled on the same time axis."""
    if a.t.shape != b.t.shape or not np.allclose(a.t, b.t, rtol=0.0, atol=1e-12):
        raise AxisMismatchError("time axes differ; re-run with matching dt/decimation")
    xa = a.channel(channel)
    xb = b.channel(channel)
    diff = xa - xb
    max_abs = float(np.max(np.abs(diff)))
    denom = float(np.linalg.norm(xa))
    rel_l2 = float(np.linalg.norm(diff) / denom) if denom > 0.0 else np.inf
    if tol is None:
        tol = 1e-3 * max(1.0, float(np.max(np.abs(xa))))
    above = np.abs(diff) > tol
    first = float(a.t[int(np.argmax(above))]) if above.any() else None
    return TraceComparison(max_abs=max_abs, rel_l2=rel_l2,
                           first_divergence_s=first, tol=tol)
