"""Passive plant and network models in the synchronous dq frame.

All elements live in one global reference frame rotating at exactly the
base frequency; frequency events show up as rotation of the source
phasor, not of the frame. Inductive branches contribute one complex
current state, capacitive shunts one complex voltage state:

    (x/omega_b) di/dt = v_from - v_to - (r + j*x) i
    (b/omega_b) dv/dt = i_in - i_out   - j*b    v

with x, b in pu at the base frequency. Every node must carry some
capacitance so the assembled system is a plain ODE (no algebraic nodes).
The dc link is the only nonlinear element and is stepped separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DcCollapseError,
    NumericalDivergenceError,
    SchemaError,
)

SQRT3_2 = math.sqrt(3.0) / 2.0
_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Converter hardware constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConverterParams:
    """Electrical constants of one WTG converter on its own base.

    Defaults are the 12 MVA / 0.69 kV benchmark turbine. The filter
    resistance is tied to the inductance (rf = lf/20) and enforced at
    construction. `cdc` is a per-unit capacitance in seconds, i.e.
    cdc * dv/dt = i with time in seconds; the stored energy at nominal
    dc voltage is then 0.5*cdc*vdc_nom^2 (about 13 ms for the defaults).
    """

    s_mva: float = 12.0
    v_kv: float = 0.69
    fsw_hz: float = 2950.0
    kmod: float = SQRT3_2
    vdc_nom: float = 2.0
    lf: float = 0.1055776
    cf: float = 0.0757204
    rcf: float = 0.003
    cdc: float = 6.6654e-3
    st_mva: float = 14.0
    rt: float = 0.0054
    lt: float = 0.1

    def __post_init__(self):
        for name in ("s_mva", "v_kv", "lf", "cf", "cdc", "st_mva", "lt", "vdc_nom"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.kmod <= 1.0:
            raise ValueError("kmod must lie in (0, 1]")

    @property
    def rf(self) -> float:
        """Filter resistance, fixed at lf/20."""
        return self.lf / 20.0

    @property
    def fsamp_hz(self) -> float:
        return 2.0 * self.fsw_hz

    def transformer_on_unit_base(self) -> tuple[float, float]:
        """(r, x) of the WTG transformer re-based from its own rating."""
        k = self.s_mva / self.st_mva
        return self.rt * k, self.lt * k


# ---------------------------------------------------------------------------
# Cable sections and collector aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiSection:
    """Nominal-pi cable segment: series r + jx, b_half shunt at each end."""

    r: float
    x: float
    b_half: float

    def __post_init__(self):
        if self.r < 0.0 or self.x <= 0.0 or self.b_half < 0.0:
            raise ValueError("pi section needs r >= 0, x > 0, b_half >= 0")


def build_hvac_cable(r_total: float, x_total: float, b_total: float,
                     n_sections: int = 10) -> list[PiSection]:
    """Split an export cable into `n_sections` identical pi segments.

    Each segment carries 1/n of the series impedance and 1/n of the total
    charging, half per end (adjacent halves merge at interior nodes).
    """
    if n_sections < 1:
        raise ValueError("n_sections must be >= 1")
    n = n_sections
    return [PiSection(r_total / n, x_total / n, b_total / (2 * n)) for _ in range(n)]


def aggregate_collector(impedances: Sequence[complex],
                        ratings_mva: Sequence[float],
                        charging: Sequence[float] | None = None) -> tuple[complex, float]:
    """Power-weighted equivalent of parallel collector strings.

    All inputs must be on one common base. The series equivalent
    Z_eq = sum(Z_i * (S_i/S_tot)^2) preserves copper losses at rated
    dispatch; shunt charging adds up. Returns (z_eq, b_total).
    """
    if len(impedances) == 0:
        raise ValueError("need at least one string")
    if len(impedances) != len(ratings_mva):
        raise ValueError("impedances and ratings length mismatch")
    s = np.asarray(ratings_mva, dtype=float)
    s_tot = s.sum()
    if not s_tot > 0.0:
        raise ValueError("zero total rating")
    w = (s / s_tot) ** 2
    z_eq = complex(np.sum(np.asarray(impedances, dtype=complex) * w))
    b_tot = float(np.sum(charging)) if charging is not None else 0.0
    return z_eq, b_tot


# ---------------------------------------------------------------------------
# Grid source events and waveform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseJump:
    """Step in the grid source angle at `t_s` (positive = source leads more)."""

    t_s: float
    degrees: float

    @property
    def interval(self):
        return (self.t_s, self.t_s)


@dataclass(frozen=True)
class RocofRamp:
    """Linear frequency ramp starting at `t_start_s` until `f_end_hz`."""

    t_start_s: float
    hz_per_s: float
    f_end_hz: float

    @property
    def interval(self):
        # duration resolved against the pre-event frequency at build time;
        # a conservative bound is enough for overlap checking
        return (self.t_start_s, None)


@dataclass(frozen=True)
class VoltageStep:
    """Step in the grid source magnitude at `t_s`."""

    t_s: float
    pu: float

    @property
    def interval(self):
        return (self.t_s, self.t_s)


GridEvent = PhaseJump | RocofRamp | VoltageStep


class GridWaveform:
    """Event-driven (v_mag, theta, freq) trajectory of the grid source.

    `theta` is the source angle relative to the synchronous reference
    frame (which rotates at exactly f_base): constant at nominal
    frequency, accumulating 2*pi*(f - f_base) during off-nominal
    operation, stepping at phase jumps. Events must be time-ordered and
    non-overlapping. Step changes (jumps, voltage steps) take effect for
    t >= event time; `eval_pair` gates them on the step start instead so
    the solver applies them exactly between steps.
    """

    def __init__(self, events: Sequence[GridEvent], f_base_hz: float = 50.0,
                 v0: float = 1.0, theta0: float = 0.0):
        self.f_base = float(f_base_hz)
        self.events = list(events)
        # segment table: continuous frequency/angle evolution, jump-free
        t0, f0, th0, v = 0.0, self.f_base, float(theta0), float(v0)
        starts, freqs, rates, thetas, vmags = [t0], [f0], [0.0], [th0], [v]
        jump_times: list[float] = []
        jump_steps: list[float] = []
        prev_end = -math.inf
        for ev in sorted(self.events, key=lambda e: e.interval[0]):
            t_ev = ev.interval[0]
            if t_ev < prev_end - 1e-12:
                raise SchemaError(f"event at t={t_ev} s overlaps the previous event")
            th_ev = self._theta_at(starts, freqs, rates, thetas, t_ev)
            f_ev = self._freq_at(starts, freqs, rates, t_ev)
            if isinstance(ev, RocofRamp):
                if ev.hz_per_s == 0.0:
                    raise SchemaError("rocof event needs a nonzero ramp rate")
                dur = (ev.f_end_hz - f_ev) / ev.hz_per_s
                if dur <= 0.0:
                    raise SchemaError(
                        f"rocof target {ev.f_end_hz} Hz unreachable from {f_ev} Hz "
                        f"at {ev.hz_per_s} Hz/s")
                starts += [t_ev, t_ev + dur]
                freqs += [f_ev, ev.f_end_hz]
                rates += [ev.hz_per_s, 0.0]
                thetas += [th_ev, None]  # filled below
                vmags += [v, v]
                thetas[-1] = self._theta_at(starts[:-1], freqs[:-1], rates[:-1],
                                            thetas[:-1], t_ev + dur)
                prev_end = t_ev + dur
            elif isinstance(ev, PhaseJump):
                jump_times.append(t_ev)
                jump_steps.append(math.radians(ev.degrees))
                prev_end = t_ev
            elif isinstance(ev, VoltageStep):
                v = float(ev.pu)
                starts.append(t_ev)
                freqs.append(f_ev)
                rates.append(rates[-1] if starts[-2] <= t_ev else 0.0)
                thetas.append(th_ev)
                vmags.append(v)
                prev_end = t_ev
            else:  # pragma: no cover
                raise SchemaError(f"unknown event type {type(ev).__name__}")
        self._starts = np.asarray(starts)
        self._freqs = np.asarray(freqs)
        self._rates = np.asarray(rates)
        self._thetas = np.asarray(thetas, dtype=float)
        self._vmags = np.asarray(vmags)
        self._jump_t = np.asarray(jump_times)
        self._jump_cum = np.cumsum(jump_steps) if jump_steps else np.zeros(0)

    @staticmethod
    def _freq_at(starts, freqs, rates, t):
        i = int(np.searchsorted(starts, t, side="right")) - 1
        return freqs[i] + rates[i] * (t - starts[i])

    def _theta_at(self, starts, freqs, rates, thetas, t):
        i = int(np.searchsorted(starts, t, side="right")) - 1
        dt = t - starts[i]
        df0 = freqs[i] - self.f_base
        return thetas[i] + _TWO_PI * (df0 * dt + 0.5 * rates[i] * dt * dt)

    def _jumps_upto(self, t):
        if self._jump_t.size == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        k = np.searchsorted(self._jump_t, t, side="right")
        return np.where(k > 0, self._jump_cum[np.maximum(k - 1, 0)], 0.0)

    def __call__(self, t):
        """(v_mag, theta, freq) at time(s) t, steps applied for t >= t_event."""
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self._starts, t, side="right") - 1
        i = np.maximum(i, 0)
        dt = t - self._starts[i]
        df0 = self._freqs[i] - self.f_base
        theta = self._thetas[i] + _TWO_PI * (df0 * dt + 0.5 * self._rates[i] * dt * dt)
        theta = theta + self._jumps_upto(t)
        freq = self._freqs[i] + self._rates[i] * dt
        vmag = self._vmags[i]
        if t.ndim == 0:
            return float(vmag), float(theta), float(freq)
        return vmag, theta, freq

    def eval_pair(self, t: float, dt: float):
        """Source phasors at both ends of a step, discontinuities gated at t.

        Returns (z0, z1) complex. Jumps and voltage steps dated within
        (t, t+dt] are NOT applied, so a step change enters the simulation
        at the start of the following step.
        """
        if self._starts.size == 1 and self._jump_t.size == 0:
            z = complex(self._vmags[0] * np.exp(1j * self._thetas[0]))
            return z, z
        jump = float(self._jumps_upto(t))
        i0 = max(int(np.searchsorted(self._starts, t, side="right")) - 1, 0)
        vm = self._vmags[i0]
        vals = []
        for tq in (t, t + dt):
            i = max(int(np.searchsorted(self._starts, tq, side="right")) - 1, 0)
            dd = tq - self._starts[i]
            df0 = self._freqs[i] - self.f_base
            th = self._thetas[i] + _TWO_PI * (df0 * dd + 0.5 * self._rates[i] * dd * dd) + jump
            vals.append(vm * np.exp(1j * th))
        return vals[0], vals[1]

    def rocof_intervals(self) -> list[tuple[float, float]]:
        """(t_start, t_end) of every constant-RoCoF segment."""
        out = []
        for ev in self.events:
            if isinstance(ev, RocofRamp):
                i = int(np.searchsorted(self._starts, ev.t_start_s, side="right")) - 1
                dur = (ev.f_end_hz - float(self._freqs[i])) / ev.hz_per_s
                out.append((float(ev.t_start_s), float(ev.t_start_s + dur)))
        return out


def grid_waveform(t, events: Sequence[GridEvent], f_base_hz: float = 50.0):
    """Evaluate the grid source (v_mag, theta, freq) at time(s) `t`."""
    return GridWaveform(events, f_base_hz)(t)


@dataclass(frozen=True)
class ThevGrid:
    """Thevenin grid source at the point of connection."""

    scc_mva: float = 3000.0
    v_kv: float = 400.0
    x_over_r: float = 10.0

    def __post_init__(self):
        if not self.scc_mva > 0.0:
            raise ValueError("short-circuit power must be positive")

    def impedance_pu(self, s_base_mva: float) -> tuple[float, float]:
        """(r, x) on `s_base_mva`; X = S_base/SCC, R = X / (X/R)."""
        x = s_base_mva / self.scc_mva
        return x / self.x_over_r, x


# ---------------------------------------------------------------------------
# Stamped linear network
# ---------------------------------------------------------------------------

GROUND = ("ground",)


@dataclass(frozen=True)
class Shunt:
    """Node capacitance b (pu susceptance) with series resistance rc."""

    b: float
    rc: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Series RL element between two ends.

    An end is ("node", name), ("source", name) or ("ground",). Current is
    positive from `a` to `b`.
    """

    name: str
    a: tuple
    b_end: tuple
    r: float
    x: float


class LinearNetwork:
    """Linear dq network x' = A x + B u assembled from branches and shunts.

    State ordering is [branch currents..., node voltages...]; inputs are
    the source voltages in declaration order. Node voltages are the
    internal capacitor states; the bus voltage seen by branches includes
    the series-resistance correction v_bus = v_c + rc * i_c.
    """

    def __init__(self, shunts: dict[str, Shunt], branches: Sequence[Branch],
                 sources: Sequence[str], omega_base: float, omega_frame: float = 1.0):
        self.shunts = dict(shunts)
        self.branches = list(branches)
        self.sources = list(sources)
        self.omega_base = float(omega_base)
        self.omega_frame = float(omega_frame)
        self.node_names = list(self.shunts)
        self.nb = len(self.branches)
        self.nn = len(self.node_names)
        self.n = self.nb + self.nn
        self._node_idx = {nm: i for i, nm in enumerate(self.node_names)}
        self._branch_idx = {br.name: i for i, br in enumerate(self.branches)}
        self._source_idx = {nm: i for i, nm in enumerate(self.sources)}
        for nm, sh in self.shunts.items():
            if not sh.b > 0.0:
                raise ValueError(f"node '{nm}' needs positive capacitance (algebraic node)")
        self.labels = [f"i:{br.name}" for br in self.branches] + \
                      [f"v:{nm}" for nm in self.node_names]
        self._assemble()

    # -- assembly ----------------------------------------------------------

    def _end_node(self, end):
        return self._node_idx[end[1]] if end[0] == "node" else None

    def _assemble(self):
        wb, wf = self.omega_base, self.omega_frame
        nb, nn = self.nb, self.nn
        A = np.zeros((self.n, self.n), dtype=complex)
        B = np.zeros((self.n, len(self.sources)), dtype=complex)
        # incidence: M[node, branch] = +1 into node, -1 out of node
        M = np.zeros((nn, nb))
        for j, br in enumerate(self.branches):
            ka, kb = self._end_node(br.a), self._end_node(br.b_end)
            if ka is not None:
                M[ka, j] -= 1.0
            if kb is not None:
                M[kb, j] += 1.0
        self.incidence = M
        for j, br in enumerate(self.branches):
            g = wb / br.x
            A[j, j] -= g * (br.r + 1j * wf * br.x)
            for end, sgn in ((br.a, +1.0), (br.b_end, -1.0)):
                if end[0] == "node":
                    k = self._node_idx[end[1]]
                    A[j, nb + k] += sgn * g
                    rc = self.shunts[end[1]].rc
                    if rc != 0.0:
                        A[j, :nb] += sgn * g * rc * M[k, :]
                elif end[0] == "source":
                    B[j, self._source_idx[end[1]]] += sgn * g
                # ground contributes nothing
        for k, nm in enumerate(self.node_names):
            b = self.shunts[nm].b
            A[nb + k, :nb] = (wb / b) * M[k, :]
            A[nb + k, nb + k] -= 1j * wb * wf
        self.A = A
        self.B = B
        # stored-energy weights (pu*s) for balance checks
        self.weights = np.concatenate([
            np.array([br.x / wb for br in self.branches]),
            np.array([self.shunts[nm].b / wb for nm in self.node_names]),
        ])

    # -- lookups -----------------------------------------------------------

    def branch_state(self, name: str) -> int:
        return self._branch_idx[name]

    def node_state(self, name: str) -> int:
        return self.nb + self._node_idx[name]

    def bus_voltage(self, x: np.ndarray, name: str):
        """Bus voltage at a node including the rc correction."""
        k = self._node_idx[name]
        v = x[..., self.nb + k]
        rc = self.shunts[name].rc
        if rc != 0.0:
            v = v + rc * (x[..., :self.nb] @ self.incidence[k, :])
        return v

    # -- time stepping -----------------------------------------------------

    def trapezoid(self, dt: float) -> "TrapezoidStepper":
        return TrapezoidStepper(self, dt)

    # -- phasor solutions ---------------------------------------------------

    def _phasor_matrices(self, omega_pu: float):
        nn = self.nn
        Y = np.zeros((nn, nn), dtype=complex)
        for nm, sh in self.shunts.items():
            k = self._node_idx[nm]
            yc = 1j * omega_pu * sh.b
            Y[k, k] += yc / (1.0 + sh.rc * yc)
        stamps = []  # (branch, ka, kb, y) with None for source/ground ends
        for br in self.branches:
            y = 1.0 / (br.r + 1j * omega_pu * br.x)
            ka, kb = self._end_node(br.a), self._end_node(br.b_end)
            if ka is not None:
                Y[ka, ka] += y
            if kb is not None:
                Y[kb, kb] += y
            if ka is not None and kb is not None:
                Y[ka, kb] -= y
                Y[kb, ka] -= y
            stamps.append((br, ka, kb, y))
        return Y, stamps

    def phasor_solve(self, omega_pu: float = 1.0,
                     source_v: dict[str, complex] | None = None,
                     inject: dict[str, complex] | None = None):
        """Steady-state phasor solution at `omega_pu` (1.0 = base frequency).

        Returns (node_bus_voltages, branch_currents) as dicts. Sources not
        listed in `source_v` are shorted; `inject` adds nodal current
        injections (used by impedance scans).
        """
        source_v = source_v or {}
        inject = inject or {}
        Y, stamps = self._phasor_matrices(omega_pu)
        rhs = np.zeros(self.nn, dtype=complex)
        for br, ka, kb, y in stamps:
            for end, k_other, sgn in ((br.a, kb, +1.0), (br.b_end, ka, -1.0)):
                if end[0] == "source" and k_other is not None:
                    u = source_v.get(end[1], 0.0)
                    rhs[k_other] += sgn * y * u
        for nm, i_inj in inject.items():
            rhs[self._node_idx[nm]] += i_inj
        v = np.linalg.solve(Y, rhs)
        node_v = {nm: v[self._node_idx[nm]] for nm in self.node_names}
        branch_i = {}
        for br, ka, kb, y in stamps:
            va = source_v.get(br.a[1], 0.0) if br.a[0] == "source" else (
                0.0 if br.a[0] == "ground" else v[ka])
            vb = source_v.get(br.b_end[1], 0.0) if br.b_end[0] == "source" else (
                0.0 if br.b_end[0] == "ground" else v[kb])
            branch_i[br.name] = (va - vb) * y
        return node_v, branch_i

    def phasor_state(self, node_v: dict, branch_i: dict) -> np.ndarray:
        """Pack a phasor solution into a state vector (cap states de-rc'ed)."""
        x = np.zeros(self.n, dtype=complex)
        for br in self.branches:
            x[self._branch_idx[br.name]] = branch_i[br.name]
        ivec = np.array([branch_i[br.name] for br in self.branches])
        for k, nm in enumerate(self.node_names):
            ic = self.incidence[k, :] @ ivec
            x[self.nb + k] = node_v[nm] - self.shunts[nm].rc * ic
        return x

    def driving_point(self, node: str, omega_pu: float) -> complex:
        """Driving-point impedance at a node, all sources shorted."""
        try:
            node_v, _ = self.phasor_solve(omega_pu, source_v={}, inject={node: 1.0})
        except np.linalg.LinAlgError:
            return complex(np.inf, np.inf)
        z = node_v[node]
        if not np.isfinite(z) or abs(z) > 1e9:
            return complex(np.inf, np.inf)
        return z

    def without_branches(self, names: Sequence[str]) -> "LinearNetwork":
        """Copy of the network with the named branches removed."""
        drop = set(names)
        keep = [br for br in self.branches if br.name not in drop]
        sources = [s for s in self.sources
                   if any(("source", s) in (br.a, br.b_end) for br in keep)]
        return LinearNetwork(self.shunts, keep, sources, self.omega_base,
                             self.omega_frame)


class TrapezoidStepper:
    """Precomputed trapezoidal update x+ = F1 x + G u_mid for one network."""

    def __init__(self, net: LinearNetwork, dt: float):
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        self.net = net
        self.dt = float(dt)
        n = net.n
        m1 = np.eye(n) - 0.5 * dt * net.A
        self.F1 = np.linalg.solve(m1, np.eye(n) + 0.5 * dt * net.A)
        self.G = np.linalg.solve(m1, dt * net.B)

    def step(self, x: np.ndarray, u_mid: np.ndarray) -> np.ndarray:
        return self.F1 @ x + self.G @ u_mid

    def check(self, x: np.ndarray, limit: float = 1e3):
        """Raise NumericalDivergenceError naming the worst state if |x| blew up."""
        mags = np.abs(x)
        k = int(np.argmax(mags))
        if mags[k] > limit:
            raise NumericalDivergenceError(
                f"state '{self.net.labels[k]}' reached {mags[k]:.3e} pu "
                f"(> {limit:g}); simulation diverged")

    def balance_residual(self, x0: np.ndarray, x1: np.ndarray,
                         u_mid: np.ndarray) -> float:
        """Discrete energy-balance residual of one step, in pu power.

        For the trapezoidal rule the identity
        dE = dt * (P_sources - P_losses) holds exactly at the midpoint
        state; the returned residual is numerical roundoff only.
        """
        net = self.net
        xm = 0.5 * (x0 + x1)
        dE = float(net.weights @ (0.5 * (np.abs(x1) ** 2 - np.abs(x0) ** 2)))
        i_m = xm[:net.nb]
        r_vec = np.array([br.r for br in net.branches])
        p_loss = float(r_vec @ np.abs(i_m) ** 2)
        ic = net.incidence @ i_m
        rc_vec = np.array([net.shunts[nm].rc for nm in net.node_names])
        p_loss += float(rc_vec @ np.abs(ic) ** 2)
        p_src = 0.0
        for j, br in enumerate(net.branches):
            if br.a[0] == "source":
                p_src += float(np.real(u_mid[net._source_idx[br.a[1]]] * np.conj(i_m[j])))
            if br.b_end[0] == "source":
                p_src -= float(np.real(u_mid[net._source_idx[br.b_end[1]]] * np.conj(i_m[j])))
        return dE / self.dt - (p_src - p_loss)


# ---------------------------------------------------------------------------
# Stand-alone converter plant (filter + transformer) and dc link
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantState:
    """States of one converter plant: filter current, cap voltage,
    transformer current (all dq complex, synchronous frame) and dc volts."""

    i_f: complex
    v_cf: complex
    i_t: complex
    vdc: float


def _plant_network(conv: ConverterParams, omega_base: float,
                   omega_frame: float) -> LinearNetwork:
    rt, lt = conv.transformer_on_unit_base()
    return LinearNetwork(
        shunts={"pcc": Shunt(conv.cf, conv.rcf)},
        branches=[
            Branch("lf", ("source", "vsc"), ("node", "pcc"), conv.rf, conv.lf),
            Branch("tx", ("node", "pcc"), ("source", "grid"), rt, lt),
        ],
        sources=["vsc", "grid"],
        omega_base=omega_base,
        omega_frame=omega_frame,
    )


def plant_step(state: PlantState, v_vsc: complex, v_boundary: complex,
               conv: ConverterParams, omega_frame: float, dt: float,
               omega_base: float = 2.0 * math.pi * 50.0) -> PlantState:
    """One trapezoidal step of the converter LC filter and transformer.

    `v_boundary` is the network voltage at the transformer far end. The dc
    link is not touched here (see `dc_link_step`). Raises
    NumericalDivergenceError when the state norm blows up (> 1e3 pu),
    which for this passive plant can only happen with nonphysical
    (negative-resistance) parameters.
    """
    net = _plant_network(conv, omega_base, omega_frame)
    stepper = net.trapezoid(dt)
    x = np.array([state.i_f, state.i_t, state.v_cf], dtype=complex)
    x1 = stepper.step(x, np.array([v_vsc, v_boundary], dtype=complex))
    stepper.check(x1)
    return PlantState(i_f=x1[0], v_cf=x1[2], i_t=x1[1], vdc=state.vdc)


def dc_link_step(vdc: float, p_conv: float, i_mach: float, cdc: float,
                 dt: float) -> float:
    """Trapezoidal dc-link update cdc * dvdc/dt = i_mach - p_conv/vdc.

    `cdc` is the per-unit capacitance in seconds. The nonlinear load term
    is handled with one fixed-point iteration on the predicted end value.
    Raises DcCollapseError when the voltage falls to 0.1 pu or below.
    """
    if not vdc > 0.0:
        raise DcCollapseError(f"dc link already collapsed (vdc = {vdc:g} pu)")

    def f(v):
        return (i_mach - p_conv / v) / cdc

    pred = vdc + dt * f(vdc)
    pred = max(pred, 1e-6)
    v1 = vdc + 0.5 * dt * (f(vdc) + f(pred))
    if v1 <= 0.1:
        raise DcCollapseError(f"dc link collapsed to {v1:.4f} pu (<= 0.1 pu)")
    return float(v1)
