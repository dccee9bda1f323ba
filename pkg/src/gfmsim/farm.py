"""Wind farm assembly, steady-state initialization and time-domain solver.

Two aggregation levels of the same 420 MVA farm are supported:

* ``faw``: one converter at full farm rating behind the aggregated
  collector equivalent;
* ``saw``: one converter per string (7 x 60 MVA by default), electrically
  identical in per unit on their own bases, connected through individual
  collector equivalents. All per-string quantities are numpy vectors, so
  a step costs the same small number of array operations regardless of
  the number of strings.

The passive plant (converter filters, transformers, collector branches,
HVAC pi chain, Thevenin source) is assembled into one linear complex
state-space in the synchronous frame and advanced with a precomputed
trapezoidal update. Controls are evaluated once per step on latched
measurements, making unit updates order-independent within the step.

Network default parameters are synthetic: the benchmark's cable data is
not public, so the defaults are calibrated to reproduce two published
anchors (about 0.63 pu series reactance from the grid source to a WTG
terminal on the farm base, and a short-circuit ratio near 2 at the 66 kV
bus). Everything is overridable through the scenario file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import control as ctl
from .control import GfcParams, GfcState, OperatingPoint, design_damping
from .errors import (
    ChannelMissingError,
    DcCollapseError,
    PowerFlowError,
    SimulationAbort,
)
from .network import (
    Branch,
    ConverterParams,
    GridEvent,
    GridWaveform,
    LinearNetwork,
    Shunt,
    ThevGrid,
    aggregate_collector,
    build_hvac_cable,
)
from .perunit import PerUnitBase

FAW = "faw"
SAW = "saw"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CableConfig:
    """HVAC export cable totals on the farm base."""

    r_pu: float = 0.021
    x_pu: float = 0.21
    b_pu: float = 0.18
    n_sections: int = 10


@dataclass(frozen=True)
class TransformerConfig:
    """Plant (66 kV / 400 kV) transformer on the farm base."""

    r_pu: float = 0.005
    x_pu: float = 0.14


@dataclass(frozen=True)
class CollectorConfig:
    """Per-string collector cable equivalent on the string base."""

    r_pu: float = 0.027
    x_pu: float = 0.054
    b_pu: float = 0.02


@dataclass(frozen=True)
class FarmConfig:
    """Bases, layout and network data of the farm."""

    s_farm_mva: float = 420.0
    f_base_hz: float = 50.0
    v_hv_kv: float = 400.0
    v_mv_kv: float = 66.0
    v_lv_kv: float = 0.69
    n_strings: int = 7
    wtg_per_string: int = 5
    grid: ThevGrid = field(default_factory=ThevGrid)
    cable: CableConfig = field(default_factory=CableConfig)
    plant_tx: TransformerConfig = field(default_factory=TransformerConfig)
    collector: CollectorConfig = field(default_factory=CollectorConfig)
    converter: ConverterParams = field(default_factory=ConverterParams)

    def __post_init__(self):
        s_units = self.n_strings * self.wtg_per_string * self.converter.s_mva
        if abs(s_units - self.s_farm_mva) > 1e-6 * self.s_farm_mva:
            raise ValueError(
                f"unit ratings sum to {s_units} MVA, farm base is {self.s_farm_mva} MVA")

    @property
    def s_string_mva(self) -> float:
        return self.wtg_per_string * self.converter.s_mva

    @property
    def omega_base(self) -> float:
        return 2.0 * math.pi * self.f_base_hz


@dataclass(frozen=True)
class UnitSettings:
    """Per-unit controller settings; scalars broadcast, lists go per string.

    Either `damping_ratio` (turned into kd via `design_damping` at the
    build's nominal operating point) or an explicit `kd_pu` must be
    given. `current_bw_rad_s` sets the current-loop PI when kpc/kic are
    not given. `dc_reg_gain_pu` is the machine-side source's proportional
    dc-voltage regulation; 0 recovers a plain constant current source.
    """

    v_ref_pu: float | Sequence[float] = 1.0
    h_s: float | Sequence[float] = 4.0
    damping_ratio: float | Sequence[float] | None = 0.7
    kd_pu: float | Sequence[float] | None = None
    lv_pu: float | Sequence[float] = 0.25
    rv_pu: float | Sequence[float] = 0.0125
    i_max_pu: float | Sequence[float] = 1.2
    current_limiter: bool = True
    kq_pu: float | Sequence[float] = 0.05
    kpv_pu: float | Sequence[float] = 0.2
    kiv_pu: float | Sequence[float] = 30.0
    kpc_pu: float | Sequence[float] | None = None
    kic_pu: float | Sequence[float] | None = None
    current_bw_rad_s: float = 150.0
    omega_lpf_rad_s: float | Sequence[float] = 100.0
    dc_reg_gain_pu: float | Sequence[float] = 1.0


@dataclass(frozen=True)
class Scenario:
    """One simulation case: dispatch, settings, events and solver knobs."""

    name: str = "scenario"
    farm: FarmConfig = field(default_factory=FarmConfig)
    units: UnitSettings = field(default_factory=UnitSettings)
    dispatch_pu: float | Sequence[float] = 0.5
    events: tuple = ()
    dt_s: float = 5e-5
    t_end_s: float = 5.0
    decimation: int | None = None

    def __post_init__(self):
        if not self.dt_s > 0.0:
            raise ValueError("dt_s must be positive")
        for ev in self.events:
            t0 = ev.interval[0]
            if not 0.0 < t0 < self.t_end_s:
                raise ValueError(f"event at t={t0} s outside (0, t_end)")

    @property
    def output_decimation(self) -> int:
        if self.decimation is not None:
            return max(1, int(self.decimation))
        return max(1, round(1e-3 / self.dt_s))  # 1 kHz default output rate


# ---------------------------------------------------------------------------
# Farm model
# ---------------------------------------------------------------------------

def _unit_array(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or a length-{n} sequence")
    return arr.copy()


@dataclass
class FarmModel:
    """Assembled farm at one aggregation level, immutable during a run."""

    level: str
    n: int
    conf: FarmConfig
    s_unit_mva: float
    rho: float                      # farm base over unit base
    gfc: GfcParams                  # vector fields, unit base
    v_ref: np.ndarray
    limiter_on: bool
    dc_gain: np.ndarray
    net: LinearNetwork
    i_lf: np.ndarray                # state indices, per unit
    i_wtx: np.ndarray
    v_pcc: np.ndarray
    v_str: np.ndarray
    i_thev: int
    v_poc: int
    rcf_farm: float
    lf_farm: float
    rf_farm: float
    x_net_design: float             # series reactance for damping design, farm pu
    bus_aliases: dict
    bus_bases: dict
    _steppers: dict = field(default_factory=dict, repr=False)

    @property
    def f_base(self) -> float:
        return self.conf.f_base_hz

    @property
    def omega_base(self) -> float:
        return self.conf.omega_base

    @property
    def s_farm(self) -> float:
        return self.conf.s_farm_mva

    @property
    def vdc_ref(self) -> float:
        return self.conf.converter.vdc_nom

    def stepper(self, dt: float):
        key = round(dt, 12)
        if key not in self._steppers:
            self._steppers[key] = self.net.trapezoid(dt)
        return self._steppers[key]

    def passive_network(self, mode: str = "open") -> LinearNetwork:
        """Network with converters removed (scan boundary condition).

        ``open`` drops the converter source branches; ``virtual_admittance``
        additionally shunts each terminal with the converter's virtual
        impedance (a rough stand-in for the closed-loop low-frequency
        behavior).
        """
        names = [f"lf{k + 1}" for k in range(self.n)]
        net = self.net.without_branches(names)
        if mode == "open":
            return net
        if mode == "virtual_admittance":
            extra = []
            rv = np.broadcast_to(np.asarray(self.gfc.rv, dtype=float), (self.n,))
            lv = np.broadcast_to(np.asarray(self.gfc.lv, dtype=float), (self.n,))
            for k in range(self.n):
                extra.append(Branch(f"vadm{k + 1}", ("node", f"pcc{k + 1}"),
                                    ("ground",), rv[k] * self.rho, lv[k] * self.rho))
            return LinearNetwork(net.shunts, list(net.branches) + extra,
                                 net.sources, net.omega_base, net.omega_frame)
        raise ValueError(f"unknown scan mode '{mode}'")

    def init_network(self) -> LinearNetwork:
        """Network with each converter as its virtual impedance source.

        In steady state the current loop makes the converter behave as the
        internal voltage behind (rv + j lv); this variant is what the
        power-flow initialization solves.
        """
        rv = np.broadcast_to(np.asarray(self.gfc.rv, dtype=float), (self.n,))
        lv = np.broadcast_to(np.asarray(self.gfc.lv, dtype=float), (self.n,))
        branches = []
        for br in self.net.branches:
            if br.name.startswith("lf"):
                k = int(br.name[2:]) - 1
                branches.append(replace(br, r=rv[k] * self.rho, x=lv[k] * self.rho))
            else:
                branches.append(br)
        return LinearNetwork(self.net.shunts, branches, self.net.sources,
                             self.net.omega_base, self.net.omega_frame)


def dispatch_for_level(dispatch_pu, level: str, n_strings: int) -> np.ndarray:
    """Per-unit dispatch vector for a level; FAW takes the string mean."""
    arr = _unit_array(dispatch_pu, n_strings, "dispatch_pu")
    if level == FAW:
        return np.array([arr.mean()])
    return arr


def build_farm(scenario: Scenario, level: str) -> FarmModel:
    """Assemble the farm network and controllers for one aggregation level.

    Unit parameters are identical in per unit on the unit bases, so the
    FAW and SAW builds describe the same scaled hardware; heterogeneous
    settings collapse to their mean for the FAW. Damping ratios are
    mapped to kd at the nominal two-bus operating point of the aggregate
    (common-mode swing), which keeps the two levels' gains identical.
    """
    if level not in (FAW, SAW):
        raise ValueError(f"level must be '{FAW}' or '{SAW}'")
    conf = scenario.farm
    conv = conf.converter
    ns = conf.n_strings
    n = 1 if level == FAW else ns
    s_unit = conf.s_farm_mva if level == FAW else conf.s_string_mva
    rho = conf.s_farm_mva / s_unit
    wb = conf.omega_base

    def per_unit(value, name):
        arr = _unit_array(value, ns, name)
        return np.array([arr.mean()]) if level == FAW else arr

    us = scenario.units
    rt_u, lt_u = conv.transformer_on_unit_base()

    # --- network assembly, farm base, one string branch per unit ----------
    shunts: dict[str, Shunt] = {}
    branches: list[Branch] = []
    sources: list[str] = []
    col_z_string = complex(conf.collector.r_pu, conf.collector.x_pu)
    col_b_string = conf.collector.b_pu
    s_ratio = conf.s_farm_mva / conf.s_string_mva  # string -> farm impedance factor
    if level == FAW:
        z_each = [col_z_string * s_ratio] * ns
        b_each = [col_b_string / s_ratio] * ns
        z_eq, b_eq = aggregate_collector(z_each, [conf.s_string_mva] * ns, b_each)
        collectors = [(z_eq, b_eq)]
    else:
        collectors = [(col_z_string * s_ratio, col_b_string / s_ratio)] * ns

    mv_b = 0.0
    for k in range(n):
        u = k + 1
        z_col, b_col = collectors[k]
        shunts[f"pcc{u}"] = Shunt(conv.cf / rho, conv.rcf * rho)
        shunts[f"str{u}"] = Shunt(b_col / 2.0)
        mv_b += b_col / 2.0
        sources.append(f"vsc{u}")
        branches.append(Branch(f"lf{u}", ("source", f"vsc{u}"), ("node", f"pcc{u}"),
                               conv.rf * rho, conv.lf * rho))
        branches.append(Branch(f"wtx{u}", ("node", f"pcc{u}"), ("node", f"str{u}"),
                               rt_u * rho, lt_u * rho))
        branches.append(Branch(f"col{u}", ("node", f"str{u}"), ("node", "mv"),
                               z_col.real, z_col.imag))
    shunts["mv"] = Shunt(mv_b)
    branches.append(Branch("ptx", ("node", "mv"), ("node", "hv"),
                           conf.plant_tx.r_pu, conf.plant_tx.x_pu))
    sections = build_hvac_cable(conf.cable.r_pu, conf.cable.x_pu, conf.cable.b_pu,
                                conf.cable.n_sections)
    prev = "hv"
    shunts["hv"] = Shunt(sections[0].b_half)
    for i, sec in enumerate(sections):
        nxt = "poc" if i == len(sections) - 1 else f"cab{i + 1}"
        if nxt not in shunts:
            shunts[nxt] = Shunt(0.0)
        b_add = sec.b_half + (sections[i + 1].b_half if i + 1 < len(sections) else 0.0)
        shunts[nxt] = Shunt(shunts[nxt].b + (sec.b_half if nxt == "poc" else b_add))
        branches.append(Branch(f"cab{i + 1}s", ("node", prev), ("node", nxt),
                               sec.r, sec.x))
        prev = nxt
    r_th, x_th = conf.grid.impedance_pu(conf.s_farm_mva)
    sources.append("grid")
    branches.append(Branch("thev", ("source", "grid"), ("node", "poc"), r_th, x_th))
    net = LinearNetwork(shunts, branches, sources, wb)

    # --- controller parameter vectors --------------------------------------
    lv = per_unit(us.lv_pu, "lv_pu")
    rv = per_unit(us.rv_pu, "rv_pu")
    h = per_unit(us.h_s, "h_s")
    x_up = conf.plant_tx.x_pu + conf.cable.x_pu + x_th
    x_coll_farm = (aggregate_collector(
        [col_z_string * s_ratio] * ns, [conf.s_string_mva] * ns)[0].imag)
    x_net_design = float(np.mean(lv)) + lt_u + x_coll_farm + x_up
    if us.kd_pu is not None:
        kd = per_unit(us.kd_pu, "kd_pu")
    else:
        if us.damping_ratio is None:
            raise ValueError("units need either damping_ratio or kd_pu")
        zeta = per_unit(us.damping_ratio, "damping_ratio")
        disp = dispatch_for_level(scenario.dispatch_pu, level, ns)
        kd = np.empty(n)
        for k in range(n):
            x_k = lv[k] + lt_u + x_coll_farm + x_up
            d0 = math.asin(min(disp[k] * x_k, 0.95))
            kd[k] = design_damping(zeta[k], h[k],
                                   OperatingPoint(1.0, 1.0, x_k, d0), wb)
    if us.kpc_pu is not None and us.kic_pu is not None:
        kpc = per_unit(us.kpc_pu, "kpc_pu")
        kic = per_unit(us.kic_pu, "kic_pu")
    else:
        kp0, ki0 = ctl.current_loop_gains(conv.lf, conv.rf, us.current_bw_rad_s, wb)
        kpc = np.full(n, kp0)
        kic = np.full(n, ki0)
    gfc = GfcParams(
        h=h, kd=kd, lv=lv, rv=rv,
        i_max=per_unit(us.i_max_pu, "i_max_pu"),
        kq=per_unit(us.kq_pu, "kq_pu"),
        kpv=per_unit(us.kpv_pu, "kpv_pu"),
        kiv=per_unit(us.kiv_pu, "kiv_pu"),
        kpc=kpc, kic=kic,
        omega_lpf=per_unit(us.omega_lpf_rad_s, "omega_lpf_rad_s"),
        kmod=conv.kmod, lf=conv.lf,
    )

    # --- state index maps ---------------------------------------------------
    i_lf = np.array([net.branch_state(f"lf{k + 1}") for k in range(n)])
    i_wtx = np.array([net.branch_state(f"wtx{k + 1}") for k in range(n)])
    v_pcc = np.array([net.node_state(f"pcc{k + 1}") for k in range(n)])
    v_str = np.array([net.node_state(f"str{k + 1}") for k in range(n)])

    farm_base = PerUnitBase(conf.s_farm_mva, conf.v_hv_kv, conf.f_base_hz)
    aliases = {"mv_bus": "mv", "offshore_hv": "hv", "grid_poc": "poc"}
    bases = {"mv_bus": PerUnitBase(conf.s_farm_mva, conf.v_mv_kv, conf.f_base_hz),
             "offshore_hv": farm_base, "grid_poc": farm_base}
    if level == FAW:
        aliases["faw_pcc"] = "pcc1"
        bases["faw_pcc"] = PerUnitBase(conf.s_farm_mva, conf.v_lv_kv, conf.f_base_hz)
    else:
        for k in range(n):
            aliases[f"string{k + 1}_pcc"] = f"pcc{k + 1}"
            bases[f"string{k + 1}_pcc"] = PerUnitBase(
                conf.s_string_mva, conf.v_lv_kv, conf.f_base_hz)

    return FarmModel(
        level=level, n=n, conf=conf, s_unit_mva=s_unit, rho=rho, gfc=gfc,
        v_ref=per_unit(us.v_ref_pu, "v_ref_pu"),
        limiter_on=bool(us.current_limiter),
        dc_gain=per_unit(us.dc_reg_gain_pu, "dc_reg_gain_pu"),
        net=net, i_lf=i_lf, i_wtx=i_wtx, v_pcc=v_pcc, v_str=v_str,
        i_thev=net.branch_state("thev"), v_poc=net.node_state("poc"),
        rcf_farm=conv.rcf * rho, lf_farm=conv.lf * rho, rf_farm=conv.rf * rho,
        x_net_design=x_net_design, bus_aliases=aliases, bus_bases=bases,
    )


# ---------------------------------------------------------------------------
# State and measurements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FarmState:
    """Full simulator state: network vector, controller states, dc links."""

    x: np.ndarray           # complex network state, farm base
    gfc: GfcState
    vdc: np.ndarray
    i_mach_bias: np.ndarray  # dispatch-matched machine-side current feed
    p_ref: np.ndarray        # unit-base active power references
    t: float = 0.0


def _measurements(model: FarmModel, x: np.ndarray):
    """Unit-base terminal measurements from the farm-base state vector."""
    i_f_farm = x[model.i_lf]
    i_t_farm = x[model.i_wtx]
    v_pcc = x[model.v_pcc] + model.rcf_farm * (i_f_farm - i_t_farm)
    v_s = x[model.v_str]
    i_f = i_f_farm * model.rho
    i_t = i_t_farm * model.rho
    return i_f, i_t, v_pcc, v_s


def step(model: FarmModel, state: FarmState, t: float, dt: float,
         waveform: GridWaveform | None = None,
         stepper=None) -> FarmState:
    """One fixed step of the complete farm.

    Order: latch measurements, virtual rotor, excitation, rotate into the
    rotor frames, virtual-impedance reference, low-pass, current limiter,
    current control, modulation clamp, dc links, then one trapezoidal
    update of the whole electrical network with the commands held over
    the step. The grid source is evaluated at both step ends; source
    discontinuities dated inside the step apply from the next step.
    """
    if waveform is None:
        waveform = GridWaveform((), model.f_base)
    if stepper is None:
        stepper = model.stepper(dt)
    gfc = state.gfc
    pars = model.gfc

    i_f, i_t, v_pcc, v_s = _measurements(model, state.x)
    p_meas = np.real(v_pcc * np.conj(i_t))
    q_s = np.imag(v_s * np.conj(i_t))

    freeze = gfc.limited | gfc.saturated
    gfc = ctl.inertial_step(state.p_ref, p_meas, gfc, pars, dt,
                            model.omega_base, freeze=freeze)
    gfc = ctl.excitation_step(model.v_ref, np.abs(v_s), q_s, gfc, pars, dt,
                              freeze=freeze)

    rot = np.exp(-1j * gfc.theta)
    v_pcc_rot = v_pcc * rot
    i_f_rot = i_f * rot
    i_raw = ctl.virtual_impedance_currents(gfc.e_mag, v_pcc_rot, pars, gfc.omega)
    i_filt = ctl.lowpass_step(i_raw, gfc.i_ref_lpf, pars.omega_lpf, dt,
                              u_prev=gfc.i_ref_raw_prev)
    if model.limiter_on:
        i_ref, limited = ctl.limit_current(i_filt, pars.i_max)
    else:
        i_ref, limited = i_filt, np.zeros(model.n, dtype=bool)
    v_cmd, gfc = ctl.current_control_step(i_ref, i_f_rot, v_pcc_rot, gfc.omega,
                                          gfc, pars, dt, freeze=gfc.saturated)
    v_out, saturated = ctl.modulation_clamp(v_cmd, state.vdc, pars.kmod)
    gfc = replace(gfc, i_ref_lpf=i_filt, i_ref_raw_prev=i_raw,
                  limited=np.asarray(limited), saturated=np.asarray(saturated))
    v_vsc = v_out / rot  # back to the synchronous frame

    # dc links: machine side feeds the dispatch plus proportional regulation
    p_conv = np.real(v_vsc * np.conj(i_f))
    i_mach = state.i_mach_bias + model.dc_gain * (model.vdc_ref - state.vdc)
    vdc1 = _dc_step(state.vdc, p_conv, i_mach, model.conf.converter.cdc, dt)

    u0, u1 = waveform.eval_pair(t, dt)
    u_mid = np.empty(model.n + 1, dtype=complex)
    u_mid[:model.n] = v_vsc
    u_mid[model.n] = 0.5 * (u0 + u1)
    x1 = stepper.step(state.x, u_mid)

    return FarmState(x=x1, gfc=gfc, vdc=vdc1, i_mach_bias=state.i_mach_bias,
                     p_ref=state.p_ref, t=t + dt)


def _dc_step(vdc, p_conv, i_mach, cdc, dt):
    """Vectorized trapezoidal dc-link update with one fixed-point pass."""
    def f(v):
        return (i_mach - p_conv / v) / cdc

    pred = np.maximum(vdc + dt * f(vdc), 1e-6)
    v1 = vdc + 0.5 * dt * (f(vdc) + f(pred))
    if np.any(v1 <= 0.1):
        k = int(np.argmin(v1))
        raise DcCollapseError(
            f"dc link of unit {k + 1} collapsed to {v1[k]:.4f} pu (<= 0.1 pu)")
    return v1


# ---------------------------------------------------------------------------
# Steady-state initialization
# ---------------------------------------------------------------------------

def init_steady_state(model: FarmModel, dispatch_pu) -> FarmState:
    """Newton power flow plus controller back-solve.

    Unknowns are each unit's internal voltage magnitude and angle; at the
    solution every unit delivers its dispatch at the filter-capacitor bus
    and the excitation droop equation holds at its 66 kV terminal. All
    integrator derivatives are then zero by construction, so a zero-event
    run stays put.
    """
    disp = _unit_array(dispatch_pu, model.n, "dispatch")
    n = model.n
    pars = model.gfc
    inet = model.init_network()
    rho = model.rho
    v_thev = 1.0 + 0.0j

    lf_names = [f"lf{k + 1}" for k in range(n)]
    wtx_names = [f"wtx{k + 1}" for k in range(n)]
    pcc_names = [f"pcc{k + 1}" for k in range(n)]
    str_names = [f"str{k + 1}" for k in range(n)]

    def solve(unknowns):
        delta = unknowns[:n]
        e = unknowns[n:]
        src = {f"vsc{k + 1}": e[k] * np.exp(1j * delta[k]) for k in range(n)}
        src["grid"] = v_thev
        node_v, branch_i = inet.phasor_solve(1.0, src)
        return node_v, branch_i

    def residual(unknowns):
        node_v, branch_i = solve(unknowns)
        r = np.empty(2 * n)
        for k in range(n):
            i_t = branch_i[wtx_names[k]] * rho
            v_pcc = node_v[pcc_names[k]]
            v_s = node_v[str_names[k]]
            kq = np.broadcast_to(np.asarray(pars.kq, dtype=float), (n,))[k]
            vref = model.v_ref[k]
            r[k] = np.real(v_pcc * np.conj(i_t)) - disp[k]
            r[n + k] = abs(v_s) + kq * np.imag(v_s * np.conj(i_t)) - vref
        return r

    unk = np.concatenate([0.5 * disp * min(model.x_net_design, 1.0), np.full(n, 1.02)])
    r = residual(unk)
    for _ in range(60):
        if np.max(np.abs(r)) < 1e-12:
            break
        jac = np.empty((2 * n, 2 * n))
        for j in range(2 * n):
            pert = unk.copy()
            eps = 1e-7
            pert[j] += eps
            jac[:, j] = (residual(pert) - r) / eps
        try:
            dx = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}",
                                 residuals=r) from exc
        lam = 1.0
        for _ in range(8):
            trial = unk - lam * dx
            r_trial = residual(trial)
            if np.max(np.abs(r_trial)) < np.max(np.abs(r)) or lam < 1e-3:
                break
            lam *= 0.5
        unk, r = trial, r_trial
    else:
        raise PowerFlowError(
            f"power flow did not converge (max residual {np.max(np.abs(r)):.3e})",
            residuals=r)

    node_v, branch_i = solve(unk)
    vmags = np.abs(np.array(list(node_v.values())))
    if vmags.min() < 0.9 or vmags.max() > 1.1:
        raise PowerFlowError(
            f"infeasible dispatch: bus voltages span [{vmags.min():.3f}, "
            f"{vmags.max():.3f}] pu outside [0.9, 1.1]", residuals=r)

    delta, e = unk[:n], unk[n:]
    x0 = model.net.phasor_state(node_v, branch_i)

    i_f_farm = np.array([branch_i[nm] for nm in lf_names])
    v_pcc = np.array([node_v[nm] for nm in pcc_names])
    i_f_unit = i_f_farm * rho
    v_vsc = v_pcc + (model.rf_farm + 1j * model.lf_farm) * i_f_farm
    rot = np.exp(-1j * delta)
    i_f_rot = i_f_unit * rot
    i_ref = (e - v_pcc * rot) / (np.asarray(pars.rv) + 1j * np.asarray(pars.lv))

    i_max = np.broadcast_to(np.asarray(pars.i_max, dtype=float), (n,))
    if model.limiter_on and np.any(np.abs(i_ref) > i_max):
        raise PowerFlowError(
            "dispatch needs steady current above the limiter setting", residuals=r)

    gfc = GfcState(
        theta=delta.copy(), omega=np.ones(n), inertia_int=np.zeros(n),
        p_err_prev=np.zeros(n), e_mag=e.copy(), voltage_int=e.copy(),
        v_err_prev=np.zeros(n), i_ref_lpf=i_ref.copy(),
        i_ref_raw_prev=i_ref.copy(),
        cc_int=(v_vsc * rot - v_pcc * rot - 1j * np.asarray(pars.lf) * i_f_rot),
        i_err_prev=np.zeros(n, dtype=complex),
        limited=np.zeros(n, dtype=bool), saturated=np.zeros(n, dtype=bool),
    )
    p_conv = np.real(v_vsc * np.conj(i_f_farm)) * rho
    vdc0 = np.full(n, model.vdc_ref)
    return FarmState(x=x0, gfc=gfc, vdc=vdc0, i_mach_bias=p_conv / vdc0,
                     p_ref=disp, t=0.0)


# ---------------------------------------------------------------------------
# Time series container and scenario runner
# ---------------------------------------------------------------------------

UNIT_QTYS = ("p_pu", "q_pu", "v_pu", "i_pu", "vdc_pu", "theta_rad",
             "omega_pu", "limited")


@dataclass
class TimeSeries:
    """Uniformly sampled run outputs with flat named channels.

    Per-unit channels are named ``unit<k>_<qty>`` (e.g. ``unit3_p_pu``,
    unit-base pu), farm-level channels ``farm_p_pu`` / ``farm_q_pu``
    (420 MVA base at the 400 kV connection point). `limiter_intervals`
    lists (t_on, t_off) engagement windows per unit at full step rate.
    """

    t: np.ndarray
    channels: dict
    meta: dict
    limiter_intervals: list = field(default_factory=list)

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise ChannelMissingError(
                f"channel '{name}' not in {sorted(self.channels)}") from None

    @property
    def n_units(self) -> int:
        return int(self.meta.get("n_units", 1))

    def unit_matrix(self, qty: str) -> np.ndarray:
        """(n_samples, n_units) matrix of one per-unit quantity."""
        cols = [self.channel(f"unit{k + 1}_{qty}") for k in range(self.n_units)]
        return np.stack(cols, axis=1)


def run(model: FarmModel, scenario: Scenario,
        collect_balance: bool = False) -> TimeSeries:
    """Simulate a scenario to t_end and collect decimated channels.

    Aborts (dc collapse, numerical divergence) re-raise with the partial
    TimeSeries attached. With `collect_balance` the per-step discrete
    energy-balance residual of the network is tracked (worst case goes to
    ``meta['max_balance_residual_pu']``).
    """
    wf = GridWaveform(scenario.events, model.f_base)
    dt = scenario.dt_s
    n_steps = int(round(scenario.t_end_s / dt))
    decim = scenario.output_decimation
    state = init_steady_state(model, dispatch_for_level(
        scenario.dispatch_pu, model.level, model.conf.n_strings))
    stepper = model.stepper(dt)
    n = model.n

    n_samples = len(range(0, n_steps, decim)) + 1
    t_axis = np.empty(n_samples)
    data = {q: np.empty((n_samples, n)) for q in UNIT_QTYS}
    farm_p = np.empty(n_samples)
    farm_q = np.empty(n_samples)

    lim_prev = np.zeros(n, dtype=bool)
    lim_open = [None] * n
    intervals: list[list[tuple[float, float]]] = [[] for _ in range(n)]
    max_resid = 0.0

    def record(idx, st, t):
        i_f, i_t, v_pcc, v_s = _measurements(model, st.x)
        s = v_pcc * np.conj(i_t)
        t_axis[idx] = t
        data["p_pu"][idx] = s.real
        data["q_pu"][idx] = s.imag
        data["v_pu"][idx] = np.abs(v_pcc)
        data["i_pu"][idx] = np.abs(i_f)
        data["vdc_pu"][idx] = st.vdc
        theta_g = wf(t)[1]
        data["theta_rad"][idx] = st.gfc.theta - theta_g
        data["omega_pu"][idx] = st.gfc.omega
        data["limited"][idx] = st.gfc.limited.astype(float)
        v_poc = st.x[model.v_poc]
        s_farm = v_poc * np.conj(-st.x[model.i_thev])
        farm_p[idx] = s_farm.real
        farm_q[idx] = s_farm.imag

    def finalize(n_recorded):
        for k in range(n):
            if lim_open[k] is not None:
                intervals[k].append((lim_open[k], n_steps * dt))
        channels = {}
        for q in UNIT_QTYS:
            for k in range(n):
                channels[f"unit{k + 1}_{q}"] = data[q][:n_recorded, k].copy()
        channels["farm_p_pu"] = farm_p[:n_recorded].copy()
        channels["farm_q_pu"] = farm_q[:n_recorded].copy()
        meta = {
            "scenario": scenario.name, "level": model.level, "n_units": n,
            "dt_s": dt, "t_end_s": scenario.t_end_s, "decimation": decim,
            "f_base_hz": model.f_base, "s_unit_mva": model.s_unit_mva,
            "s_farm_mva": model.s_farm, "dispatch_pu": list(map(float, state.p_ref)),
            "events": [_event_dict(ev) for ev in scenario.events],
            "rocof_intervals": wf.rocof_intervals(),
            "limiter_enabled": model.limiter_on,
        }
        if collect_balance:
            meta["max_balance_residual_pu"] = max_resid
        return TimeSeries(t=t_axis[:n_recorded].copy(), channels=channels,
                          meta=meta, limiter_intervals=intervals)

    idx = 0
    try:
        for k_step in range(n_steps):
            t = k_step * dt
            if k_step % decim == 0:
                record(idx, state, t)
                idx += 1
            x_prev = state.x
            state = step(model, state, t, dt, waveform=wf, stepper=stepper)
            if collect_balance:
                u0, u1 = wf.eval_pair(t, dt)
                # reconstruct the input used by the step for the residual
                u_mid = np.empty(n + 1, dtype=complex)
                u_mid[:n] = _vsc_from_states(model, x_prev, state.x, dt, stepper)
                u_mid[n] = 0.5 * (u0 + u1)
                resid = abs(stepper.balance_residual(x_prev, state.x, u_mid))
                max_resid = max(max_resid, resid)
            changed = state.gfc.limited != lim_prev
            if changed.any():
                t_next = (k_step + 1) * dt
                for k in np.nonzero(changed)[0]:
                    if state.gfc.limited[k]:
                        lim_open[k] = t_next
                    else:
                        intervals[k].append((lim_open[k], t_next))
                        lim_open[k] = None
                lim_prev = state.gfc.limited.copy()
            if k_step % 256 == 0:
                stepper.check(state.x)
        record(idx, state, n_steps * dt)
        idx += 1
    except SimulationAbort as exc:
        partial = finalize(idx)
        raise type(exc)(str(exc), partial=partial) from None
    return finalize(idx)


def _vsc_from_states(model, x0, x1, dt, stepper):
    """Recover the converter source voltages a step actually applied.

    Inverts the trapezoidal update per lf branch row: cheaper than
    re-running the control chain and exact by construction.
    """
    xm = 0.5 * (x0 + x1)
    dxdt = (x1 - x0) / dt
    rows = model.i_lf
    g = model.omega_base / model.lf_farm
    # row: di/dt = g*(u - v_pcc_bus) - g*(r + jx) i  =>  u = di/dt/g + ...
    v_pcc = xm[model.v_pcc] + model.rcf_farm * (xm[model.i_lf] - xm[model.i_wtx])
    i_m = xm[rows]
    return dxdt[rows] / g + v_pcc + (model.rf_farm + 1j * model.lf_farm) * i_m


def _event_dict(ev: GridEvent) -> dict:
    from .network import PhaseJump, RocofRamp, VoltageStep
    if isinstance(ev, PhaseJump):
        return {"type": "phase_jump", "t_s": ev.t_s, "degrees": ev.degrees}
    if isinstance(ev, RocofRamp):
        return {"type": "rocof", "t_start_s": ev.t_start_s,
                "hz_per_s": ev.hz_per_s, "f_end_hz": ev.f_end_hz}
    if isinstance(ev, VoltageStep):
        return {"type": "v_step", "t_s": ev.t_s, "pu": ev.pu}
    raise TypeError(f"unknown event {ev!r}")
