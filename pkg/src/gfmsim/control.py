"""Grid-forming converter control chain.

One converter is controlled as a voltage source behind a virtual
impedance, synchronized through its measured output power:

* virtual rotor: PI on the power error, integral gain 1/(2H), proportional
  gain kd setting the damping of the power swing;
* excitation: PI holding the medium-voltage bus at its reference with a
  reactive-power droop, output is the internal voltage magnitude;
* virtual impedance: the internal/terminal voltage difference over the
  virtual reactor admittance gives the current reference (quasi-static,
  no reactor state);
* first-order low pass on the reference, then a magnitude limiter that
  rescales the vector to i_max preserving its angle;
* dq decoupled PI current control with terminal-voltage feed-forward;
* modulation clamp |v| <= kmod * vdc.

All step functions are pure: they take a `GfcState`, return a new one,
and broadcast over numpy arrays so the seven string converters of a farm
run as one vectorized unit. dq vectors are complex (d + jq) in each
converter's own rotor frame unless stated otherwise. Angles are kept
relative to the synchronous reference frame, so a converter at exactly
nominal speed has a constant `theta`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateAdmittanceError, UnstableOperatingPointError

OMEGA_BASE_50HZ = 2.0 * math.pi * 50.0

E_MAG_MAX = 1.5  # excitation output ceiling, pu


@dataclass(frozen=True)
class GfcParams:
    """Controller constants of one grid-forming converter (unit base pu).

    `lf` duplicates the converter filter inductance for the decoupling
    terms of the current controller. `kd` has no universal default: use
    `design_damping` to derive it from a target damping ratio. The gain
    defaults are calibration choices for the benchmark turbine, not given
    quantities: a 150 rad/s current loop (faster loops destabilize the
    algebraic virtual-admittance path against this weak network) and a
    30 rad/s voltage loop.
    """

    h: float = 4.0
    kd: float = 0.02
    lv: float = 0.25
    rv: float = 0.0125
    i_max: float = 1.2
    kq: float = 0.05
    kpv: float = 0.2
    kiv: float = 30.0
    kpc: float = 0.0504
    kic: float = 0.7918
    omega_lpf: float = 100.0
    kmod: float = math.sqrt(3.0) / 2.0
    lf: float = 0.1055776

    def __post_init__(self):
        if not np.all(np.asarray(self.h) > 0.0):
            raise ValueError("inertia constant h must be positive")
        if not np.all(np.asarray(self.i_max) > 0.0):
            raise ValueError("i_max must be positive")
        if not np.all(np.asarray(self.lv) > 0.0):
            raise ValueError("virtual inductance lv must be positive")
        for name in ("kd", "kq", "kpv", "kiv", "kpc", "kic", "omega_lpf"):
            if not np.all(np.asarray(getattr(self, name)) >= 0.0):
                raise ValueError(f"{name} must be >= 0")
        if not np.all((np.asarray(self.kmod) > 0.0) & (np.asarray(self.kmod) <= 1.0)):
            raise ValueError("kmod must lie in (0, 1]")


def current_loop_gains(lf: float, rf: float, bandwidth_rad_s: float,
                       omega_base: float = OMEGA_BASE_50HZ) -> tuple[float, float]:
    """PI gains placing the closed current loop at `bandwidth_rad_s`.

    Pole-zero cancellation of the filter pole: kp = w*lf/wb, ki = w*rf,
    giving a first-order closed loop when decoupling and feed-forward
    are exact.
    """
    return bandwidth_rad_s * lf / omega_base, bandwidth_rad_s * rf


@dataclass(frozen=True)
class GfcState:
    """Integrator and rotor states of one (or a vector of) converter(s).

    `theta` is the virtual rotor angle measured in the synchronous
    reference frame, unwrapped (pole slips accumulate multiples of 2*pi);
    wrap only for display. `limited` / `saturated` are the limiter and
    modulation-clamp engagement flags of the previous evaluation, used to
    freeze integrators (anti-windup).
    """

    theta: np.ndarray
    omega: np.ndarray
    inertia_int: np.ndarray
    p_err_prev: np.ndarray
    e_mag: np.ndarray
    voltage_int: np.ndarray
    v_err_prev: np.ndarray
    i_ref_lpf: np.ndarray      # complex, rotor frame
    i_ref_raw_prev: np.ndarray  # complex, rotor frame
    cc_int: np.ndarray          # complex, rotor frame
    i_err_prev: np.ndarray      # complex, rotor frame
    limited: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=bool))
    saturated: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=bool))

    @classmethod
    def zeros(cls, n: int = 1) -> "GfcState":
        z = np.zeros(n)
        zc = np.zeros(n, dtype=complex)
        return cls(theta=z.copy(), omega=np.ones(n), inertia_int=z.copy(),
                   p_err_prev=z.copy(), e_mag=np.ones(n), voltage_int=np.ones(n),
                   v_err_prev=z.copy(), i_ref_lpf=zc.copy(),
                   i_ref_raw_prev=zc.copy(), cc_int=zc.copy(),
                   i_err_prev=zc.copy(), limited=np.zeros(n, dtype=bool),
                   saturated=np.zeros(n, dtype=bool))


def wrap_angle(theta):
    """Wrap an angle to (-pi, pi] for reporting."""
    return np.pi - np.mod(np.pi - np.asarray(theta), 2.0 * np.pi)


# ---------------------------------------------------------------------------
# Control chain steps
# ---------------------------------------------------------------------------

def inertial_step(p_ref, p_meas, state: GfcState, params: GfcParams, dt: float,
                  omega_base: float = OMEGA_BASE_50HZ, freeze=None) -> GfcState:
    """Advance the virtual rotor one step.

    d_omega = kd*(p_ref - p_meas) + integral of (p_ref - p_meas)/(2H),
    trapezoidal. `theta` (relative to the synchronous frame) advances by
    omega_base*(omega - 1)*dt, also trapezoidal. `freeze` holds the
    integrator (anti-windup during current limiting); the proportional
    path stays live.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    err = np.asarray(p_ref - p_meas, dtype=float)
    gain = dt / (4.0 * np.asarray(params.h))  # trapezoid of err/(2H)
    z_new = state.inertia_int + gain * (err + state.p_err_prev)
    if freeze is not None:
        z_new = np.where(freeze, state.inertia_int, z_new)
    omega_new = 1.0 + params.kd * err + z_new
    theta_new = state.theta + omega_base * dt * (0.5 * (omega_new + state.omega) - 1.0)
    return replace(state, theta=theta_new, omega=omega_new,
                   inertia_int=z_new, p_err_prev=err)


def excitation_step(v_ref, v_meas, q_meas, state: GfcState, params: GfcParams,
                    dt: float, freeze=None) -> GfcState:
    """PI voltage control with reactive droop, output clamped to [0, 1.5].

    Error is v_ref - kq*q_meas - v_meas. The integrator holds while
    `freeze` is set or while the output sits on a clamp pushing further
    out (conditional anti-windup).
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    err = np.asarray(v_ref - params.kq * np.asarray(q_meas) - v_meas, dtype=float)
    step = 0.5 * params.kiv * dt * (err + state.v_err_prev)
    if freeze is not None:
        step = np.where(freeze, 0.0, step)
    vint = state.voltage_int + step
    e_raw = params.kpv * err + vint
    clipped = (e_raw > E_MAG_MAX) | (e_raw < 0.0)
    vint = np.where(clipped, state.voltage_int, vint)
    e_new = np.clip(params.kpv * err + vint, 0.0, E_MAG_MAX)
    return replace(state, e_mag=e_new, voltage_int=vint, v_err_prev=err)


def virtual_impedance_currents(e_dq, v_pcc_dq, params: GfcParams, omega):
    """Current reference (e - v_pcc) / (rv + j*omega*lv), rotor frame.

    Quasi-static: the virtual reactor has no state of its own. `e_dq`
    may be the scalar internal magnitude (d-axis aligned by convention)
    or a full complex vector.
    """
    z = np.asarray(params.rv) + 1j * np.asarray(omega) * np.asarray(params.lv)
    if np.any(np.abs(z) == 0.0):
        raise DegenerateAdmittanceError("virtual impedance rv = lv = 0")
    return (np.asarray(e_dq, dtype=complex) - v_pcc_dq) / z


def lowpass_step(u, state_y, omega_lpf, dt: float, u_prev=None):
    """Bilinear step of y' = omega_lpf*(u - y). `u_prev` defaults to u."""
    if not dt > 0.0 or not np.all(np.asarray(omega_lpf) > 0.0):
        raise ValueError("dt and omega_lpf must be positive")
    if u_prev is None:
        u_prev = u
    a = 0.5 * np.asarray(omega_lpf) * dt
    return ((1.0 - a) * state_y + a * (u + u_prev)) / (1.0 + a)


def limit_current(i_ref, i_max):
    """Clamp the reference magnitude to i_max, preserving its angle.

    Returns (vector, limited_flag). Below the limit the vector is passed
    through unchanged (bit-identical), making the operation idempotent.
    """
    if not np.all(np.asarray(i_max) > 0.0):
        raise ValueError("i_max must be positive")
    mag = np.abs(i_ref)
    limited = mag > i_max
    scale = np.where(limited, np.asarray(i_max) / np.where(mag == 0.0, 1.0, mag), 1.0)
    out = np.where(limited, i_ref * scale, i_ref)
    if np.isscalar(i_ref) or np.ndim(i_ref) == 0:
        return complex(out), bool(limited)
    return out, limited


def current_control_step(i_ref, i_meas, v_pcc, omega, state: GfcState,
                         params: GfcParams, dt: float, freeze=None):
    """dq decoupled PI current control -> voltage command (rotor frame).

    v_cmd = PI(i_ref - i_meas) + v_pcc + j*omega*lf*i_meas. The cross
    coupling uses the converter filter inductance; integrators hold while
    `freeze` (modulation saturation) is set. Returns (v_cmd, new_state).
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    err = np.asarray(i_ref - i_meas, dtype=complex)
    step = 0.5 * params.kic * dt * (err + state.i_err_prev)
    if freeze is not None:
        step = np.where(freeze, 0.0, step)
    ci = state.cc_int + step
    v_cmd = params.kpc * err + ci + v_pcc + 1j * np.asarray(omega) * params.lf * i_meas
    return v_cmd, replace(state, cc_int=ci, i_err_prev=err)


def modulation_clamp(v_cmd, vdc, kmod):
    """Clamp |v_cmd| to kmod*vdc preserving the angle.

    Returns (vector, saturated_flag). A zero dc link forces zero output.
    """
    limit = np.asarray(kmod) * np.maximum(np.asarray(vdc, dtype=float), 0.0)
    mag = np.abs(v_cmd)
    saturated = mag > limit
    scale = np.where(saturated, limit / np.where(mag == 0.0, 1.0, mag), 1.0)
    out = np.where(saturated, v_cmd * scale, v_cmd)
    if np.isscalar(v_cmd) or np.ndim(v_cmd) == 0:
        return complex(out), bool(saturated)
    return out, saturated


# ---------------------------------------------------------------------------
# Damping design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatingPoint:
    """Linearization point for the power swing loop."""

    e: float = 1.0
    v: float = 1.0
    x_net: float = 0.5
    delta0: float = 0.0

    @property
    def ks(self) -> float:
        """Synchronizing coefficient dP/d(delta) = e*v*cos(delta0)/x_net."""
        return self.e * self.v * math.cos(self.delta0) / self.x_net


def swing_matrix(kd: float, h: float, ks: float,
                 omega_base: float = OMEGA_BASE_50HZ) -> np.ndarray:
    """2x2 linearization of the synchronization loop, states (d_delta, z).

    d_delta' = omega_base*(-kd*ks*d_delta + z);  z' = -ks/(2h)*d_delta.
    This is the PI rotor law closed through dP = ks*d_delta.
    """
    return np.array([[-omega_base * kd * ks, omega_base],
                     [-ks / (2.0 * h), 0.0]])


def design_damping(zeta: float, h: float, op: OperatingPoint,
                   omega_base: float = OMEGA_BASE_50HZ) -> float:
    """Proportional gain kd giving the swing loop damping ratio `zeta`.

    The loop characteristic is s^2 + (omega_base*kd*ks) s
    + omega_base*ks/(2h), so kd = 2*zeta / sqrt(2*h*ks*omega_base).
    Verify against `swing_matrix` eigenvalues when in doubt.
    """
    if not 0.0 < zeta <= 2.0:
        raise ValueError(f"zeta must lie in (0, 2], got {zeta}")
    ks = op.ks
    if ks <= 0.0:
        raise UnstableOperatingPointError(
            f"synchronizing coefficient ks = {ks:.4f} <= 0 at delta0 = {op.delta0:.3f} rad")
    return 2.0 * zeta / math.sqrt(2.0 * h * ks * omega_base)
