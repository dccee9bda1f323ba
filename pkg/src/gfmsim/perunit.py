"""Per-unit bases and dq reference-frame utilities.

Conventions used throughout the package:

* dq pairs are carried either as `DqVector` (API level) or packed as
  complex numbers z = d + 1j*q (everything numerical). Quantities are
  RMS-scaled so a 1.0 pu balanced voltage has |z| = 1.
* Reactances and susceptances are stored in pu at the base frequency;
  time constants are recovered through omega = 2*pi*f_base.
* Power follows p + jq = v * conj(i) with currents positive out of a
  source.
* `rotate_frame(v, a)` multiplies by exp(-1j*a): it maps a vector into a
  frame that LEADS the current one by angle `a`. The d axis of each
  converter frame is aligned with that converter's internal voltage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidBaseError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PerUnitBase:
    """A power/voltage/frequency base triple.

    Parameters
    ----------
    s_mva : three-phase apparent power base [MVA]
    v_kv : line-line voltage base [kV]
    f_hz : frequency base [Hz]
    """

    s_mva: float
    v_kv: float
    f_hz: float = 50.0

    def __post_init__(self):
        for name in ("s_mva", "v_kv", "f_hz"):
            if not getattr(self, name) > 0.0:
                raise InvalidBaseError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def z_ohm(self) -> float:
        """Base impedance V^2/S in ohms."""
        return self.v_kv**2 / self.s_mva * 1e3

    @property
    def omega(self) -> float:
        """Base angular frequency in rad/s."""
        return TWO_PI * self.f_hz

    @property
    def i_ka(self) -> float:
        """Base current S/(sqrt(3) V) in kA."""
        return self.s_mva / (math.sqrt(3.0) * self.v_kv)


def change_base(z_pu, from_base: PerUnitBase, to_base: PerUnitBase):
    """Re-express a per-unit impedance on another base.

    z_to = z_from * (S_to/S_from) * (V_from/V_to)^2. With matching voltage
    bases this is the plain power-base rescale; an explicit transformer
    ratio is expressed by giving the two bases their own voltage levels.
    Accepts scalars or arrays, real or complex.
    """
    ratio = (to_base.s_mva / from_base.s_mva) * (from_base.v_kv / to_base.v_kv) ** 2
    return z_pu * ratio


@dataclass(frozen=True)
class DqVector:
    """A direct/quadrature pair in a named rotating reference frame."""

    d: float
    q: float
    frame: str | None = None

    @classmethod
    def from_complex(cls, z: complex, frame: str | None = None) -> "DqVector":
        return cls(float(np.real(z)), float(np.imag(z)), frame)

    def to_complex(self) -> complex:
        return complex(self.d, self.q)

    @property
    def magnitude(self) -> float:
        return math.hypot(self.d, self.q)


ComplexLike = Union[complex, np.ndarray]


def rotate_frame(v, delta_theta, frame: str | None = None):
    """Rotate a dq vector into a frame leading the current one by `delta_theta`.

    Treats the vector as d + jq and multiplies by exp(-1j*delta_theta).
    Total function: accepts `DqVector` (returned as `DqVector`, with the
    optional new `frame` label) or complex scalars/arrays.
    """
    if isinstance(v, DqVector):
        z = v.to_complex() * np.exp(-1j * delta_theta)
        return DqVector.from_complex(z, frame if frame is not None else v.frame)
    return v * np.exp(-1j * delta_theta)


def magnitude_angle(v):
    """Magnitude and angle (atan2(q, d)) of a dq vector.

    The angle of the zero vector is defined as 0 (numpy convention).
    """
    if isinstance(v, DqVector):
        v = v.to_complex()
    return np.abs(v), np.angle(v)
