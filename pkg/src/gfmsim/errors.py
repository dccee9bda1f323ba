"""Exception types raised by the simulator.

Simulation aborts (`SimulationAbort` subclasses) carry the partial time
series collected up to the failure so scenario runs can be post-mortemed.
"""
from __future__ import annotations


class GfmsimError(Exception):
    """Base class for all package errors."""


class InvalidBaseError(GfmsimError, ValueError):
    """A per-unit base with a non-positive power, voltage or frequency."""


class DegenerateAdmittanceError(GfmsimError, ValueError):
    """Virtual impedance with zero resistance and zero reactance."""


class UnstableOperatingPointError(GfmsimError, ValueError):
    """Damping design requested at a point with no synchronizing torque."""


class SchemaError(GfmsimError, ValueError):
    """Scenario file or event list violates the input schema."""


class ChannelMissingError(GfmsimError, KeyError):
    """A required time-series channel is absent."""


class WindowError(GfmsimError, ValueError):
    """An analysis window falls outside the interval it must lie in."""


class AxisMismatchError(GfmsimError, ValueError):
    """Two time series with incompatible time axes were compared."""


class PowerFlowError(GfmsimError, RuntimeError):
    """Steady-state initialization failed (infeasible dispatch).

    `residuals` holds the last Newton residual vector for diagnosis.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class SimulationAbort(GfmsimError, RuntimeError):
    """A time-domain run stopped before `t_end`.

    `partial` is the TimeSeries collected so far (may be None when the
    abort happens before the first sample).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NumericalDivergenceError(SimulationAbort):
    """State norm blew up; message names the worst offending state."""


class DcCollapseError(SimulationAbort):
    """A dc-link voltage fell below the collapse threshold (0.1 pu)."""
