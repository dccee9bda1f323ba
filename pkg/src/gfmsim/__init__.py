"""gfmsim: dynamic dq-frame simulation of grid-forming wind farms.

The package models a 420 MVA offshore wind farm whose turbines run
grid-forming (virtual synchronous) control, at two aggregation levels: a
single full-rating converter ("faw") and one vectorized converter per
string ("saw"). It ships a scenario engine for frequency ramps and grid
phase jumps, current-limit / loss-of-synchronism diagnostics, impedance
scans and a small CLI (``gfmsim run|scan|compare``).
"""
from .analysis import (
    ImpedanceScan,
    LosReport,
    TraceComparison,
    compare_traces,
    detect_los,
    inertial_power,
    scan_impedance,
)
from .control import (
    GfcParams,
    GfcState,
    OperatingPoint,
    current_control_step,
    current_loop_gains,
    design_damping,
    excitation_step,
    inertial_step,
    limit_current,
    lowpass_step,
    modulation_clamp,
    swing_matrix,
    virtual_impedance_currents,
    wrap_angle,
)
from .farm import (
    FAW,
    SAW,
    CableConfig,
    CollectorConfig,
    FarmConfig,
    FarmModel,
    FarmState,
    Scenario,
    TimeSeries,
    TransformerConfig,
    UnitSettings,
    build_farm,
    dispatch_for_level,
    init_steady_state,
    run,
    step,
)
from .network import (
    Branch,
    ConverterParams,
    GridWaveform,
    LinearNetwork,
    PhaseJump,
    PiSection,
    PlantState,
    RocofRamp,
    Shunt,
    ThevGrid,
    VoltageStep,
    aggregate_collector,
    build_hvac_cable,
    dc_link_step,
    grid_waveform,
    plant_step,
)
from .perunit import DqVector, PerUnitBase, change_base, magnitude_angle, rotate_frame
from .scenario import (
    bundled_names,
    load_bundled,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

__version__ = "0.1.0"
