"""Scenario file schema, loading and serialization.

Scenarios are JSON documents with unit-annotated keys (``_pu``, ``_s``,
``_hz``, ``_deg``...). Unknown keys are rejected. A scenario fully
determines a run except for the aggregation level, which the caller
picks (``faw``/``saw``/both). ``load_scenario -> scenario_to_dict ->
load_scenario`` round-trips exactly.
"""
from __future__ import annotations

import dataclasses
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import SchemaError
from .farm import (
    CableConfig,
    CollectorConfig,
    FarmConfig,
    Scenario,
    TransformerConfig,
    UnitSettings,
)
from .network import ConverterParams, PhaseJump, RocofRamp, ThevGrid, VoltageStep

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}


def _scalar_or_list(extra=None):
    base = dict(_NUM)
    if extra:
        base.update(extra)
    return {"oneOf": [base, {"type": "array", "items": base, "minItems": 1}]}


EVENT_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "type": {"const": "phase_jump"},
                "t_s": _POS,
                "degrees": _NUM,
            },
            "required": ["type", "t_s", "degrees"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "rocof"},
                "t_start_s": _POS,
                "hz_per_s": _NUM,
                "f_end_hz": _POS,
            },
            "required": ["type", "t_start_s", "hz_per_s", "f_end_hz"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "v_step"},
                "t_s": _POS,
                "pu": _POS,
            },
            "required": ["type", "t_s", "pu"],
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "farm": {
            "type": "object",
            "properties": {
                "s_farm_mva": _POS,
                "f_base_hz": _POS,
                "v_hv_kv": _POS,
                "v_mv_kv": _POS,
                "v_lv_kv": _POS,
                "n_strings": {"type": "integer", "minimum": 1},
                "wtg_per_string": {"type": "integer", "minimum": 1},
                "grid": {
                    "type": "object",
                    "properties": {
                        "scc_mva": _POS,
                        "v_kv": _POS,
                        "x_over_r_ratio": _POS,
                    },
                    "additionalProperties": False,
                },
                "hvac_cable": {
                    "type": "object",
                    "properties": {
                        "r_pu": {"type": "number", "minimum": 0},
                        "x_pu": _POS,
                        "b_pu": {"type": "number", "minimum": 0},
                        "n_sections": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
                "plant_transformer": {
                    "type": "object",
                    "properties": {
                        "r_pu": {"type": "number", "minimum": 0},
                        "x_pu": _POS,
                    },
                    "additionalProperties": False,
                },
                "string_collector": {
                    "type": "object",
                    "properties": {
                        "r_pu": {"type": "number", "minimum": 0},
                        "x_pu": _POS,
                        "b_pu": {"type": "number", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
                "converter": {
                    "type": "object",
                    "properties": {
                        "s_mva": _POS, "v_kv": _POS, "fsw_hz": _POS,
                        "kmod": _POS, "vdc_nom_pu": _POS, "lf_pu": _POS,
                        "cf_pu": _POS, "rcf_pu": {"type": "number", "minimum": 0},
                        "cdc_pu": _POS, "st_mva": _POS,
                        "rt_pu": {"type": "number", "minimum": 0}, "lt_pu": _POS,
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "units": {
            "type": "object",
            "properties": {
                "dispatch_pu": _scalar_or_list({"minimum": 0, "maximum": 1}),
                "v_ref_pu": _scalar_or_list(),
                "h_s": _scalar_or_list({"exclusiveMinimum": 0}),
                "damping_ratio": _scalar_or_list({"exclusiveMinimum": 0}),
                "kd_pu": _scalar_or_list({"minimum": 0}),
                "lv_pu": _scalar_or_list({"exclusiveMinimum": 0}),
                "rv_pu": _scalar_or_list({"minimum": 0}),
                "i_max_pu": _scalar_or_list({"exclusiveMinimum": 0}),
                "current_limiter": {"type": "boolean"},
                "kq_pu": _scalar_or_list({"minimum": 0}),
                "kpv_pu": _scalar_or_list({"minimum": 0}),
                "kiv_pu": _scalar_or_list({"minimum": 0}),
                "kpc_pu": _scalar_or_list({"minimum": 0}),
                "kic_pu": _scalar_or_list({"minimum": 0}),
                "current_bw_rad_s": _POS,
                "omega_lpf_rad_s": _scalar_or_list({"exclusiveMinimum": 0}),
                "dc_reg_gain_pu": _scalar_or_list({"minimum": 0}),
            },
            "additionalProperties": False,
        },
        "events": {"type": "array", "items": EVENT_SCHEMA},
        "solver": {
            "type": "object",
            "properties": {
                "dt_s": _POS,
                "t_end_s": _POS,
                "decimation": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "channels": {"type": "array", "items": {"type": "string"}},
                "formats": {"type": "array",
                            "items": {"enum": ["csv", "json", "png", "svg"]}},
                "plots": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def validate_dict(doc: dict) -> None:
    """Schema-check a scenario document; SchemaError on any violation."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"scenario invalid at {path}: {exc.message}") from None


def _parse_event(doc: dict):
    kind = doc["type"]
    if kind == "phase_jump":
        return PhaseJump(t_s=doc["t_s"], degrees=doc["degrees"])
    if kind == "rocof":
        return RocofRamp(t_start_s=doc["t_start_s"], hz_per_s=doc["hz_per_s"],
                         f_end_hz=doc["f_end_hz"])
    return VoltageStep(t_s=doc["t_s"], pu=doc["pu"])


_CONVERTER_KEYMAP = {
    "s_mva": "s_mva", "v_kv": "v_kv", "fsw_hz": "fsw_hz", "kmod": "kmod",
    "vdc_nom_pu": "vdc_nom", "lf_pu": "lf", "cf_pu": "cf", "rcf_pu": "rcf",
    "cdc_pu": "cdc", "st_mva": "st_mva", "rt_pu": "rt", "lt_pu": "lt",
}


def scenario_from_dict(doc: dict, name: str | None = None) -> Scenario:
    """Build a Scenario from a (validated) plain dict."""
    validate_dict(doc)
    farm_doc = dict(doc.get("farm", {}))
    grid = ThevGrid(**{{"scc_mva": "scc_mva", "v_kv": "v_kv",
                        "x_over_r_ratio": "x_over_r"}[k]: v
                       for k, v in farm_doc.pop("grid", {}).items()})
    cable = CableConfig(**farm_doc.pop("hvac_cable", {}))
    ptx = TransformerConfig(**farm_doc.pop("plant_transformer", {}))
    coll = CollectorConfig(**farm_doc.pop("string_collector", {}))
    conv_doc = farm_doc.pop("converter", {})
    conv = ConverterParams(**{_CONVERTER_KEYMAP[k]: v for k, v in conv_doc.items()})
    farm = FarmConfig(grid=grid, cable=cable, plant_tx=ptx, collector=coll,
                      converter=conv, **farm_doc)

    units_doc = dict(doc.get("units", {}))
    dispatch = units_doc.pop("dispatch_pu", 0.5)
    if "kd_pu" in units_doc and "damping_ratio" not in units_doc:
        units_doc["damping_ratio"] = None
    units = UnitSettings(**units_doc)

    solver = doc.get("solver", {})
    return Scenario(
        name=name or doc.get("name", "scenario"),
        farm=farm, units=units, dispatch_pu=dispatch,
        events=tuple(_parse_event(e) for e in doc.get("events", [])),
        dt_s=solver.get("dt_s", 5e-5),
        t_end_s=solver.get("t_end_s", 5.0),
        decimation=solver.get("decimation"),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    """Serialize a Scenario back to its JSON document form."""
    conv = sc.farm.converter
    inv_conv = {json_key: getattr(conv, attr)
                for json_key, attr in _CONVERTER_KEYMAP.items()}
    def plain(v):
        if isinstance(v, (list, tuple)):
            return [float(x) for x in v]
        return v

    units = {
        "dispatch_pu": plain(sc.dispatch_pu),
        "v_ref_pu": plain(sc.units.v_ref_pu),
        "h_s": plain(sc.units.h_s),
        "i_max_pu": plain(sc.units.i_max_pu),
        "current_limiter": sc.units.current_limiter,
        "lv_pu": plain(sc.units.lv_pu),
        "rv_pu": plain(sc.units.rv_pu),
        "kq_pu": plain(sc.units.kq_pu),
        "kpv_pu": plain(sc.units.kpv_pu),
        "kiv_pu": plain(sc.units.kiv_pu),
        "current_bw_rad_s": sc.units.current_bw_rad_s,
        "omega_lpf_rad_s": plain(sc.units.omega_lpf_rad_s),
        "dc_reg_gain_pu": plain(sc.units.dc_reg_gain_pu),
    }
    if sc.units.damping_ratio is not None:
        units["damping_ratio"] = plain(sc.units.damping_ratio)
    if sc.units.kd_pu is not None:
        units["kd_pu"] = plain(sc.units.kd_pu)
    if sc.units.kpc_pu is not None:
        units["kpc_pu"] = plain(sc.units.kpc_pu)
    if sc.units.kic_pu is not None:
        units["kic_pu"] = plain(sc.units.kic_pu)

    doc = {
        "name": sc.name,
        "farm": {
            "s_farm_mva": sc.farm.s_farm_mva,
            "f_base_hz": sc.farm.f_base_hz,
            "v_hv_kv": sc.farm.v_hv_kv,
            "v_mv_kv": sc.farm.v_mv_kv,
            "v_lv_kv": sc.farm.v_lv_kv,
            "n_strings": sc.farm.n_strings,
            "wtg_per_string": sc.farm.wtg_per_string,
            "grid": {"scc_mva": sc.farm.grid.scc_mva, "v_kv": sc.farm.grid.v_kv,
                     "x_over_r_ratio": sc.farm.grid.x_over_r},
            "hvac_cable": dataclasses.asdict(sc.farm.cable),
            "plant_transformer": dataclasses.asdict(sc.farm.plant_tx),
            "string_collector": dataclasses.asdict(sc.farm.collector),
            "converter": inv_conv,
        },
        "units": units,
        "events": [
            {"type": "phase_jump", "t_s": e.t_s, "degrees": e.degrees}
            if isinstance(e, PhaseJump) else
            {"type": "rocof", "t_start_s": e.t_start_s, "hz_per_s": e.hz_per_s,
             "f_end_hz": e.f_end_hz}
            if isinstance(e, RocofRamp) else
            {"type": "v_step", "t_s": e.t_s, "pu": e.pu}
            for e in sc.events
        ],
        "solver": {"dt_s": sc.dt_s, "t_end_s": sc.t_end_s,
                   **({"decimation": sc.decimation} if sc.decimation else {})},
    }
    validate_dict(doc)
    return doc


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{p}: not valid JSON ({exc})") from None
    return scenario_from_dict(doc, name=doc.get("name", p.stem))


def bundled_names() -> list[str]:
    """Names of the scenario files shipped with the package."""
    pkg = resources.files("gfmsim") / "scenarios"
    return sorted(f.name[:-5] for f in pkg.iterdir() if f.name.endswith(".json"))


def load_bundled(name: str) -> Scenario:
    """Load a bundled scenario by name (with or without .json)."""
    if not name.endswith(".json"):
        name += ".json"
    pkg = resources.files("gfmsim") / "scenarios" / name
    doc = json.loads(pkg.read_text())
    return scenario_from_dict(doc, name=doc.get("name", name[:-5]))
