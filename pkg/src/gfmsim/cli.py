"""Command-line entry point: run scenarios, scan impedances, compare runs.

Subcommands
-----------
run      simulate a scenario at one or both aggregation levels, writing
         timeseries.csv + run_summary.json (+ optional plots) per level
scan     frequency scan of the passive network at a named bus
compare  divergence metrics between the outputs of two run directories

Exit codes: 0 success, 2 schema/usage error, 3 simulation abort
(dc collapse or divergence; partial results are still written), 4 I/O
error. Failures also emit a machine-readable JSON object on stderr.
``GFMSIM_THREADS`` caps the worker processes used for paired runs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .errors import GfmsimError, SchemaError, SimulationAbort
from .farm import FAW, SAW, Scenario, TimeSeries, build_farm, run as run_farm
from .scenario import bundled_names, load_bundled, load_scenario

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_SIM = 3
EXIT_IO = 4

_FLOAT_FMT = "%.17g"  # shortest exact round-trip not needed; 17 digits are


# ---------------------------------------------------------------------------
# Result file formats
# ---------------------------------------------------------------------------

def write_timeseries_csv(ts: TimeSeries, path) -> None:
    """t_s column followed by every channel, 17 significant digits."""
    names = sorted(ts.channels)
    cols = [ts.t] + [ts.channels[n] for n in names]
    header = ",".join(["t_s"] + names)
    data = np.column_stack(cols)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, data, fmt=_FLOAT_FMT, delimiter=",")


def read_timeseries_csv(path) -> TimeSeries:
    """Rebuild a TimeSeries (channels + inferred metadata) from a CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header[0] != "t_s":
        raise SchemaError(f"{path}: first column must be t_s")
    channels = {name: data[:, i].copy() for i, name in enumerate(header) if i > 0}
    units = {int(n.split("_")[0][4:]) for n in channels if n.startswith("unit")}
    meta = {"n_units": max(units) if units else 0, "source": str(path)}
    return TimeSeries(t=data[:, 0].copy(), channels=channels, meta=meta)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj]
    return obj


def write_summary_json(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(_to_jsonable(summary), indent=2,
                                     sort_keys=True) + "\n")


def _error_json(code: int, exc: Exception) -> int:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc),
                         "exit_code": code}}
    print(json.dumps(payload), file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# Summaries and plots
# ---------------------------------------------------------------------------

def summarize_run(ts: TimeSeries) -> dict:
    """LOS report, limiter intervals and (when applicable) inertial power."""
    los = analysis.detect_los(ts)
    summary = {
        "level": ts.meta.get("level"),
        "t_end_s": float(ts.t[-1]),
        "los": {
            "any": los.any_slip,
            "units": [{
                "unit": u.unit, "slips": u.slips,
                "first_slip_s": u.first_slip_s,
                "max_excursion_rad": u.max_excursion_rad,
                "limiter_intervals": list(u.limiter_intervals),
            } for u in los.units],
        },
        "final": {
            "farm_p_pu": float(ts.channel("farm_p_pu")[-1]),
            "farm_q_pu": float(ts.channel("farm_q_pu")[-1]),
        },
    }
    if ts.meta.get("rocof_intervals"):
        vals = []
        for k in range(1, ts.n_units + 1):
            try:
                vals.append(analysis.inertial_power(ts, channel=f"unit{k}_p_pu"))
            except GfmsimError:
                pass
        if vals:
            summary["inertial_power_pu"] = float(np.mean(vals))
    return summary


def plot_run(ts: TimeSeries, out_dir: Path, fmt: str = "png") -> list[Path]:
    """Static per-run plots: powers, dc-link voltages, angles, currents."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    made = []
    panels = [
        ("p_pu", "active power [pu]"),
        ("vdc_pu", "dc-link voltage [pu]"),
        ("theta_rad", "rotor angle rel. grid [rad]"),
        ("i_pu", "filter current [pu]"),
    ]
    fig, axes = plt.subplots(len(panels), 1, sharex=True, figsize=(8, 10))
    for ax, (qty, label) in zip(axes, panels):
        for k in range(1, ts.n_units + 1):
            ax.plot(ts.t, ts.channel(f"unit{k}_{qty}"), label=f"unit {k}", lw=0.9)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].plot(ts.t, ts.channel("farm_p_pu"), "k--", lw=1.2, label="farm")
    axes[0].legend(fontsize=7, ncol=4)
    axes[-1].set_xlabel("t [s]")
    fig.suptitle(f"{ts.meta.get('scenario', '')} [{ts.meta.get('level', '')}]")
    fig.tight_layout()
    p = out_dir / f"run.{fmt}"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    made.append(p)
    return made


def plot_scan(scan, out_dir: Path, fmt: str = "png") -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    ax1.loglog(scan.f_hz, np.abs(scan.z_pu))
    ax1.set_ylabel("|Z| [pu]")
    ax1.grid(which="both", alpha=0.3)
    ax2.semilogx(scan.f_hz, np.degrees(np.angle(scan.z_pu)))
    ax2.set_ylabel("angle(Z) [deg]")
    ax2.set_xlabel("f [Hz]")
    ax2.grid(which="both", alpha=0.3)
    fig.suptitle(f"driving-point impedance at {scan.bus} "
                 f"({scan.base.s_mva:g} MVA base)")
    fig.tight_layout()
    p = out_dir / f"impedance_{scan.bus}.{fmt}"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    return p


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _load_scenario_arg(arg: str) -> Scenario:
    p = Path(arg)
    if p.exists():
        return load_scenario(p)
    if arg in bundled_names() or arg + ".json" in [n + ".json" for n in bundled_names()]:
        return load_bundled(arg)
    raise SchemaError(f"scenario '{arg}' is neither a file nor one of the "
                      f"bundled scenarios {bundled_names()}")


def _run_one_level(scenario: Scenario, level: str, out_dir: Path,
                   plots: bool) -> tuple[dict, TimeSeries | None]:
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_farm(scenario, level)
    partial_exc = None
    try:
        ts = run_farm(model, scenario)
    except SimulationAbort as exc:
        ts = exc.partial
        partial_exc = exc
    if ts is not None:
        write_timeseries_csv(ts, out_dir / "timeseries.csv")
        summary = summarize_run(ts)
        if plots:
            plot_run(ts, out_dir)
    else:
        summary = {"level": level}
    if partial_exc is not None:
        summary["error"] = {"type": type(partial_exc).__name__,
                            "message": str(partial_exc)}
    write_summary_json(summary, out_dir / "run_summary.json")
    if partial_exc is not None:
        raise partial_exc
    return summary, ts


def _run_level_worker(args):
    scenario, level, out_dir, plots = args
    return _run_one_level(scenario, level, Path(out_dir), plots)


def cmd_run(args) -> int:
    scenario = _load_scenario_arg(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    levels = [FAW, SAW] if args.level == "both" else [args.level]
    results: dict[str, tuple] = {}
    sim_error = None
    if len(levels) > 1 and int(os.environ.get("GFMSIM_THREADS", "1")) > 1:
        jobs = [(scenario, lv, str(out / lv), args.plots) for lv in levels]
        with ProcessPoolExecutor(max_workers=min(len(jobs), int(
                os.environ["GFMSIM_THREADS"]))) as pool:
            for lv, res in zip(levels, pool.map(_run_level_worker, jobs)):
                results[lv] = res
    else:
        for lv in levels:
            sub = out / lv if len(levels) > 1 else out
            try:
                results[lv] = _run_one_level(scenario, lv, sub, args.plots)
            except SimulationAbort as exc:
                sim_error = exc
                results[lv] = ({"error": str(exc)}, exc.partial)
    top = {"scenario": scenario.name, "levels": {lv: r[0] for lv, r in results.items()}}
    if len(levels) > 1:
        ts_faw = results.get(FAW, (None, None))[1]
        ts_saw = results.get(SAW, (None, None))[1]
        if ts_faw is not None and ts_saw is not None:
            try:
                cmp_p = analysis.compare_traces(ts_faw, ts_saw, "farm_p_pu")
                top["divergence"] = {
                    "channel": "farm_p_pu",
                    "max_abs": cmp_p.max_abs,
                    "rel_l2": cmp_p.rel_l2,
                    "first_divergence_s": cmp_p.first_divergence_s,
                }
            except GfmsimError as exc:
                top["divergence"] = {"error": str(exc)}
        write_summary_json(top, out / "run_summary.json")
    if sim_error is not None:
        raise sim_error
    return EXIT_OK


def cmd_scan(args) -> int:
    scenario = _load_scenario_arg(args.scenario)
    level = SAW if args.bus.startswith("string") else FAW
    model = build_farm(scenario, level)
    if args.bus not in model.bus_aliases:
        raise SchemaError(f"unknown bus '{args.bus}'; available: "
                          f"{sorted(model.bus_aliases)}")
    if args.points == 1:
        freqs = np.array([args.fmin])
    else:
        freqs = np.geomspace(args.fmin, args.fmax, args.points)
    scan = analysis.scan_impedance(model, args.bus, freqs, mode=args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([
        scan.f_hz, scan.z_pu.real, scan.z_pu.imag, np.abs(scan.z_pu),
        np.full(scan.f_hz.size, scan.base.s_mva),
    ])
    with open(out / "impedance.csv", "w", newline="") as fh:
        fh.write("f_hz,r_pu,x_pu,mag_pu,base_mva\n")
        np.savetxt(fh, rows, fmt=_FLOAT_FMT, delimiter=",")
    if args.plots:
        plot_scan(scan, out)
    return EXIT_OK


def cmd_compare(args) -> int:
    ts_a = read_timeseries_csv(Path(args.run_a) / "timeseries.csv")
    ts_b = read_timeseries_csv(Path(args.run_b) / "timeseries.csv")
    cmp_r = analysis.compare_traces(ts_a, ts_b, args.channel)
    result = {
        "channel": args.channel,
        "run_a": str(args.run_a), "run_b": str(args.run_b),
        "max_abs": cmp_r.max_abs, "rel_l2": cmp_r.rel_l2,
        "first_divergence_s": cmp_r.first_divergence_s,
    }
    print(json.dumps(_to_jsonable(result), indent=2, sort_keys=True))
    if args.out:
        write_summary_json(result, Path(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gfmsim",
        description="Grid-forming wind farm dynamic simulation")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario")
    p_run.add_argument("scenario", help="scenario JSON path or bundled name")
    p_run.add_argument("--level", choices=[FAW, SAW, "both"], default="both")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--plots", action="store_true", help="emit PNG plots")
    p_run.set_defaults(func=cmd_run)

    p_scan = sub.add_parser("scan", help="impedance scan at a bus")
    p_scan.add_argument("scenario", help="scenario JSON path or bundled name")
    p_scan.add_argument("--bus", default="faw_pcc")
    p_scan.add_argument("--fmin", type=float, default=10.0)
    p_scan.add_argument("--fmax", type=float, default=1000.0)
    p_scan.add_argument("--points", type=int, default=120)
    p_scan.add_argument("--mode", choices=["open", "virtual_admittance"],
                        default="open")
    p_scan.add_argument("--out", default=".")
    p_scan.add_argument("--plots", action="store_true")
    p_scan.set_defaults(func=cmd_scan)

    p_cmp = sub.add_parser("compare", help="compare two run directories")
    p_cmp.add_argument("run_a")
    p_cmp.add_argument("run_b")
    p_cmp.add_argument("--channel", default="farm_p_pu")
    p_cmp.add_argument("--out", default=None, help="optional metrics JSON path")
    p_cmp.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        return _error_json(EXIT_SCHEMA, exc)
    except KeyError as exc:
        return _error_json(EXIT_SCHEMA, exc)
    except SimulationAbort as exc:
        return _error_json(EXIT_SIM, exc)
    except GfmsimError as exc:
        return _error_json(EXIT_SCHEMA, exc)
    except OSError as exc:
        return _error_json(EXIT_IO, exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
