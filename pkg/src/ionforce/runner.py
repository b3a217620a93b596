"""Figure pipelines: simulate, sweep, force ladder, budget, calibration.

Each command writes its data files into an output directory followed by a
``manifest.json`` that lists every file with its SHA-256.  Data files never
contain timestamps or host timings, so identical spec + seed gives
byte-identical files for any worker count; only the manifest carries
wall-clock information.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    ArrivalHistogram,
    SpectrumResult,
    build_histogram,
    find_nulls,
    fit_response_shape,
    frequency_sweep,
    fwhm,
    power_spectrum,
    sensitivity_report,
)
from .budget import sensitivity_budget
from .config import ExperimentSpec, sweep_force, sweep_omegas
from .photons import CycleTrace, run_experiment
from .physics import DriveConfig, calibrate_force

FLOAT_FMT = "{:.15g}"


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT.format(float(x))


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(FLOAT_FMT.format(x))
    return obj


class RunContext:
    """Collects output files and stage timings for one command."""

    def __init__(self, command: str, out_dir, spec: ExperimentSpec | None, workers: int = 1):
        self.command = command
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.spec = spec
        self.workers = workers
        self.outputs: list[str] = []
        self.stages: dict[str, float] = {}
        self.started = datetime.now(timezone.utc)
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.stages[name] = round(now - self._t, 6)
        self._t = now

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8", newline="\n")
        self.outputs.append(name)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])
        return self.write_text(name, buf.getvalue())

    def write_table(self, stem: str, fmt_: str, header: list[str], rows) -> Path:
        rows = list(rows)
        if fmt_ == "json":
            return self.write_json(f"{stem}.json", [dict(zip(header, r)) for r in rows])
        return self.write_csv(f"{stem}.csv", header, rows)

    def finish(self) -> dict:
        files = []
        for name in sorted(self.outputs):
            data = (self.out_dir / name).read_bytes()
            files.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        manifest = {
            "tool": "ionforce",
            "version": __version__,
            "command": self.command,
            "spec_hash": self.spec.spec_hash if self.spec else None,
            "spec": self.spec.raw if self.spec else None,
            "workers": self.workers,
            "started_utc": self.started.isoformat(),
            "finished_utc": datetime.now(timezone.utc).isoformat(),
            "stage_seconds": self.stages,
            "outputs": files,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return manifest


def write_events_csv(ctx: RunContext, name: str, traces: list[CycleTrace]):
    buf = io.StringIO()
    buf.write("cycle_index,arrival_time_s\n")
    for tr in traces:
        for t in tr.arrival_times:
            buf.write(f"{tr.cycle_index},{FLOAT_FMT.format(t)}\n")
    return ctx.write_text(name, buf.getvalue())


def read_events_csv(path) -> dict[int, np.ndarray]:
    """Parse an event dump back into ``{cycle_index: arrival_times}``."""
    out: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["cycle_index"]), []).append(float(row["arrival_time_s"]))
    return {k: np.array(v) for k, v in out.items()}


def write_histogram(ctx, stem, hist: ArrivalHistogram, fmt_):
    rows = zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts)
    return ctx.write_table(stem, fmt_, ["bin_start_s", "bin_end_s", "counts"], rows)


def write_spectrum(ctx, stem, spec: SpectrumResult, fmt_):
    rows = zip(spec.frequencies, spec.power)
    return ctx.write_table(stem, fmt_, ["frequency_hz", "power"], rows)


def _spectrum(spec: ExperimentSpec, hist: ArrivalHistogram) -> SpectrumResult:
    a = spec.analysis
    return power_spectrum(
        hist,
        a["exclude_before_s"],
        spec.trap.omega_z / (2.0 * math.pi),
        band_hz=a["snr_band_hz"],
        peak_search_hz=a["peak_search_hz"],
        window=a["window"],
        noise_band=tuple(a["noise_band_hz"]) if a["noise_band_hz"] else None,
    )


def _histogram(spec: ExperimentSpec, traces) -> ArrivalHistogram:
    det = spec.detection
    return build_histogram(traces, det.bin_width, det.detect_window, det.acquisition_mode)


def cmd_simulate(spec: ExperimentSpec, out_dir, fmt_: str = "csv", workers: int = 1) -> dict:
    """Event dump, arrival histogram and a short summary for one drive setting."""
    if spec.drive is None:
        raise ValueError("simulate needs a drive section")
    ctx = RunContext("simulate", out_dir, spec, workers)
    traces = run_experiment(spec.trap, spec.drive, spec.detection, spec.n_cycles, spec.seed, workers)
    ctx.stage("simulate")
    hist = _histogram(spec, traces)
    ctx.stage("histogram")
    write_events_csv(ctx, "events.csv", traces)
    write_histogram(ctx, "histogram", hist, fmt_)
    n_events = hist.total
    summary = {
        "name": spec.name,
        "n_cycles": spec.n_cycles,
        "n_events": n_events,
        "events_per_cycle": n_events / spec.n_cycles,
        "first_event_s": min((tr.arrival_times[0] for tr in traces if len(tr)), default=None),
        "measurement_time_s": spec.tau_m(),
        "drive_frequency_hz": spec.drive.omega_d / (2 * math.pi),
        "drive_cycles": spec.drive.n_drive_cycles,
    }
    try:
        sp = _spectrum(spec, hist)
    except ValueError:
        sp = None
    if sp is not None:
        write_spectrum(ctx, "spectrum", sp, fmt_)
        summary.update(peak_frequency_hz=sp.peak_frequency, snr=sp.snr)
    ctx.write_json("summary.json", summary)
    ctx.stage("write")
    return ctx.finish()


def _theory_fit(theory_v, proxy):
    """Least-squares ``proxy ~ a |v| + b`` (drive strength and offset free)."""
    A = np.column_stack([np.abs(theory_v), np.ones_like(theory_v)])
    (a, b), *_ = np.linalg.lstsq(A, proxy, rcond=None)
    return float(a), float(b)


def run_sweep_rung(spec: ExperimentSpec, td: float, rung: int, workers: int = 1):
    sw = spec.sweep
    drive = DriveConfig(sweep_force(spec.drive, sw, td), spec.trap.omega_z, td)
    omegas = sweep_omegas(spec.trap, sw, td)
    # one base seed per rung; sweep points derive their own from it
    seed = spec.seed + 1_000_003 * rung
    return frequency_sweep(
        spec.trap,
        drive,
        spec.detection,
        omegas,
        spec.n_cycles,
        base_seed=seed,
        exclude_before=spec.analysis["exclude_before_s"],
        workers=workers,
    )


def cmd_sweep_frequency(spec: ExperimentSpec, out_dir, fmt_: str = "csv", workers: int = 1) -> dict:
    """Response maps, proxy curves and closed-form theory for each drive time."""
    if spec.sweep is None:
        raise ValueError("sweep-frequency needs a sweep section")
    ctx = RunContext("sweep-frequency", out_dir, spec, workers)
    summary = {"name": spec.name, "rungs": []}
    for rung, td in enumerate(spec.sweep["drive_durations_s"]):
        res = run_sweep_rung(spec, td, rung, workers)
        ctx.stage(f"sweep_td_{td:g}")
        tag = f"td_{td * 1e6:g}us"
        header = ["time_s"] + [fmt(w) for w in res.omegas]
        ctx.write_csv(f"map_{tag}.csv", header, np.column_stack([res.times, res.response_map.T]))
        ctx.write_csv(f"theory_map_{tag}.csv", header, np.column_stack([res.times, res.theory_map.T]))
        a, b = _theory_fit(res.theory_velocity, res.proxy)
        cols = ["omega_d_rad_s", "detuning_hz", "proxy", "noise_floor", "signal_proxy",
                "theory_velocity_m_s", "theory_proxy"]
        rows = zip(res.omegas, res.detuning_hz, res.proxy, res.noise_floor, res.signal_proxy,
                   res.theory_velocity, a * np.abs(res.theory_velocity) + b)
        ctx.write_table(f"proxy_{tag}", fmt_, cols, rows)
        entry = {"drive_duration_s": td, "force_per_ion_n": sweep_force(spec.drive, spec.sweep, td),
                 "theory_fit": {"scale": a, "offset": b},
                 "expected_null_hz": 1.0 / td}
        try:
            shape = fit_response_shape(res.detuning_hz, res.proxy)
            entry["nulls_hz"] = list(shape.nulls)
            entry["response_fit"] = {"center_hz": shape.center, "duration_s": shape.duration,
                                     "scale": shape.scale, "offset": shape.offset}
        except ValueError as exc:
            entry["nulls_hz"] = None
            entry["nulls_error"] = str(exc)
        try:
            entry["nulls_argmin_hz"] = list(find_nulls(res.detuning_hz, res.proxy, method="argmin"))
        except ValueError:
            entry["nulls_argmin_hz"] = None
        try:
            entry["fwhm_hz"] = fwhm(res.detuning_hz, res.signal_proxy)
        except ValueError as exc:
            entry["fwhm_hz"] = None
            entry["fwhm_error"] = str(exc)
        entry["sweep_step_hz"] = float(res.detuning_hz[1] - res.detuning_hz[0])
        summary["rungs"].append(entry)
    widths = [(r["drive_duration_s"], r["fwhm_hz"]) for r in summary["rungs"] if r["fwhm_hz"]]
    if len(widths) > 1:
        td0, w0 = widths[0]
        summary["fwhm_times_td"] = [w * td for td, w in widths]
        summary["fwhm_ratio_vs_inverse_td"] = [(w / w0) / (td0 / td) for td, w in widths]
    ctx.write_json("summary.json", summary)
    ctx.stage("write")
    return ctx.finish()


def run_force_point(spec: ExperimentSpec, force_per_ion: float, rung: int, workers: int = 1):
    drive = replace(spec.drive, force_per_ion=force_per_ion)
    seed = spec.seed + 1_000_003 * rung
    traces = run_experiment(spec.trap, drive, spec.detection, spec.n_cycles, seed, workers)
    hist = _histogram(spec, traces)
    sp = _spectrum(spec, hist)
    total = drive.total_force(spec.trap)
    report = None
    if sp.snr > 0 and total > 0:
        report = sensitivity_report(
            sp,
            total,
            spec.tau_m(drive),
            spec.trap,
            drive,
            force_rel_uncertainty=spec.analysis["force_rel_uncertainty"],
            ion_count_uncertainty=spec.analysis["ion_count_uncertainty"],
        )
    return hist, sp, report


def cmd_sweep_force(spec: ExperimentSpec, out_dir, fmt_: str = "csv", workers: int = 1) -> dict:
    """Time traces, spectra and sensitivity reports along a force ladder."""
    ladder = spec.force_ladder or [spec.drive.force_per_ion]
    ctx = RunContext("sweep-force", out_dir, spec, workers)
    summary = {"name": spec.name, "measurement_time_s": spec.tau_m(), "points": []}
    for rung, f in enumerate(ladder):
        hist, sp, report = run_force_point(spec, f, rung, workers)
        ctx.stage(f"force_{rung}")
        tag = f"f{rung}"
        write_histogram(ctx, f"trace_{tag}", hist, fmt_)
        write_spectrum(ctx, f"spectrum_{tag}", sp, fmt_)
        entry = {
            "force_per_ion_n": f,
            "total_force_n": f * spec.trap.ion_count,
            "snr": sp.snr,
            "peak_frequency_hz": sp.peak_frequency,
        }
        if report is not None:
            ctx.write_json(f"report_{tag}.json", report.to_dict())
            entry["force_sensitivity_n_per_rthz"] = report.force_sensitivity
            entry["force_sensitivity_yn_per_rthz"] = report.force_sensitivity * 1e24
            entry["displacement_sensitivity_m_per_rthz"] = report.displacement_sensitivity
        summary["points"].append(entry)
    ctx.write_json("summary.json", summary)
    ctx.stage("write")
    return ctx.finish()


BUDGET_COLUMNS = ["label", "ion_count", "drive_duration", "base_rate", "cycle_time",
                  "force_sensitivity", "field_sensitivity"]


def budget_rows(spec: ExperimentSpec):
    b = spec.budget
    td = spec.drive.drive_duration if spec.drive else 1e-3
    return sensitivity_budget(
        spec.trap,
        spec.detection,
        drive_duration=td,
        cycle_overhead=spec.analysis["cycle_overhead_s"],
        long_drive_ion_count=b["long_drive_ion_count"],
        long_drive_duration=b["long_drive_duration_s"],
        collection_gain=b["collection_gain"],
        field_mode_ion_count=b["field_mode_ion_count"],
        exclude_before=spec.analysis["exclude_before_s"],
    )


def cmd_sensitivity_budget(spec: ExperimentSpec, out_dir, fmt_: str = "csv", workers: int = 1) -> dict:
    """Analytic projected-sensitivity table."""
    ctx = RunContext("sensitivity-budget", out_dir, spec, workers)
    rows = budget_rows(spec)
    ctx.stage("budget")
    table = []
    for r in rows:
        d = r.to_dict()
        table.append([d[c] for c in BUDGET_COLUMNS])
    ctx.write_table("budget", fmt_, BUDGET_COLUMNS, table)
    ctx.stage("write")
    return ctx.finish()


def cmd_calibrate(out_dir, field_v_per_m=None, voltage_v=None, geometry_factor=None,
                  charge=None, fmt_: str = "json") -> dict:
    """Complete a field calibration and store it."""
    kw = {} if charge is None else {"charge": charge}
    cal = calibrate_force(field_v_per_m, voltage_v, geometry_factor, **kw)
    ctx = RunContext("calibrate", out_dir, None)
    d = {
        "field_at_ions_v_per_m": cal.field_at_ions,
        "force_per_ion_n": cal.force_per_ion,
        "force_per_ion_yn": cal.force_per_ion * 1e24,
        "applied_voltage_v": cal.applied_voltage,
        "geometry_factor_per_m": cal.geometry_factor,
    }
    if fmt_ == "csv":
        ctx.write_csv("calibration.csv", list(d), [[("" if v is None else v) for v in d.values()]])
    else:
        ctx.write_json("calibration.json", d)
    return ctx.finish()


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep-frequency": cmd_sweep_frequency,
    "sweep-force": cmd_sweep_force,
    "sensitivity-budget": cmd_sensitivity_budget,
}
