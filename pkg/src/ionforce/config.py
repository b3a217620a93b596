"""Experiment spec files.

Specs are YAML with units in the key names.  Frequencies ending in ``_hz``
are ordinary frequencies and are converted with a factor 2 pi; keys ending in
``_rad_s`` are taken as angular frequencies.  Everything else is SI.

Every validation failure is raised as :class:`SpecError` naming the field
path and, when the value came from a file, its line number.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .photons import DetectionConfig
from .physics import BE9_ION_MASS, ELEMENTARY_CHARGE, MAX_FRACTIONAL_DETUNING, DriveConfig, TrapConfig

TWO_PI = 2.0 * math.pi
F0_PER_ION = 290e-24  # calibrated per-ion force at the reference RF power
DEFAULT_RATE_PER_ION = 3.0e5 / 130  # detected photons/s per ion


class SpecError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path}" + (f" (line {line})" if line else "")
        super().__init__(f"{where}: {message}")


SECTIONS = {
    "trap": {
        "ion_count", "omega_z_hz", "omega_z_rad_s", "temperature_k", "ion_mass_kg",
        "charge_c", "omega_z_drift_hz", "omega_z_drift_rad_s",
    },
    "drive": {
        "force_per_ion_n", "force_per_ion_f0", "detuning_hz", "detuning_rad_s",
        "drive_duration_s",
    },
    "detection": {
        "gamma_hz", "gamma_rad_s", "wavelength_m", "wavevector_rad_m", "detuning_hz",
        "detuning_rad_s", "base_rate_per_s", "rate_per_ion_per_s", "hardware_delay_s",
        "detect_window_s", "damping_time_s", "rate_model", "acquisition_mode", "bin_width_s",
    },
    "analysis": {
        "exclude_before_s", "snr_band_hz", "noise_band_hz", "peak_search_hz", "window",
        "cycle_overhead_s", "force_rel_uncertainty", "ion_count_uncertainty",
    },
    "sweep": {
        "points", "half_span_hz", "half_span_inverse_td", "drive_durations_s",
        "amplitude", "reference_duration_s",
    },
    "force_ladder": {"force_per_ion_n", "force_per_ion_f0"},
    "budget": {
        "long_drive_ion_count", "long_drive_duration_s", "collection_gain",
        "field_mode_ion_count",
    },
}
TOP_LEVEL = {"name", "seed", "n_cycles", "description"} | set(SECTIONS)


def _line_map(text: str) -> dict:
    """Map key paths like ``trap.ion_count`` to 1-based line numbers."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[f"{prefix}[{i}]"] = v.start_mark.line + 1
                walk(v, f"{prefix}[{i}]")

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, "")
    return lines


@dataclass
class ExperimentSpec:
    name: str
    seed: int
    n_cycles: int
    trap: TrapConfig
    drive: DriveConfig | None
    detection: DetectionConfig
    analysis: dict
    sweep: dict | None = None
    force_ladder: list | None = None
    budget: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def spec_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    def tau_m(self, drive: DriveConfig | None = None) -> float:
        """Simulated total measurement time, dead time included."""
        d = (drive or self.drive).gated()
        per_cycle = self.analysis["cycle_overhead_s"] + d.drive_duration + self.detection.detect_window
        return self.n_cycles * per_cycle


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class _Reader:
    def __init__(self, raw: dict, lines: dict):
        self.raw = raw
        self.lines = lines

    def err(self, path, msg):
        return SpecError(path, msg, self.lines.get(path))

    def section(self, name, required=False):
        sec = self.raw.get(name)
        if sec is None:
            if required:
                raise self.err(name, "missing section")
            return None
        if not isinstance(sec, dict):
            raise self.err(name, "must be a mapping")
        unknown = set(sec) - SECTIONS[name]
        if unknown:
            key = sorted(unknown)[0]
            raise self.err(f"{name}.{key}", f"unknown key (allowed: {', '.join(sorted(SECTIONS[name]))})")
        return sec

    def number(self, sec, name, key, default=None, required=False):
        path = f"{name}.{key}"
        if sec is None or key not in sec or sec[key] is None:
            if required:
                raise self.err(path, "required")
            return default
        val = sec[key]
        if isinstance(val, str):
            # YAML 1.1 reads exponents without a sign ("3.0e5") as strings
            try:
                val = float(val)
            except ValueError:
                pass
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise self.err(path, f"expected a number, got {val!r}")
        if not math.isfinite(val) and not (key == "damping_time_s" and val == math.inf):
            raise self.err(path, "must be finite")
        return float(val)

    def freq(self, sec, name, base, default=None, required=False):
        """Angular frequency from ``<base>_hz`` or ``<base>_rad_s``."""
        hz = self.number(sec, name, base + "_hz")
        rad = self.number(sec, name, base + "_rad_s")
        if hz is not None and rad is not None:
            raise self.err(f"{name}.{base}_hz", f"give only one of {base}_hz and {base}_rad_s")
        if hz is not None:
            return TWO_PI * hz
        if rad is not None:
            return rad
        if required:
            raise self.err(f"{name}.{base}_hz", "required")
        return default

    def force(self, sec, name, required=True):
        n = self.number(sec, name, "force_per_ion_n")
        f0 = self.number(sec, name, "force_per_ion_f0")
        if n is not None and f0 is not None:
            raise self.err(f"{name}.force_per_ion_n", "give only one of force_per_ion_n and force_per_ion_f0")
        if f0 is not None:
            return f0 * F0_PER_ION
        if n is None and required:
            raise self.err(f"{name}.force_per_ion_n", "required")
        return n

    def build(self, path, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ValueError, TypeError) as exc:
            raise self.err(path, str(exc)) from None


def _num_list(val):
    """List of floats, or None if ``val`` is not a list of numbers."""
    if not isinstance(val, list):
        return None
    out = []
    for x in val:
        if isinstance(x, str):
            try:
                x = float(x)
            except ValueError:
                return None
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            return None
        out.append(float(x))
    return out


def _monotonic(xs) -> bool:
    d = [b - a for a, b in zip(xs, xs[1:])]
    return all(x > 0 for x in d) or all(x < 0 for x in d)


def parse_spec(raw: dict, lines: dict | None = None) -> ExperimentSpec:
    """Validate a spec mapping and build the config objects."""
    r = _Reader(raw, lines or {})
    if not isinstance(raw, dict):
        raise SpecError("<root>", "spec must be a mapping")
    unknown = set(raw) - TOP_LEVEL
    if unknown:
        key = sorted(unknown)[0]
        raise r.err(key, f"unknown top-level key (allowed: {', '.join(sorted(TOP_LEVEL))})")
    seed = raw.get("seed")
    if seed is None:
        raise r.err("seed", "required (no wall-clock seeding)")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise r.err("seed", f"must be a non-negative integer, got {seed!r}")
    n_cycles = raw.get("n_cycles", 1)
    if isinstance(n_cycles, bool) or not isinstance(n_cycles, int) or n_cycles < 1:
        raise r.err("n_cycles", f"must be a positive integer, got {n_cycles!r}")

    t = r.section("trap") or {}
    ion_count = t.get("ion_count", 130)
    if isinstance(ion_count, bool) or not isinstance(ion_count, int):
        raise r.err("trap.ion_count", f"must be an integer, got {ion_count!r}")
    trap = r.build(
        "trap",
        TrapConfig,
        ion_count=ion_count,
        omega_z=r.freq(t, "trap", "omega_z", TWO_PI * 867e3),
        temperature=r.number(t, "trap", "temperature_k", 0.5e-3),
        ion_mass=r.number(t, "trap", "ion_mass_kg", BE9_ION_MASS),
        charge=r.number(t, "trap", "charge_c", ELEMENTARY_CHARGE),
        omega_z_drift=r.freq(t, "trap", "omega_z_drift", 0.0),
    )

    d = r.section("detection") or {}
    gamma = r.freq(d, "detection", "gamma", TWO_PI * 19e6)
    wl = r.number(d, "detection", "wavelength_m")
    kvec = r.number(d, "detection", "wavevector_rad_m")
    if wl is not None and kvec is not None:
        raise r.err("detection.wavelength_m", "give only one of wavelength_m and wavevector_rad_m")
    if wl is not None:
        if wl <= 0:
            raise r.err("detection.wavelength_m", "must be positive")
        kvec = TWO_PI / wl
    base_rate = r.number(d, "detection", "base_rate_per_s")
    per_ion = r.number(d, "detection", "rate_per_ion_per_s")
    if base_rate is not None and per_ion is not None:
        raise r.err("detection.base_rate_per_s", "give only one of base_rate_per_s and rate_per_ion_per_s")
    if base_rate is None:
        base_rate = (DEFAULT_RATE_PER_ION if per_ion is None else per_ion) * trap.ion_count
    det_kw = dict(
        gamma=gamma,
        wavevector=kvec if kvec is not None else TWO_PI / 313e-9,
        detuning=r.freq(d, "detection", "detuning"),
        base_rate=base_rate,
        hardware_delay=r.number(d, "detection", "hardware_delay_s", 4e-6),
        detect_window=r.number(d, "detection", "detect_window_s", 15e-6),
        damping_time=r.number(d, "detection", "damping_time_s", 25e-6),
        rate_model=d.get("rate_model", "linear"),
        acquisition_mode=d.get("acquisition_mode", "mcs_multi_photon"),
        bin_width=r.number(d, "detection", "bin_width_s", 50e-9),
    )
    detection = r.build("detection", DetectionConfig, **det_kw)

    a = r.section("analysis") or {}
    nb = a.get("noise_band_hz", [2.0e6, 9.0e6])
    if nb is not None:
        nb = _num_list(nb)
        if not (nb and len(nb) == 2 and 0 <= nb[0] < nb[1]):
            raise r.err("analysis.noise_band_hz", "must be [low, high] in Hz, or null for the band around the peak")
    analysis = {
        "exclude_before_s": r.number(a, "analysis", "exclude_before_s", detection.hardware_delay),
        "snr_band_hz": r.number(a, "analysis", "snr_band_hz", 600e3),
        "noise_band_hz": nb,
        "peak_search_hz": r.number(a, "analysis", "peak_search_hz", 0.0),
        "window": a.get("window", "rect"),
        "cycle_overhead_s": r.number(a, "analysis", "cycle_overhead_s", 385e-6),
        "force_rel_uncertainty": r.number(a, "analysis", "force_rel_uncertainty", 18.0 / 290.0),
        "ion_count_uncertainty": r.number(a, "analysis", "ion_count_uncertainty", 0.0),
    }
    if analysis["window"] not in ("rect", "hann"):
        raise r.err("analysis.window", "must be 'rect' or 'hann'")
    if analysis["exclude_before_s"] < detection.hardware_delay:
        raise r.err("analysis.exclude_before_s", "must be >= detection.hardware_delay_s")
    if analysis["cycle_overhead_s"] < 0:
        raise r.err("analysis.cycle_overhead_s", "must be >= 0")
    for key in ("snr_band_hz", "force_rel_uncertainty", "ion_count_uncertainty", "peak_search_hz"):
        if analysis[key] < 0:
            raise r.err(f"analysis.{key}", "must be >= 0")

    dr = r.section("drive")
    drive = None
    if dr is not None:
        omega_d = trap.omega_z + r.freq(dr, "drive", "detuning", 0.0)
        drive = r.build(
            "drive",
            DriveConfig,
            force_per_ion=r.force(dr, "drive"),
            omega_d=omega_d,
            drive_duration=r.number(dr, "drive", "drive_duration_s", required=True),
        )
        if abs(omega_d - trap.omega_z) / trap.omega_z >= MAX_FRACTIONAL_DETUNING:
            raise r.err("drive.detuning_hz", "drive too far from omega_z for the closed-form response")

    sweep = None
    sw = r.section("sweep")
    if sw is not None:
        if drive is None:
            raise r.err("drive", "a sweep needs a drive section (force and reference duration)")
        points = sw.get("points", 41)
        if isinstance(points, bool) or not isinstance(points, int) or points < 3:
            raise r.err("sweep.points", "must be an integer >= 3")
        tds = _num_list(sw.get("drive_durations_s", [drive.drive_duration]))
        if not tds or not all(x > 0 for x in tds):
            raise r.err("sweep.drive_durations_s", "must be a nonempty list of positive durations")
        if len(tds) > 1 and not _monotonic(tds):
            raise r.err("sweep.drive_durations_s", "must be sorted")
        hs_hz = r.number(sw, "sweep", "half_span_hz")
        hs_td = r.number(sw, "sweep", "half_span_inverse_td")
        if hs_hz is not None and hs_td is not None:
            raise r.err("sweep.half_span_hz", "give only one of half_span_hz and half_span_inverse_td")
        if hs_hz is None and hs_td is None:
            hs_td = 1.5
        amp = sw.get("amplitude", "fixed_force")
        if amp not in ("fixed_force", "fixed_impulse"):
            raise r.err("sweep.amplitude", "must be 'fixed_force' or 'fixed_impulse'")
        sweep = {
            "points": points,
            "drive_durations_s": [float(x) for x in tds],
            "half_span_hz": hs_hz,
            "half_span_inverse_td": hs_td,
            "amplitude": amp,
            "reference_duration_s": r.number(sw, "sweep", "reference_duration_s", drive.drive_duration),
        }
        # every grid point must be valid before any compute starts
        for i, td in enumerate(sweep["drive_durations_s"]):
            for w in sweep_omegas(trap, sweep, td)[[0, -1]]:
                r.build(f"sweep.drive_durations_s[{i}]", DriveConfig, sweep_force(drive, sweep, td), w, td)
                if abs(w - trap.omega_z) / trap.omega_z >= MAX_FRACTIONAL_DETUNING:
                    raise r.err("sweep", "frequency span too wide for the closed-form response")

    ladder = None
    fl = r.section("force_ladder")
    if fl is not None:
        if drive is None:
            raise r.err("drive", "a force ladder needs a drive section")
        key = "force_per_ion_f0" if "force_per_ion_f0" in fl else "force_per_ion_n"
        vals = _num_list(fl.get(key))
        if not vals or not all(x >= 0 for x in vals):
            raise r.err(f"force_ladder.{key}", "must be a nonempty list of non-negative forces")
        if len(vals) > 1 and not _monotonic(vals):
            raise r.err(f"force_ladder.{key}", "must be sorted")
        scale = F0_PER_ION if key == "force_per_ion_f0" else 1.0
        ladder = [float(x) * scale for x in vals]

    b = r.section("budget") or {}
    budget = {
        "long_drive_ion_count": int(b.get("long_drive_ion_count", 60)),
        "long_drive_duration_s": r.number(b, "budget", "long_drive_duration_s", 10e-3),
        "collection_gain": r.number(b, "budget", "collection_gain", 100.0),
        "field_mode_ion_count": int(b.get("field_mode_ion_count", 1_000_000)),
    }
    if budget["collection_gain"] < 0:
        raise r.err("budget.collection_gain", "must be >= 0")

    return ExperimentSpec(
        name=str(raw.get("name", "experiment")),
        seed=int(seed),
        n_cycles=int(n_cycles),
        trap=trap,
        drive=drive,
        detection=detection,
        analysis=analysis,
        sweep=sweep,
        force_ladder=ladder,
        budget=budget,
        raw=copy.deepcopy(raw),
    )


def sweep_omegas(trap: TrapConfig, sweep: dict, td: float) -> np.ndarray:
    half = sweep["half_span_hz"] if sweep["half_span_hz"] is not None else sweep["half_span_inverse_td"] / td
    return trap.omega_z + TWO_PI * np.linspace(-half, half, sweep["points"])


def sweep_force(drive: DriveConfig, sweep: dict, td: float) -> float:
    """Per-ion force for one rung of a drive-duration ladder."""
    if sweep["amplitude"] == "fixed_impulse":
        return drive.force_per_ion * sweep["reference_duration_s"] / td
    return drive.force_per_ion


BUNDLED_DIR = Path(__file__).parent / "specs"


def bundled_specs() -> list[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.yaml"))


def resolve_spec_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = BUNDLED_DIR / f"{name_or_path}.yaml"
    if cand.exists():
        return cand
    raise SpecError(str(name_or_path), f"no such spec file or bundled spec (bundled: {', '.join(bundled_specs())})")


def load_spec(name_or_path: str, seed: int | None = None) -> ExperimentSpec:
    """Load a YAML spec, a bundled spec by name, or the spec stored in a run manifest."""
    path = resolve_spec_path(name_or_path)
    text = path.read_text()
    lines = {}
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(str(path), f"invalid JSON: {exc.msg}", exc.lineno) from None
        if isinstance(raw, dict) and "spec" in raw and "outputs" in raw:
            raw = raw["spec"]
    else:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise SpecError(str(path), f"invalid YAML: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None) from None
        lines = _line_map(text)
    if raw is None:
        raise SpecError(str(path), "empty spec")
    if seed is not None:
        raw = dict(raw, seed=int(seed))
    return parse_spec(raw, lines)
