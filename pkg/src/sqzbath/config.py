"""Run-configuration parsing and validation for the CLI.

Configs are JSON with a fixed schema; unknown keys are rejected so typos fail
loudly instead of silently running defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

_PHYSICAL_KEYS = {"omega_s", "omega_b", "g", "kappa", "nbar", "phi_s", "phi_b"}
_DESIGN_KEYS = {"zero_effective_frequency", "target_squeezing_r"}
_TRUNC_KEYS = {"system", "bath"}
_EVOLVE_KEYS = {"t_max", "dt", "rel_tol", "abs_tol", "record_stride"}
_WIGNER_KEYS = {"half_width", "points"}
_STEADY_KEYS = {"coarse_truncation", "max_steps", "run_full"}
_SWEEP_KEYS = {"vary", "values"}
_TOP_KEYS = {
    "model", "time_unit", "physical", "design", "truncation", "evolve",
    "initial_azimuth", "wigner", "steady", "sweep", "outputs",
}


def _require_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}")


def _num(d: dict, key: str, where: str, default=None, required=False,
         minimum=None, strict_min=False, integer=False):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"missing required key {key!r} in {where}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{where}.{key} must be an integer, got {v!r}")
        v = int(v)
    v = v if integer else float(v)
    if minimum is not None:
        if strict_min and not v > minimum:
            raise ConfigError(f"{where}.{key} must be > {minimum}, got {v}")
        if not strict_min and not v >= minimum:
            raise ConfigError(f"{where}.{key} must be >= {minimum}, got {v}")
    if not integer and not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be finite, got {v}")
    return v


@dataclass
class EvolveConfig:
    t_max: float
    dt: float | None = None
    rel_tol: float | None = None
    abs_tol: float | None = None
    record_stride: int | None = None


@dataclass
class RunConfig:
    model: str
    time_unit: str
    omega_s: float
    omega_b: float | None
    g: float | None
    kappa: float
    nbar: float
    phi_s: float
    phi_b: float
    design_zero_freq: bool
    design_target_r: float | None
    trunc_system: int
    trunc_bath: int
    evolve: EvolveConfig
    initial_azimuth: float
    wigner_half_width: float
    wigner_points: int
    steady_coarse: int
    steady_max_steps: int
    run_full: bool
    sweep_vary: str | None
    sweep_values: list[float] = field(default_factory=list)
    outputs: str | None = None


def parse_config(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(data, _TOP_KEYS, "config")

    model = data.get("model")
    if model not in ("rabi", "bosonic"):
        raise ConfigError(f"model must be 'rabi' or 'bosonic', got {model!r}")

    time_unit = data.get("time_unit", "1/omega_s")
    if not isinstance(time_unit, str):
        raise ConfigError("time_unit must be a string")

    phys = data.get("physical")
    if not isinstance(phys, dict):
        raise ConfigError("config needs a 'physical' object")
    _require_keys(phys, _PHYSICAL_KEYS, "physical")

    design = data.get("design", {}) or {}
    _require_keys(design, _DESIGN_KEYS, "design")
    design_zero = bool(design.get("zero_effective_frequency", False))
    design_r = _num(design, "target_squeezing_r", "design", minimum=0.0, strict_min=True)
    if design_zero and model != "rabi":
        raise ConfigError("design.zero_effective_frequency applies to the rabi model only")

    omega_s = _num(phys, "omega_s", "physical", required=True, minimum=0.0, strict_min=True)
    omega_b = _num(phys, "omega_b", "physical", minimum=0.0, strict_min=True)
    g = _num(phys, "g", "physical", minimum=0.0, strict_min=True)
    kappa = _num(phys, "kappa", "physical", required=True, minimum=0.0, strict_min=True)
    nbar = _num(phys, "nbar", "physical", default=0.0, minimum=0.0)
    phi_s = _num(phys, "phi_s", "physical", default=0.0)
    phi_b = _num(phys, "phi_b", "physical", default=0.0)
    if omega_b is None and design_r is None:
        raise ConfigError("physical.omega_b is required unless design.target_squeezing_r is set")
    if g is None and not design_zero:
        raise ConfigError("physical.g is required unless design.zero_effective_frequency is set")

    trunc = data.get("truncation", {}) or {}
    _require_keys(trunc, _TRUNC_KEYS, "truncation")
    trunc_system = _num(trunc, "system", "truncation", default=20, minimum=2, integer=True)
    trunc_bath = _num(trunc, "bath", "truncation", default=15 if model == "rabi" else 20,
                      minimum=2, integer=True)

    ev = data.get("evolve", {}) or {}
    _require_keys(ev, _EVOLVE_KEYS, "evolve")
    evolve = EvolveConfig(
        t_max=_num(ev, "t_max", "evolve", default=0.0, minimum=0.0),
        dt=_num(ev, "dt", "evolve", minimum=0.0, strict_min=True),
        rel_tol=_num(ev, "rel_tol", "evolve", minimum=0.0, strict_min=True),
        abs_tol=_num(ev, "abs_tol", "evolve", minimum=0.0, strict_min=True),
        record_stride=_num(ev, "record_stride", "evolve", minimum=1, integer=True),
    )

    azim = _num(data, "initial_azimuth", "config", default=math.pi / 4)

    wig = data.get("wigner", {}) or {}
    _require_keys(wig, _WIGNER_KEYS, "wigner")
    half_width = _num(wig, "half_width", "wigner", default=4.0, minimum=0.0, strict_min=True)
    points = _num(wig, "points", "wigner", default=101, minimum=32, integer=True)

    steady = data.get("steady", {}) or {}
    _require_keys(steady, _STEADY_KEYS, "steady")
    coarse = _num(steady, "coarse_truncation", "steady", default=12, minimum=4, integer=True)
    max_steps = _num(steady, "max_steps", "steady", default=4_000_000, minimum=1000, integer=True)
    run_full = steady.get("run_full", True)
    if not isinstance(run_full, bool):
        raise ConfigError("steady.run_full must be a boolean")

    sweep = data.get("sweep", {}) or {}
    _require_keys(sweep, _SWEEP_KEYS, "sweep")
    sweep_vary = sweep.get("vary")
    sweep_values = sweep.get("values", [])
    if sweep_vary is not None:
        if sweep_vary not in _PHYSICAL_KEYS:
            raise ConfigError(f"sweep.vary must be one of {sorted(_PHYSICAL_KEYS)}, got {sweep_vary!r}")
        if not isinstance(sweep_values, list) or not sweep_values:
            raise ConfigError("sweep.values must be a non-empty list")
        for v in sweep_values:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"sweep.values entries must be numbers, got {v!r}")

    outputs = data.get("outputs")
    if outputs is not None and not isinstance(outputs, str):
        raise ConfigError("outputs must be a path string")

    return RunConfig(
        model=model,
        time_unit=time_unit,
        omega_s=omega_s,
        omega_b=omega_b,
        g=g,
        kappa=kappa,
        nbar=nbar,
        phi_s=phi_s,
        phi_b=phi_b,
        design_zero_freq=design_zero,
        design_target_r=design_r,
        trunc_system=trunc_system,
        trunc_bath=trunc_bath,
        evolve=evolve,
        initial_azimuth=azim,
        wigner_half_width=half_width,
        wigner_points=points,
        steady_coarse=coarse,
        steady_max_steps=max_steps,
        run_full=run_full,
        sweep_vary=sweep_vary,
        sweep_values=[float(v) for v in sweep_values],
        outputs=outputs,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)
