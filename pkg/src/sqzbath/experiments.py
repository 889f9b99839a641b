"""Experiment drivers behind the CLI: parameter reports, the qubit-lifetime
experiment, the steady-state cavity-squeezing experiment, and parameter sweeps.

All commands take a validated RunConfig, write CSV/JSON artifacts into an
output directory, and return the summary dictionary they wrote.  Output is
deterministic for a fixed config: fixed-step integration, fixed iteration
orders, and shortest-roundtrip float formatting.
"""

from __future__ import annotations

import csv
import json
import os
import warnings as _warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .analysis import (
    covariance,
    fit_decay_rate,
    fit_squeezed_thermal,
    trace_distance,
    wigner,
)
from .config import RunConfig
from .errors import ConfigError, InstabilityError, UnfittableError
from .formulas import (
    EffectiveModel,
    PhysicalParams,
    SqueezeParams,
    bosonic_effective_model,
    build_effective_model,
    build_full_model,
    design_target_squeezing,
    design_zero_effective_frequency,
    effective_model,
    rabi_effective_model,
)
from .lindblad import (
    EvolveOptions,
    MasterEquation,
    TimeSeries,
    evolve,
    steady_state,
)
from .operators import (
    DensityMatrix,
    HilbertSpace,
    Operator,
    embed,
    partial_trace,
    pauli,
    thermal_state,
    top_level_population,
)

TOP_LEVEL_WARN = 1e-6


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _resolve_params(cfg: RunConfig) -> tuple[PhysicalParams, list[str]]:
    """Apply the design operations and return the fully resolved parameters."""
    notes = []
    omega_b = cfg.omega_b
    if cfg.design_target_r is not None:
        omega_b = design_target_squeezing(cfg.design_target_r, cfg.omega_s, cfg.kappa)
        notes.append(f"omega_b = {omega_b!r} from design_target_squeezing(r={cfg.design_target_r})")
    g = cfg.g
    if cfg.design_zero_freq:
        with _warnings.catch_warnings(record=True) as caught:
            _warnings.simplefilter("always")
            g = design_zero_effective_frequency(cfg.omega_s, omega_b, cfg.kappa, cfg.nbar)
        notes.extend(str(w.message) for w in caught)
        notes.append(f"g = {g!r} from design_zero_effective_frequency")
    kind = "qubit" if cfg.model == "rabi" else "boson"
    p = PhysicalParams(
        omega_s=cfg.omega_s, omega_b=omega_b, g=g, kappa=cfg.kappa,
        nbar=cfg.nbar, phi_s=cfg.phi_s, phi_b=cfg.phi_b, system_kind=kind,
    )
    return p, notes


def _effective_dict(em: EffectiveModel) -> dict:
    out = {
        "r": em.squeeze.r,
        "theta": em.squeeze.theta,
        "gamma_eff": em.gamma_eff,
        "omega_eff": em.omega_eff,
        "lambda_re": em.lam.real,
        "lambda_im": em.lam.imag,
        "lambda_abs": abs(em.lam),
        "regime": {
            "off_resonant": em.regime.off_resonant,
            "bad_cavity": em.regime.bad_cavity,
            "stable": em.regime.stable,
        },
    }
    if em.bloch is not None:
        out["bloch"] = {
            "gamma_x": em.bloch.gamma_x,
            "gamma_y": em.bloch.gamma_y,
            "gamma_z": em.bloch.gamma_z,
            "drive_z": em.bloch.drive_z,
        }
    return out


def _params_dict(p: PhysicalParams) -> dict:
    d = asdict(p)
    d.pop("system_kind")
    return d


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _reduce_qubit(mat: np.ndarray, nb: int) -> np.ndarray:
    return mat.reshape(2, nb, 2, nb).trace(axis1=1, axis2=3)


def _embed_state(mat: np.ndarray, dims_from: tuple[int, int], dims_to: tuple[int, int]) -> np.ndarray:
    """Zero-pad a two-mode density matrix from a coarse to a finer truncation."""
    a0, b0 = dims_from
    a1, b1 = dims_to
    t = mat.reshape(a0, b0, a0, b0)
    out = np.zeros((a1, b1, a1, b1), dtype=np.complex128)
    out[:a0, :b0, :a0, :b0] = t
    return out.reshape(a1 * b1, a1 * b1)


# ---------------------------------------------------------------------------
# params command
# ---------------------------------------------------------------------------

def cmd_params(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Formula-only report: squeezing parameters, rates, shifts, regime flags."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p, notes = _resolve_params(cfg)
    em = effective_model(p)
    summary = {
        "command": "params",
        "model": cfg.model,
        "time_unit": cfg.time_unit,
        "physical": _params_dict(p),
        "effective": _effective_dict(em),
        "warnings": em.warnings() + notes,
    }
    _write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# rabi command
# ---------------------------------------------------------------------------

def _qubit_initial(azimuth: float) -> np.ndarray:
    """Pure transverse state with <sx> = cos(azimuth), <sy> = sin(azimuth)."""
    psi = np.array([np.exp(-1j * azimuth), 1.0], dtype=np.complex128) / np.sqrt(2.0)
    return np.outer(psi, psi.conj())


def _rabi_rates_fit(ts: TimeSeries) -> dict:
    fits = {}
    for axis in ("x", "y"):
        try:
            f = fit_decay_rate(ts, f"s{axis}")
            fits[f"gamma_{axis}"] = f.rate
            fits[f"r_squared_{axis}"] = f.r_squared
        except UnfittableError as exc:
            fits[f"gamma_{axis}"] = None
            fits[f"error_{axis}"] = str(exc)
    return fits


def _run_rabi_once(cfg: RunConfig, p: PhysicalParams, trunc_bath: int):
    em = rabi_effective_model(p)
    bloch = em.bloch
    gamma_y = max(bloch.gamma_y, 1e-12)
    t_max = cfg.evolve.t_max or min(2.0 / max(bloch.gamma_x, 1e-12), 80.0 / em.gamma_eff)

    me_full = build_full_model(p, 2, trunc_bath)
    if cfg.evolve.dt is not None:
        dt = cfg.evolve.dt
    else:
        dt = me_full.compiled().stability_interval()
        if not np.isfinite(dt):
            dt = t_max / 10000
    if cfg.evolve.record_stride is not None:
        stride = cfg.evolve.record_stride
    else:
        rec_dt = min(t_max / 600.0, 0.05 / gamma_y)
        stride = max(1, int(round(rec_dt / dt)))
    opts = EvolveOptions(t_max=t_max, dt=dt, record_stride=stride)

    space = me_full.space
    sx = embed(pauli("x"), space, 0)
    sy = embed(pauli("y"), space, 0)
    sz = embed(pauli("z"), space, 0)
    rho_q0 = _qubit_initial(cfg.initial_azimuth)
    rho0 = DensityMatrix(
        space, np.kron(rho_q0, thermal_state(trunc_bath, p.nbar).matrix)
    )
    obs = {"sx": sx, "sy": sy, "sz": sz}
    ts_full = evolve(me_full, rho0, opts, obs, record_states=[0])

    qspace = HilbertSpace((2,))
    rho_q = DensityMatrix(qspace, rho_q0)
    qobs = {"sx": pauli("x"), "sy": pauli("y"), "sz": pauli("z")}
    me_eff = build_effective_model(em)
    ts_eff = evolve(me_eff, rho_q, opts, qobs, record_states=True)

    em_ref = replace(em, squeeze=SqueezeParams(0.0, 0.0))
    me_ref = build_effective_model(em_ref)
    ts_ref = evolve(me_ref, rho_q, opts, qobs)

    tds = [
        trace_distance(
            Operator(qspace, full_red), Operator(qspace, eff_mat)
        )
        for full_red, eff_mat in zip(ts_full.states, ts_eff.states)
    ]
    top = top_level_population(ts_full.final_state)
    return em, opts, ts_full, ts_eff, ts_ref, max(tds), top


def cmd_rabi(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Qubit-lifetime experiment: full two-mode vs effective vs thermal reference.

    Writes timeseries_full.csv (t,sx_full,sy_full,sz_full), timeseries_eff.csv
    (t,sx_eff,..,sz_ref) and summary.json with fitted rates, Bloch-rate
    predictions and the full-vs-effective trace distance.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p, notes = _resolve_params(cfg)

    trunc_bath = cfg.trunc_bath
    bumped = False
    while True:
        em, opts, ts_full, ts_eff, ts_ref, td_max, top = _run_rabi_once(cfg, p, trunc_bath)
        if max(top) <= TOP_LEVEL_WARN or bumped:
            break
        bumped = True
        trunc_bath = int(np.ceil(trunc_bath * 1.5))
        notes.append(
            f"bath truncation bumped to {trunc_bath}: top-level population {max(top):.3e}"
        )

    warn = em.warnings() + notes
    if max(top) > TOP_LEVEL_WARN:
        warn.append(f"top Fock-level population {max(top):.3e} > {TOP_LEVEL_WARN} after bump")

    bloch = em.bloch
    fits = {
        "full": _rabi_rates_fit(ts_full),
        "effective": _rabi_rates_fit(ts_eff),
        "reference": _rabi_rates_fit(ts_ref),
    }
    thermal_mid = 0.5 * em.gamma_eff * (2 * p.nbar + 1)
    rel = {}
    for run in ("full", "effective", "reference"):
        for axis, pred in (("x", bloch.gamma_x), ("y", bloch.gamma_y)):
            got = fits[run].get(f"gamma_{axis}")
            if run == "reference":
                pred = thermal_mid
            if got is not None and pred:
                rel[f"{run}_gamma_{axis}"] = abs(got - pred) / pred

    gx_f = fits["full"].get("gamma_x")
    gy_f = fits["full"].get("gamma_y")
    ordering = gx_f is not None and gy_f is not None and gx_f < thermal_mid < gy_f

    summary = {
        "command": "rabi",
        "model": "rabi",
        "time_unit": cfg.time_unit,
        "physical": _params_dict(p),
        "truncation": {"system": 2, "bath": trunc_bath, "bumped": bumped},
        "evolve": {"t_max": opts.t_max, "dt": opts.dt, "record_stride": opts.record_stride},
        "initial_azimuth": cfg.initial_azimuth,
        "effective": _effective_dict(em),
        "predictions": {
            "gamma_x": bloch.gamma_x,
            "gamma_y": bloch.gamma_y,
            "gamma_z": bloch.gamma_z,
            "thermal_mid": thermal_mid,
        },
        "fitted": fits,
        "relative_errors": rel,
        "lifetime_ordering": {
            "gamma_x_full": gx_f,
            "thermal_mid": thermal_mid,
            "gamma_y_full": gy_f,
            "satisfied": bool(ordering),
        },
        "agreement": {"max_trace_distance": td_max},
        "truncation_report": {"top_level_population": list(top)},
        "warnings": warn,
    }
    _write_json(out / "summary.json", summary)

    t = ts_full.times
    _write_csv(
        out / "timeseries_full.csv",
        ["t", "sx_full", "sy_full", "sz_full"],
        zip(t, ts_full.values["sx"].real, ts_full.values["sy"].real, ts_full.values["sz"].real),
    )
    _write_csv(
        out / "timeseries_eff.csv",
        ["t", "sx_eff", "sy_eff", "sz_eff", "sx_ref", "sy_ref", "sz_ref"],
        zip(
            t,
            ts_eff.values["sx"].real, ts_eff.values["sy"].real, ts_eff.values["sz"].real,
            ts_ref.values["sx"].real, ts_ref.values["sy"].real, ts_ref.values["sz"].real,
        ),
    )
    return summary


# ---------------------------------------------------------------------------
# bosonic command
# ---------------------------------------------------------------------------

def full_bosonic_steady_state(
    p: PhysicalParams,
    trunc_system: int,
    trunc_bath: int,
    eff_steady: DensityMatrix | None = None,
    coarse: int = 12,
    max_steps: int = 4_000_000,
) -> DensityMatrix:
    """Steady state of the full two-mode model by long-time integration.

    A coarse-truncation march supplies the seed for the final truncation, which
    is then polished until max|d rho/dt| < 1e-8 at the requested size.
    """
    coarse = min(coarse, trunc_system, trunc_bath)
    opts = EvolveOptions(t_max=1.0, dt=1.0, max_steps=max_steps)

    seed_q = None
    if eff_steady is not None:
        block = np.array(eff_steady.matrix[:coarse, :coarse])
        tr = np.trace(block).real
        if tr > 0.1:
            seed_q = block / tr
    if seed_q is None:
        seed_q = thermal_state(coarse, p.nbar).matrix
    seed = np.kron(seed_q, thermal_state(coarse, p.nbar).matrix)
    me_coarse = build_full_model(p, coarse, coarse)
    rho_coarse = steady_state(
        me_coarse, opts,
        rho0=DensityMatrix(me_coarse.space, 0.5 * (seed + seed.conj().T)),
        method="march",
    )

    if (coarse, coarse) == (trunc_system, trunc_bath):
        return rho_coarse
    me_full = build_full_model(p, trunc_system, trunc_bath)
    seed_full = _embed_state(rho_coarse.matrix, (coarse, coarse), (trunc_system, trunc_bath))
    return steady_state(
        me_full, opts, rho0=DensityMatrix(me_full.space, seed_full), method="march"
    )


def cmd_bosonic(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Steady-state cavity-squeezing experiment.

    Solves the effective single-mode steady state (dense solve when the
    truncation allows, long-time integration otherwise), fits a squeezed
    thermal state, and, unless steady.run_full is false, marches the full
    two-mode model and compares the reduced steady state.  Writes wigner.csv,
    covariance.json and summary.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p, notes = _resolve_params(cfg)
    em = bosonic_effective_model(p)
    warn = em.warnings() + notes
    if not em.regime.stable:
        raise InstabilityError(
            f"effective model unstable (omega_eff={em.omega_eff:.6g} <= "
            f"|Lambda|={abs(em.lam):.6g}); refusing the steady-state run"
        )

    trunc = cfg.trunc_system
    me_eff = build_effective_model(em, trunc)
    rho_eff = steady_state(
        me_eff,
        EvolveOptions(t_max=1.0, dt=1.0, max_steps=cfg.steady_max_steps),
        rho0=thermal_state(trunc, p.nbar),
    )
    fit = fit_squeezed_thermal(rho_eff)
    v_eff = covariance(rho_eff)
    top_eff = top_level_population(rho_eff)[0]
    if top_eff > TOP_LEVEL_WARN:
        warn.append(f"effective steady state top-level population {top_eff:.3e}")

    w_eff = wigner(rho_eff, cfg.wigner_half_width, cfg.wigner_points)
    warn.extend(w_eff.warnings)

    full_block = None
    w_full_vals = np.full_like(w_eff.values, np.nan)
    if cfg.run_full:
        rho_full = full_bosonic_steady_state(
            p, cfg.trunc_system, cfg.trunc_bath,
            eff_steady=rho_eff, coarse=cfg.steady_coarse, max_steps=cfg.steady_max_steps,
        )
        rho_a = partial_trace(rho_full, [0])
        td = trace_distance(rho_a, rho_eff)
        fit_full = fit_squeezed_thermal(rho_a)
        v_full = covariance(rho_a)
        top_full = top_level_population(rho_full)
        if max(top_full) > TOP_LEVEL_WARN:
            warn.append(f"full steady state top-level populations {top_full}")
        w_full = wigner(rho_a, cfg.wigner_half_width, cfg.wigner_points)
        warn.extend(w_full.warnings)
        w_full_vals = w_full.values
        full_block = {
            "trace_distance_vs_effective": td,
            "fitted": {"r": fit_full.r, "theta": fit_full.theta,
                       "nbar": fit_full.nbar, "fidelity": fit_full.fidelity},
            "covariance": v_full.tolist(),
            "top_level_population": list(top_full),
        }

    summary = {
        "command": "bosonic",
        "model": "bosonic",
        "time_unit": cfg.time_unit,
        "physical": _params_dict(p),
        "truncation": {"system": cfg.trunc_system, "bath": cfg.trunc_bath,
                       "coarse_seed": cfg.steady_coarse, "run_full": cfg.run_full},
        "effective": _effective_dict(em),
        "fitted": {"r": fit.r, "theta": fit.theta, "nbar": fit.nbar,
                   "fidelity": fit.fidelity, "abs_xi": fit.r},
        "covariance_eff": v_eff.tolist(),
        "full": full_block,
        "wigner": {"half_width": cfg.wigner_half_width, "points": cfg.wigner_points},
        "warnings": warn,
    }
    _write_json(out / "summary.json", summary)

    cov_obj = {
        "effective": v_eff.tolist(),
        "full": full_block["covariance"] if full_block else None,
        "fitted": summary["fitted"],
    }
    _write_json(out / "covariance.json", cov_obj)

    rows = []
    for iy, im_a in enumerate(w_eff.im_alpha):
        for ix, re_a in enumerate(w_eff.re_alpha):
            rows.append((re_a, im_a, w_full_vals[iy, ix], w_eff.values[iy, ix]))
    _write_csv(out / "wigner.csv", ["re_alpha", "im_alpha", "w_full", "w_eff"], rows)
    return summary


# ---------------------------------------------------------------------------
# sweep command
# ---------------------------------------------------------------------------

_SWEEP_COLUMNS = [
    "index", "vary", "value", "r", "theta", "gamma_eff", "omega_eff",
    "lambda_re", "lambda_im", "lambda_abs", "stable", "off_resonant",
    "bad_cavity", "gamma_x", "gamma_y", "gamma_z", "error",
]


def _sweep_point(cfg: RunConfig, name: str, value: float):
    try:
        over = {name: value}
        base = dict(
            omega_s=cfg.omega_s, omega_b=cfg.omega_b, g=cfg.g, kappa=cfg.kappa,
            nbar=cfg.nbar, phi_s=cfg.phi_s, phi_b=cfg.phi_b,
        )
        base.update(over)
        kind = "qubit" if cfg.model == "rabi" else "boson"
        p = PhysicalParams(system_kind=kind, **base)
        em = effective_model(p)
        row = [None, name, value, em.squeeze.r, em.squeeze.theta, em.gamma_eff,
               em.omega_eff, em.lam.real, em.lam.imag, abs(em.lam),
               em.regime.stable, em.regime.off_resonant, em.regime.bad_cavity]
        if em.bloch is not None:
            row += [em.bloch.gamma_x, em.bloch.gamma_y, em.bloch.gamma_z]
        else:
            row += ["", "", ""]
        row.append("")
        return row
    except Exception as exc:  # per-point failures land in the row, not the run
        return [None, name, value] + [""] * 13 + [f"{type(exc).__name__}: {exc}"]


def cmd_sweep(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Evaluate the effective-model formulas across a 1-D parameter sweep."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name, values = cfg.sweep_vary, cfg.sweep_values
    if name is None:
        raise ConfigError("sweep command needs config.sweep.vary")

    max_threads = int(os.environ.get("SQZBATH_THREADS", "4") or "4")
    workers = max(1, min(max_threads, len(values)))
    if workers == 1:
        rows = [_sweep_point(cfg, name, v) for v in values]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda v: _sweep_point(cfg, name, v), values))
    for i, row in enumerate(rows):
        row[0] = i

    _write_csv(out / "sweep.csv", _SWEEP_COLUMNS, rows)
    failures = sum(1 for r in rows if r[-1])
    summary = {
        "command": "sweep",
        "vary": name,
        "n_points": len(values),
        "n_failed": failures,
        "all_failed": failures == len(values),
    }
    _write_json(out / "summary.json", summary)
    return summary
