"""Batch driver for ``cvsheet simulate``: time loop, CSV diagnostics, CVS1 snapshots, manifest.

Exit codes: 0 clean run, 1 invariant breach, 2 configuration error,
3 numerical failure.  The manifest is written in every case.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import Scenario, initial_state, load_scenario
from .diagnostics import NoLinearWindowError, energy_es, growth_rate_fit, mode_amplitude
from .dynamics import (FluidSnapshot, Model, PicardInfo, State, picard_map,
                       trajectory_distance, trajectory_from_states)
from .errors import CFLError, CompatibilityError, ConfigError, CvsheetError, SurfaceError
from .fields import SIDES, write_field
from .geometry import w1inf_distance

log = logging.getLogger(__name__)

EXIT_OK, EXIT_BREACH, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# invariant thresholds checked after every step
LIMITS = {
    "mean_f_drift": 1e-12,
    "mean_theta": 1e-10,
    "hN_residual": 1e-5,
    "uN_residual": 1e-6,
    "lid_flux_rate": 1e-8,
}

COLUMNS = ["step", "t", "dt", "lambda_min", "lambda_tangent", "Es", "Es_transport", "Es_velocity",
           "Es_h_plus", "Es_h_minus", "energy", "mean_f", "mean_theta", "hN_residual",
           "uN_residual", "div_omega", "div_j", "lid_flux_rate", "mode_f_abs", "mode_theta_abs",
           "growth_rate"]


def write_snapshot(path: Path, state: State, snap: FluidSnapshot | None = None) -> None:
    """All state records (and recovered u, h if given) in one CVS1 file."""
    path.unlink(missing_ok=True)
    with open(path, "ab") as fh:
        write_field(fh, "time", np.array([[state.t]]))
        write_field(fh, "f", state.iface.f.values)
        write_field(fh, "theta", state.iface.theta.values)
        for s in SIDES:
            for name in ("omega", "j"):
                w = getattr(state.bulk, name)[s].values
                for i in range(3):
                    write_field(fh, f"{name}_{s}_{i + 1}", w[i])
            write_field(fh, f"beta_{s}", np.asarray(state.bulk.beta[s], float)[None])
            write_field(fh, f"gamma_{s}", np.asarray(state.bulk.gamma[s], float)[None])
            if snap is not None:
                for name in ("u", "h"):
                    a = getattr(snap, name)[s]
                    for i in range(3):
                        write_field(fh, f"{name}_{s}_{i + 1}", a[i])


class Monitor:
    """Per-step diagnostics and invariant bookkeeping."""

    def __init__(self, sc: Scenario, model: Model, state0: State, snap0: FluidSnapshot):
        self.sc = sc
        self.model = model
        self.f0 = state0.iface.f.mean()
        self.mode = sc.mode
        self.breaches: list[dict] = []
        self.worst: dict[str, float] = {k: 0.0 for k in LIMITS}
        self.lambda_min = math.inf
        self.times: list[float] = []
        self.amps: list[float] = []
        self.energy0 = model.energy(snap0)
        self.energy_drift = 0.0

    def row(self, step: int, state: State, snap: FluidSnapshot, dt: float,
            lid_flux: dict | None) -> dict:
        m = self.model
        g = m.grid
        rep = m.stability(snap)
        es = energy_es(state.iface.f, state.iface.theta, snap.interface_traces(), 1.0)
        energy = m.energy(snap)
        self.energy_drift = max(self.energy_drift, abs(energy / self.energy0 - 1.0))
        nres = m.normal_residuals(snap)
        div_w = div_j = 0.0
        for s in SIDES:
            fm = snap.regions[s].fmap
            div_w = max(div_w, float(np.max(np.abs(fm.physical_divergence(state.bulk.omega[s].values)))))
            div_j = max(div_j, float(np.max(np.abs(fm.physical_divergence(state.bulk.j[s].values)))))
        area = g.cell_area * g.nx * g.ny
        flux_rate = 0.0 if not lid_flux else max(abs(v) * area / dt for v in lid_flux.values())
        amp = abs(mode_amplitude(state.iface.f, self.mode))
        amp_t = abs(mode_amplitude(state.iface.theta, self.mode))
        growth = ""
        if self.times and amp > 0 and self.amps[-1] > 0 and state.t > self.times[-1]:
            growth = math.log(amp / self.amps[-1]) / (state.t - self.times[-1])
        self.times.append(state.t)
        self.amps.append(amp)
        values = {
            "mean_f_drift": abs(state.iface.f.mean() - self.f0),
            "mean_theta": abs(state.iface.theta.mean()),
            "hN_residual": max(nres["hN_plus"], nres["hN_minus"]),
            "uN_residual": max(nres["uN_plus"], nres["uN_minus"]),
            "lid_flux_rate": flux_rate,
        }
        for k, v in values.items():
            self.worst[k] = max(self.worst[k], v)
            if v > LIMITS[k]:
                self.breaches.append({"step": step, "t": state.t, "invariant": k, "value": v,
                                      "limit": LIMITS[k]})
        self.lambda_min = min(self.lambda_min, rep.lambda_min)
        if self.sc.stability_gate and rep.lambda_min < self.sc.c0:
            self.breaches.append({"step": step, "t": state.t, "invariant": "lambda_min",
                                  "value": rep.lambda_min, "limit": self.sc.c0})
        return {
            "step": step, "t": state.t, "dt": dt, "lambda_min": rep.lambda_min,
            "lambda_tangent": rep.lambda_tangent, "Es": es.value,
            "Es_transport": es.terms["transport"], "Es_velocity": es.terms["velocity"],
            "Es_h_plus": es.terms["magnetic_plus"], "Es_h_minus": es.terms["magnetic_minus"], "energy": energy, "mean_f": state.iface.f.mean(),
            "mean_theta": state.iface.theta.mean(), "hN_residual": values["hN_residual"],
            "uN_residual": values["uN_residual"], "div_omega": div_w, "div_j": div_j,
            "lid_flux_rate": flux_rate, "mode_f_abs": amp, "mode_theta_abs": amp_t,
            "growth_rate": growth,
        }

    def summary(self) -> dict:
        out = {"worst": self.worst, "lambda_min": self.lambda_min,
               "energy_drift": self.energy_drift, "breaches": len(self.breaches)}
        if len(self.times) >= 10:
            try:
                fit = growth_rate_fit(self.times, self.amps, details=True)
                out["growth_fit"] = {"rate": fit.rate, "window": list(fit.window), "rms": fit.rms}
            except (NoLinearWindowError, ValueError) as exc:
                out["growth_fit"] = {"rate": None, "reason": str(exc)}
        return out


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_simulate(config_path: str | Path, out_dir: str | Path | None = None) -> int:
    """Run a scenario; returns the process exit status."""
    t_start = time.perf_counter()
    manifest: dict = {
        "config_path": str(config_path), "code_version": __version__,
        "python": platform.python_version(), "numpy": np.__version__, "status": "started",
        "outputs": [],
    }
    out = Path(out_dir) if out_dir else None

    def finish(code: int) -> int:
        manifest["exit_code"] = code
        manifest["wall_clock_s"] = time.perf_counter() - t_start
        target = out or Path("out") / "unconfigured"
        target.mkdir(parents=True, exist_ok=True)
        path = target / "manifest.json"
        manifest["outputs"] = sorted(set(manifest["outputs"] + [path.name]))
        path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
        return code

    try:
        sc = load_scenario(config_path)
    except ConfigError as exc:
        manifest.update(status="config_error", failure={"key": exc.key, "message": str(exc)})
        log.error("%s", exc)
        return finish(EXIT_CONFIG)
    out = out or Path(sc.output_dir or Path("out") / sc.name)
    manifest["config"] = sc.raw
    manifest["grid"] = {"nx": sc.nx, "ny": sc.ny, "nz": sc.nz}

    model = Model(sc.grid, sc.c0, tol=sc.tol, max_iter=sc.max_iter, cfl_safety=sc.cfl_safety)
    try:
        state = initial_state(sc)
        snap = model.recover_fields(state.iface, state.bulk, check=True)
    except (ConfigError, SurfaceError, CompatibilityError) as exc:
        manifest.update(status="config_error", failure={"message": str(exc)})
        log.error("%s", exc)
        return finish(EXIT_CONFIG)

    rep = model.stability(snap)
    manifest["initial"] = {"lambda_min": rep.lambda_min, "max_abs_f": float(np.max(np.abs(state.iface.f.values))),
                           "delta": model.delta}
    if sc.stability_gate:
        fmax = float(np.max(np.abs(state.iface.f.values)))
        if rep.lambda_min < 2 * sc.c0 or fmax > 1 - 2 * sc.c0:
            msg = (f"initial data fails the stability gate: Lambda = {rep.lambda_min:.4g} "
                   f"(need >= {2 * sc.c0:.4g}), max|f| = {fmax:.4g} (need <= {1 - 2 * sc.c0:.4g}); "
                   "set run.stability_gate = false to study unstable data")
            manifest.update(status="config_error", failure={"key": "run.stability_gate", "message": msg})
            log.error("%s", msg)
            return finish(EXIT_CONFIG)

    dt_cfl = model.cfl_dt(snap)
    if sc.dt > 0:
        if sc.dt > dt_cfl:
            msg = f"time.dt = {sc.dt:.4g} exceeds the CFL bound; use time.dt <= {dt_cfl:.4g}"
            manifest.update(status="config_error", failure={"key": "time.dt", "message": msg,
                                                            "suggested_dt": dt_cfl})
            log.error("%s", msg)
            return finish(EXIT_CONFIG)
        n_steps = max(1, int(math.ceil(sc.t_end / sc.dt - 1e-9)))
    else:
        n_steps = max(1, int(math.ceil(sc.t_end / dt_cfl)))
    dt = sc.t_end / n_steps
    manifest["time"] = {"dt": dt, "steps": n_steps, "t_end": sc.t_end, "dt_cfl_initial": dt_cfl}

    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "diagnostics.csv"
    manifest["outputs"].append(csv_path.name)
    monitor = Monitor(sc, model, state, snap)
    f_initial = state.iface.f
    keep = [state] if sc.picard_iterations > 0 else None
    step = 0
    try:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            r = monitor.row(0, state, snap, dt, None)
            writer.writerow([_fmt(r[c]) for c in COLUMNS])
            for step in range(1, n_steps + 1):
                state, info = model.step_rk4(state, dt)
                snap = model.recover_fields(state.iface, state.bulk)
                r = monitor.row(step, state, snap, dt, info.lid_flux_pre)
                writer.writerow([_fmt(r[c]) for c in COLUMNS])
                if not np.all(np.isfinite(state.iface.f.values)):
                    raise FloatingPointError("non-finite interface height")
                if keep is not None:
                    keep.append(state)
                if sc.snapshot_every and step % sc.snapshot_every == 0:
                    name = f"snapshot_{step:06d}.cvs1"
                    write_snapshot(out / name, state, snap)
                    manifest["outputs"].append(name)
    except (CvsheetError, FloatingPointError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, CFLError):
            manifest["suggested_dt"] = exc.dt_max
        manifest.update(status="numerical_failure",
                        failure={"step": step, "t": state.t, "message": str(exc)},
                        final=monitor.summary())
        log.error("step %d: %s", step, exc)
        return finish(EXIT_NUMERIC)

    write_snapshot(out / "final.cvs1", state, snap)
    manifest["outputs"].append("final.cvs1")

    if keep is not None:
        traj = trajectory_from_states(model, np.linspace(0.0, sc.t_end, n_steps + 1), keep)
        info = PicardInfo()
        gaps = []
        for _ in range(sc.picard_iterations):
            new = picard_map(model, traj, info)
            gaps.append(trajectory_distance(new, traj))
            traj = new
        manifest["picard"] = {"iterations": sc.picard_iterations, "successive_distances": gaps,
                              "clamped": info.clamped}

    manifest["final"] = monitor.summary()
    # harmonic coordinates back to the initial surface are only certified inside delta0
    drift = w1inf_distance(state.iface.f, f_initial, sc.grid)
    manifest["final"]["surface_w1inf_drift"] = drift
    manifest["final"]["within_delta0"] = drift <= sc.delta0
    manifest["breaches"] = monitor.breaches[:50]
    manifest["status"] = "breach" if monitor.breaches else "ok"
    return finish(EXIT_BREACH if monitor.breaches else EXIT_OK)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


__all__ = ["COLUMNS", "LIMITS", "run_simulate", "write_snapshot"]
