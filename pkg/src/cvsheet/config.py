"""Scenario configuration: flat ``key = value`` text with dotted sections.

Schema (defaults in brackets)::

    scenario.name            run label                         [required]
    grid.nx, grid.ny         horizontal modes                  [32, 32]
    grid.nz                  Chebyshev nodes per region        [17]
    initial.kind             planar_kh | current_sheet | magnetized_kh | custom
    initial.file             CVS1 snapshot (custom only)
    initial.theta            eigen | rest                      [eigen]
    perturbation.mode        two integers, e.g. ``1, 0``       [1, 0]
    perturbation.amplitude   height of the cosine bump         [1e-3]
    physics.v                half velocity jump (2 numbers)    [0, 0]
    physics.w                mean tangential velocity          [0, 0]
    physics.h_plus           upper magnetic field (2 numbers)  [0, 0]
    physics.h_minus          lower magnetic field (2 numbers)  [0, 0]
    physics.c0               margin constant                   [required]
    time.dt                  step (0 picks the CFL step)       [0]
    time.t_end               final time                        [1]
    time.cfl_safety          fraction of the RK4 limit         [0.5]
    picard.iterations        Picard passes after the run       [0]
    run.stability_gate       refuse data with Lambda < 2 c0    [true]
    run.seed                 seed for randomized probes        [0]
    output.dir               output directory                  [out/<name>]
    output.snapshot_every    steps between CVS1 snapshots      [0 = final only]
    solver.tol               elliptic relative tolerance       [1e-10]
    elliptic.max_iter        Krylov iteration cap              [500]
    geometry.delta0          W^1,inf radius around the initial
                             surface for harmonic coordinates  [0.1]

``geometry.c0``, ``geometry.Nz`` and ``elliptic.tol`` are accepted as
synonyms of ``physics.c0``, ``grid.nz`` and ``solver.tol``.

Lines starting with ``#`` and blank lines are ignored.  Numbers may be
separated by commas or whitespace.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fields import SIDES, Grid, StripVector, TorusScalar, read_fields

KINDS = ("planar_kh", "current_sheet", "magnetized_kh", "custom")

DEFAULTS = {
    "grid.nx": "32", "grid.ny": "32", "grid.nz": "17",
    "initial.kind": "planar_kh", "initial.theta": "eigen",
    "perturbation.mode": "1, 0", "perturbation.amplitude": "1e-3",
    "physics.v": "0, 0", "physics.w": "0, 0", "physics.h_plus": "0, 0", "physics.h_minus": "0, 0",
    "time.dt": "0", "time.t_end": "1", "time.cfl_safety": "0.5",
    "picard.iterations": "0",
    "run.stability_gate": "true", "run.seed": "0",
    "output.snapshot_every": "0", "solver.tol": "1e-10",
    "elliptic.max_iter": "500", "geometry.delta0": "0.1",
}
ALIASES = {"geometry.c0": "physics.c0", "geometry.Nz": "grid.nz", "elliptic.tol": "solver.tol"}
REQUIRED = ("scenario.name", "physics.c0")


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        out[key] = value
    return out


def _floats(key: str, raw: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(key, f"not a list of numbers: {raw!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(key, f"expected {n} numbers, got {len(vals)}")
    return vals


def _bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"not a boolean: {raw!r}")


@dataclass
class Scenario:
    name: str
    nx: int
    ny: int
    nz: int
    kind: str
    c0: float
    v: tuple = (0.0, 0.0)
    w: tuple = (0.0, 0.0)
    h_plus: tuple = (0.0, 0.0)
    h_minus: tuple = (0.0, 0.0)
    mode: tuple = (1, 0)
    amplitude: float = 1e-3
    theta_mode: str = "eigen"
    initial_file: str | None = None
    dt: float = 0.0
    t_end: float = 1.0
    cfl_safety: float = 0.5
    picard_iterations: int = 0
    stability_gate: bool = True
    seed: int = 0
    output_dir: str = ""
    snapshot_every: int = 0
    tol: float = 1e-10
    max_iter: int = 500
    delta0: float = 0.1
    raw: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return Grid.make(self.nx, self.ny, self.nz)

    def u_plus(self) -> np.ndarray:
        return np.asarray(self.w) + np.asarray(self.v)

    def u_minus(self) -> np.ndarray:
        return np.asarray(self.w) - np.asarray(self.v)


def scenario_from_dict(d: dict[str, str]) -> Scenario:
    d = dict(d)
    for alias, key in ALIASES.items():
        if alias in d:
            if key in d and d[key] != d[alias]:
                raise ConfigError(alias, f"conflicts with {key} = {d[key]!r}")
            d[key] = d.pop(alias)
    for key in REQUIRED:
        if key not in d or not d[key]:
            raise ConfigError(key, "missing required key")
    cfg = dict(DEFAULTS)
    cfg.update(d)

    def num(key, cast=float):
        try:
            return cast(cfg[key])
        except ValueError:
            raise ConfigError(key, f"not a valid {cast.__name__}: {cfg[key]!r}") from None

    kind = cfg["initial.kind"]
    if kind not in KINDS:
        raise ConfigError("initial.kind", f"must be one of {', '.join(KINDS)}")
    if kind == "custom" and not cfg.get("initial.file"):
        raise ConfigError("initial.file", "required when initial.kind = custom")
    if cfg["initial.theta"] not in ("eigen", "rest"):
        raise ConfigError("initial.theta", "must be 'eigen' or 'rest'")
    mode = _floats("perturbation.mode", cfg["perturbation.mode"], 2)
    if any(m != int(m) for m in mode) or mode == (0.0, 0.0):
        raise ConfigError("perturbation.mode", "must be two integers, not both zero")
    sc = Scenario(
        name=cfg["scenario.name"], nx=num("grid.nx", int), ny=num("grid.ny", int),
        nz=num("grid.nz", int), kind=kind, c0=num("physics.c0"),
        v=_floats("physics.v", cfg["physics.v"], 2), w=_floats("physics.w", cfg["physics.w"], 2),
        h_plus=_floats("physics.h_plus", cfg["physics.h_plus"], 2),
        h_minus=_floats("physics.h_minus", cfg["physics.h_minus"], 2),
        mode=(int(mode[0]), int(mode[1])), amplitude=num("perturbation.amplitude"),
        theta_mode=cfg["initial.theta"], initial_file=cfg.get("initial.file"),
        dt=num("time.dt"), t_end=num("time.t_end"), cfl_safety=num("time.cfl_safety"),
        picard_iterations=num("picard.iterations", int),
        stability_gate=_bool("run.stability_gate", cfg["run.stability_gate"]),
        seed=num("run.seed", int), output_dir=cfg.get("output.dir", ""),
        snapshot_every=num("output.snapshot_every", int), tol=num("solver.tol"),
        max_iter=num("elliptic.max_iter", int), delta0=num("geometry.delta0"), raw=cfg)
    if not 0.0 < sc.c0 < 0.5:
        raise ConfigError("physics.c0", "must lie in (0, 1/2)")
    if sc.nz < 5 or sc.nx < 4 or sc.ny < 4:
        raise ConfigError("grid", "need nx, ny >= 4 and nz >= 5")
    if sc.max_iter < 1:
        raise ConfigError("elliptic.max_iter", "must be positive")
    if sc.delta0 <= 0:
        raise ConfigError("geometry.delta0", "must be positive")
    if sc.dt < 0 or sc.t_end <= 0:
        raise ConfigError("time", "need dt >= 0 and t_end > 0")
    if not 0.0 < sc.cfl_safety <= 1.0:
        raise ConfigError("time.cfl_safety", "must lie in (0, 1]")
    if kind == "planar_kh" and (any(sc.h_plus) or any(sc.h_minus)):
        raise ConfigError("initial.kind", "planar_kh has no magnetic field; use magnetized_kh")
    if kind == "current_sheet" and any(sc.v):
        raise ConfigError("physics.v", "a current sheet has no velocity jump")
    return sc


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {p}: {exc.strerror}") from None
    return scenario_from_dict(parse_text(text))


# -- initial data ---------------------------------------------------------------------

def initial_state(sc: Scenario):
    """State at t = 0 for the scenario (see :func:`cvsheet.dynamics.planar_state`)."""
    from .dynamics import BulkState, InterfaceState, State, planar_state

    g = sc.grid
    if sc.kind != "custom":
        return planar_state(g, sc.u_plus(), sc.u_minus(), sc.h_plus, sc.h_minus,
                            amplitude=sc.amplitude, mode=sc.mode, theta_mode=sc.theta_mode)
    data = read_fields(sc.initial_file)
    try:
        f = data["f"]
        theta = data["theta"]
        if f.shape != g.shape2:
            raise ConfigError("initial.file", f"grid {f.shape} does not match the configured grid")
        bulk = BulkState(
            {s: StripVector(np.stack([data[f"omega_{s}_{i}"] for i in (1, 2, 3)]), g, s)
             for s in SIDES},
            {s: StripVector(np.stack([data[f"j_{s}_{i}"] for i in (1, 2, 3)]), g, s)
             for s in SIDES},
            {s: data[f"beta_{s}"].ravel().copy() for s in SIDES},
            {s: data[f"gamma_{s}"].ravel().copy() for s in SIDES})
        t0 = float(data["time"].ravel()[0]) if "time" in data else 0.0
    except KeyError as exc:
        raise ConfigError("initial.file", f"snapshot lacks record {exc.args[0]}") from None
    return State(t0, InterfaceState(TorusScalar(f, g), TorusScalar(theta - theta.mean(), g)), bulk)


__all__ = ["KINDS", "Scenario", "initial_state", "load_scenario", "parse_text",
           "scenario_from_dict"]
