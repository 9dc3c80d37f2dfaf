"""Evolution of the interface, vorticity and current in the two regions.

The unknowns are the interface height ``f``, its time derivative
``theta = u . N`` (mean zero), the vorticity ``omega`` and current ``j`` of
each region (physical components sampled on the flattened grid, which is
kept fixed in z), and the lid means ``beta`` of u and ``gamma`` of h.
Velocity and magnetic field are recovered from these by div-curl solves.

The interface equation is

    d_t theta = -(u+ + u-).grad theta - 1/2 sum_pm (u_i u_j - h_i h_j) d_ij f
                + D Ntil^{-1} (G/2 + U) - N+ Ntil^{-1} Q-  - N- Ntil^{-1} Q+

with traces taken on the interface, ``D = N+ - N-``, ``Ntil = N+ + N-``,
``G = G+ - G-`` the jump of the curvature terms, ``U = (u+ - u-).grad theta``
and ``Q = N . grad(p_uu - p_hh)`` the normal derivative of the quadratic
pressures.  It is algebraically the same as

    d_t theta = N+ Ntil^{-1} (g+ - g-) - g+,   g = 2 u.grad theta + Q + G,

which the tests use as an independent assembly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .diagnostics import InterfaceTraces, lambda_stability
from .divcurl import DivCurlData, divcurl_solve, normal_trace
from .dno import DnoOperator
from .elliptic import (DEFAULT_MAX_ITER, DEFAULT_TOL, BoundaryCondition, Region, dirichlet,
                       div_free_projection, neumann, trace_product)
from .errors import CFLError
from .fields import (SIDES, Grid, Side, StripVector, TorusScalar, fft2, grad2,
                     hessian2, ifft2)
from .geometry import Surface, common_delta

RK4_IMAG_LIMIT = 2.0 * np.sqrt(2.0)


# -- state containers -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterfaceState:
    f: TorusScalar
    theta: TorusScalar

    @property
    def grid(self) -> Grid:
        return self.f.grid


@dataclass(frozen=True, eq=False)
class BulkState:
    omega: dict
    j: dict
    beta: dict
    gamma: dict

    @classmethod
    def zeros(cls, grid: Grid) -> "BulkState":
        return cls({s: StripVector.zeros(grid, s) for s in SIDES},
                   {s: StripVector.zeros(grid, s) for s in SIDES},
                   {s: np.zeros(2) for s in SIDES}, {s: np.zeros(2) for s in SIDES})


@dataclass(frozen=True, eq=False)
class State:
    t: float
    iface: InterfaceState
    bulk: BulkState

    @property
    def grid(self) -> Grid:
        return self.iface.grid

    def pack(self) -> dict:
        out = {"f": self.iface.f.values, "theta": self.iface.theta.values}
        for s in SIDES:
            out[f"omega_{s}"] = self.bulk.omega[s].values
            out[f"j_{s}"] = self.bulk.j[s].values
            out[f"beta_{s}"] = np.asarray(self.bulk.beta[s], float)
            out[f"gamma_{s}"] = np.asarray(self.bulk.gamma[s], float)
        return out

    @classmethod
    def unpack(cls, t: float, d: dict, grid: Grid) -> "State":
        iface = InterfaceState(TorusScalar(d["f"], grid), TorusScalar(d["theta"], grid))
        bulk = BulkState({s: StripVector(d[f"omega_{s}"], grid, s) for s in SIDES},
                         {s: StripVector(d[f"j_{s}"], grid, s) for s in SIDES},
                         {s: np.array(d[f"beta_{s}"], float) for s in SIDES},
                         {s: np.array(d[f"gamma_{s}"], float) for s in SIDES})
        return cls(t, iface, bulk)


def _axpy(y: dict, a: float, x: dict) -> dict:
    return {k: y[k] + a * x[k] for k in y}


# -- recovered fields --------------------------------------------------------------

@dataclass(eq=False)
class FluidSnapshot:
    """Recovered u, h (arrays of shape (3, nx, ny, nz)) on both regions."""

    iface: InterfaceState
    bulk: BulkState
    surface: Surface
    regions: dict
    u: dict
    h: dict
    residuals: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> Grid:
        return self.iface.grid

    def trace(self, name: Literal["u", "h"], side: Side) -> np.ndarray:
        return getattr(self, name)[side][..., 0]

    def lid_trace(self, name: Literal["u", "h"], side: Side) -> np.ndarray:
        return getattr(self, name)[side][..., -1]

    def interface_traces(self) -> InterfaceTraces:
        return InterfaceTraces(tuple(self.trace("u", "plus")), tuple(self.trace("u", "minus")),
                               tuple(self.trace("h", "plus")), tuple(self.trace("h", "minus")))

    def gradients(self, side: Side) -> tuple[np.ndarray, np.ndarray]:
        key = ("grad", side)
        if key not in self._cache:
            fm = self.regions[side].fmap
            both = fm.vector_gradient(np.concatenate([self.u[side], self.h[side]]))
            self._cache[key] = (both[:3], both[3:])
        return self._cache[key]

    def quadratic_pressure(self, side: Side) -> np.ndarray:
        """``p_{u,u} - p_{h,h}`` on one side (zero on the interface)."""
        key = ("P", side)
        if key not in self._cache:
            Gu, Gh = self.gradients(side)
            F = trace_product(Gh, Gh) - trace_product(Gu, Gu)
            g = self.grid
            F = ifft2(fft2(F) * g.dealias_mask[..., None], g)
            region = self.regions[side]
            if np.max(np.abs(F)) <= 1e-300:
                P = np.zeros(g.shape3)
            else:
                P = region.solve_poisson(F, BoundaryCondition(dirichlet(None), neumann(None))).psi.values
            self._cache[key] = P
        return self._cache[key]

    def dn(self, side: str) -> DnoOperator:
        key = ("dn", side)
        if key not in self._cache:
            self._cache[key] = DnoOperator(self.surface, side, regions=self.regions)
        return self._cache[key]


def build_regions(surface: Surface, delta: float, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER, precond_cache: dict | None = None) -> dict:
    return {s: Region(surface, s, delta=delta, tol=tol, max_iter=max_iter,
                      precond_cache=precond_cache) for s in SIDES}


# -- the model ------------------------------------------------------------------------

@dataclass
class StepInfo:
    """Book-keeping of one time step."""

    dt: float
    dt_max: float
    lid_flux_pre: dict
    lid_flux_post: dict
    snapshot: FluidSnapshot


class Model:
    """Discretized limit system on a fixed grid with a fixed flattening parameter."""

    def __init__(self, grid: Grid, c0: float, *, delta: float | None = None,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 dn_tol: float = 1e-10, cfl_safety: float = 0.5, check_surface: bool = True):
        if grid.nz < 4:
            raise ValueError("the model needs a grid with nz >= 4")
        self.grid = grid
        self.c0 = c0
        self.delta = delta
        self.tol = tol
        self.max_iter = max_iter
        self.dn_tol = dn_tol
        self.cfl_safety = cfl_safety
        self.check_surface = check_surface
        self.rhs_evaluations = 0
        self._precond_cache: dict = {}

    def surface(self, f: TorusScalar | np.ndarray) -> Surface:
        fv = f if isinstance(f, TorusScalar) else TorusScalar(f, self.grid)
        return Surface(fv, self.c0, check=self.check_surface)

    def fix_delta(self, f: TorusScalar | np.ndarray) -> float:
        if self.delta is None:
            self.delta = common_delta(self.surface(f))
        return self.delta

    def regions(self, f) -> dict:
        surf = self.surface(f)
        return build_regions(surf, self.fix_delta(surf.f), self.tol, self.max_iter,
                             self._precond_cache)

    # -- field recovery ------------------------------------------------------------

    def recover_fields(self, iface: InterfaceState, bulk: BulkState, *,
                       check: bool = False, enforce: bool = True,
                       project: bool = False) -> FluidSnapshot:
        """Div-curl recovery of u and h on both sides.

        ``project=True`` first replaces omega and j by their divergence-free
        parts on the current surface (needed when the curl data was built on
        a different surface, as for Picard iterates).
        """
        surf = self.surface(iface.f)
        regions = build_regions(surf, self.fix_delta(surf.f), self.tol, self.max_iter,
                                self._precond_cache)
        if project:
            bulk = self.project_bulk(bulk, regions)
        u, h, res = {}, {}, {}
        for s in SIDES:
            ru = divcurl_solve(DivCurlData(bulk.omega[s], None, iface.theta,
                                           tuple(bulk.beta[s])), regions[s], s, check=check,
                               enforce=enforce)
            rh = divcurl_solve(DivCurlData(bulk.j[s], None, None, tuple(bulk.gamma[s])),
                               regions[s], s, check=check, enforce=enforce)
            u[s], h[s] = ru.u.values, rh.u.values
            res[f"u_{s}"], res[f"h_{s}"] = ru.residuals, rh.residuals
        return FluidSnapshot(iface, bulk, surf, regions, u, h, res)

    def project_bulk(self, bulk: BulkState, regions: dict) -> BulkState:
        """Divergence-free parts of omega and j with lid flux of the third component removed."""
        out = {"omega": {}, "j": {}}
        for name in out:
            for s in SIDES:
                w = getattr(bulk, name)[s].values
                if np.any(w):
                    w = div_free_projection(w, regions[s], s).values.copy()
                    w[2] -= w[2][..., -1].mean()
                out[name][s] = StripVector(w, self.grid, s)
        return BulkState(out["omega"], out["j"], bulk.beta, bulk.gamma)

    # -- interface equation ------------------------------------------------------------

    def _interface_terms(self, snap: FluidSnapshot, f: np.ndarray, theta: np.ndarray) -> dict:
        g = self.grid
        f11, f12, f22 = hessian2(f, g)
        t1, t2 = grad2(theta, g)
        out = {}
        for s in SIDES:
            u1, u2, _ = snap.trace("u", s)
            h1, h2, _ = snap.trace("h", s)
            G = ((u1 * u1 - h1 * h1) * f11 + 2 * (u1 * u2 - h1 * h2) * f12
                 + (u2 * u2 - h2 * h2) * f22)
            A = u1 * t1 + u2 * t2
            Q = snap.regions[s].interface_flux(snap.quadratic_pressure(s))
            out[s] = (G, A, Q)
        return out

    def theta_rhs(self, iface: InterfaceState, snap: FluidSnapshot, *,
                  form: Literal["expanded", "compact"] = "expanded",
                  f: np.ndarray | None = None, theta: np.ndarray | None = None) -> TorusScalar:
        """Time derivative of theta.

        ``f`` and ``theta`` default to the state values; passing them
        separately evaluates the right side with coefficients (traces,
        pressures, DN operators) frozen at ``snap``, which is the linearized
        system used by the Picard map.
        """
        f = iface.f.values if f is None else f
        theta = iface.theta.values if theta is None else theta
        terms = self._interface_terms(snap, f, theta)
        Gp, Ap, Qp = terms["plus"]
        Gm, Am, Qm = terms["minus"]
        Nsum, Np, Nm = snap.dn("sum"), snap.dn("plus"), snap.dn("minus")
        inv = lambda r: Nsum.inverse_array(r, tol=self.dn_tol)
        if form == "compact":
            gp = 2 * Ap + Qp + Gp
            gm = 2 * Am + Qm + Gm
            out = Np.apply_array(inv(gp - gm)) - gp
        elif form == "expanded":
            # D Ntil^{-1} r - N+ Ntil^{-1} Q- - N- Ntil^{-1} Q+, grouped by
            # linearity of Ntil^{-1} so that two inverses and two applications suffice
            r = 0.5 * (Gp - Gm) + (Ap - Am)
            nonlocal_part = Np.apply_array(inv(r - Qm)) - Nm.apply_array(inv(r + Qp))
            out = -(Ap + Am) - 0.5 * (Gp + Gm) + nonlocal_part
        else:
            raise ValueError(f"unknown form {form!r}")
        return TorusScalar(out - out.mean(), self.grid)

    def interface_pressure(self, iface: InterfaceState, snap: FluidSnapshot) -> np.ndarray:
        """Interface pressure ``Ntil^{-1}(g+ - g-)`` (mean zero)."""
        key = ("pbar",)
        if key not in snap._cache:
            terms = self._interface_terms(snap, iface.f.values, iface.theta.values)
            Gp, Ap, Qp = terms["plus"]
            Gm, Am, Qm = terms["minus"]
            snap._cache[key] = snap.dn("sum").inverse_array((2 * Ap + Qp + Gp) - (2 * Am + Qm + Gm),
                                                            tol=self.dn_tol)
        return snap._cache[key]

    # -- bulk equations ------------------------------------------------------------------

    def vorticity_rhs(self, iface: InterfaceState, bulk: BulkState,
                      snap: FluidSnapshot) -> tuple[dict, dict]:
        """Time derivatives of omega and j at fixed flattened coordinates."""
        g = self.grid
        d_omega, d_j = {}, {}
        for s in SIDES:
            fm = snap.regions[s].fmap
            u, h = snap.u[s], snap.h[s]
            om, jj = bulk.omega[s].values, bulk.j[s].values
            Gu, Gh = snap.gradients(s)
            if not (np.any(om) or np.any(jj) or (np.any(Gu) and np.any(Gh))):
                d_omega[s] = np.zeros_like(om)
                d_j[s] = np.zeros_like(jj)
                continue
            Gw = fm.vector_gradient(np.concatenate([om, jj]))
            Go, Gj = Gw[:3], Gw[3:]

            def along(a, G):
                return np.einsum("j...,ij...->i...", a, G)

            # d/dt at fixed z adds (d_t rho / rho_z) d_z
            shift = fm.extend(iface.theta.values) / fm.rho_z
            om_z = om @ g.dzt
            j_z = jj @ g.dzt
            src = np.zeros_like(om)
            for i in range(3):
                src += np.cross(Gu[i], Gh[i], axis=0)
            dw = -along(u, Go) + along(h, Gj) + along(om, Gu) - along(jj, Gh) + shift * om_z
            dj = (-along(u, Gj) + along(h, Go) + along(jj, Gu) - along(om, Gh) - 2 * src
                  + shift * j_z)
            mask = g.dealias_mask[..., None, None]
            both = ifft2(fft2(np.moveaxis(np.concatenate([dw, dj]), 0, -1)) * mask, g)
            both = np.moveaxis(both, -1, 0)
            d_omega[s], d_j[s] = both[:3], both[3:]
        return d_omega, d_j

    def boundary_average_rhs(self, snap: FluidSnapshot) -> tuple[dict, dict]:
        """Time derivatives of the lid means of u and h (mean over the lid)."""
        g = self.grid
        dbeta, dgamma = {}, {}
        for s in SIDES:
            u = snap.lid_trace("u", s)
            h = snap.lid_trace("h", s)
            du = [grad2(u[i], g) for i in range(2)]
            dh = [grad2(h[i], g) for i in range(2)]
            # the lid is flat and u3 = h3 = 0 there, so only horizontal
            # derivatives contribute
            uu = [u[0] * du[i][0] + u[1] * du[i][1] for i in range(2)]
            hh = [h[0] * dh[i][0] + h[1] * dh[i][1] for i in range(2)]
            uh = [u[0] * dh[i][0] + u[1] * dh[i][1] for i in range(2)]
            hu = [h[0] * du[i][0] + h[1] * du[i][1] for i in range(2)]
            dbeta[s] = -np.array([np.mean(uu[i] - hh[i]) for i in range(2)])
            dgamma[s] = -np.array([np.mean(uh[i] - hu[i]) for i in range(2)])
        return dbeta, dgamma

    # -- full right side and time stepping -----------------------------------------------

    def rhs(self, state: State, *, enforce: bool = True) -> tuple[dict, FluidSnapshot]:
        self.rhs_evaluations += 1
        snap = self.recover_fields(state.iface, state.bulk, enforce=enforce)
        dtheta = self.theta_rhs(state.iface, snap)
        d_om, d_j = self.vorticity_rhs(state.iface, state.bulk, snap)
        dbeta, dgamma = self.boundary_average_rhs(snap)
        out = {"f": state.iface.theta.values, "theta": dtheta.values}
        for s in SIDES:
            out[f"omega_{s}"] = d_om[s]
            out[f"j_{s}"] = d_j[s]
            out[f"beta_{s}"] = dbeta[s]
            out[f"gamma_{s}"] = dgamma[s]
        return out, snap

    def cfl_dt(self, snap: FluidSnapshot) -> float:
        """Largest admissible step: RK4 imaginary-axis limit over the fastest rate.

        Rates: the planar interface frequency per dealiased mode with the
        interface traces at their sup, horizontal transport of omega +- j
        with u -+ h, and vertical transport over the smallest Chebyshev
        spacing.
        """
        g = self.grid
        mask = g.dealias_mask
        k1 = np.abs(np.broadcast_to(g.k[0], g.kabs.shape)[mask])
        k2 = np.abs(np.broadcast_to(g.k[1], g.kabs.shape)[mask])
        kmax = np.array([k1.max(), k2.max()])
        tr = snap.interface_traces()
        sup = lambda a: np.array([np.max(np.abs(a[0])), np.max(np.abs(a[1]))])
        # per mode: |w.xi| + sqrt((v.xi)^2 + ((h+.xi)^2 + (h-.xi)^2)/2), coefficients at their sup
        dot = lambda a: sup(a)[0] * k1 + sup(a)[1] * k2
        rate = float(np.max(dot(tr.w) + np.sqrt(dot(tr.v) ** 2
                                                + 0.5 * (dot(tr.hp) ** 2 + dot(tr.hm) ** 2))))
        dzmin = g.z[0] - g.z[1]
        for s in SIDES:
            fm = snap.regions[s].fmap
            u, h = snap.u[s], snap.h[s]
            dtr = fm.extend(snap.iface.theta.values)
            # omega +- j travel with the Elsasser fields u -+ h
            for a in (u - h, u + h):
                rate = max(rate, float(sup(a) @ kmax))
                zvel = (a[2] - fm.grad_rho[0] * a[0] - fm.grad_rho[1] * a[1] - dtr) / fm.rho_z
                rate = max(rate, float(np.max(np.abs(zvel))) / dzmin)
        return float("inf") if rate == 0 else self.cfl_safety * RK4_IMAG_LIMIT / rate

    def _stage(self, t: float, y: dict) -> State:
        y = dict(y)
        y["theta"] = y["theta"] - y["theta"].mean()
        return State.unpack(t, y, self.grid)

    def step_rk4(self, state: State, dt: float, *, enforce_cfl: bool = True,
                 project: bool = True) -> tuple[State, StepInfo]:
        y0 = state.pack()
        # curl data inside the stepper is solenoidal only up to discretization
        # error, so compatibility defects are recorded rather than enforced
        k1, snap0 = self.rhs(state, enforce=False)
        dt_max = self.cfl_dt(snap0)
        if enforce_cfl and dt > dt_max * (1 + 1e-12):
            raise CFLError(dt, dt_max)
        k2, _ = self.rhs(self._stage(state.t + dt / 2, _axpy(y0, dt / 2, k1)), enforce=False)
        k3, _ = self.rhs(self._stage(state.t + dt / 2, _axpy(y0, dt / 2, k2)), enforce=False)
        k4, _ = self.rhs(self._stage(state.t + dt, _axpy(y0, dt, k3)), enforce=False)
        y1 = {k: y0[k] + dt / 6 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]) for k in y0}
        y1["theta"] = y1["theta"] - y1["theta"].mean()
        pre = {f"{name}_{s}": float(y1[f"{name}_{s}"][2][..., -1].mean())
               for name in ("omega", "j") for s in SIDES}
        if project:
            tmp = State.unpack(state.t + dt, y1, self.grid)
            bulk = self.project_bulk(tmp.bulk, self.regions(y1["f"]))
            for s in SIDES:
                y1[f"omega_{s}"] = bulk.omega[s].values
                y1[f"j_{s}"] = bulk.j[s].values
        post = {f"{name}_{s}": float(y1[f"{name}_{s}"][2][..., -1].mean())
                for name in ("omega", "j") for s in SIDES}
        new = State.unpack(state.t + dt, y1, self.grid)
        return new, StepInfo(dt, dt_max, pre, post, snap0)

    # -- residuals of the original equations ----------------------------------------------

    def full_pressure(self, iface: InterfaceState, snap: FluidSnapshot, side: Side, *,
                      ablate_quadratic: bool = False) -> np.ndarray:
        pbar = self.interface_pressure(iface, snap)
        ext = snap.regions[side].harmonic_extension(pbar).values
        return ext if ablate_quadratic else ext + snap.quadratic_pressure(side)

    def residual_momentum(self, prev: FluidSnapshot, mid: FluidSnapshot, nxt: FluidSnapshot,
                          dt: float, *, ablate_quadratic: bool = False) -> dict:
        """Norms of the momentum residual w, the induction residual H and div omega, div j.

        Time derivatives are centred differences at fixed flattened
        coordinates, corrected by ``(d_t rho / rho_z) d_z`` to physical ones.
        """
        out = {}
        for s in SIDES:
            fm = mid.regions[s].fmap
            g = self.grid
            shift = fm.extend(mid.iface.theta.values) / fm.rho_z
            u, h = mid.u[s], mid.h[s]
            du = (nxt.u[s] - prev.u[s]) / (2 * dt) - shift * (u @ g.dzt)
            dh = (nxt.h[s] - prev.h[s]) / (2 * dt) - shift * (h @ g.dzt)
            Gu, Gh = mid.gradients(s)
            p = self.full_pressure(mid.iface, mid, s, ablate_quadratic=ablate_quadratic)
            gp = np.stack(fm.physical_gradient(p))
            along = lambda a, G: np.einsum("j...,ij...->i...", a, G)
            w = du + along(u, Gu) - along(h, Gh) + gp
            H = dh - along(h, Gu) + along(u, Gh)
            norm = lambda a: np.sqrt(fm.volume_integral(np.sum(a**2, axis=0)))
            out[f"w_{s}"] = norm(w)
            out[f"H_{s}"] = norm(H)
            out[f"div_omega_{s}"] = float(np.sqrt(fm.volume_integral(
                fm.physical_divergence(mid.bulk.omega[s].values) ** 2)))
            out[f"div_j_{s}"] = float(np.sqrt(fm.volume_integral(
                fm.physical_divergence(mid.bulk.j[s].values) ** 2)))
        return out

    # -- diagnostics helpers ------------------------------------------------------------

    def stability(self, snap: FluidSnapshot):
        f1, f2 = grad2(snap.iface.f.values, self.grid)
        return lambda_stability(snap.interface_traces(), slope=(f1, f2))

    def normal_residuals(self, snap: FluidSnapshot) -> dict:
        theta = snap.iface.theta.values
        scale = max(float(np.max(np.abs(theta))), 1.0)
        out = {}
        for s in SIDES:
            r = snap.regions[s]
            out[f"hN_{s}"] = float(np.max(np.abs(normal_trace(r, snap.h[s]))))
            out[f"uN_{s}"] = float(np.max(np.abs(normal_trace(r, snap.u[s]) - theta))) / scale
        return out

    def energy(self, snap: FluidSnapshot) -> float:
        e = 0.0
        for s in SIDES:
            fm = snap.regions[s].fmap
            e += fm.volume_integral(np.sum(snap.u[s] ** 2, axis=0) + np.sum(snap.h[s] ** 2, axis=0))
        return e


# -- module-level wrappers -------------------------------------------------------------

def recover_fields(model: Model, iface: InterfaceState, bulk: BulkState) -> FluidSnapshot:
    return model.recover_fields(iface, bulk, check=True)


def theta_rhs(model: Model, iface: InterfaceState, snap: FluidSnapshot) -> TorusScalar:
    return model.theta_rhs(iface, snap)


def vorticity_rhs(model: Model, iface: InterfaceState, bulk: BulkState, snap: FluidSnapshot):
    return model.vorticity_rhs(iface, bulk, snap)


def boundary_average_rhs(model: Model, snap: FluidSnapshot):
    return model.boundary_average_rhs(snap)


def step_rk4(model: Model, state: State, dt: float) -> tuple[State, StepInfo]:
    return model.step_rk4(state, dt)


# -- initial data ------------------------------------------------------------------------

def planar_state(grid: Grid, u_plus, u_minus, h_plus, h_minus, *, amplitude: float = 0.0,
                 mode: tuple[int, int] = (1, 0), theta_mode: Literal["eigen", "rest"] = "eigen",
                 f_mean: float = 0.0) -> State:
    """Constant tangential fields with a single-mode interface perturbation.

    ``theta_mode="eigen"`` starts on the growing (or purely Doppler-shifted)
    eigenmode of the planar interface equation; ``"rest"`` sets theta to the
    pure Doppler part only, so a stable mode oscillates symmetrically.
    """
    from .diagnostics import sigma2

    up, um, hp, hm = (np.pad(np.asarray(a, float), (0, 3 - len(a)))[:3] for a in
                      (u_plus, u_minus, h_plus, h_minus))
    for name, a in (("u_plus", up), ("u_minus", um), ("h_plus", hp), ("h_minus", hm)):
        if a[2] != 0:
            raise ValueError(f"{name} must be tangential to the flat interface")
    x1, x2 = grid.x
    phase = mode[0] * x1 + mode[1] * x2
    v, w = 0.5 * (up - um), 0.5 * (up + um)
    s2 = sigma2(v[:2], hp[:2], hm[:2], mode)
    growth = np.sqrt(max(s2, 0.0)) if theta_mode == "eigen" else 0.0
    doppler = float(w[:2] @ np.asarray(mode, float))
    f = f_mean + amplitude * np.cos(phase)
    theta = amplitude * (growth * np.cos(phase) + doppler * np.sin(phase))
    iface = InterfaceState(TorusScalar(f, grid), TorusScalar(theta - theta.mean(), grid))
    bulk = BulkState({s: StripVector.zeros(grid, s) for s in SIDES},
                     {s: StripVector.zeros(grid, s) for s in SIDES},
                     {"plus": up[:2].copy(), "minus": um[:2].copy()},
                     {"plus": hp[:2].copy(), "minus": hm[:2].copy()})
    return State(0.0, iface, bulk)


# -- Picard iteration map -----------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """States at equally spaced times with their recovered fields."""

    times: np.ndarray
    states: list
    snapshots: list

    @property
    def T(self) -> float:
        return float(self.times[-1])


def trajectory_from_states(model: Model, times, states) -> Trajectory:
    snaps = [model.recover_fields(s.iface, s.bulk, project=True, enforce=False) for s in states]
    return Trajectory(np.asarray(times, float), list(states), snaps)


def integrate(model: Model, state: State, T: float, n_steps: int) -> Trajectory:
    """RK4 trajectory with ``n_steps`` equal steps (no CFL refusal)."""
    dt = T / n_steps
    states = [state]
    for _ in range(n_steps):
        state, _ = model.step_rk4(state, dt, enforce_cfl=False)
        states.append(state)
    return trajectory_from_states(model, np.linspace(0.0, T, n_steps + 1), states)


def _interp_points(field: np.ndarray, grid: Grid, X1, X2, Z) -> np.ndarray:
    """Tri-cubic (spline) interpolation of a strip field at (x1, x2, z) points.

    Periodic in x via padding; in z the Chebyshev nodes are mapped to index
    space through ``k = (nz-1) arccos(2z+1)/pi``.
    """
    from scipy.ndimage import map_coordinates

    pad = 4
    comps = field if field.ndim == 4 else field[None]
    i1 = X1 / (2 * np.pi) * grid.nx + pad
    i2 = X2 / (2 * np.pi) * grid.ny + pad
    kz = (grid.nz - 1) * np.arccos(np.clip(2 * Z + 1, -1.0, 1.0)) / np.pi
    out = []
    for c in comps:
        padded = np.pad(c, ((pad, pad), (pad, pad), (0, 0)), mode="wrap")
        out.append(map_coordinates(padded, [i1, i2, kz], order=3, mode="nearest"))
    res = np.stack(out)
    return res if field.ndim == 4 else res[0]


def _char_velocity(fm, a: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """(x1, x2, z) velocity of the flattened characteristics of the field a."""
    dtr = fm.extend(theta)
    zvel = (a[2] - fm.grad_rho[0] * a[0] - fm.grad_rho[1] * a[1] - dtr) / fm.rho_z
    return np.stack([a[0], a[1], zvel])


CLAMP_SLACK = 1e-10


@dataclass
class PicardInfo:
    clamped: int = 0
    max_exit: float = 0.0


def picard_map(model: Model, traj: Trajectory, info: PicardInfo | None = None) -> Trajectory:
    """One application of the iteration map along a frozen trajectory.

    * interface: linearized theta system with coefficients frozen on the
      trajectory, RK4 in time (midpoint coefficients by averaging), followed
      by the mean correction of f;
    * bulk: omega+j transported along u-h and omega-j along u+h with their
      stretching and source terms, by RK2 characteristics and cubic
      interpolation in the flattened frame;
    * lid means: trapezoidal quadrature of their frozen right sides.
    """
    info = info or PicardInfo()
    g = model.grid
    times = traj.times
    s0 = traj.states[0]
    f0_mean = s0.iface.f.mean()
    fb = [s0.iface.f.values.copy()]
    tb = [s0.iface.theta.values.copy()]

    def lin(n, fv, tv):
        snap = traj.snapshots[n]
        return model.theta_rhs(snap.iface, snap, f=fv, theta=tv).values

    def lin_mid(n, fv, tv):
        return 0.5 * (lin(n, fv, tv) + lin(n + 1, fv, tv))

    for n in range(len(times) - 1):
        dt = times[n + 1] - times[n]
        f, th = fb[-1], tb[-1]
        k1f, k1t = th, lin(n, f, th)
        k2f, k2t = th + dt / 2 * k1t, lin_mid(n, f + dt / 2 * k1f, th + dt / 2 * k1t)
        k3f, k3t = th + dt / 2 * k2t, lin_mid(n, f + dt / 2 * k2f, th + dt / 2 * k2t)
        k4f, k4t = th + dt * k3t, lin(n + 1, f + dt * k3f, th + dt * k3t)
        fn = f + dt / 6 * (k1f + 2 * k2f + 2 * k3f + k4f)
        tn = th + dt / 6 * (k1t + 2 * k2t + 2 * k3t + k4t)
        fb.append(fn)
        tb.append(tn - tn.mean())
    fb = [fv - fv.mean() + f0_mean for fv in fb]

    # bulk transport, per side, for the pair (omega + j, omega - j)
    x1, x2 = g.x
    X = np.stack([np.broadcast_to(x1[..., None], g.shape3), np.broadcast_to(x2[..., None], g.shape3),
                  np.broadcast_to(g.z, g.shape3)])
    om_out = {s: [s0.bulk.omega[s].values] for s in SIDES}
    j_out = {s: [s0.bulk.j[s].values] for s in SIDES}
    for s in SIDES:
        pair = [s0.bulk.omega[s].values + s0.bulk.j[s].values,
                s0.bulk.omega[s].values - s0.bulk.j[s].values]
        for n in range(len(times) - 1):
            dt = times[n + 1] - times[n]
            new_pair = []
            for sign, q in zip((-1.0, 1.0), pair):
                # q = omega + j carried by u - h (sign -1), omega - j by u + h
                def velocity(m):
                    sn = traj.snapshots[m]
                    fm = sn.regions[s].fmap
                    return _char_velocity(fm, sn.u[s] + sign * sn.h[s], sn.iface.theta.values)

                def source(m, qv):
                    sn = traj.snapshots[m]
                    Gu, Gh = sn.gradients(s)
                    Ga = Gu + sign * Gh
                    src = np.zeros_like(qv)
                    for i in range(3):
                        src += np.cross(Gu[i], Gh[i], axis=0)
                    return np.einsum("j...,ij...->i...", qv, Ga) + 2 * sign * src

                v0, v1 = velocity(n), velocity(n + 1)
                # RK2 back-trace from the nodes at t_{n+1}
                half = X - 0.5 * dt * v1
                half[2] = np.clip(half[2], -1.0, 0.0)
                vmid = 0.5 * (_interp_points(v0, g, *half) + _interp_points(v1, g, *half))
                dep = X - dt * vmid
                # the vertical characteristic speed vanishes on both boundaries,
                # so only exits beyond round-off count as clamping events
                out_of = (dep[2] > CLAMP_SLACK) | (dep[2] < -1.0 - CLAMP_SLACK)
                info.clamped += int(np.count_nonzero(out_of))
                info.max_exit = max(info.max_exit, float(np.max(dep[2])),
                                    float(np.max(-1.0 - dep[2])))
                dep[2] = np.clip(dep[2], -1.0, 0.0)
                r0 = source(n, q)
                q_dep = _interp_points(q, g, *dep)
                r_dep = _interp_points(r0, g, *dep)
                pred = q_dep + dt * r_dep
                new_pair.append(q_dep + 0.5 * dt * (r_dep + source(n + 1, pred)))
            pair = new_pair
            om_out[s].append(0.5 * (pair[0] + pair[1]))
            j_out[s].append(0.5 * (pair[0] - pair[1]))

    # lid means by the trapezoidal rule on the frozen right sides
    rates = [model.boundary_average_rhs(sn) for sn in traj.snapshots]
    beta = {s: [np.asarray(s0.bulk.beta[s], float)] for s in SIDES}
    gamma = {s: [np.asarray(s0.bulk.gamma[s], float)] for s in SIDES}
    for n in range(len(times) - 1):
        dt = times[n + 1] - times[n]
        for s in SIDES:
            beta[s].append(beta[s][-1] + 0.5 * dt * (rates[n][0][s] + rates[n + 1][0][s]))
            gamma[s].append(gamma[s][-1] + 0.5 * dt * (rates[n][1][s] + rates[n + 1][1][s]))

    states = []
    for n, t in enumerate(times):
        d = {"f": fb[n], "theta": tb[n]}
        for s in SIDES:
            d[f"omega_{s}"] = om_out[s][n]
            d[f"j_{s}"] = j_out[s][n]
            d[f"beta_{s}"] = beta[s][n]
            d[f"gamma_{s}"] = gamma[s][n]
        states.append(State.unpack(float(t), d, g))
    return trajectory_from_states(model, times, states)


def trajectory_distance(a: Trajectory, b: Trajectory) -> float:
    """Sup over time of |f|_{H^1} + |theta| + |omega| + |j| + |beta| + |gamma| differences."""
    from .fields import sobolev_norm

    worst = 0.0
    for sa, sb in zip(a.states, b.states):
        da, db = sa.pack(), sb.pack()
        g = sa.grid
        d = sobolev_norm(TorusScalar(da["f"] - db["f"], g), 1.0)
        d += float(np.sqrt(np.sum((da["theta"] - db["theta"]) ** 2) * g.cell_area))
        for s in SIDES:
            for name in ("omega", "j"):
                diff = da[f"{name}_{s}"] - db[f"{name}_{s}"]
                d += float(np.sqrt(g.cell_area * np.sum(np.sum(diff**2, axis=0) * g.wz)))
            for name in ("beta", "gamma"):
                d += float(np.linalg.norm(da[f"{name}_{s}"] - db[f"{name}_{s}"]))
        worst = max(worst, d)
    return worst


__all__ = [
    "BulkState", "FluidSnapshot", "InterfaceState", "Model", "PicardInfo", "State", "StepInfo",
    "Trajectory", "boundary_average_rhs", "integrate", "picard_map", "planar_state",
    "recover_fields", "step_rk4", "theta_rhs", "trajectory_distance", "trajectory_from_states",
    "vorticity_rhs",
]

