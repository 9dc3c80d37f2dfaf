"""Variable-coefficient Laplace and Poisson solves on a flattened region.

A physical problem ``Lap(Phi) = F`` in the region is solved for
``Psi(x', z) = Phi(x', rho(x', z))`` through

    Psi_zz + alpha*Lap'(Psi) + beta.grad'(Psi_z) - gamma*Psi_z = alpha*F

with z-collocation on Chebyshev nodes and spectral horizontal derivatives.
The first and last collocation rows are replaced by the interface and lid
boundary conditions.  The linear system is solved with right-preconditioned
GMRES; the preconditioner inverts, Fourier mode by Fourier mode, the same
operator with its coefficients replaced by their horizontal averages (exact
when the interface is flat).

Boundary data conventions, identical on both sides:

* interface Dirichlet: ``Phi = g`` on x3 = f;
* interface Neumann: ``N . grad(Phi) = g`` with ``N = (-grad f, 1)``;
* lid Dirichlet: ``Phi = g``; lid Neumann: ``d3 Phi = g``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np

from .fields import Grid, Side, StripScalar, StripVector, TorusScalar, fft2, ifft2
from .geometry import (EllipticCoefficients, FlatteningMap, Surface, build_flattening,
                       flatten_coefficients)
from .krylov import gmres

Kind = Literal["dirichlet", "neumann"]
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class BoundaryCondition:
    """``top`` applies on the interface, ``bottom`` on the lid."""

    top: tuple[Kind, Optional[TorusScalar]] = ("dirichlet", None)
    bottom: tuple[Kind, Optional[TorusScalar]] = ("neumann", None)

    def __post_init__(self) -> None:
        for kind, _ in (self.top, self.bottom):
            if kind not in ("dirichlet", "neumann"):
                raise ValueError(f"unknown boundary condition {kind!r}")

    @property
    def kinds(self) -> tuple[Kind, Kind]:
        return self.top[0], self.bottom[0]

    @property
    def pure_neumann(self) -> bool:
        return self.kinds == ("neumann", "neumann")


def dirichlet(g=None) -> tuple[Kind, Optional[TorusScalar]]:
    return ("dirichlet", g)


def neumann(g=None) -> tuple[Kind, Optional[TorusScalar]]:
    return ("neumann", g)


@dataclass
class EllipticSolution:
    psi: StripScalar
    residual_norm: float
    iterations: int
    history: list = field(default_factory=list)
    # Lagrange constant absorbing discrete incompatibility (pure Neumann only)
    constant: float = 0.0
    # |int F dV - boundary flux balance| / scale (pure Neumann only)
    compatibility_defect: float = 0.0


def _data(g, grid: Grid) -> np.ndarray:
    if g is None:
        return np.zeros(grid.shape2)
    if isinstance(g, TorusScalar):
        return g.values
    return np.broadcast_to(np.asarray(g, dtype=float), grid.shape2)


class Region:
    """One flattened fluid region with cached operators and preconditioners."""

    def __init__(self, surface: Surface, side: Side, *, delta: float | None = None,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 fmap: FlatteningMap | None = None, precond_cache: dict | None = None):
        self.surface = surface
        self.side = side
        self.fmap = fmap if fmap is not None else build_flattening(surface, side, delta)
        self.coeffs: EllipticCoefficients = flatten_coefficients(self.fmap)
        self.grid = self.fmap.grid
        self.tol = tol
        self.max_iter = max_iter
        self.iterations_log: list[int] = []
        fm = self.fmap
        self._alpha = self.coeffs.alpha.values
        self._b1 = self.coeffs.beta[0].values
        self._b2 = self.coeffs.beta[1].values
        self._gamma = self.coeffs.gamma.values
        f1, f2 = fm.grad_rho[0][..., 0], fm.grad_rho[1][..., 0]
        self._f1, self._f2 = f1, f2
        self._top_coef = (1.0 + f1**2 + f2**2) / fm.rho_z[..., 0]
        self._lid_coef = 1.0 / fm.rho_z[..., -1]
        self._vol_w = fm.jacobian * self.grid.wz
        self._precond: dict = {}
        # shared between regions of nearby surfaces: the mode-diagonal inverse
        # only depends on horizontal averages, and reusing a slightly stale
        # one changes iteration counts, never the solution
        self._shared = precond_cache
        self._d2t = self.grid.dzt @ self.grid.dzt

    @property
    def delta(self) -> float:
        return self.fmap.delta

    # -- operator ----------------------------------------------------------------

    def _apply(self, psi: np.ndarray, kinds: tuple[Kind, Kind]) -> np.ndarray:
        g = self.grid
        hat = fft2(psi)
        hz = hat @ g.dzt
        i1, i2 = (a[..., None] for a in g.ik)
        batch = np.stack([-g.ksq[..., None] * hat, i1 * hz, i2 * hz], axis=-1)
        lap, p1z, p2z = np.moveaxis(ifft2(batch, g), -1, 0)
        pz = psi @ g.dzt
        out = psi @ self._d2t + self._alpha * lap + self._b1 * p1z + self._b2 * p2z \
            - self._gamma * pz
        top, bottom = kinds
        if top == "dirichlet":
            out[..., 0] = psi[..., 0]
        else:
            h0 = np.stack([g.ik[0] * hat[..., 0], g.ik[1] * hat[..., 0]], axis=-1)
            p1, p2 = np.moveaxis(ifft2(h0, g), -1, 0)
            out[..., 0] = self._top_coef * pz[..., 0] - self._f1 * p1 - self._f2 * p2
        if bottom == "dirichlet":
            out[..., -1] = psi[..., -1]
        else:
            out[..., -1] = self._lid_coef * pz[..., -1]
        return out

    def apply_operator(self, psi: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
        """Discrete operator rows (interior equation plus boundary rows)."""
        return self._apply(np.asarray(psi, dtype=float), bc.kinds)

    def physical_laplacian(self, psi: np.ndarray) -> np.ndarray:
        """Interior rows of the operator divided by alpha (boundary rows meaningless)."""
        return self._apply(np.asarray(psi, dtype=float), ("dirichlet", "dirichlet")) / self._alpha

    # -- preconditioner ------------------------------------------------------------

    def _build_precond(self, kinds: tuple[Kind, Kind]):
        g = self.grid
        nz = g.nz
        D = g.dz
        D2 = D @ D
        abar = self._alpha.mean(axis=(0, 1))
        gbar = self._gamma.mean(axis=(0, 1))
        q, inverse = np.unique(g.ksq.ravel(), return_inverse=True)
        A = (D2[None] - abar[None, :, None] * q[:, None, None] * np.eye(nz)[None]
             - gbar[None, :, None] * D[None])
        top, bottom = kinds
        A[:, 0, :] = 0.0
        if top == "dirichlet":
            A[:, 0, 0] = 1.0
        else:
            A[:, 0, :] = self._top_coef.mean() * D[0]
        A[:, -1, :] = 0.0
        if bottom == "dirichlet":
            A[:, -1, -1] = 1.0
        else:
            A[:, -1, :] = self._lid_coef.mean() * D[-1]
        bordered = top == "neumann" and bottom == "neumann"
        border_inv = None
        if bordered:
            # q[0] == 0: singular mode, solved with the mean constraint
            B = np.zeros((nz + 1, nz + 1))
            B[:nz, :nz] = A[0]
            B[1:nz - 1, nz] = 1.0
            B[nz, :nz] = self._vol_w.mean(axis=(0, 1))
            border_inv = np.linalg.inv(B)
            A[0] = np.eye(nz)
        Minv = np.linalg.inv(A)
        per_mode = Minv[inverse].reshape(g.ksq.shape + (nz, nz))
        return per_mode, border_inv

    def _precond_params(self) -> np.ndarray:
        return np.concatenate([self._alpha.mean(axis=(0, 1)), self._gamma.mean(axis=(0, 1)),
                               [self._top_coef.mean(), self._lid_coef.mean()],
                               self._vol_w.mean(axis=(0, 1))])

    def _preconditioner(self, kinds: tuple[Kind, Kind]):
        if kinds not in self._precond:
            if self._shared is None:
                self._precond[kinds] = self._build_precond(kinds)
            else:
                key = (self.side, self.grid, kinds)
                params = self._precond_params()
                hit = self._shared.get(key)
                if hit is None or np.max(np.abs(hit[0] - params)) > 1e-3 * np.max(np.abs(params)):
                    hit = (params, self._build_precond(kinds))
                    self._shared[key] = hit
                self._precond[kinds] = hit[1]
        per_mode, border_inv = self._precond[kinds]
        g = self.grid
        n = g.nx * g.ny * g.nz

        def apply(v: np.ndarray) -> np.ndarray:
            r = v[:n].reshape(g.shape3)
            rhat = fft2(r)
            rr = np.stack([rhat.real, rhat.imag], axis=-1)
            sol = per_mode @ rr
            shat = sol[..., 0] + 1j * sol[..., 1]
            if border_inv is None:
                return ifft2(shat, g).ravel()
            b0 = np.concatenate([rhat[0, 0].real, [v[n]]])
            x0 = border_inv @ b0
            shat[0, 0] = x0[:-1]
            return np.concatenate([ifft2(shat, g).ravel(), [x0[-1]]])

        return apply

    def precondition(self, rows: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
        """Apply the mode-diagonal approximate inverse (non-bordered problems)."""
        return self._preconditioner(bc.kinds)(np.asarray(rows, dtype=float).ravel()).reshape(
            self.grid.shape3)

    # -- solves -----------------------------------------------------------------

    def solve(self, rhs: np.ndarray | StripScalar, bc: BoundaryCondition,
              x0: np.ndarray | None = None) -> EllipticSolution:
        """Solve the flattened equation with right side ``rhs`` (already times alpha)."""
        g = self.grid
        r = rhs.values if isinstance(rhs, StripScalar) else np.asarray(rhs, dtype=float)
        b = np.array(np.broadcast_to(r, g.shape3), dtype=float)
        top_data = _data(bc.top[1], g)
        bot_data = _data(bc.bottom[1], g)
        b[..., 0] = top_data
        b[..., -1] = bot_data
        kinds = bc.kinds
        n = b.size
        M = self._preconditioner(kinds)
        if bc.pure_neumann:
            vw = self._vol_w

            def op(x):
                psi = x[:n].reshape(g.shape3)
                out = self._apply(psi, kinds)
                out[..., 1:-1] += x[n]
                return np.concatenate([out.ravel(), [np.mean(np.sum(vw * psi, axis=-1))]])

            bb = np.concatenate([b.ravel(), [0.0]])
            xx0 = None if x0 is None else np.concatenate([np.ravel(x0), [0.0]])
        else:
            def op(x):
                return self._apply(x.reshape(g.shape3), kinds).ravel()

            bb = b.ravel()
            xx0 = None if x0 is None else np.ravel(x0)
        res = gmres(op, bb, M, tol=self.tol, max_iter=self.max_iter, x0=xx0,
                    what=f"elliptic solve ({self.side} side)")
        self.iterations_log.append(res.iterations)
        psi = res.x[:n].reshape(g.shape3)
        sol = EllipticSolution(StripScalar(psi, g, self.side), res.residual, res.iterations,
                               res.history)
        if bc.pure_neumann:
            sol.constant = float(res.x[n])
            F = r / self._alpha if np.ndim(r) else np.broadcast_to(r, g.shape3) / self._alpha
            vol = self.fmap.volume_integral(F)
            flux = self.fmap.o * g.cell_area * (top_data.sum() - bot_data.sum())
            scale = max(abs(vol), abs(flux), g.cell_area * np.abs(top_data).sum(), 1e-300)
            sol.compatibility_defect = abs(vol - flux) / scale
        return sol

    def solve_poisson(self, F: np.ndarray, bc: BoundaryCondition,
                      x0: np.ndarray | None = None) -> EllipticSolution:
        """Physical ``Lap(Phi) = F`` with the given boundary conditions."""
        return self.solve(self._alpha * np.asarray(F, dtype=float), bc, x0)

    def harmonic_extension(self, psi: TorusScalar | np.ndarray) -> StripScalar:
        data = psi if isinstance(psi, TorusScalar) else TorusScalar(psi, self.grid)
        bc = BoundaryCondition(dirichlet(data), neumann(None))
        return self.solve(np.zeros(self.grid.shape3), bc).psi

    def interface_flux(self, psi: np.ndarray) -> np.ndarray:
        """``N . grad(Phi)`` on the interface for a flattened field."""
        return self.fmap.interface_flux(psi)


SurfaceLike = Union[Surface, Region]


def as_region(obj: SurfaceLike, side: Side, **kw) -> Region:
    if isinstance(obj, Region):
        if obj.side != side:
            raise ValueError(f"region is for the {obj.side} side, not {side}")
        return obj
    return Region(obj, side, **kw)


# -- module-level operations ----------------------------------------------------

def solve_flattened_laplace(coeffs: EllipticCoefficients, rhs: StripScalar | np.ndarray,
                            bc: BoundaryCondition, *, tol: float = DEFAULT_TOL,
                            max_iter: int = DEFAULT_MAX_ITER) -> EllipticSolution:
    """Solve ``Psi_zz + alpha Lap Psi + beta.grad Psi_z - gamma Psi_z = rhs``."""
    fm = coeffs.fmap
    region = Region(fm.surface, fm.side, tol=tol, max_iter=max_iter, fmap=fm)
    return region.solve(rhs, bc)


def harmonic_extension(surface: SurfaceLike, psi: TorusScalar, side: Side) -> StripScalar:
    """Extension harmonic in the region, equal to ``psi`` on the interface and
    with vanishing normal derivative on the lid."""
    return as_region(surface, side).harmonic_extension(psi)


def _components(v) -> np.ndarray:
    if isinstance(v, StripVector):
        return v.values
    return np.asarray(v, dtype=float)


def velocity_gradient(fmap: FlatteningMap, u: np.ndarray) -> np.ndarray:
    """``G[i, j] = d_j u_i`` in physical coordinates, shape (3, 3, nx, ny, nz)."""
    return fmap.vector_gradient(u)


def trace_product(G1: np.ndarray, G2: np.ndarray) -> np.ndarray:
    """tr(grad u1 grad u2) = sum_ij d_j u1_i d_i u2_j."""
    return np.einsum("ij...,ji...->...", G1, G2)


def quadratic_pressure(u1, u2, surface: SurfaceLike, side: Side, *,
                       minus: tuple | None = None, dealias: bool = True) -> StripScalar:
    """Pressure with ``Lap p = -tr(grad u1 grad u2)``, ``p = 0`` on the interface
    and ``d3 p = 0`` on the lid.

    ``minus=(h1, h2)`` subtracts the pressure of a second pair in the same
    solve (used for ``p_{u,u} - p_{h,h}``).
    """
    region = as_region(surface, side)
    fm = region.fmap
    a, b = _components(u1), _components(u2)
    Ga = velocity_gradient(fm, a)
    Gb = Ga if b is a else velocity_gradient(fm, b)
    F = -trace_product(Ga, Gb)
    if minus is not None:
        c, d = _components(minus[0]), _components(minus[1])
        Gc = velocity_gradient(fm, c)
        Gd = Gc if d is c else velocity_gradient(fm, d)
        F = F + trace_product(Gc, Gd)
    g = region.grid
    if dealias:
        F = ifft2(fft2(F) * g.dealias_mask[..., None], g)
    if not np.any(F):
        return StripScalar.zeros(g, side)
    bc = BoundaryCondition(dirichlet(None), neumann(None))
    return region.solve_poisson(F, bc).psi


def div_free_projection(w, surface: SurfaceLike, side: Side) -> StripVector:
    """``w - grad(phi)`` with ``Lap phi = div w``, ``phi = 0`` on the interface,
    ``d3 phi = 0`` on the lid.  The lid normal component is unchanged."""
    region = as_region(surface, side)
    fm = region.fmap
    wv = _components(w)
    div = fm.physical_divergence(wv)
    g = region.grid
    if not np.any(div):
        return StripVector(wv, g, side)
    bc = BoundaryCondition(dirichlet(None), neumann(None))
    phi = region.solve_poisson(div, bc).psi.values
    grad = np.stack(fm.physical_gradient(phi))
    return StripVector(wv - grad, g, side)


__all__ = [
    "BoundaryCondition", "EllipticSolution", "Region", "as_region", "dirichlet",
    "div_free_projection", "harmonic_extension", "neumann", "quadratic_pressure",
    "solve_flattened_laplace", "trace_product", "velocity_gradient",
]
