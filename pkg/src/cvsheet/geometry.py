"""Interface graphs, the smoothed flattening of each fluid region, and the
variable coefficients of the Laplacian written in flattened coordinates.

Each region is mapped from the reference strip ``T^2 x [-1, 0]`` by

    x3 = rho(x', z) = o*z + (1 + z) * exp(delta*z*|D|) f,

with ``o = +1`` on the minus side (lid x3=-1 at z=-1) and ``o = -1`` on the
plus side (lid x3=+1 at z=-1).  In both cases ``z = 0`` is the interface.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SurfaceError, SurfaceTooRoughError
from .fields import (Grid, Side, StripScalar, StripVector, TorusScalar, fft2, grad2,
                     ifft2, orientation)

MAX_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class Surface:
    """Graph interface ``x3 = f(x')`` with separation margin ``c0``."""

    f: TorusScalar
    c0: float
    f_ref: Optional[TorusScalar] = None
    check: bool = True

    def __post_init__(self) -> None:
        if not self.c0 > 0:
            raise SurfaceError(f"c0 must be positive, got {self.c0}")
        if self.check:
            bound = 1.0 - self.c0
            fmax = float(np.max(np.abs(self.f.values)))
            if fmax > bound * (1 + 1e-12):
                raise SurfaceError(f"|f| reaches {fmax:.4g} > 1 - c0 = {bound:.4g}")

    @property
    def grid(self) -> Grid:
        return self.f.grid

    @property
    def mean(self) -> float:
        return self.f.mean()

    @property
    def reference(self) -> TorusScalar:
        return self.f_ref if self.f_ref is not None else self.f

    def with_f(self, f: TorusScalar | np.ndarray) -> "Surface":
        if not isinstance(f, TorusScalar):
            f = TorusScalar(f, self.grid)
        return Surface(f, self.c0, self.f_ref, self.check)

    def on_grid(self, grid: Grid) -> "Surface":
        """Same surface attached to a grid carrying a vertical resolution."""
        g = TorusScalar(self.f.values, grid)
        ref = None if self.f_ref is None else TorusScalar(self.f_ref.values, grid)
        return Surface(g, self.c0, ref, self.check)


@dataclass(frozen=True, eq=False)
class FlatteningMap:
    """Values and derivatives of ``rho`` on the strip grid (plain arrays)."""

    surface: Surface
    side: Side
    delta: float
    rho: np.ndarray
    rho_z: np.ndarray
    rho_zz: np.ndarray
    grad_rho: tuple[np.ndarray, np.ndarray]
    grad_rho_z: tuple[np.ndarray, np.ndarray]
    lap_rho: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> Grid:
        return self.surface.grid

    @property
    def o(self) -> int:
        return orientation(self.side)

    @property
    def rho_field(self) -> StripScalar:
        return StripScalar(self.rho, self.grid, self.side)

    @property
    def dz_rho(self) -> StripScalar:
        return StripScalar(self.rho_z, self.grid, self.side)

    @property
    def jacobian(self) -> np.ndarray:
        """|d rho / dz|, the volume factor of the flattening."""
        return np.abs(self.rho_z)

    def smoothing_symbol(self) -> np.ndarray:
        """exp(delta*z*|k|) on the rfft half lattice, shape (nx, ny//2+1, nz)."""
        key = "smooth"
        if key not in self._cache:
            g = self.grid
            self._cache[key] = np.exp(self.delta * g.kabs[..., None] * g.z)
        return self._cache[key]

    def extend(self, g: np.ndarray) -> np.ndarray:
        """(1+z) * exp(delta*z*|D|) g, i.e. d rho / d f applied to g."""
        ghat = fft2(np.asarray(g, dtype=float))
        return (1.0 + self.grid.z) * ifft2(self.smoothing_symbol() * ghat[..., None], self.grid)

    def physical_gradient(self, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Physical gradient of a flattened scalar via the chain rule."""
        g = self.grid
        p1, p2 = grad2(psi, g)
        pz = psi @ g.dzt
        q = pz / self.rho_z
        return p1 - self.grad_rho[0] * q, p2 - self.grad_rho[1] * q, q

    def vector_gradient(self, v: np.ndarray) -> np.ndarray:
        """``G[i, j] = d_j v_i`` (physical) for a stack of components ``v[i]``."""
        g = self.grid
        v = np.asarray(v, dtype=float)
        vhat = fft2(np.moveaxis(v, 0, -1))  # (nx, nyh, nz, m)
        i1, i2 = (a[..., None, None] for a in g.ik)
        d = np.moveaxis(ifft2(np.stack([i1 * vhat, i2 * vhat], axis=-1), g), (-2, -1), (0, 1))
        vz = v @ g.dzt
        q = vz / self.rho_z
        return np.stack([d[:, 0] - self.grad_rho[0] * q, d[:, 1] - self.grad_rho[1] * q, q],
                        axis=1)

    def physical_divergence(self, v: np.ndarray) -> np.ndarray:
        g = self.grid
        d1 = grad2(v[0], g)[0]
        d2 = grad2(v[1], g)[1]
        vz = v @ g.dzt
        return (d1 + d2 + (vz[2] - self.grad_rho[0] * vz[0] - self.grad_rho[1] * vz[1])
                / self.rho_z)

    def physical_curl(self, v: np.ndarray) -> np.ndarray:
        g = self.grid
        r1, r2, rz = self.grad_rho[0], self.grad_rho[1], self.rho_z
        h = [grad2(c, g) for c in v]
        vz = v @ g.dzt

        def d(i, c):
            if i == 2:
                return vz[c] / rz
            return h[c][i] - (r1, r2)[i] * vz[c] / rz

        return np.stack([d(1, 2) - d(2, 1), d(2, 0) - d(0, 2), d(0, 1) - d(1, 0)])

    def volume_integral(self, a: np.ndarray) -> float:
        g = self.grid
        return float(g.cell_area * np.sum(a * self.jacobian * g.wz))

    def interface_flux(self, psi: np.ndarray) -> np.ndarray:
        """N . grad(Phi) at the interface, N = (-grad f, 1) pointing up."""
        return interface_normal_derivative(self, psi)


def interface_normal_derivative(fmap: FlatteningMap, psi: np.ndarray) -> np.ndarray:
    g = fmap.grid
    f1, f2 = fmap.grad_rho[0][..., 0], fmap.grad_rho[1][..., 0]
    psi0 = psi[..., 0]
    pz0 = psi @ g.dz[0]
    p1, p2 = grad2(psi0, g)
    return (1.0 + f1**2 + f2**2) * pz0 / fmap.rho_z[..., 0] - f1 * p1 - f2 * p2


def _map_for_delta(surface: Surface, side: Side, delta: float) -> FlatteningMap:
    g = surface.grid
    o = orientation(side)
    z = g.z
    fhat = surface.f.spectral
    kabs = g.kabs[..., None]
    sym = np.exp(delta * kabs * z)
    shat = sym * fhat[..., None]
    dshat = delta * kabs * shat
    rho_hat = (1.0 + z) * shat
    rho_z_hat = shat + (1.0 + z) * dshat
    rho_zz_hat = 2.0 * dshat + (1.0 + z) * delta * kabs * dshat
    i1, i2 = (a[..., None] for a in g.ik)
    k1, k2 = (a[..., None] for a in g.k)
    lap_hat = -(k1**2 + k2**2) * rho_hat
    batch = np.stack([rho_hat, rho_z_hat, rho_zz_hat, i1 * rho_hat, i2 * rho_hat,
                      i1 * rho_z_hat, i2 * rho_z_hat, lap_hat], axis=-1)
    vals = np.moveaxis(ifft2(batch, g), -1, 0)
    rho = vals[0] + o * z
    rho_z = vals[1] + o
    m = FlatteningMap(surface, side, delta, rho, rho_z, vals[2], (vals[3], vals[4]),
                      (vals[5], vals[6]), vals[7])
    m._cache["smooth"] = sym
    return m


def build_flattening(surface: Surface, side: Side, delta: float | None = None) -> FlatteningMap:
    """Flattening of the ``side`` region with ``o * d rho/dz >= c0/2``.

    When ``delta`` is omitted it is chosen by halving from 1.  Passing an
    explicit ``delta`` (a run keeps it fixed) skips the search but still
    enforces the bound.
    """
    if surface.grid.nz < 4:
        raise ValueError("flattening needs a grid with nz >= 4")
    required = surface.c0 / 2
    o = orientation(side)
    if delta is not None:
        m = _map_for_delta(surface, side, delta)
        lo = float(np.min(o * m.rho_z))
        if lo < required:
            raise SurfaceTooRoughError(lo, required)
        return m
    d = 1.0
    lo = -np.inf
    for _ in range(MAX_HALVINGS + 1):
        m = _map_for_delta(surface, side, d)
        lo = float(np.min(o * m.rho_z))
        if lo >= required:
            return m
        d *= 0.5
    raise SurfaceTooRoughError(lo, required)


def common_delta(surface: Surface) -> float:
    """Largest halving of 1 admissible on both sides."""
    return min(build_flattening(surface, s).delta for s in ("plus", "minus"))


@dataclass(frozen=True, eq=False)
class EllipticCoefficients:
    """Coefficients of  Psi_zz + alpha*Lap(Psi) + beta.grad(Psi_z) - gamma*Psi_z.

    The physical Laplacian of ``Phi(x', rho(x', z)) = Psi`` equals the
    above divided by ``alpha``.
    """

    fmap: FlatteningMap
    alpha: StripScalar
    beta: tuple[StripScalar, StripScalar]
    gamma: StripScalar
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> Grid:
        return self.fmap.grid

    @property
    def side(self) -> Side:
        return self.fmap.side

    @property
    def is_flat(self) -> bool:
        return bool(np.all(self.fmap.surface.f.values == 0.0))


def flatten_coefficients(fmap: FlatteningMap) -> EllipticCoefficients:
    r1, r2 = fmap.grad_rho
    rz = fmap.rho_z
    denom = 1.0 + r1**2 + r2**2
    alpha = rz**2 / denom
    b1 = -2.0 * rz * r1 / denom
    b2 = -2.0 * rz * r2 / denom
    gamma = (fmap.rho_zz + alpha * fmap.lap_rho + b1 * fmap.grad_rho_z[0]
             + b2 * fmap.grad_rho_z[1]) / rz
    g, s = fmap.grid, fmap.side
    return EllipticCoefficients(fmap, StripScalar(alpha, g, s),
                                (StripScalar(b1, g, s), StripScalar(b2, g, s)),
                                StripScalar(gamma, g, s))


def interface_normal(surface: Surface) -> tuple[TorusScalar, TorusScalar, TorusScalar]:
    """Non-unit upward normal ``(-d1 f, -d2 f, 1)``."""
    f = surface.f
    f1, f2 = grad2(f.values, f.grid)
    return (TorusScalar(-f1, f.grid), TorusScalar(-f2, f.grid),
            TorusScalar(np.ones(f.grid.shape2), f.grid))


def tangential_projection(h: tuple[np.ndarray, np.ndarray, np.ndarray],
                          surface: Surface) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Remove the N-component of a vector sampled on the interface."""
    n = np.stack([c.values for c in interface_normal(surface)])
    hv = np.stack(h)
    return tuple(hv - n * np.sum(hv * n, axis=0) / np.sum(n * n, axis=0))


# -- harmonic coordinates ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HarmonicCoordinates:
    """Harmonic map from the reference region onto the current region.

    Sampled at the reference flattened nodes ``y = (x', rho_ref(x', z))``.
    """

    reference: FlatteningMap
    values: StripVector
    residual: float

    @property
    def grid(self) -> Grid:
        return self.reference.grid

    def jacobian_determinant(self) -> np.ndarray:
        # Phi1, Phi2 are the identity, so det = dPhi3/dy3
        return (self.values.values[2] @ self.grid.dzt) / self.reference.rho_z

    def invert(self, x3: np.ndarray, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        """Reference heights ``y3`` with ``Phi3(x', y3) = x3`` (per column Newton)."""
        g = self.grid
        zc = _column_interpolant(self.values.values[2], g)
        rc = _column_interpolant(self.reference.rho, g)
        x3 = np.asarray(x3, dtype=float)
        # initial guess from the linear interpolant between interface and lid
        top, bot = self.values.values[2][..., :1], self.values.values[2][..., -1:]
        s = np.clip(2.0 * (x3 - bot) / (top - bot) - 1.0, -1.0, 1.0)
        for _ in range(max_iter):
            val, der = _cheb_eval(zc, s)
            step = (val - x3) / der
            s = np.clip(s - step, -1.0, 1.0)
            if np.max(np.abs(step)) < tol:
                break
        return _cheb_eval(rc, s)[0]


def _column_interpolant(a: np.ndarray, g: Grid) -> np.ndarray:
    """Chebyshev coefficients of each z column (variable s = 2z+1)."""
    key = ("vinv", g.nz)
    inv = _VINV.get(key)
    if inv is None:
        s = 2.0 * g.z + 1.0
        inv = np.linalg.inv(np.polynomial.chebyshev.chebvander(s, g.nz - 1))
        _VINV[key] = inv
    return a @ inv.T


_VINV: dict = {}


def _cheb_eval(c: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate per-column Chebyshev series and its s-derivative at ``s``."""
    n = c.shape[-1]
    t_prev, t = np.ones_like(s), s.copy()
    d_prev, d = np.zeros_like(s), np.ones_like(s)
    val = c[..., :1] * t_prev + c[..., 1:2] * t
    der = c[..., 1:2] * d
    for k in range(2, n):
        t_next = 2 * s * t - t_prev
        d_next = 2 * t + 2 * s * d - d_prev
        val = val + c[..., k:k + 1] * t_next
        der = der + c[..., k:k + 1] * d_next
        t_prev, t, d_prev, d = t, t_next, d, d_next
    return val, der


def w1inf_distance(f: TorusScalar | np.ndarray, g: TorusScalar | np.ndarray, grid: Grid) -> float:
    """``max|f - g| + max|grad(f - g)|`` on the grid."""
    d = np.asarray(getattr(f, "values", f)) - np.asarray(getattr(g, "values", g))
    d1, d2 = grad2(d, grid)
    return float(np.max(np.abs(d)) + np.max(np.hypot(d1, d2)))


def harmonic_coordinates(surface: Surface, side: Side, f_ref: TorusScalar | None = None,
                         *, tol: float = 1e-10, delta: float | None = None,
                         delta0: float | None = 0.1) -> HarmonicCoordinates:
    """Harmonic diffeomorphism taking the region above/below ``f_ref`` onto the one of ``f``.

    The horizontal components are the identity; the vertical one is
    ``y3 + chi`` with ``chi`` harmonic in the reference region, equal to
    ``f - f_ref`` on the reference interface and to zero on the lid.

    ``delta0`` bounds the W^{1,inf} distance between ``f`` and ``f_ref``
    (``None`` skips that check).  Bijectivity is then confirmed from the
    sign of the Jacobian; both failures raise :class:`SurfaceError`.
    """
    from .elliptic import BoundaryCondition, solve_flattened_laplace

    ref = f_ref if f_ref is not None else surface.reference
    dist = w1inf_distance(surface.f, ref, surface.grid)
    if delta0 is not None and dist > delta0:
        raise SurfaceError(f"surface is {dist:.3g} from the reference in W^1,inf, beyond delta0 = {delta0:g}")
    ref_surface = Surface(TorusScalar(ref.values, surface.grid), surface.c0, check=False)
    rmap = build_flattening(ref_surface, side, delta)
    coeffs = flatten_coefficients(rmap)
    g = surface.grid
    data = TorusScalar(surface.f.values - ref.values, g)
    bc = BoundaryCondition(top=("dirichlet", data), bottom=("dirichlet", TorusScalar.zeros(g)))
    sol = solve_flattened_laplace(coeffs, StripScalar.zeros(g, side), bc, tol=tol)
    x1, x2 = g.x
    phi = np.stack([np.broadcast_to(x1[..., None], g.shape3),
                    np.broadcast_to(x2[..., None], g.shape3),
                    rmap.rho + sol.psi.values])
    out = HarmonicCoordinates(rmap, StripVector(phi, g, side), sol.residual_norm)
    jmin = float(np.min(out.jacobian_determinant()))
    if jmin <= 0:
        raise SurfaceError(f"harmonic coordinates fold over (min Jacobian {jmin:.3g})")
    return out


__all__ = [
    "EllipticCoefficients", "FlatteningMap", "HarmonicCoordinates", "Surface",
    "build_flattening", "common_delta", "flatten_coefficients", "harmonic_coordinates",
    "interface_normal", "interface_normal_derivative", "tangential_projection", "w1inf_distance",
]
