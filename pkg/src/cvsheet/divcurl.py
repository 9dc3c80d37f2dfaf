"""Recovery of a vector field from its curl, divergence, interface normal
trace and lid tangential means.

The curl data is pulled back to the flat reference strip with the Piola
map of the flattening, which keeps it divergence free; a flat-slab vector
potential is found mode by mode, pushed forward as a covector, and then
corrected by a Neumann potential and a constant tangential shift.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .elliptic import BoundaryCondition, Region, SurfaceLike, as_region, neumann
from .errors import CompatibilityError
from .fields import Grid, Side, StripScalar, StripVector, TorusScalar, chebyshev_nodes, fft2, ifft2


@dataclass(frozen=True, eq=False)
class DivCurlData:
    omega: StripVector
    g: StripScalar | None = None
    theta_bc: TorusScalar | None = None
    lid_means: tuple[float, float] = (0.0, 0.0)


@dataclass
class RecoveredField:
    u: StripVector
    residuals: dict = field(default_factory=dict)
    # constant tangential shift added in the last step
    shift: tuple[float, float] = (0.0, 0.0)


@lru_cache(maxsize=16)
def _integration_matrix(nz: int) -> np.ndarray:
    """Q with (Q v)(z_i) = integral from -1 to z_i of the interpolant of v."""
    C = np.polynomial.chebyshev
    s = 2.0 * chebyshev_nodes(nz) + 1.0
    V = C.chebvander(s, nz - 1)
    Vinv = np.linalg.inv(V)
    Q = np.zeros((nz, nz))
    for j in range(nz):
        c = C.chebint(Vinv[:, j], lbnd=-1.0)
        Q[:, j] = 0.5 * C.chebval(s, c)  # dz = ds/2
    return Q


@lru_cache(maxsize=64)
def _dirichlet_solvers(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode inverses of D^2 - |k|^2 with zero values at both ends."""
    nz = grid.nz
    D = grid.dz
    D2 = D @ D
    q, inverse = np.unique(grid.ksq.ravel(), return_inverse=True)
    A = D2[None] - q[:, None, None] * np.eye(nz)[None]
    A[:, 0, :] = 0.0
    A[:, -1, :] = 0.0
    A[:, 0, 0] = 1.0
    A[:, -1, -1] = 1.0
    Minv = np.linalg.inv(A)
    return Minv[inverse].reshape(grid.ksq.shape + (nz, nz)), q


def _lid_mean(a: np.ndarray) -> float:
    return float(a[..., -1].mean())


def solve_curl_slab(omega_bar: StripVector | np.ndarray, grid: Grid | None = None, *,
                    tol: float = 1e-6, enforce: bool = True,
                    defects: dict | None = None) -> StripVector:
    """Vector potential on the flat strip: ``curl v = omega_bar``, ``div v = 0``,
    ``v3 = 0`` at z = 0 and z = -1; horizontal means of v have zero z-average.

    Raises :class:`CompatibilityError` when ``omega_bar`` is not divergence
    free (C1) or carries net flux through the lids (C2); ``tol`` is relative
    to the size of ``omega_bar``.  With ``enforce=False`` the defects are only
    recorded in ``defects`` and the divergence-free part is used.
    """
    if isinstance(omega_bar, StripVector):
        grid, side, W = omega_bar.grid, omega_bar.side, omega_bar.values
    else:
        W, side = np.asarray(omega_bar, dtype=float), "minus"
    g = grid
    scale = max(float(np.max(np.abs(W))), 1e-300)
    if not np.any(W):
        return StripVector.zeros(g, side)
    what = fft2(W.transpose(1, 2, 3, 0))  # (nx, nyh, nz, 3)
    W1, W2, W3 = what[..., 0], what[..., 1], what[..., 2]
    i1, i2 = (a[..., None] for a in g.ik)
    k1, k2 = (a[..., None] for a in g.k)
    # C1: flat divergence; C2: net flux of the third component
    div = ifft2(i1 * W1 + i2 * W2 + W3 @ g.dzt, g)
    c1 = float(np.max(np.abs(div))) / scale
    c2 = max(abs(W3[0, 0, 0].real), abs(W3[0, 0, -1].real)) / scale
    if defects is not None:
        defects.update(C1=c1, C2=c2)
    if enforce and c1 > tol * max(g.nx, g.nz):
        raise CompatibilityError("C1", c1)
    if enforce and c2 > tol:
        raise CompatibilityError("C2", c2)
    Minv, _ = _dirichlet_solvers(g)
    rhs = -(i1 * W2 - i2 * W1)
    rhs[..., 0] = 0.0
    rhs[..., -1] = 0.0
    A3 = np.einsum("xyij,xyj->xyi", Minv, rhs)
    a = -(A3 @ g.dzt)
    b = W3
    ksq = (k1**2 + k2**2)
    safe = np.where(ksq == 0, 1.0, ksq)
    A1 = -1j * (k1 * a - k2 * b) / safe
    A2 = -1j * (k2 * a + k1 * b) / safe
    # zero mode: A1' = W2, A2' = -W1, A3 = 0, zero z-average gauge
    Q = _integration_matrix(g.nz)
    wz = g.wz
    for comp, src, sgn in ((A1, W2, 1.0), (A2, W1, -1.0)):
        prof = sgn * (Q @ src[0, 0].real)
        comp[0, 0] = prof - wz @ prof
    A3[0, 0] = 0.0
    A = np.stack([A1, A2, A3], axis=-1)
    v = ifft2(A, g).transpose(3, 0, 1, 2)
    return StripVector(v, g, side)


def piola_pullback(region: Region, omega: np.ndarray) -> np.ndarray:
    """Physical 2-form components to flat-strip components (keeps div = 0)."""
    fm = region.fmap
    r1, r2 = fm.grad_rho
    rz = fm.rho_z
    return np.stack([rz * omega[0], rz * omega[1], omega[2] - r1 * omega[0] - r2 * omega[1]])


def covector_pushforward(region: Region, A: np.ndarray) -> np.ndarray:
    """Flat 1-form components to physical vector components."""
    fm = region.fmap
    r1, r2 = fm.grad_rho
    q = A[2] / fm.rho_z
    return np.stack([A[0] - r1 * q, A[1] - r2 * q, q])


def normal_trace(region: Region, u: np.ndarray) -> np.ndarray:
    """``N . u`` on the interface."""
    fm = region.fmap
    f1, f2 = fm.grad_rho[0][..., 0], fm.grad_rho[1][..., 0]
    return -f1 * u[0][..., 0] - f2 * u[1][..., 0] + u[2][..., 0]


def divcurl_solve(data: DivCurlData, surface: SurfaceLike, side: Side, *,
                  check: bool = True, tol: float = 1e-6, enforce: bool = True) -> RecoveredField:
    """Field with prescribed curl, divergence, interface normal trace and lid means.

    Solves ``curl u = omega``, ``div u = g``, ``N . u = theta`` on the
    interface, ``u3 = 0`` and mean(u_i) = lid_means[i] on the lid.
    ``enforce=False`` records the C1/C2 defects in ``residuals`` instead of
    raising (intermediate Runge-Kutta stages are not projected).
    """
    region = as_region(surface, side)
    fm = region.fmap
    g = region.grid
    omega = data.omega.values
    gdiv = np.zeros(g.shape3) if data.g is None else data.g.values
    theta = np.zeros(g.shape2) if data.theta_bc is None else data.theta_bc.values
    o = fm.o
    # C3: net flux through the interface must equal the integrated divergence
    net = fm.volume_integral(gdiv) - o * g.cell_area * theta.sum()
    scale = fm.volume_integral(np.abs(gdiv)) + g.cell_area * np.abs(theta).sum()
    if scale > 0 and abs(net) > 1e-8 * max(scale, 1.0):
        raise CompatibilityError("C3", abs(net) / max(scale, 1.0), side)

    defects: dict = {}
    if np.any(omega):
        Om = piola_pullback(region, omega)
        # C1 is a statement about the physical field; the flat divergence of
        # the pullback agrees with it only up to aliasing of the products
        A = solve_curl_slab(StripVector(Om, g, side), tol=tol, enforce=False,
                            defects=defects).values
        defects["C1"] = (float(np.max(np.abs(fm.physical_divergence(omega))))
                         / float(np.max(np.abs(omega))))
        if enforce and defects["C1"] > tol * max(g.nx, g.nz):
            raise CompatibilityError("C1", defects["C1"], side)
        if enforce and defects["C2"] > tol:
            raise CompatibilityError("C2", defects["C2"], side)
        u1 = covector_pushforward(region, A)
    else:
        u1 = np.zeros((3,) + g.shape3)

    alpha = np.asarray(data.lid_means, dtype=float)
    beta = alpha - np.array([_lid_mean(u1[0]), _lid_mean(u1[1])])
    f1, f2 = fm.grad_rho[0][..., 0], fm.grad_rho[1][..., 0]
    top = theta - normal_trace(region, u1) + beta[0] * f1 + beta[1] * f2
    bottom = -u1[2][..., -1]
    F = gdiv - fm.physical_divergence(u1) if np.any(u1) else gdiv
    u = u1.copy()
    if np.any(top) or np.any(bottom) or np.any(F):
        bc = BoundaryCondition(neumann(TorusScalar(top, g)), neumann(TorusScalar(bottom, g)))
        sol = region.solve_poisson(F, bc)
        u += np.stack(fm.physical_gradient(sol.psi.values))
    u[0] += beta[0]
    u[1] += beta[1]
    out = RecoveredField(StripVector(u, g, side), shift=(float(beta[0]), float(beta[1])))
    out.residuals.update(defects)
    if check:
        out.residuals.update(divcurl_residuals(region, out.u.values, data))
    return out


def divcurl_residuals(region: Region, u: np.ndarray, data: DivCurlData) -> dict:
    fm = region.fmap
    g = region.grid
    omega = data.omega.values
    gdiv = np.zeros(g.shape3) if data.g is None else data.g.values
    theta = np.zeros(g.shape2) if data.theta_bc is None else data.theta_bc.values

    def rel(err, ref):
        e = float(np.max(np.abs(err)))
        r = float(np.max(np.abs(ref)))
        return e / r if r > 0 else e

    return {
        "curl": rel(fm.physical_curl(u) - omega, omega),
        "div": rel(fm.physical_divergence(u) - gdiv, gdiv),
        "trace": rel(normal_trace(region, u) - theta, theta),
        "lid_normal": float(np.max(np.abs(u[2][..., -1]))),
        "lid_means": float(np.max(np.abs(np.array([_lid_mean(u[0]), _lid_mean(u[1])])
                                         - np.asarray(data.lid_means)))),
    }


__all__ = ["DivCurlData", "RecoveredField", "covector_pushforward", "divcurl_residuals",
           "divcurl_solve", "normal_trace", "piola_pullback", "solve_curl_slab"]
