"""Dirichlet-Neumann operators of the two regions and their sum.

For interface data ``g`` let ``H g`` be its harmonic extension into one
region (vanishing normal derivative on the lid).  With the upward normal
``N = (-grad f, 1)``:

    N_plus g  = -N . grad(H_plus g),   N_minus g = +N . grad(H_minus g),

both nonnegative and self-adjoint; ``N_sum = N_plus + N_minus``.
"""
from __future__ import annotations

from typing import Literal, Optional

import numpy as np

from .elliptic import DEFAULT_MAX_ITER, DEFAULT_TOL, Region
from .fields import Grid, TorusScalar, fft2, grad2, ifft2
from .geometry import Surface
from .krylov import KrylovResult, pcg

DnoSide = Literal["plus", "minus", "sum"]


class DnoOperator:
    """DN operator of one region (``"plus"``/``"minus"``) or of both (``"sum"``)."""

    def __init__(self, surface: Surface, side: DnoSide, *,
                 regions: Optional[dict[str, Region]] = None, delta: float | None = None,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        if side not in ("plus", "minus", "sum"):
            raise ValueError(f"unknown DN side {side!r}")
        self.surface = surface
        self.side = side
        self.tol = tol
        self.max_iter = max_iter
        wanted = ("plus", "minus") if side == "sum" else (side,)
        regions = dict(regions or {})
        for s in wanted:
            if s not in regions:
                regions[s] = Region(surface, s, delta=delta, tol=tol, max_iter=max_iter)
        self.regions = {s: regions[s] for s in wanted}
        self.last_inverse: Optional[KrylovResult] = None

    @property
    def grid(self) -> Grid:
        return self.surface.grid

    def _one(self, side: str, g: np.ndarray) -> np.ndarray:
        region = self.regions[side]
        ext = region.harmonic_extension(g).values
        return region.fmap.o * region.interface_flux(ext)

    def apply_array(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if not np.any(g - g.mean()):
            return np.zeros_like(g)
        return sum(self._one(s, g) for s in self.regions)

    def apply(self, psi: TorusScalar) -> TorusScalar:
        return TorusScalar(self.apply_array(psi.values), self.grid)

    __call__ = apply

    def flat_symbol(self) -> np.ndarray:
        """Symbol of the operator for the flat interface at the mean height."""
        k = self.grid.kabs
        fbar = self.surface.mean
        depth = {"minus": 1.0 + fbar, "plus": 1.0 - fbar}
        return sum(k * np.tanh(k * depth[s]) for s in self.regions)

    def inverse(self, rhs: TorusScalar, *, tol: float = 1e-10,
                max_iter: int | None = None) -> TorusScalar:
        return TorusScalar(self.inverse_array(rhs.values, tol=tol, max_iter=max_iter), self.grid)

    def inverse_array(self, rhs: np.ndarray, *, tol: float = 1e-10,
                      max_iter: int | None = None) -> np.ndarray:
        """Zero-mean solution of ``N psi = rhs - mean(rhs)`` by preconditioned CG."""
        g = self.grid
        b = np.asarray(rhs, dtype=float)
        b = b - b.mean()
        sym = self.flat_symbol()
        inv_sym = np.where(sym > 0, 1.0 / np.where(sym > 0, sym, 1.0), 0.0)

        def op(v):
            out = self.apply_array(v.reshape(g.shape2))
            return (out - out.mean()).ravel()

        def prec(v):
            return ifft2(inv_sym * fft2(v.reshape(g.shape2)), g).ravel()

        res = pcg(op, b.ravel(), prec, tol=tol, max_iter=max_iter or self.max_iter,
                  what=f"DN inverse ({self.side})")
        self.last_inverse = res
        x = res.x.reshape(g.shape2)
        return x - x.mean()


def dn_apply(op: DnoOperator, psi: TorusScalar) -> TorusScalar:
    return op.apply(psi)


def dn_inverse(op: DnoOperator, rhs: TorusScalar, *, tol: float = 1e-10) -> TorusScalar:
    if op.side != "sum":
        raise ValueError("dn_inverse is defined for the summed operator")
    return op.inverse(rhs, tol=tol)


def dn_difference(plus: DnoOperator, minus: DnoOperator, psi: TorusScalar) -> TorusScalar:
    """``N_plus psi - N_minus psi`` for operators built on the same surface."""
    if plus.side != "plus" or minus.side != "minus":
        raise ValueError("dn_difference needs a plus and a minus operator")
    if plus.surface is not minus.surface and not (
            plus.grid == minus.grid
            and np.array_equal(plus.surface.f.values, minus.surface.f.values)):
        raise ValueError("DN operators live on different surfaces")
    return TorusScalar(plus.apply_array(psi.values) - minus.apply_array(psi.values), plus.grid)


def principal_symbol(surface: Surface, x: tuple[int, int] | None, xi) -> float | np.ndarray:
    """``sqrt((1+|grad f|^2)|xi|^2 - (grad f . xi)^2)`` at grid index ``x``
    (or at every grid point when ``x`` is None)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (2,):
        raise ValueError("xi must be a 2-vector")
    if not np.any(xi):
        raise ValueError("principal symbol undefined at xi = 0")
    f1, f2 = grad2(surface.f.values, surface.grid)
    if x is not None:
        f1, f2 = f1[x], f2[x]
    lam2 = (1 + f1**2 + f2**2) * (xi @ xi) - (f1 * xi[0] + f2 * xi[1]) ** 2
    lam = np.sqrt(lam2)
    return float(lam) if np.ndim(lam) == 0 else lam


__all__ = ["DnoOperator", "dn_apply", "dn_difference", "dn_inverse", "principal_symbol"]
