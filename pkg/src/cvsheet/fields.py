"""Field containers and spectral calculus on T^2 and on the flattened strip.

Conventions used throughout the package:

* The torus is [0, 2pi)^2 sampled on a uniform ``nx x ny`` grid; arrays are
  indexed ``[i1, i2]`` with ``x1 = 2 pi i1 / nx``.
* Fourier coefficients use the real-to-complex layout of ``rfft2`` over the
  two horizontal axes, and the forward transform carries the factor
  ``1/(nx*ny)``.  The zero mode is therefore the grid mean.
* The strip coordinate ``z`` runs over [-1, 0] on Chebyshev-Gauss-Lobatto
  points ``z_k = (cos(pi k/(nz-1)) - 1)/2``, so ``z_0 = 0`` is the interface
  and ``z_{nz-1} = -1`` is the lid.
* Integrals over T^2 use the plain Lebesgue measure ``dx'`` (total area
  ``4 pi^2``); lid "means" are averages, i.e. integrals divided by ``4 pi^2``.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import BinaryIO, Callable, Iterator, Literal, Union

import numpy as np
import scipy.fft as sfft

Side = Literal["plus", "minus"]
SIDES: tuple[Side, Side] = ("plus", "minus")

AREA = 4.0 * np.pi**2


def _workers() -> int:
    env = os.environ.get("CVSHEET_THREADS")
    if env:
        return max(1, int(env))
    return 1


def orientation(side: Side) -> int:
    """+1 on the minus side (z increases with x3), -1 on the plus side."""
    if side == "minus":
        return 1
    if side == "plus":
        return -1
    raise ValueError(f"unknown side {side!r}")


def chebyshev_nodes(nz: int) -> np.ndarray:
    k = np.arange(nz)
    return 0.5 * (np.cos(np.pi * k / (nz - 1)) - 1.0)


def chebyshev_diff_matrix(nz: int) -> np.ndarray:
    """Collocation derivative on the [-1, 0] Gauss-Lobatto nodes."""
    n = nz - 1
    s = np.cos(np.pi * np.arange(nz) / n)
    c = np.ones(nz)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(nz)
    ds = s[:, None] - s[None, :]
    d = np.outer(c, 1.0 / c) / (ds + np.eye(nz))
    d -= np.diag(d.sum(axis=1))
    # d/dz = 2 d/ds on the half-length interval
    return 2.0 * d


def clenshaw_curtis_weights(nz: int) -> np.ndarray:
    """Quadrature weights on the [-1, 0] nodes (sum to 1)."""
    n = nz - 1
    theta = np.pi * np.arange(nz) / n
    w = np.zeros(nz)
    v = np.ones(n - 1)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n**2 - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * theta[1:-1]) / (4 * k**2 - 1)
        v -= np.cos(n * theta[1:-1]) / (n**2 - 1)
    else:
        w[0] = w[n] = 1.0 / n**2
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[1:-1]) / (4 * k**2 - 1)
    w[1:-1] = 2.0 * v / n
    return 0.5 * w


@dataclass(frozen=True)
class Grid:
    """Tensor grid T^2 x {z_k}.  ``nz`` may be 0 for purely horizontal use."""

    nx: int
    ny: int
    nz: int = 0

    def __post_init__(self) -> None:
        if self.nx < 4 or self.ny < 4 or self.nx % 2 or self.ny % 2:
            raise ValueError("nx, ny must be even and >= 4")
        if self.nz and self.nz < 4:
            raise ValueError("nz must be >= 4")

    @classmethod
    @lru_cache(maxsize=32)
    def make(cls, nx: int, ny: int, nz: int = 0) -> "Grid":
        return cls(nx, ny, nz)

    @property
    def shape2(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def shape3(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @cached_property
    def x(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = 2 * np.pi * np.arange(self.nx) / self.nx
        x2 = 2 * np.pi * np.arange(self.ny) / self.ny
        return tuple(np.meshgrid(x1, x2, indexing="ij"))

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray]:
        k1 = np.fft.fftfreq(self.nx, 1.0 / self.nx)
        k2 = np.fft.rfftfreq(self.ny, 1.0 / self.ny)
        return tuple(np.meshgrid(k1, k2, indexing="ij"))

    @cached_property
    def ik(self) -> tuple[np.ndarray, np.ndarray]:
        """Spectral derivative multipliers with the Nyquist modes removed."""
        k1, k2 = self.k
        i1 = 1j * np.where(np.abs(k1) == self.nx // 2, 0.0, k1)
        i2 = 1j * np.where(np.abs(k2) == self.ny // 2, 0.0, k2)
        return i1, i2

    @cached_property
    def ksq(self) -> np.ndarray:
        k1, k2 = self.k
        return k1**2 + k2**2

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        k1, k2 = self.k
        return (np.abs(k1) <= self.nx / 3) & (np.abs(k2) <= self.ny / 3)

    @cached_property
    def spectral_weight(self) -> np.ndarray:
        """Multiplicity of each rfft coefficient in the full spectrum."""
        w = np.full(self.k[0].shape, 2.0)
        w[:, 0] = 1.0
        if self.ny % 2 == 0:
            w[:, -1] = 1.0
        return w

    @cached_property
    def z(self) -> np.ndarray:
        return chebyshev_nodes(self.nz)

    @cached_property
    def dz(self) -> np.ndarray:
        return chebyshev_diff_matrix(self.nz)

    @cached_property
    def dzt(self) -> np.ndarray:
        return np.ascontiguousarray(self.dz.T)

    @cached_property
    def wz(self) -> np.ndarray:
        return clenshaw_curtis_weights(self.nz)

    @property
    def cell_area(self) -> float:
        return AREA / (self.nx * self.ny)


# -- array-level spectral helpers ---------------------------------------------

def fft2(a: np.ndarray) -> np.ndarray:
    """Normalized forward transform over the two leading axes."""
    nx, ny = a.shape[0], a.shape[1]
    return sfft.rfft2(a, axes=(0, 1), workers=_workers()) / (nx * ny)


def ifft2(ahat: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.irfft2(ahat * (grid.nx * grid.ny), s=grid.shape2, axes=(0, 1),
                       workers=_workers())


def _bcast(m: np.ndarray, ndim: int) -> np.ndarray:
    return m.reshape(m.shape + (1,) * (ndim - 2))


def dx(a: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Spectral horizontal derivative along x1 (axis=0) or x2 (axis=1)."""
    ahat = fft2(a)
    return ifft2(_bcast(grid.ik[axis], a.ndim) * ahat, grid)


def grad2(a: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    ahat = fft2(a)
    i1, i2 = grid.ik
    return (ifft2(_bcast(i1, a.ndim) * ahat, grid),
            ifft2(_bcast(i2, a.ndim) * ahat, grid))


def hessian2(a: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(d11, d12, d22) of a horizontal field."""
    ahat = fft2(a)
    k1, k2 = grid.k
    i1, i2 = grid.ik
    return (ifft2(_bcast(-k1**2, a.ndim) * ahat, grid),
            ifft2(_bcast(i1 * i2, a.ndim) * ahat, grid),
            ifft2(_bcast(-k2**2, a.ndim) * ahat, grid))


def dz(a: np.ndarray, grid: Grid) -> np.ndarray:
    """Collocation derivative along the trailing z axis."""
    return a @ grid.dzt


def dealias_array(a: np.ndarray, grid: Grid) -> np.ndarray:
    ahat = fft2(a)
    return ifft2(_bcast(grid.dealias_mask, a.ndim) * ahat, grid)


def torus_mean(a: np.ndarray) -> np.ndarray:
    """Mean over the two leading axes."""
    return a.mean(axis=(0, 1))


def strip_integral(a: np.ndarray, jac: np.ndarray, grid: Grid) -> float:
    """Physical volume integral given the flattening Jacobian |d rho/dz|."""
    return float(grid.cell_area * np.sum(a * np.abs(jac) * grid.wz))


# -- field containers -----------------------------------------------------------

class TorusScalar:
    """Real field on the horizontal torus grid (immutable)."""

    __slots__ = ("grid", "values", "_spec")

    def __init__(self, values: np.ndarray, grid: Grid | None = None):
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("TorusScalar needs a 2-d array")
        if not np.all(np.isfinite(values)):
            raise ValueError("TorusScalar values must be finite")
        self.grid = grid or Grid.make(*values.shape)
        if values.shape != self.grid.shape2:
            raise ValueError(f"shape {values.shape} does not match grid {self.grid.shape2}")
        values.setflags(write=False)
        self.values = values
        self._spec = None

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      grid: Grid) -> "TorusScalar":
        x1, x2 = grid.x
        return cls(np.broadcast_to(fn(x1, x2), grid.shape2), grid)

    @classmethod
    def from_spectral(cls, ahat: np.ndarray, grid: Grid) -> "TorusScalar":
        return cls(ifft2(ahat, grid), grid)

    @classmethod
    def zeros(cls, grid: Grid) -> "TorusScalar":
        return cls(np.zeros(grid.shape2), grid)

    @property
    def spectral(self) -> np.ndarray:
        if self._spec is None:
            s = fft2(self.values)
            s.setflags(write=False)
            self._spec = s
        return self._spec

    def mean(self) -> float:
        return float(self.values.mean())

    def l2(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_area))

    def __add__(self, other):
        return TorusScalar(self.values + _vals(other), self.grid)

    def __sub__(self, other):
        return TorusScalar(self.values - _vals(other), self.grid)

    def __mul__(self, other):
        return TorusScalar(self.values * _vals(other), self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return TorusScalar(-self.values, self.grid)

    def __repr__(self) -> str:
        return f"TorusScalar({self.grid.nx}x{self.grid.ny}, mean={self.mean():.3g})"


def _vals(other):
    if isinstance(other, (TorusScalar, StripScalar, StripVector)):
        return other.values
    return other


class StripScalar:
    """Real field on T^2 x [-1, 0] tagged with the region it flattens."""

    __slots__ = ("grid", "values", "side")

    def __init__(self, values: np.ndarray, grid: Grid, side: Side):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape3:
            raise ValueError(f"shape {values.shape} does not match grid {grid.shape3}")
        if grid.nz < 4:
            raise ValueError("strip fields need nz >= 4")
        orientation(side)
        values.setflags(write=False)
        self.grid, self.values, self.side = grid, values, side

    @classmethod
    def zeros(cls, grid: Grid, side: Side) -> "StripScalar":
        return cls(np.zeros(grid.shape3), grid, side)

    def trace(self, level: Literal["interface", "lid"] = "interface") -> TorusScalar:
        k = 0 if level == "interface" else -1
        return TorusScalar(self.values[..., k], self.grid)

    def __add__(self, other):
        return StripScalar(self.values + _vals(other), self.grid, self.side)

    def __sub__(self, other):
        return StripScalar(self.values - _vals(other), self.grid, self.side)

    def __mul__(self, other):
        return StripScalar(self.values * _vals(other), self.grid, self.side)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        g = self.grid
        return f"StripScalar({g.nx}x{g.ny}x{g.nz}, side={self.side})"


class StripVector:
    """Three strip components stored as one ``(3, nx, ny, nz)`` array."""

    __slots__ = ("grid", "values", "side")

    def __init__(self, values, grid: Grid, side: Side):
        if isinstance(values, (tuple, list)):
            values = np.stack([_vals(c) for c in values])
        values = np.array(values, dtype=float)
        if values.shape != (3,) + grid.shape3:
            raise ValueError(f"shape {values.shape} does not match grid {(3,) + grid.shape3}")
        orientation(side)
        values.setflags(write=False)
        self.grid, self.values, self.side = grid, values, side

    @classmethod
    def zeros(cls, grid: Grid, side: Side) -> "StripVector":
        return cls(np.zeros((3,) + grid.shape3), grid, side)

    @classmethod
    def constant(cls, vec, grid: Grid, side: Side) -> "StripVector":
        v = np.asarray(vec, dtype=float).reshape(3, 1, 1, 1)
        return cls(np.broadcast_to(v, (3,) + grid.shape3), grid, side)

    @property
    def components(self) -> tuple[StripScalar, StripScalar, StripScalar]:
        return tuple(StripScalar(c, self.grid, self.side) for c in self.values)

    def trace(self, level: Literal["interface", "lid"] = "interface") -> tuple[TorusScalar, ...]:
        k = 0 if level == "interface" else -1
        return tuple(TorusScalar(c[..., k], self.grid) for c in self.values)

    def __add__(self, other):
        return StripVector(self.values + _vals(other), self.grid, self.side)

    def __sub__(self, other):
        return StripVector(self.values - _vals(other), self.grid, self.side)

    def __mul__(self, other):
        return StripVector(self.values * _vals(other), self.grid, self.side)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        g = self.grid
        return f"StripVector({g.nx}x{g.ny}x{g.nz}, side={self.side})"


@dataclass(frozen=True)
class SobolevIndex:
    s: float

    def __post_init__(self) -> None:
        if not self.s >= 0:
            raise ValueError("Sobolev index must be nonnegative")


# -- operations -----------------------------------------------------------------

def fourier_multiplier(g: TorusScalar,
                       m: Union[Callable[[np.ndarray, np.ndarray], np.ndarray], np.ndarray]
                       ) -> TorusScalar:
    """Multiply the Fourier coefficients of ``g`` by ``m(k1, k2)``.

    ``m`` is evaluated on the rfft half lattice, so it must satisfy
    ``m(-xi) = conj(m(xi))`` for the output to stay real (which the half
    spectrum enforces).
    """
    grid = g.grid
    k1, k2 = grid.k
    mv = m(k1, k2) if callable(m) else np.asarray(m)
    mv = np.broadcast_to(mv, k1.shape)
    bad = ~np.isfinite(mv)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"multiplier not finite at mode xi=({k1[i, j]:g}, {k2[i, j]:g})")
    return TorusScalar.from_spectral(mv * g.spectral, grid)


def sobolev_norm(g: TorusScalar, s: SobolevIndex | float) -> float:
    """H^s norm with weight (1+|xi|^2)^s; s=0 is the L^2(dx') norm."""
    s = s.s if isinstance(s, SobolevIndex) else SobolevIndex(float(s)).s
    grid = g.grid
    w = grid.spectral_weight * (1.0 + grid.ksq) ** s
    return float(np.sqrt(AREA * np.sum(w * np.abs(g.spectral) ** 2)))


def mean_project(g: TorusScalar) -> TorusScalar:
    return TorusScalar(g.values - g.values.mean(), g.grid)


def dealias(g: TorusScalar) -> TorusScalar:
    """Two-thirds rule: zero every mode with |k_i| > n_i/3."""
    return TorusScalar.from_spectral(g.spectral * g.grid.dealias_mask, g.grid)


# -- CVS1 snapshot format ------------------------------------------------------------

def write_field(fh: BinaryIO | str | Path, name: str, values: np.ndarray) -> None:
    """Append one record: ``CVS1 nx ny [nz] name`` + little-endian float64 data."""
    if isinstance(fh, (str, Path)):
        with open(fh, "ab") as out:
            write_field(out, name, values)
        return
    values = np.asarray(values, dtype="<f8")
    if values.ndim not in (2, 3):
        raise ValueError("only 2-d or 3-d fields can be written")
    if not name or any(ch.isspace() for ch in name) or name.lstrip("-").isdigit():
        raise ValueError(f"invalid field name {name!r}")
    dims = " ".join(str(n) for n in values.shape)
    fh.write(f"CVS1 {dims} {name}\n".encode("ascii"))
    fh.write(np.ascontiguousarray(values).tobytes(order="C"))


def iter_fields(fh: BinaryIO | str | Path) -> Iterator[tuple[str, np.ndarray]]:
    if isinstance(fh, (str, Path)):
        with open(fh, "rb") as inp:
            yield from iter_fields(io.BytesIO(inp.read()))
        return
    while True:
        header = fh.readline()
        if not header:
            return
        parts = header.decode("ascii").split()
        if not parts or parts[0] != "CVS1":
            raise ValueError(f"bad CVS1 header {header!r}")
        dims = tuple(int(p) for p in parts[1:-1])
        if len(dims) not in (2, 3):
            raise ValueError(f"bad CVS1 dimensions in {header!r}")
        count = int(np.prod(dims))
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ValueError(f"truncated CVS1 record {parts[-1]!r}")
        yield parts[-1], np.frombuffer(raw, dtype="<f8").reshape(dims).copy()


def read_fields(path: str | Path) -> dict[str, np.ndarray]:
    return dict(iter_fields(path))


__all__ = [
    "AREA", "Grid", "SIDES", "Side", "SobolevIndex", "StripScalar", "StripVector",
    "TorusScalar", "dealias", "fourier_multiplier", "iter_fields", "mean_project",
    "orientation", "read_fields", "sobolev_norm", "write_field",
]

