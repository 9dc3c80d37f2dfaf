"""Stability margin, planar dispersion relation, interface energy and
growth-rate fitting.

Velocities enter through ``v = [u]/2 = (u_plus - u_minus)/2`` and
``w = (u_plus + u_minus)/2``.  The stability margin at a point is the
smallest eigenvalue of the 2x2 matrix

    M = h+ h+^T + h- h-^T - 2 v v^T      (tangential components only),

i.e. the infimum over unit directions phi of
``(h+ . phi)^2 + (h- . phi)^2 - 2 (v . phi)^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .fields import TorusScalar, fourier_multiplier, grad2, sobolev_norm


# -- stability margin ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterfaceTraces:
    """Traces of u and h on the interface: each a 3-tuple of arrays (or constants)."""

    u_plus: tuple
    u_minus: tuple
    h_plus: tuple
    h_minus: tuple

    @classmethod
    def planar(cls, u_plus, u_minus, h_plus, h_minus) -> "InterfaceTraces":
        def vec(a):
            a = np.zeros(3) if a is None else np.asarray(a, dtype=float)
            return tuple(np.pad(a, (0, 3 - a.size)))
        return cls(vec(u_plus), vec(u_minus), vec(h_plus), vec(h_minus))

    def _arr(self, name: str) -> np.ndarray:
        return np.stack([np.asarray(c, dtype=float) for c in getattr(self, name)])

    @property
    def v(self) -> np.ndarray:
        return 0.5 * (self._arr("u_plus") - self._arr("u_minus"))

    @property
    def w(self) -> np.ndarray:
        return 0.5 * (self._arr("u_plus") + self._arr("u_minus"))

    @property
    def hp(self) -> np.ndarray:
        return self._arr("h_plus")

    @property
    def hm(self) -> np.ndarray:
        return self._arr("h_minus")


@dataclass
class StabilityReport:
    lambda_min: float
    lambda_field: np.ndarray
    syrovatskii_ok: dict
    worst_point: tuple
    worst_direction: np.ndarray
    # the same infimum with coefficient 1/2 on the velocity term (logged only)
    lambda_half_velocity: float = float("nan")
    # infimum over unit tangent vectors of the surface (needs the interface slope)
    lambda_tangent: float = float("nan")


def margin_matrix(hp: np.ndarray, hm: np.ndarray, v: np.ndarray,
                  velocity_coef: float = 2.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entries (a, b, c) of the symmetric matrix [[a, b], [b, c]]."""
    a = hp[0] ** 2 + hm[0] ** 2 - velocity_coef * v[0] ** 2
    b = hp[0] * hp[1] + hm[0] * hm[1] - velocity_coef * v[0] * v[1]
    c = hp[1] ** 2 + hm[1] ** 2 - velocity_coef * v[1] ** 2
    return a, b, c


def _eig2(a, b, c):
    """Eigenvalues (low, high) and low eigenvector of [[a,b],[b,c]]."""
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lo = mean - rad
    # eigenvector for lo: (b, lo - a) or (lo - c, b), whichever is better conditioned
    v1 = np.stack([b, lo - a])
    v2 = np.stack([lo - c, b])
    n1 = np.hypot(*v1)
    n2 = np.hypot(*v2)
    vec = np.where(n1 >= n2, v1, v2)
    nrm = np.maximum(n1, n2)
    vec = np.where(nrm > 0, vec / np.where(nrm > 0, nrm, 1.0), np.stack([np.ones_like(a),
                                                                         np.zeros_like(a)]))
    return lo, mean + rad, vec


def syrovatskii_check(u_plus, u_minus, h_plus, h_minus, tol: float = 1e-12) -> dict:
    """Planar stability inequalities for constant states (3-vectors).

    ``jump_bound``:  |[u]|^2 <= 2(|h+|^2 + |h-|^2)
    ``cross_bound``: |[u] x h+|^2 + |[u] x h-|^2 <= 2|h+ x h-|^2
    ``weak_strict``: strict version of ``cross_bound`` (the weak stability condition)
    ``strong``:      max(|[u] x h+|, |[u] x h-|) < |h+ x h-|
    """
    up, um, hp, hm = (np.pad(np.asarray(a, float), (0, 3 - len(a))) for a in
                      (u_plus, u_minus, h_plus, h_minus))
    ju = up - um
    lhs = np.sum(np.cross(ju, hp) ** 2) + np.sum(np.cross(ju, hm) ** 2)
    rhs = 2 * np.sum(np.cross(hp, hm) ** 2)
    scale = tol * max(1.0, lhs, rhs)
    return {
        "jump_bound": bool(ju @ ju <= 2 * (hp @ hp + hm @ hm) + scale),
        "cross_bound": bool(lhs <= rhs + scale),
        "weak_strict": bool(lhs < rhs - scale),
        "strong": bool(max(np.linalg.norm(np.cross(ju, hp)), np.linalg.norm(np.cross(ju, hm)))
                       < np.linalg.norm(np.cross(hp, hm)) - tol),
    }


def lambda_stability(traces: InterfaceTraces, slope: Optional[tuple] = None) -> StabilityReport:
    """Pointwise-minimized stability margin, closed form (no direction sampling).

    ``slope = (d1 f, d2 f)`` additionally gives the infimum over unit tangent
    vectors of the surface, reported as ``lambda_tangent``.
    """
    v, hp, hm = traces.v, traces.hp, traces.hm
    a, b, c = margin_matrix(hp, hm, v)
    lo, _, vec = _eig2(a, b, c)
    lo = np.atleast_1d(lo)
    idx = np.unravel_index(int(np.argmin(lo)), lo.shape)
    worst_dir = np.array([np.atleast_1d(vec[0])[idx], np.atleast_1d(vec[1])[idx]])
    half = _eig2(*margin_matrix(hp, hm, v, velocity_coef=0.5))[0]
    flags: dict = {}
    if np.ndim(lo) == 1 and lo.size == 1:
        flags = syrovatskii_check(np.ravel(traces._arr("u_plus")), np.ravel(traces._arr("u_minus")),
                                  np.ravel(hp), np.ravel(hm))
    else:
        # pointwise flags, reported as "holds everywhere"
        flags = _pointwise_flags(traces)
    rep = StabilityReport(float(lo[idx]), lo if lo.size > 1 else lo.reshape(()), flags,
                          tuple(int(i) for i in idx), worst_dir, float(np.min(half)))
    if slope is not None:
        rep.lambda_tangent = float(np.min(tangent_margin(traces, slope)))
    return rep


def _pointwise_flags(traces: InterfaceTraces) -> dict:
    up, um, hp, hm = (np.moveaxis(traces._arr(n), 0, -1) for n in
                      ("u_plus", "u_minus", "h_plus", "h_minus"))
    ju = up - um
    cp = np.sum(np.cross(ju, hp) ** 2, axis=-1)
    cm = np.sum(np.cross(ju, hm) ** 2, axis=-1)
    hh = np.sum(np.cross(hp, hm) ** 2, axis=-1)
    return {
        "jump_bound": bool(np.all(np.sum(ju**2, -1) <= 2 * (np.sum(hp**2, -1) + np.sum(hm**2, -1))
                                  + 1e-12)),
        "cross_bound": bool(np.all(cp + cm <= 2 * hh + 1e-12)),
        "weak_strict": bool(np.all(cp + cm < 2 * hh)),
        "strong": bool(np.all(np.maximum(cp, cm) < hh)),
    }


def metric_matrix(slope: tuple) -> tuple:
    """Entries of [[1+f1^2, f1 f2], [f1 f2, 1+f2^2]]."""
    f1, f2 = (np.asarray(s, float) for s in slope)
    return 1 + f1**2, f1 * f2, 1 + f2**2


def tangent_from_direction(phi: np.ndarray, slope: tuple) -> np.ndarray:
    """Tangent vector q = (q1, q2, f1 q1 + f2 q2) whose metric image is ``phi``.

    For fields with h . N = 0 one has h1 phi1 + h2 phi2 = h . q.
    """
    g11, g12, g22 = metric_matrix(slope)
    det = g11 * g22 - g12**2
    q1 = (g22 * phi[0] - g12 * phi[1]) / det
    q2 = (g11 * phi[1] - g12 * phi[0]) / det
    f1, f2 = (np.asarray(s, float) for s in slope)
    return np.stack([q1, q2, f1 * q1 + f2 * q2])


def s2_form(traces: InterfaceTraces, q: np.ndarray) -> np.ndarray:
    """2[(h+ . q)^2 + (h- . q)^2] - ([u] . q)^2 for 3-vectors q."""
    q = np.asarray(q, float)
    hp, hm, ju = traces.hp, traces.hm, 2 * traces.v

    def pad(a):
        # constant traces against a batch of directions
        return a.reshape(a.shape + (1,) * (q.ndim - a.ndim)) if a.ndim < q.ndim else a

    hp, hm, ju = pad(hp), pad(hm), pad(ju)
    dot = lambda a: np.sum(a * q, axis=0)
    return 2 * (dot(hp) ** 2 + dot(hm) ** 2) - dot(ju) ** 2


def tangent_margin(traces: InterfaceTraces, slope: tuple) -> np.ndarray:
    """Infimum over unit tangent q of ``s2_form`` divided by 2.

    With q = T q', |q|^2 = q'^T G q' and the form equal to 2 q'^T G M G q',
    the infimum is the lowest eigenvalue of G M (real spectrum).
    """
    a, b, c = margin_matrix(traces.hp, traces.hm, traces.v)
    g11, g12, g22 = metric_matrix(slope)
    p11 = g11 * a + g12 * b
    p12 = g11 * b + g12 * c
    p21 = g12 * a + g22 * b
    p22 = g12 * b + g22 * c
    tr = p11 + p22
    det = p11 * p22 - p12 * p21
    return 0.5 * tr - np.sqrt(np.maximum(0.25 * tr**2 - det, 0.0))


# -- dispersion ------------------------------------------------------------------------

@dataclass
class DispersionRecord:
    xi: tuple
    sigma2: float
    classification: str
    growth_rate: float
    frequency: float
    doppler: float


@dataclass
class DispersionTable:
    v: np.ndarray
    h_plus: np.ndarray
    h_minus: np.ndarray
    w: np.ndarray
    records: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def rows(self) -> list[dict]:
        return [dict(xi1=r.xi[0], xi2=r.xi[1], sigma2=r.sigma2, classification=r.classification,
                     growth_rate=r.growth_rate, frequency=r.frequency, doppler=r.doppler)
                for r in self.records]


def sigma2(v, h_plus, h_minus, xi) -> float:
    """(v . xi)^2 - ((h+ . xi)^2 + (h- . xi)^2)/2 with tangential 2-vectors."""
    v, hp, hm, xi = (np.asarray(a, float)[:2] for a in (v, h_plus, h_minus, xi))
    return float((v @ xi) ** 2 - 0.5 * ((hp @ xi) ** 2 + (hm @ xi) ** 2))


def dispersion(v, h_plus, h_minus, modes: Iterable, w=(0.0, 0.0),
               neutral_tol: float = 1e-12) -> DispersionTable:
    """Tabulate the planar interface symbol.

    The interface equation ``(d_t + w . grad)^2 f = sigma^2(D) f`` gives
    modes ``exp(i xi.x + s t)`` with ``s = -i w.xi +- sqrt(sigma^2)``: growth
    rate ``sqrt(sigma^2)`` when positive, else oscillation frequency
    ``sqrt(-sigma^2)`` about the Doppler shift ``w . xi``.
    """
    v, hp, hm, w = (np.asarray(a, float)[:2] for a in (v, h_plus, h_minus, w))
    table = DispersionTable(v, hp, hm, w)
    for xi in modes:
        xi = tuple(float(x) for x in xi)
        s2 = sigma2(v, hp, hm, xi)
        scale = neutral_tol * max(1.0, float(np.dot(xi, xi)) * (v @ v + hp @ hp + hm @ hm))
        if s2 > scale:
            cls = "unstable"
        elif s2 < -scale:
            cls = "stable"
        else:
            cls = "neutral"
            s2 = 0.0 if abs(s2) <= scale else s2
        table.records.append(DispersionRecord(
            xi, s2, cls, float(np.sqrt(max(s2, 0.0))), float(np.sqrt(max(-s2, 0.0))) + 0.0,
            float(w @ np.asarray(xi))))
    return table


def stable_planar(v, h_plus, h_minus) -> bool:
    """True iff sigma^2 < 0 for every nonzero direction (closed form)."""
    a, b, c = margin_matrix(np.asarray(h_plus, float)[:2], np.asarray(h_minus, float)[:2],
                            np.asarray(v, float)[:2])
    return bool(_eig2(a, b, c)[0] > 0)


# -- energy ----------------------------------------------------------------------------

@dataclass
class EnergyReport:
    value: float
    terms: dict
    lower: float
    upper: float
    c: float
    C: float
    lower_order: float
    holds: bool


def _bessel(f: TorusScalar, s: float) -> TorusScalar:
    return fourier_multiplier(f, lambda k1, k2: (1.0 + k1**2 + k2**2) ** (s / 2))


def _sobolev_sq(g: TorusScalar, s: float) -> float:
    return sobolev_norm(g, s) ** 2


def energy_es(f: TorusScalar, theta: TorusScalar, traces: InterfaceTraces, s: float,
              lambda_min: float | None = None) -> EnergyReport:
    """Interface energy with the transport, velocity-jump and magnetic terms.

    E_s = |<D>^s theta + w.grad <D>^s f|^2 - |v.grad <D>^s f|^2
          + 1/2 |h+.grad <D>^s f|^2 + 1/2 |h-.grad <D>^s f|^2     (L^2(dx') norms)

    Writing a = <D>^s theta and b = grad <D>^s f the integrand is
    |a + w.b|^2 + b^T M b / 2 with M the stability matrix, which yields

        c (|theta|_s^2 + |f|_{s+1}^2) <= E_s + c |f|_s^2 <= C (same)

    whenever the stability margin is positive; ``holds`` reports whether the
    measured values respect these bounds.
    """
    g = f.grid
    fs = _bessel(f, s).values
    ts = _bessel(theta, s).values
    b1, b2 = grad2(fs, g)
    w, v, hp, hm = traces.w, traces.v, traces.hp, traces.hm
    area = g.cell_area

    def sq(a):
        return float(np.sum(np.broadcast_to(a, g.shape2) ** 2) * area)

    terms = {
        "transport": sq(ts + w[0] * b1 + w[1] * b2),
        "velocity": -sq(v[0] * b1 + v[1] * b2),
        "magnetic_plus": 0.5 * sq(hp[0] * b1 + hp[1] * b2),
        "magnetic_minus": 0.5 * sq(hm[0] * b1 + hm[1] * b2),
    }
    value = sum(terms.values())
    if lambda_min is None:
        lambda_min = lambda_stability(traces).lambda_min
    w2 = float(np.max(w[0] ** 2 + w[1] ** 2))
    hmax = float(np.max(hp[0] ** 2 + hp[1] ** 2) + np.max(hm[0] ** 2 + hm[1] ** 2))
    base = _sobolev_sq(theta, s) + _sobolev_sq(f, s + 1)
    if lambda_min > 0:
        t = min(1.0, lambda_min / (4 * w2)) if w2 > 0 else 1.0
        c = min(t / 2, lambda_min / 4)
        C = max(2.0, 2 * w2 + 0.5 * hmax) + c
        lower_order = c * _sobolev_sq(f, s)
        total = value + lower_order
        tol = 1e-12 * max(1.0, abs(total), base)
        holds = bool(c * base <= total + tol and total <= C * base + tol)
    else:
        c, C, lower_order, holds = float("nan"), float("nan"), 0.0, False
    return EnergyReport(value, terms, c * base if c == c else float("nan"),
                        C * base if C == C else float("nan"), c, C, lower_order, holds)


def total_energy(u: dict, h: dict, fmaps: dict) -> float:
    """Sum over regions of the integral of |u|^2 + |h|^2."""
    e = 0.0
    for side, fm in fmaps.items():
        e += fm.volume_integral(np.sum(u[side] ** 2, axis=0) + np.sum(h[side] ** 2, axis=0))
    return e


# -- growth-rate fitting -------------------------------------------------------------

class NoLinearWindowError(ValueError):
    """No window of exponential behaviour was found; try a smaller perturbation."""


@dataclass
class GrowthFit:
    rate: float
    intercept: float
    window: tuple
    rms: float


def growth_rate_fit(t: Sequence[float], amplitude: Sequence[float], *,
                    max_rms: float = 0.02, min_samples: int = 10,
                    min_fraction: float = 0.5, details: bool = False):
    """Least-squares slope of log(amplitude) over the longest clean window.

    A window qualifies when the RMS deviation of the log-linear fit is at most
    ``max_rms`` (2 % in amplitude).  Among windows of the longest qualifying
    length the one with the smallest residual wins.
    """
    t = np.asarray(t, dtype=float)
    a = np.asarray(amplitude, dtype=float)
    if t.shape != a.shape or t.ndim != 1:
        raise ValueError("t and amplitude must be 1-d arrays of equal length")
    if t.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {t.size}")
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise ValueError("amplitudes must be positive and finite")
    y = np.log(a)
    n = t.size
    # cumulative sums for O(1) window fits
    c = [np.concatenate([[0.0], np.cumsum(q)]) for q in (np.ones(n), t, y, t * t, t * y, y * y)]
    shortest = max(min_samples, int(np.ceil(min_fraction * n)))
    for length in range(n, shortest - 1, -1):
        i = np.arange(0, n - length + 1)
        j = i + length
        S0, St, Sy, Stt, Sty, Syy = (q[j] - q[i] for q in c)
        den = S0 * Stt - St**2
        slope = (S0 * Sty - St * Sy) / den
        icpt = (Sy - slope * St) / S0
        sse = Syy - 2 * slope * Sty - 2 * icpt * Sy + slope**2 * Stt + 2 * slope * icpt * St \
            + icpt**2 * S0
        rms = np.sqrt(np.maximum(sse, 0.0) / S0)
        ok = rms <= max_rms
        if np.any(ok):
            k = int(np.argmin(np.where(ok, rms, np.inf)))
            fit = GrowthFit(float(slope[k]), float(icpt[k]), (int(i[k]), int(j[k])), float(rms[k]))
            return fit if details else fit.rate
    raise NoLinearWindowError("no log-linear window found; reduce the perturbation amplitude "
                              "or sample a longer linear phase")


def mode_amplitude(g: TorusScalar, xi: tuple[int, int]) -> complex:
    """Complex Fourier coefficient of ``g`` at integer mode ``xi`` (rfft layout aware)."""
    k1, k2 = int(xi[0]), int(xi[1])
    grid = g.grid
    if k2 < 0 or (k2 == 0 and k1 < 0):
        return np.conj(mode_amplitude(g, (-k1, -k2)))
    return complex(g.spectral[k1 % grid.nx, k2])


__all__ = [
    "DispersionTable", "EnergyReport", "GrowthFit", "InterfaceTraces", "NoLinearWindowError",
    "StabilityReport", "dispersion", "energy_es", "growth_rate_fit", "lambda_stability",
    "margin_matrix", "mode_amplitude", "s2_form", "sigma2", "stable_planar",
    "syrovatskii_check", "tangent_from_direction", "tangent_margin", "total_energy",
]

