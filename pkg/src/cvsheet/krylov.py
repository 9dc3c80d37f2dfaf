"""Small Krylov solvers that report their residual history.

Both work on flat real vectors and take the operator and preconditioner as
callables, so the elliptic and DN layers can keep their data in field
layout and only reshape at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NonConvergenceError

Op = Callable[[np.ndarray], np.ndarray]


@dataclass
class KrylovResult:
    x: np.ndarray
    residual: float
    iterations: int
    history: list[float]


def gmres(apply: Op, b: np.ndarray, precond: Optional[Op] = None, *, tol: float = 1e-10,
          max_iter: int = 500, restart: int = 40, x0: Optional[np.ndarray] = None,
          atol: float = 0.0, what: str = "GMRES") -> KrylovResult:
    """Right-preconditioned restarted GMRES.

    Stops when the residual is below ``max(tol |b|, atol)``.  With right
    preconditioning the Arnoldi estimate is the unpreconditioned residual, so
    it is accepted on convergence; restarts recompute the true residual.
    """
    M = precond or (lambda v: v)
    bnorm = np.linalg.norm(b)
    n = b.size
    if bnorm <= atol:
        return KrylovResult(np.zeros(n), 0.0, 0, [0.0])
    tol = max(tol, atol / bnorm)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    history = [np.linalg.norm(r) / bnorm]
    total = 0
    while history[-1] > tol and total < max_iter:
        m = min(restart, max_iter - total)
        beta = np.linalg.norm(r)
        V = np.empty((m + 1, n))
        Z = np.empty((m, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        for k in range(m):
            Z[k] = M(V[k])
            w = apply(Z[k])
            # classical Gram-Schmidt with one reorthogonalization pass
            for _ in range(2):
                h = V[:k + 1] @ w
                w -= h @ V[:k + 1]
                H[:k + 1, k] += h
            H[k + 1, k] = np.linalg.norm(w)
            if H[k + 1, k] > 0:
                V[k + 1] = w / H[k + 1, k]
            else:
                V[k + 1] = 0.0
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            den = np.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = H[k, k] / den, H[k + 1, k] / den
            H[k, k] = den
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            history.append(abs(g[k + 1]) / bnorm)
            if history[-1] <= tol * 0.5 or H[k, k] == 0.0:
                break
        y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
        x = x + y @ Z[:k_used]
        if history[-1] <= tol * 0.5:
            break
        r = b - apply(x)
        history.append(np.linalg.norm(r) / bnorm)
    if history[-1] > tol:
        raise NonConvergenceError(what, history)
    return KrylovResult(x, history[-1], total, history)


def pcg(apply: Op, b: np.ndarray, precond: Optional[Op] = None, *, tol: float = 1e-10,
        max_iter: int = 500, inner: Optional[Op] = None, atol: float = 0.0,
        what: str = "PCG") -> KrylovResult:
    """Preconditioned conjugate gradients for a symmetric positive operator.

    ``inner`` defines the inner product (defaults to the Euclidean one); the
    residual tolerance is ``max(tol |b|, atol)`` in that inner product.
    """
    M = precond or (lambda v: v)
    dot = inner or (lambda a, c: float(a @ c))
    bnorm = np.sqrt(dot(b, b))
    if bnorm <= atol:
        return KrylovResult(np.zeros_like(b), 0.0, 0, [0.0])
    tol = max(tol, atol / bnorm)
    x = np.zeros_like(b)
    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = dot(r, z)
    history = [1.0]
    for it in range(1, max_iter + 1):
        ap = apply(p)
        a = rz / dot(p, ap)
        x += a * p
        r -= a * ap
        history.append(np.sqrt(dot(r, r)) / bnorm)
        if history[-1] <= tol:
            return KrylovResult(x, history[-1], it, history)
        z = M(r)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergenceError(what, history)
