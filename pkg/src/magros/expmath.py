"""Actions of exp and phi-functions of large operators on vectors.

phi_0(z) = exp(z), phi_1(z) = (e^z - 1)/z, phi_2(z) = (e^z - 1 - z)/z^2.

Large operators are only touched through matvecs (Arnoldi projection); the
small Hessenberg factor is handled densely with the augmented-block
exponential, which also gives phi_{k+1} for the a posteriori error estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

DENSE_LIMIT = 200


class NoConvergence(RuntimeError):
    """Krylov approximation did not reach the requested tolerance."""


@dataclass(frozen=True)
class KrylovConfig:
    tol: float = 1e-10
    max_dim: int = 100
    min_dim: int = 2
    max_substep_levels: int = 6

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"krylov tol must lie in (0, 1), got {self.tol}")
        if self.min_dim < 1 or self.max_dim < self.min_dim:
            raise ValueError(f"need 1 <= min_dim <= max_dim, got {self.min_dim}, {self.max_dim}")


class LinearOperatorHandle:
    """A linear map known only through ``matvec``."""

    def __init__(self, dim: int, matvec: Callable[[np.ndarray], np.ndarray]):
        self.dim = int(dim)
        self.matvec = matvec

    @classmethod
    def from_matrix(cls, A) -> "LinearOperatorHandle":
        return cls(A.shape[0], lambda v: A @ v)

    def __matmul__(self, v):
        return self.matvec(v)

    def to_dense(self) -> np.ndarray:
        """Column-by-column materialisation; oracle-scale only."""
        if self.dim > DENSE_LIMIT * 50:
            raise ValueError(f"operator of dimension {self.dim} too large to densify")
        return np.column_stack([self.matvec(e) for e in np.eye(self.dim)])


def arnoldi(L: LinearOperatorHandle, v: np.ndarray, m: int):
    """Arnoldi process with classical Gram-Schmidt and one reorthogonalisation.

    Returns ``(V, H, breakdown)``.  Without breakdown ``V`` is ``(n, m+1)`` and
    ``H`` is ``(m+1, m)`` with ``L V[:, :m] = V H``.  On a happy breakdown after
    ``k`` steps, ``V`` is ``(n, k)`` and ``H`` the square ``(k, k)`` projection.
    """
    v = np.asarray(v, dtype=float)
    beta = np.linalg.norm(v)
    if beta == 0:
        raise ValueError("arnoldi needs a nonzero starting vector")
    Vt = np.zeros((m + 1, v.size))
    H = np.zeros((m + 1, m))
    Vt[0] = v / beta
    for j in range(m):
        hn, wnorm = _arnoldi_step(L, Vt, H, j)
        if hn <= 1e-12 * wnorm:
            return Vt[: j + 1].T.copy(), H[: j + 1, : j + 1].copy(), True
    return Vt.T.copy(), H, False


def _arnoldi_step(L, Vt, H, j):
    w = np.asarray(L.matvec(Vt[j]), dtype=float)
    wnorm = np.linalg.norm(w)
    Q = Vt[: j + 1]
    for _ in range(2):
        c = Q @ w
        w -= Q.T @ c
        H[: j + 1, j] += c
    hn = np.linalg.norm(w)
    if hn > 1e-12 * wnorm:
        H[j + 1, j] = hn
        Vt[j + 1] = w / hn
    return hn, wnorm


def _phi_e1(A: np.ndarray, p: int) -> list:
    """``[phi_0(A) e1, ..., phi_p(A) e1]`` from one exponential of size ``m + p``."""
    m = A.shape[0]
    aug = np.zeros((m + p, m + p))
    aug[:m, :m] = A
    if p:
        aug[0, m] = 1.0
        for i in range(p - 1):
            aug[m + i, m + i + 1] = 1.0
    E = scipy.linalg.expm(aug)
    return [E[:m, 0]] + [E[:m, m + j] for j in range(p)]


def _check_schedule(m: int, cfg: KrylovConfig) -> bool:
    return m >= cfg.min_dim and (m <= 8 or m % 4 == 0 or m == cfg.max_dim)


def _krylov_phi(L: LinearOperatorHandle, tau: float, v: np.ndarray, k: int, cfg: KrylovConfig):
    beta = np.linalg.norm(v)
    if beta == 0:
        return np.zeros_like(v), 0
    n = v.size
    mmax = min(cfg.max_dim, n)
    Vt = np.zeros((mmax + 1, n))
    H = np.zeros((mmax + 1, mmax))
    Vt[0] = v / beta
    for j in range(mmax):
        hn, wnorm = _arnoldi_step(L, Vt, H, j)
        m = j + 1
        if hn <= 1e-12 * wnorm or m == n:
            # invariant subspace: the projection is exact
            y = _phi_e1(tau * H[:m, :m], k)[k]
            return beta * (Vt[:m].T @ y), m
        if _check_schedule(m, cfg):
            cols = _phi_e1(tau * H[:m, :m], k + 1)
            y = cols[k]
            err = beta * tau * hn * abs(cols[k + 1][m - 1])
            approx_norm = beta * np.linalg.norm(y)
            if err <= cfg.tol * approx_norm or approx_norm == 0:
                return beta * (Vt[:m].T @ y), m
    raise NoConvergence(f"phi_{k} Krylov action: no convergence within {mmax} vectors (tau={tau:g})")


def phi_apply(L: LinearOperatorHandle, dt: float, v: np.ndarray, k: int,
              cfg: KrylovConfig | None = None, return_info: bool = False):
    """Approximate ``phi_k(dt L) v`` for ``k`` in {0, 1, 2}.

    On :class:`NoConvergence` the interval is split into ``2**level`` equal
    substeps (``level <= cfg.max_substep_levels``) using the variation of
    constants recurrences for ``y(t) = t**k phi_k(t L) v``.
    """
    cfg = cfg or KrylovConfig()
    if k not in (0, 1, 2):
        raise ValueError("phi_apply supports k in {0, 1, 2}")
    if dt < 0:
        raise ValueError("dt must be non-negative")
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input vector")
    info = {"krylov_dims": [], "substep_level": 0}
    if dt == 0 or not np.any(v):
        out = v / math.factorial(k)
        return (out, info) if return_info else out

    last_err = None
    for level in range(cfg.max_substep_levels + 1):
        try:
            out = _substepped(L, dt, v, k, cfg, level, info)
        except NoConvergence as exc:
            last_err = exc
            info["krylov_dims"].clear()
            continue
        info["substep_level"] = level
        return (out, info) if return_info else out
    raise NoConvergence(f"{last_err} even after {2 ** cfg.max_substep_levels} substeps")


def _substepped(L, dt, v, k, cfg, level, info):
    if level == 0:
        out, m = _krylov_phi(L, dt, v, k, cfg)
        info["krylov_dims"].append(m)
        return out
    nsub = 2 ** level
    tau = dt / nsub
    y = np.zeros_like(v) if k else v.copy()
    if k == 2:
        phi2_v, m2 = _krylov_phi(L, tau, v, 2, cfg)
        info["krylov_dims"].append(m2)
    for s in range(nsub):
        t = s * tau
        if k == 0:
            y, m = _krylov_phi(L, tau, y, 0, cfg)
            info["krylov_dims"].append(m)
            continue
        rhs = L.matvec(y) + (v if k == 1 else t * v)
        inc, m = _krylov_phi(L, tau, rhs, 1, cfg)
        info["krylov_dims"].append(m)
        y = y + tau * inc
        if k == 2:
            y = y + tau * tau * phi2_v
    return y / dt**k


def expm_apply(L: LinearOperatorHandle, dt: float, v: np.ndarray, cfg: KrylovConfig | None = None,
               return_info: bool = False):
    """``exp(dt L) v``."""
    return phi_apply(L, dt, v, 0, cfg, return_info)


def phi1_apply(L: LinearOperatorHandle, dt: float, v: np.ndarray, cfg: KrylovConfig | None = None,
               return_info: bool = False):
    """``phi_1(dt L) v = (1/dt) int_0^dt exp((dt - s) L) v ds``."""
    return phi_apply(L, dt, v, 1, cfg, return_info)


def phi_dense(A: np.ndarray, k: int) -> np.ndarray:
    """Dense ``phi_k(A)`` for ``k`` in {0, 1, 2} via one block exponential."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("phi_dense needs a square matrix")
    if n > DENSE_LIMIT:
        raise ValueError(f"phi_dense is an oracle for n <= {DENSE_LIMIT}, got n={n}")
    if k not in (0, 1, 2):
        raise ValueError("phi_dense supports k in {0, 1, 2}")
    if k == 0:
        return scipy.linalg.expm(A)
    big = np.zeros(((k + 1) * n, (k + 1) * n))
    big[:n, :n] = A
    for i in range(k):
        big[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = np.eye(n)
    E = scipy.linalg.expm(big)
    return E[:n, k * n:(k + 1) * n]
