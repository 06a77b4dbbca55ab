"""P1 finite element operators: mass, time-dependent stiffness, L2 projection, Dirichlet lifting.

Sparse matrices are plain ``scipy.sparse.csr_matrix`` objects over all mesh
nodes unless stated otherwise; :func:`apply_dirichlet` restricts them to the
free (non-Dirichlet) degrees of freedom.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET, ROBIN, Mesh

# barycentric coordinates of the three edge midpoints (degree-2 exact rule, weights area/3)
_EDGE_MID_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class NonEllipticError(ValueError):
    """Diffusion tensor is not symmetric positive definite at some quadrature point."""


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients of ``A(t)u = div(Q grad u) - b . grad u``.

    ``q_diff(x, y, t)`` returns either a scalar field (isotropic diffusion) or
    an array of shape ``x.shape + (2, 2)``; ``q_adv(x, y, t)`` returns shape
    ``x.shape + (2,)`` or ``None`` for no advection.  ``gaarding_shift`` is the
    constant c0 added to the bilinear form (and subtracted back in the
    nonlinearity by the caller).
    """

    q_diff: Callable
    q_adv: Optional[Callable] = None
    gaarding_shift: float = 0.0
    time_dependent: bool = True

    def __post_init__(self):
        if self.gaarding_shift < 0:
            raise ValueError("gaarding_shift must be non-negative")


@lru_cache(maxsize=16)
def _geometry(mesh: Mesh):
    p = mesh.nodes[mesh.elements]  # (nE, 3, 2)
    area = mesh.signed_areas()
    # gradients of barycentric coordinates, constant per element
    x, y = p[..., 0], p[..., 1]
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([gx, gy], axis=2) / (2.0 * area)[:, None, None]  # (nE, 3, 2)
    qp = np.einsum("qk,ekd->eqd", _EDGE_MID_BARY, p)  # (nE, 3 quad pts, 2)
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    return area, grads, qp, rows, cols


def _to_csr(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    _, _, _, rows, cols = _geometry(mesh)
    n = mesh.n_nodes
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    area = _geometry(mesh)[0]
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _to_csr(mesh, area[:, None, None] * ref)


def lump(M: sp.spmatrix) -> sp.csr_matrix:
    """Row-sum diagonal approximation of a mass matrix."""
    return sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()


def _eval_diffusion(coeff: CoefficientField, qx, qy, t) -> np.ndarray:
    Q = np.asarray(coeff.q_diff(qx, qy, t), dtype=float)
    if Q.ndim == 0 or Q.shape == qx.shape:
        Q = np.broadcast_to(Q, qx.shape)[..., None, None] * np.eye(2)
    Q = np.broadcast_to(Q, qx.shape + (2, 2))
    if not np.allclose(Q, np.swapaxes(Q, -1, -2), rtol=1e-12, atol=0.0):
        raise NonEllipticError(f"diffusion tensor not symmetric at t={t}")
    # 2x2 SPD test: positive trace and determinant
    det = Q[..., 0, 0] * Q[..., 1, 1] - Q[..., 0, 1] * Q[..., 1, 0]
    if np.any(Q[..., 0, 0] <= 0) or np.any(det <= 0):
        raise NonEllipticError(f"diffusion tensor not positive definite at t={t}")
    return Q


def assemble_stiffness(mesh: Mesh, coeff: CoefficientField, t: float) -> sp.csr_matrix:
    """Full-node matrix K(t) with ``K[i, j] = a(t)(phi_j, phi_i) + c0 * M[i, j]``.

    Robin facets of a tagged mesh add ``alpha0 * int phi_j phi_i ds``.
    """
    area, grads, qp, _, _ = _geometry(mesh)
    qx, qy = qp[..., 0], qp[..., 1]
    w = area / 3.0

    Q = _eval_diffusion(coeff, qx, qy, t)  # (nE, 3, 2, 2)
    Qbar = np.einsum("e,eqij->eij", w, Q)
    local = np.einsum("eai,eij,ebj->eab", grads, Qbar, grads)

    if coeff.q_adv is not None:
        b = np.broadcast_to(np.asarray(coeff.q_adv(qx, qy, t), dtype=float), qx.shape + (2,))
        # (b . grad phi_col)(x_q) * phi_row(x_q)
        bg = np.einsum("eqd,ecd->eqc", b, grads)
        local = local + np.einsum("e,qr,eqc->erc", w, _EDGE_MID_BARY, bg)

    K = _to_csr(mesh, local)
    if coeff.gaarding_shift:
        K = K + coeff.gaarding_shift * assemble_mass(mesh)
    if mesh.tags is not None:
        R = assemble_robin(mesh)
        if R.nnz:
            K = K + R
    return K.tocsr()


def assemble_robin(mesh: Mesh) -> sp.csr_matrix:
    """Boundary mass ``alpha0 * int phi_i phi_j ds`` over Robin facets."""
    n = mesh.n_nodes
    rows, cols, vals = [], [], []
    if mesh.tags is not None:
        lengths = mesh.facet_lengths()
        for tag, (a, b), L in zip(mesh.tags, mesh.facets, lengths):
            if tag.kind != ROBIN or tag.robin_alpha == 0.0:
                continue
            c = tag.robin_alpha * L / 6.0
            rows += [a, a, b, b]
            cols += [a, b, a, b]
            vals += [2 * c, c, c, 2 * c]
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def assemble_boundary_load(mesh: Mesh) -> np.ndarray:
    """``int g phi_i ds`` over Neumann and Robin facets (two-point Gauss per facet)."""
    b = np.zeros(mesh.n_nodes)
    if mesh.tags is None:
        return b
    gp = 0.5 * (1 + np.array([-1.0, 1.0]) / np.sqrt(3.0))
    for tag, (a, c), L in zip(mesh.tags, mesh.facets, mesh.facet_lengths()):
        if tag.kind == DIRICHLET:
            continue
        pa, pc = mesh.nodes[a], mesh.nodes[c]
        pts = pa[None, :] + gp[:, None] * (pc - pa)[None, :]
        g = tag.evaluate(pts[:, 0], pts[:, 1])
        b[a] += 0.5 * L * np.sum(g * (1 - gp))
        b[c] += 0.5 * L * np.sum(g * gp)
    return b


# ---------------------------------------------------------------------------
# quadrature for loads and error norms


@lru_cache(maxsize=8)
def triangle_rule(n: int = 6):
    """Collapsed Gauss-Legendre rule on the reference triangle, exact to degree 2n-1.

    Returns barycentric points (npts, 3) and weights summing to 1.
    """
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    s, r = np.meshgrid(g, g, indexing="ij")
    ws, wr = np.meshgrid(w, w, indexing="ij")
    xi = s.ravel()
    eta = (r * (1 - s)).ravel()
    weights = (ws * wr * (1 - s)).ravel() * 2.0
    bary = np.column_stack([1 - xi - eta, xi, eta])
    return bary, weights


def _quad_points(mesh: Mesh, n: int):
    bary, weights = triangle_rule(n)
    p = mesh.nodes[mesh.elements]
    pts = np.einsum("qk,ekd->eqd", bary, p)
    area = _geometry(mesh)[0]
    return bary, pts, area[:, None] * weights[None, :]


def load_vector(mesh: Mesh, g: Callable, order: int = 6) -> np.ndarray:
    """``b_i = int g phi_i dx`` for a vectorised ``g(x, y)``."""
    bary, pts, w = _quad_points(mesh, order)
    gv = np.broadcast_to(np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float), w.shape)
    local = np.einsum("eq,qk->ek", w * gv, bary)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def project_l2(mesh: Mesh, M: sp.spmatrix, g: Callable) -> np.ndarray:
    """Coefficients of the L2 projection of ``g`` onto continuous P1 functions."""
    from scipy.sparse.linalg import spsolve

    c = spsolve(sp.csc_matrix(M), load_vector(mesh, g))
    if not np.all(np.isfinite(c)):
        raise RuntimeError("singular mass matrix in L2 projection")
    return c


def l2_norm(M: sp.spmatrix, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    if M.shape[0] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {M.shape}, vector {v.shape}")
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def l2_error(mesh: Mesh, u: np.ndarray, g: Callable, order: int = 6) -> float:
    """``||u_h - g||_{L2}`` for nodal coefficients ``u`` over all mesh nodes."""
    bary, pts, w = _quad_points(mesh, order)
    uh = np.einsum("qk,ek->eq", bary, np.asarray(u)[mesh.elements])
    gv = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
    return float(np.sqrt(np.sum(w * (uh - gv) ** 2)))


# ---------------------------------------------------------------------------
# Dirichlet lifting


@dataclass(frozen=True, eq=False)
class DirichletLift:
    """Split of the mesh nodes into free and Dirichlet ones plus the boundary values."""

    n: int
    free: np.ndarray
    fixed: np.ndarray
    values: np.ndarray

    @property
    def n_free(self) -> int:
        return self.free.size

    def prolong(self, u_free: np.ndarray, with_lift: bool = True) -> np.ndarray:
        u = np.zeros(self.n)
        u[self.free] = u_free
        if with_lift:
            u[self.fixed] = self.values
        return u

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[self.free]

    def lift_vector(self) -> np.ndarray:
        u = np.zeros(self.n)
        u[self.fixed] = self.values
        return u

    def block(self, A: sp.spmatrix, rows: str = "free", cols: str = "free") -> sp.csr_matrix:
        r = self.free if rows == "free" else self.fixed
        c = self.free if cols == "free" else self.fixed
        return sp.csr_matrix(A)[r][:, c].tocsr()


def make_lift(mesh: Mesh) -> DirichletLift:
    if mesh.tags is None:
        fixed = np.zeros(0, dtype=np.int64)
        values = np.zeros(0)
    else:
        fixed = mesh.dirichlet_nodes()
        values = mesh.dirichlet_values()
    free = np.setdiff1d(np.arange(mesh.n_nodes), fixed)
    if free.size == 0:
        raise ValueError("every degree of freedom is Dirichlet; the free system is empty")
    return DirichletLift(mesh.n_nodes, free, fixed, values)


def apply_dirichlet(mesh: Mesh, K: sp.spmatrix, M: sp.spmatrix):
    """Restrict full-node ``K`` and ``M`` to free nodes.

    Returns ``(K_ff, M_ff, forcing, lift)`` where ``forcing = -K_fd @ u_D`` is
    the right-hand side contribution of the boundary data.
    """
    lift = make_lift(mesh)
    K_ff = lift.block(K)
    M_ff = lift.block(M)
    forcing = -(lift.block(K, "free", "fixed") @ lift.values) if lift.fixed.size else np.zeros(lift.n_free)
    return K_ff, M_ff, forcing, lift


def dump_coo(path, A: sp.spmatrix) -> None:
    """Write ``i j value`` lines for debugging."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for k in order:
            fh.write(f"{C.row[k]} {C.col[k]} {C.data[k]:.17g}\n")
