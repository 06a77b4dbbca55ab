"""Semi-discrete systems ``u' = A(t) u + g(t) + F(t, u)`` on free degrees of freedom.

Two concrete systems share one interface used by the integrators:

* :class:`FEMSystem` -- P1 discretisation of a :class:`~magros.problems.ProblemSpec`,
  with ``A_h(t) = -M^{-1} K(t)`` applied through a factorised mass matrix and
  the Dirichlet lift entering as the forcing ``g(t) = -M^{-1} K_fd(t) u_D``.
* :class:`MatrixSystem` -- an explicit small matrix family ``A(t)``; used for
  scalar and diagonal test problems.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import assembly
from .expmath import LinearOperatorHandle
from .nonlinear import Nonlinearity, eval_F


@dataclass
class FrozenOperator:
    """Linear part frozen at time ``t``: ``v -> A(t) v`` plus the affine forcing ``g(t)``."""

    t: float
    A: LinearOperatorHandle
    g: np.ndarray

    def with_jacobian(self, J: np.ndarray) -> LinearOperatorHandle:
        A = self.A
        return LinearOperatorHandle(A.dim, lambda v: A.matvec(v) + J * v)


class FEMSystem:
    def __init__(self, problem):
        self.problem = problem
        mesh = problem.build_mesh()
        self.mesh = mesh
        self.coeff = problem.coefficients()
        self.nl: Nonlinearity = problem.nonlinearity.shifted(self.coeff.gaarding_shift)

        M = assembly.assemble_mass(mesh)
        if problem.mass_lumping:
            M = assembly.lump(M)
        self.M_full = M
        self.lift = assembly.make_lift(mesh)
        lift = self.lift
        self.dim = lift.n_free
        self.x = mesh.nodes[lift.free]
        self.x_fixed = mesh.nodes[lift.fixed]
        self.M = lift.block(M)
        self.M_fd = lift.block(M, "free", "fixed") if lift.fixed.size else None
        if problem.mass_lumping:
            d = self.M.diagonal()
            self._solve = lambda b: b / d
        else:
            lu = splu(sp.csc_matrix(self.M))
            self._solve = lu.solve
        self.boundary_load = lift.restrict(assembly.assemble_boundary_load(mesh))
        self.time_dependent = self.coeff.time_dependent
        self.n_assemblies = 0
        self._cached = None

    # -- linear part -----------------------------------------------------
    def stiffness(self, t: float) -> sp.csr_matrix:
        if not self.time_dependent and self._cached is not None:
            return self._cached
        K = assembly.assemble_stiffness(self.mesh, self.coeff, t)
        self.n_assemblies += 1
        if not self.time_dependent:
            self._cached = K
        return K

    def freeze(self, t: float) -> FrozenOperator:
        K = self.stiffness(t)
        K_ff = self.lift.block(K)
        rhs = self.boundary_load.copy()
        if self.lift.fixed.size:
            rhs -= self.lift.block(K, "free", "fixed") @ self.lift.values
        solve = self._solve
        A = LinearOperatorHandle(self.dim, lambda v: solve(-(K_ff @ v)))
        g = solve(rhs) if np.any(rhs) else np.zeros(self.dim)
        return FrozenOperator(t, A, g)

    # -- nonlinear part --------------------------------------------------
    def _boundary_coupling(self, values: np.ndarray) -> np.ndarray:
        # contribution of the collocated nonlinearity at Dirichlet nodes to free test functions
        if self.M_fd is None or self.M_fd.nnz == 0:
            return 0.0
        return self._solve(self.M_fd @ values)

    def F(self, t: float, u: np.ndarray) -> np.ndarray:
        out = eval_F(self.nl, t, u, self.x)
        if self.lift.fixed.size:
            out = out + self._boundary_coupling(eval_F(self.nl, t, self.lift.values, self.x_fixed))
        return out

    def jacobian(self, t: float, u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.nl.dz(t, self.x, u), u.shape).astype(float)

    def dF_dt(self, t: float, u: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.nl.dt(t, self.x, u), u.shape).astype(float)
        if self.lift.fixed.size:
            out = out + self._boundary_coupling(self.nl.dt(t, self.x_fixed, self.lift.values))
        return out

    # -- state helpers ---------------------------------------------------
    def initial_state(self) -> np.ndarray:
        u0 = assembly.project_l2(self.mesh, self.M_full, self.problem.u0)
        return self.lift.restrict(u0)

    def full(self, u: np.ndarray) -> np.ndarray:
        return self.lift.prolong(u)

    def norm(self, u: np.ndarray) -> float:
        """L2 norm of the full finite element field, lift included."""
        return assembly.l2_norm(self.M_full, self.full(u))

    def diff_norm(self, u: np.ndarray, v: np.ndarray) -> float:
        return assembly.l2_norm(self.M, np.asarray(u) - np.asarray(v))

    def dense_rhs(self):
        """Right-hand side and Jacobian built from dense matrices (oracle path)."""
        if self.dim > 5000:
            raise ValueError(f"dense oracle limited to 5000 free DOFs, system has {self.dim}")
        Mc = scipy.linalg.cho_factor(self.M.toarray())
        Mfd = self.M_fd.toarray() if self.M_fd is not None else None
        lift = self.lift
        nl = self.nl
        x, xD = self.x, self.x_fixed
        load = self.boundary_load

        def parts(t):
            K = assembly.assemble_stiffness(self.mesh, self.coeff, t).toarray()
            Kff = K[np.ix_(lift.free, lift.free)]
            c = load.copy()
            if lift.fixed.size:
                c -= K[np.ix_(lift.free, lift.fixed)] @ lift.values
            return Kff, c

        def rhs(t, u):
            Kff, c = parts(t)
            b = -(Kff @ u) + c
            if Mfd is not None:
                b = b + Mfd @ np.asarray(nl.f(t, xD, lift.values))
            return scipy.linalg.cho_solve(Mc, b) + nl.f(t, x, u)

        def jac(t, u):
            Kff, _ = parts(t)
            return -scipy.linalg.cho_solve(Mc, Kff) + np.diag(nl.dz(t, x, u))

        return rhs, jac


class MatrixSystem:
    """``u' = A(t) u + g(t) + f(t, x, u)`` with an explicit dense matrix family.

    ``A`` is a callable ``t -> (n, n) array`` (or a constant array).  The norm
    is Euclidean.
    """

    def __init__(self, A, nl: Nonlinearity, u0, forcing: Optional[Callable] = None,
                 x: Optional[np.ndarray] = None, time_dependent: Optional[bool] = None):
        self._A = A if callable(A) else (lambda t, _A=np.atleast_2d(np.asarray(A, float)): _A)
        self.time_dependent = callable(A) if time_dependent is None else time_dependent
        self.nl = nl
        self.u0 = np.atleast_1d(np.asarray(u0, dtype=float))
        self.dim = self.u0.size
        self.x = np.zeros((self.dim, 2)) if x is None else np.asarray(x, float)
        self._forcing = forcing
        self.n_assemblies = 0

    def matrix(self, t: float) -> np.ndarray:
        return np.atleast_2d(np.asarray(self._A(t), dtype=float))

    def freeze(self, t: float) -> FrozenOperator:
        A = self.matrix(t)
        self.n_assemblies += 1
        g = np.zeros(self.dim) if self._forcing is None else np.asarray(self._forcing(t), float)
        return FrozenOperator(t, LinearOperatorHandle.from_matrix(A), g)

    def F(self, t, u):
        return eval_F(self.nl, t, u, self.x)

    def jacobian(self, t, u):
        return np.broadcast_to(self.nl.dz(t, self.x, u), u.shape).astype(float)

    def dF_dt(self, t, u):
        return np.broadcast_to(self.nl.dt(t, self.x, u), u.shape).astype(float)

    def initial_state(self):
        return self.u0.copy()

    def full(self, u):
        return np.asarray(u)

    def norm(self, u):
        return float(np.linalg.norm(u))

    def diff_norm(self, u, v):
        return float(np.linalg.norm(np.asarray(u) - np.asarray(v)))

    def dense_rhs(self):
        g = self._forcing or (lambda t: 0.0)

        def rhs(t, u):
            return self.matrix(t) @ u + g(t) + self.nl.f(t, self.x, u)

        def jac(t, u):
            return self.matrix(t) + np.diag(np.atleast_1d(self.nl.dz(t, self.x, u)))

        return rhs, jac
