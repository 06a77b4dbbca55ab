"""Time stepping: Magnus-Rosenbrock (MAGROS), exponential Rosenbrock baseline, reference solvers.

One MAGROS step freezes the linear operator at the midpoint and moves the
nonlinearity's Jacobian into the linear part::

    t_mid   = t_m + dt/2
    L_m     = A(t_mid) + J_m,        J_m = dF/du(t_mid, u_m)
    u_{m+1} = u_m + dt phi_1(dt L_m) [A(t_mid) u_m + g(t_mid) + F(t_mid, u_m)]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .expmath import KrylovConfig, expm_apply, phi_apply, phi1_apply
from .nonlinear import DivergedStateError


class InstabilityError(RuntimeError):
    """Iterate left the ball ``||u_m|| <= R``."""


class OracleFailure(RuntimeError):
    """Adaptive reference integrator gave up (typically: too stiff for the chosen method)."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if self.M < 1 or int(self.M) != self.M:
            raise ValueError(f"need integer M >= 1, got {self.M}")
        if not self.T > 0:
            raise ValueError(f"need T > 0, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    def t(self, m: int) -> float:
        return m * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt


@dataclass
class SolverState:
    m: int
    t: float
    u: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RunResult:
    u: np.ndarray
    u_full: np.ndarray
    snapshots: dict
    diagnostics: dict


def _finish_step(system, state: SolverState, u_new: np.ndarray, dt: float, info: dict,
                 stability_R: float) -> SolverState:
    if not np.all(np.isfinite(u_new)):
        raise DivergedStateError(f"non-finite state after step {state.m + 1}")
    norm = system.norm(u_new)
    if norm > stability_R:
        raise InstabilityError(f"||u_{state.m + 1}|| = {norm:.6g} exceeds R = {stability_R:.6g}")
    diag = {"krylov_dims": info.get("krylov_dims", []), "norm": norm,
            "sup": float(np.max(np.abs(u_new))) if u_new.size else 0.0}
    return SolverState(state.m + 1, (state.m + 1) * dt, u_new, diag)


def _linearization(system, t_mid: float, u: np.ndarray, frozen, with_forcing_rate: bool):
    """``J`` and ``a = d/dt [F + g]`` at ``(t_mid, u)``; forcing rate by central differences."""
    J = system.jacobian(t_mid, u)
    a = system.dF_dt(t_mid, u)
    if with_forcing_rate and getattr(system, "time_dependent", False):
        eps = 1e-6 * max(1.0, abs(t_mid))
        a = a + (system.freeze(t_mid + eps).g - system.freeze(t_mid - eps).g) / (2 * eps)
    return J, a


def magros_step(system, state: SolverState, dt: float, krylov: Optional[KrylovConfig] = None,
                node: float = 0.5, form: str = "erem1", stability_R: float = math.inf) -> SolverState:
    """Advance one step.

    ``node`` places the frozen time at ``t_m + node * dt`` (0.5 is the scheme;
    other values exist for debugging).  ``form="erem"`` evaluates the
    equivalent exponential/remainder form with two extra Krylov actions.
    """
    krylov = krylov or KrylovConfig()
    u = state.u
    t_mid = state.t + node * dt
    frozen = system.freeze(t_mid)
    J = system.jacobian(t_mid, u)
    L = frozen.with_jacobian(J)
    Fm = system.F(t_mid, u) + frozen.g

    if form == "erem1":
        bracket = frozen.A.matvec(u) + Fm
        inc, info = phi1_apply(L, dt, bracket, krylov, return_info=True)
        u_new = u + dt * inc
    elif form == "erem":
        _, a = _linearization(system, t_mid, u, frozen, with_forcing_rate=True)
        G = Fm - J * u - a * t_mid
        e, info = expm_apply(L, dt, u, krylov, return_info=True)
        pa, info_a = phi1_apply(L, dt, a * t_mid, krylov, return_info=True)
        pg, info_g = phi1_apply(L, dt, G, krylov, return_info=True)
        u_new = e + dt * pa + dt * pg
        info = {"krylov_dims": info["krylov_dims"] + info_a["krylov_dims"] + info_g["krylov_dims"]}
    else:
        raise ValueError(f"unknown form {form!r}")
    return _finish_step(system, state, u_new, dt, info, stability_R)


def _snapshot_index(grid: TimeGrid, times: Sequence[float]) -> dict:
    idx = {}
    for s in times:
        m = int(round(s / grid.dt))
        if m < 0 or m > grid.M or abs(m * grid.dt - s) > 1e-9 * max(1.0, grid.T):
            raise ValueError(f"snapshot time {s} is not on the time grid (dt={grid.dt})")
        idx[m] = float(s)
    return idx


def _run(system, grid: TimeGrid, step, u0, snapshot_times, stability_R) -> RunResult:
    snaps_at = _snapshot_index(grid, snapshot_times)
    state = SolverState(0, 0.0, np.asarray(u0, dtype=float).copy())
    norms = [system.norm(state.u)]
    if norms[0] > stability_R:
        raise InstabilityError(f"initial state norm {norms[0]:.6g} exceeds R = {stability_R:.6g}")
    dims = []
    snapshots = {}
    if 0 in snaps_at:
        snapshots[snaps_at[0]] = system.full(state.u).copy()
    for _ in range(grid.M):
        state = step(state)
        norms.append(state.diagnostics["norm"])
        dims.append(max(state.diagnostics["krylov_dims"], default=0))
        if state.m in snaps_at:
            snapshots[snaps_at[state.m]] = system.full(state.u).copy()
    diagnostics = {"norms": np.array(norms), "max_norm": float(np.max(norms)),
                   "final_norm": norms[-1], "krylov_dims": dims, "steps": grid.M}
    return RunResult(state.u, system.full(state.u), snapshots, diagnostics)


def magros_run(system, grid: TimeGrid, krylov: Optional[KrylovConfig] = None, u0=None,
               snapshot_times: Sequence[float] = (), stability_R: float = math.inf,
               form: str = "erem1", node: float = 0.5) -> RunResult:
    u0 = system.initial_state() if u0 is None else u0
    dt = grid.dt

    def step(state):
        return magros_step(system, state, dt, krylov, node=node, form=form, stability_R=stability_R)

    return _run(system, grid, step, u0, snapshot_times, stability_R)


def exprb2_step(system, frozen, state: SolverState, dt: float, krylov: Optional[KrylovConfig] = None,
                stability_R: float = math.inf) -> SolverState:
    """Second-order exponential Rosenbrock step with a constant linear part ``frozen``.

    ``u + dt phi_1(dt L)[A u + g + F(t_m, u)] + dt^2 phi_2(dt L) dF/dt(t_m, u)``,
    ``L = A + dF/du(t_m, u)``.
    """
    krylov = krylov or KrylovConfig()
    u, t = state.u, state.t
    J = system.jacobian(t, u)
    L = frozen.with_jacobian(J)
    bracket = frozen.A.matvec(u) + frozen.g + system.F(t, u)
    inc, info = phi1_apply(L, dt, bracket, krylov, return_info=True)
    u_new = u + dt * inc
    a = system.dF_dt(t, u)
    if np.any(a):
        inc2, info2 = phi_apply(L, dt, a, 2, krylov, return_info=True)
        u_new = u_new + dt * dt * inc2
        info = {"krylov_dims": info["krylov_dims"] + info2["krylov_dims"]}
    return _finish_step(system, state, u_new, dt, info, stability_R)


def exprb2_run(system, grid: TimeGrid, krylov: Optional[KrylovConfig] = None, u0=None,
               snapshot_times: Sequence[float] = (), stability_R: float = math.inf) -> RunResult:
    if getattr(system, "time_dependent", False):
        raise ValueError("exprb2 baseline needs a time-independent linear operator")
    u0 = system.initial_state() if u0 is None else u0
    frozen = system.freeze(0.0)
    dt = grid.dt

    def step(state):
        return exprb2_step(system, frozen, state, dt, krylov, stability_R)

    return _run(system, grid, step, u0, snapshot_times, stability_R)


SCHEMES = {"magros": magros_run, "exprb2": exprb2_run}


def run_scheme(scheme: str, system, grid: TimeGrid, **kwargs) -> RunResult:
    try:
        runner = SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}") from None
    return runner(system, grid, **kwargs)


def reference_solve(system, T: float, mode: str = "fine_step", scheme: str = "magros", M_ref: int = 4096,
                    tol: float = 1e-12, method: str = "DOP853", u0=None,
                    krylov: Optional[KrylovConfig] = None) -> np.ndarray:
    """Reference free-DOF state at ``T``.

    ``mode="fine_step"`` runs ``scheme`` with ``dt = T / M_ref``; ``mode="oracle"``
    integrates the semi-discrete system adaptively with ``scipy.integrate.solve_ivp``
    using dense linear algebra (at most 5000 free DOFs).
    """
    u0 = system.initial_state() if u0 is None else np.asarray(u0, float)
    if mode == "fine_step":
        return run_scheme(scheme, system, TimeGrid(T, M_ref), krylov=krylov, u0=u0).u
    if mode != "oracle":
        raise ValueError(f"unknown reference mode {mode!r}")
    from scipy.integrate import solve_ivp

    rhs, jac = system.dense_rhs()
    kwargs = {"jac": jac} if method in ("Radau", "BDF", "LSODA") else {}
    sol = solve_ivp(rhs, (0.0, T), u0, method=method, rtol=tol, atol=tol * max(1.0, np.max(np.abs(u0))),
                    **kwargs)
    if not sol.success:
        raise OracleFailure(f"{method} oracle failed: {sol.message}")
    return sol.y[:, -1]
