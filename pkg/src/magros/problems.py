"""Problem bundles: mesh parameters, boundary rule, coefficients, nonlinearity, initial data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nonlinear
from .assembly import CoefficientField
from .mesh import Dirichlet, Mesh, Neumann, build_rect_mesh, tag_boundary
from .nonlinear import Nonlinearity
from .semidiscrete import FEMSystem, MatrixSystem


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    L1: float
    L2: float
    nx: int
    ny: int
    boundary_rule: Callable
    q_diff: Callable
    q_adv: Optional[Callable]
    nonlinearity: Nonlinearity
    u0: Callable
    T: float = 1.0
    time_dependent: bool = True
    gaarding_shift: float = 0.0
    mass_lumping: bool = False
    exact: Optional[Callable] = None  # exact(x, y, t) when known
    meta: dict = field(default_factory=dict)

    def build_mesh(self) -> Mesh:
        return tag_boundary(build_rect_mesh(self.L1, self.L2, self.nx, self.ny), self.boundary_rule)

    def coefficients(self) -> CoefficientField:
        return CoefficientField(self.q_diff, self.q_adv, self.gaarding_shift, self.time_dependent)

    def with_mesh(self, nx: int, ny: Optional[int] = None) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, nx=nx, ny=nx if ny is None else ny)

    def system(self) -> FEMSystem:
        return FEMSystem(self)


# ---------------------------------------------------------------------------
# velocity fields


def cellular_velocity(L1: float = 1.0, L2: float = 1.0) -> Callable:
    """Divergence-free field ``(d psi/dy, -d psi/dx)``, ``psi = sin(pi x/L1) sin(pi y/L2)``, max speed 1."""
    a, b = np.pi / L1, np.pi / L2
    # |v|^2 = b^2 s_x^2 c_y^2 + a^2 c_x^2 s_y^2, maximal at a corner or edge midpoint
    vmax = max(a, b)

    def v(x, y):
        vx = b * np.sin(a * x) * np.cos(b * y)
        vy = -a * np.cos(a * x) * np.sin(b * y)
        return np.stack([vx, vy], axis=-1) / vmax

    return v


def uniform_velocity(vx: float = 1.0, vy: float = 0.0) -> Callable:
    def v(x, y):
        return np.stack(np.broadcast_arrays(np.full_like(x, vx, dtype=float), np.full_like(y, vy, dtype=float)),
                        axis=-1)

    return v


def velocity_from_file(path) -> Callable:
    """Nodal field from a whitespace text file with rows ``x y vx vy``; linear interpolation."""
    from scipy.interpolate import LinearNDInterpolator

    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns (x y vx vy), got {data.shape[1]}")
    interp = LinearNDInterpolator(data[:, :2], data[:, 2:], fill_value=0.0)

    def v(x, y):
        return interp(np.asarray(x), np.asarray(y))

    return v


def zero_velocity(x, y):
    return np.zeros(np.shape(x) + (2,))


# ---------------------------------------------------------------------------
# initial data


def initial_data(kind: str, L1: float = 1.0, L2: float = 1.0) -> Callable:
    """``zero`` (default), ``smooth`` (compatible with the boundary conditions) or ``rough`` (indicator)."""
    if kind == "zero":
        return lambda x, y: np.zeros_like(x)
    if kind == "smooth":
        return lambda x, y: 1.0 + np.sin(0.5 * np.pi * x / L1) * np.cos(np.pi * y / L2)
    if kind == "rough":
        def box(x, y):
            inside = (np.abs(x / L1 - 0.5) < 0.25) & (np.abs(y / L2 - 0.5) < 0.25)
            return inside.astype(float)

        return box
    raise ValueError(f"unknown initial data {kind!r}")


def inlet_boundary_rule(L1: float = 1.0, value: float = 1.0) -> Callable:
    def rule(x, y):
        return Dirichlet(value) if abs(x) <= 1e-12 * L1 else Neumann(0.0)

    return rule


def adr_problem(nx: int = 32, ny: Optional[int] = None, L1: float = 1.0, L2: float = 1.0,
                 diffusion: str = "time_dependent", velocity: str = "cellular",
                 velocity_file=None, initial: str = "zero", nonlinearity: str = "saturating",
                 T: float = 1.0, gaarding_shift: float = 0.0, mass_lumping: bool = False) -> ProblemSpec:
    """Advection-diffusion-reaction ``u_t = D(t)(lap u - div(v u)) + exp(-t) u/(1+|u|)``.

    ``u = 1`` on ``x = 0``, homogeneous Neumann elsewhere.  ``diffusion`` is
    ``time_dependent`` (``D = 1 + exp(-t)``) or ``constant`` (``D = 1``).
    """
    ny = nx if ny is None else ny
    if diffusion == "time_dependent":
        D = lambda t: 1.0 + np.exp(-t)  # noqa: E731
    elif diffusion == "constant":
        D = lambda t: 1.0  # noqa: E731
    else:
        raise ValueError(f"unknown diffusion {diffusion!r}")

    if velocity == "cellular":
        vel = cellular_velocity(L1, L2)
    elif velocity == "uniform":
        vel = uniform_velocity()
    elif velocity == "none":
        vel = None
    elif velocity == "file":
        if velocity_file is None:
            raise ValueError("velocity 'file' needs velocity_file")
        vel = velocity_from_file(velocity_file)
    else:
        raise ValueError(f"unknown velocity {velocity!r}")

    def q_diff(x, y, t):
        return np.full_like(x, D(t), dtype=float)

    q_adv = None
    if vel is not None:
        # div v = 0, so D (lap u - div(v u)) = div(D grad u) - D v . grad u
        def q_adv(x, y, t):
            return D(t) * vel(x, y)

    return ProblemSpec(
        name=f"adr[{diffusion}]",
        L1=L1, L2=L2, nx=nx, ny=ny,
        boundary_rule=inlet_boundary_rule(L1),
        q_diff=q_diff, q_adv=q_adv,
        nonlinearity=nonlinear.by_name(nonlinearity),
        u0=initial_data(initial, L1, L2),
        T=T,
        time_dependent=(diffusion == "time_dependent"),
        gaarding_shift=gaarding_shift,
        mass_lumping=mass_lumping,
        meta={"diffusion": diffusion, "velocity": velocity, "initial": initial},
    )


def heat_problem(n: int = 16, T: float = 0.125) -> ProblemSpec:
    """``u_t = lap u`` on the unit square, zero Dirichlet data, exact ``exp(-2 pi^2 t) sin(pi x) sin(pi y)``."""

    def exact(x, y, t):
        return np.exp(-2 * np.pi**2 * t) * np.sin(np.pi * x) * np.sin(np.pi * y)

    return ProblemSpec(
        name="heat",
        L1=1.0, L2=1.0, nx=n, ny=n,
        boundary_rule=lambda x, y: Dirichlet(0.0),
        q_diff=lambda x, y, t: np.ones_like(x),
        q_adv=None,
        nonlinearity=nonlinear.zero(),
        u0=lambda x, y: exact(x, y, 0.0),
        T=T,
        time_dependent=False,
        exact=exact,
    )


def scalar_linear_system() -> MatrixSystem:
    """``u' = -(1 + exp(-t)) u``, ``u(0) = 1``."""
    return MatrixSystem(lambda t: np.array([[-(1.0 + np.exp(-t))]]), nonlinear.zero(), [1.0])


def scalar_linear_exact(t: float) -> float:
    # int_0^t (1 + e^{-s}) ds = t + 1 - e^{-t}
    return float(np.exp(-(t + 1.0 - np.exp(-t))))
