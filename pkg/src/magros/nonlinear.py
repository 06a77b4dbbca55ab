"""Pointwise (Nemytskii) nonlinearities and their per-step linearisation.

A nonlinearity acts node by node: ``F(t, u)_i = f(t, x_i, u_i)``.  This is the
collocation realisation of the projected nonlinearity on P1 elements, so the
Jacobian is the diagonal ``df/dz(t, x_i, u_i)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class DivergedStateError(FloatingPointError):
    """A state or nonlinearity evaluation produced non-finite values."""


@dataclass(frozen=True)
class Nonlinearity:
    """``f(t, x, z)`` with optional analytic partial derivatives.

    All callables are vectorised: ``x`` has shape ``(n, 2)`` and ``z`` shape ``(n,)``.
    Missing derivatives fall back to central differences.
    """

    f: Callable
    df_dz: Optional[Callable] = None
    df_dt: Optional[Callable] = None
    name: str = "custom"
    autonomous: bool = False

    def dz(self, t, x, z):
        if self.df_dz is not None:
            return np.asarray(self.df_dz(t, x, z), dtype=float)
        step = 1e-6 * np.maximum(1.0, np.abs(z))
        return (self.f(t, x, z + step) - self.f(t, x, z - step)) / (2 * step)

    def dt(self, t, x, z):
        if self.autonomous:
            return np.zeros_like(np.asarray(z, dtype=float))
        if self.df_dt is not None:
            return np.asarray(self.df_dt(t, x, z), dtype=float)
        step = 1e-6 * max(1.0, abs(t))
        return (self.f(t + step, x, z) - self.f(t - step, x, z)) / (2 * step)

    def shifted(self, c0: float) -> "Nonlinearity":
        """Nonlinearity plus ``c0 * z``; compensates a shift ``c0`` folded into the operator."""
        if c0 == 0:
            return self
        dz = self.dz
        return Nonlinearity(
            f=lambda t, x, z: self.f(t, x, z) + c0 * z,
            df_dz=lambda t, x, z: dz(t, x, z) + c0,
            df_dt=self.dt,
            name=f"{self.name}+{c0}u",
            autonomous=self.autonomous,
        )

    def frozen_at(self, t0: float) -> "Nonlinearity":
        """Autonomous copy with time fixed at ``t0``."""
        return Nonlinearity(
            f=lambda t, x, z: self.f(t0, x, z),
            df_dz=lambda t, x, z: self.dz(t0, x, z),
            df_dt=None,
            name=f"{self.name}@t={t0}",
            autonomous=True,
        )


@dataclass(frozen=True)
class LinearizationParts:
    """Nodal Jacobian diagonal ``J`` and time derivative ``a`` at ``(t_mid, u_m)``."""

    J: np.ndarray
    a: np.ndarray
    t_mid: float


def _check_finite(v: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise DivergedStateError(f"non-finite values in {what}")
    return v


def eval_F(nl: Nonlinearity, t: float, u: np.ndarray, x: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.broadcast_to(np.asarray(nl.f(t, x, u), dtype=float), u.shape).copy()
    return _check_finite(out, f"F(t={t})")


def eval_linearization(nl: Nonlinearity, t_mid: float, u_m: np.ndarray, x: np.ndarray) -> LinearizationParts:
    u_m = np.asarray(u_m, dtype=float)
    J = np.broadcast_to(nl.dz(t_mid, x, u_m), u_m.shape).astype(float)
    a = np.broadcast_to(nl.dt(t_mid, x, u_m), u_m.shape).astype(float)
    return LinearizationParts(_check_finite(J, "dF/du"), _check_finite(a, "dF/dt"), float(t_mid))


def eval_remainder_G(nl: Nonlinearity, parts: LinearizationParts, t: float, u: np.ndarray,
                     x: np.ndarray) -> np.ndarray:
    """``F(t, u) - J u - a t``."""
    u = np.asarray(u, dtype=float)
    if u.shape != parts.J.shape:
        raise ValueError(f"dimension mismatch: u {u.shape}, J {parts.J.shape}")
    return eval_F(nl, t, u, x) - parts.J * u - parts.a * t


# ---------------------------------------------------------------------------
# named nonlinearities


def saturating() -> Nonlinearity:
    """``f(t, x, z) = exp(-t) z / (1 + |z|)``."""
    return Nonlinearity(
        f=lambda t, x, z: np.exp(-t) * z / (1.0 + np.abs(z)),
        df_dz=lambda t, x, z: np.exp(-t) / (1.0 + np.abs(z)) ** 2,
        df_dt=lambda t, x, z: -np.exp(-t) * z / (1.0 + np.abs(z)),
        name="saturating",
    )


def zero() -> Nonlinearity:
    return Nonlinearity(
        f=lambda t, x, z: np.zeros_like(z),
        df_dz=lambda t, x, z: np.zeros_like(z),
        name="zero",
        autonomous=True,
    )


def linear(c: float) -> Nonlinearity:
    c = float(c)
    return Nonlinearity(
        f=lambda t, x, z: c * z,
        df_dz=lambda t, x, z: np.full_like(z, c),
        name=f"linear({c:g})",
        autonomous=True,
    )


_LINEAR_RE = re.compile(r"^linear\(\s*([-+0-9.eE]+)\s*\)$")


def by_name(name: str) -> Nonlinearity:
    """Resolve ``"saturating"``, ``"zero"`` or ``"linear(c)"``."""
    if name == "saturating":
        return saturating()
    if name == "zero":
        return zero()
    m = _LINEAR_RE.match(name.strip())
    if m:
        return linear(float(m.group(1)))
    raise ValueError(f"unknown nonlinearity {name!r}; expected saturating, zero or linear(c)")
