"""Convergence studies: temporal and spatial error sweeps, observed orders, the three-scheme comparison."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import assembly
from .expmath import KrylovConfig, NoConvergence
from .integrator import InstabilityError, TimeGrid, reference_solve, run_scheme
from .nonlinear import DivergedStateError
from .problems import ProblemSpec, adr_problem

log = logging.getLogger(__name__)

# errors below this are treated as round-off
ERROR_FLOOR = 1e-13


class OrderEstimate(NamedTuple):
    slope: float
    pairwise: list


def estimate_order(errors: Sequence[float], steps: Sequence[float]) -> OrderEstimate:
    """Least-squares slope of log(error) against log(step) plus consecutive pairwise orders."""
    e = np.asarray(errors, dtype=float)
    s = np.asarray(steps, dtype=float)
    if e.size < 2 or e.size != s.size:
        raise ValueError("need at least two (error, step) pairs of equal length")
    if np.any(~(e > 0)) or np.any(~(s > 0)):
        raise ValueError("errors and steps must be positive")
    slope = np.polyfit(np.log(s), np.log(e), 1)[0]
    pairwise = list(np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:]))
    return OrderEstimate(float(slope), [float(p) for p in pairwise])


@dataclass
class ConvergenceReport:
    label: str
    kind: str  # "temporal" or "spatial"
    resolutions: list
    steps: list
    errors: list
    slope: float = math.nan
    pairwise: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    below_floor: bool = False
    metadata: dict = field(default_factory=dict)

    def fit(self) -> None:
        ok = [(e, s) for e, s in zip(self.errors, self.steps) if np.isfinite(e)]
        if ok and max(e for e, _ in ok) < ERROR_FLOOR:
            self.below_floor = True
            self.slope, self.pairwise = math.nan, []
            return
        if len(ok) >= 2:
            est = estimate_order([e for e, _ in ok], [s for _, s in ok])
            self.slope, self.pairwise = est.slope, est.pairwise

    def rows(self):
        """``(resolution, error, pairwise_order)`` with the order against the previous row."""
        out = []
        prev = None
        for r, s, e in zip(self.resolutions, self.steps, self.errors):
            order = math.nan
            if prev is not None and np.isfinite(e) and np.isfinite(prev[1]) and e > 0 and prev[1] > 0:
                order = math.log(prev[1] / e) / math.log(prev[0] / s)
            out.append((r, e, order))
            prev = (s, e)
        return out

    def to_csv(self, path, header: Optional[dict] = None) -> None:
        lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
        lines.append(f"# label: {self.label}")
        lines.append("resolution,error,pairwise_order")
        for r, e, o in self.rows():
            lines.append(f"{r},{_fmt(e)},{'' if not np.isfinite(o) else f'{o:.6f}'}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary(self) -> str:
        head = f"{self.label} ({self.kind})"
        lines = [head, "-" * len(head), f"{'resolution':>12} {'error':>14} {'order':>8}"]
        for r, e, o in self.rows():
            lines.append(f"{r:>12} {_fmt(e):>14} {'' if not np.isfinite(o) else f'{o:8.3f}':>8}")
        if self.below_floor:
            lines.append("all errors below round-off floor; no slope fitted")
        else:
            lines.append(f"fitted slope: {self.slope:.4f}")
        for r, msg in self.failures.items():
            lines.append(f"FAILED at {r}: {msg}")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {
            "label": self.label, "kind": self.kind, "resolutions": list(self.resolutions),
            "steps": [float(s) for s in self.steps], "errors": [float(e) for e in self.errors],
            "slope": self.slope, "pairwise": self.pairwise, "failures": dict(self.failures),
            "below_floor": self.below_floor, "metadata": self.metadata,
        }


def _fmt(e) -> str:
    return "nan" if not np.isfinite(e) else f"{e:.12e}"


_SOLVER_ERRORS = (NoConvergence, DivergedStateError, InstabilityError)


def temporal_convergence_study(system, Ms: Sequence[int], T: float = 1.0, scheme: str = "magros",
                               reference: str = "fine_step", M_ref: int = 4096, ref_tol: float = 1e-12,
                               exact: Optional[Callable] = None, krylov: Optional[KrylovConfig] = None,
                               u0=None, stability_factor: float = 10.0, label: Optional[str] = None,
                               metadata: Optional[dict] = None) -> ConvergenceReport:
    """Errors at ``T`` for each step count in ``Ms`` against a reference.

    ``reference`` is ``"fine_step"`` (same scheme, ``M_ref`` steps), ``"oracle"``
    (adaptive dense ODE solve to ``ref_tol``) or ``"exact"`` (``exact(T)``
    returns the free-DOF state).  Every run is bounded by
    ``R = stability_factor * ||reference||``.
    """
    Ms = [int(m) for m in Ms]
    if any(b <= a for a, b in zip(Ms, Ms[1:])):
        raise ValueError(f"resolutions must be strictly increasing, got {Ms}")
    u0 = system.initial_state() if u0 is None else np.asarray(u0, float)
    t0 = time.perf_counter()
    meta = dict(metadata or {})
    meta.update({"scheme": scheme, "T": T, "reference": reference})

    if reference == "fine_step":
        if M_ref <= Ms[-1]:
            raise ValueError(f"reference M_ref={M_ref} must exceed the finest study resolution {Ms[-1]}")
        ref_run = run_scheme(scheme, system, TimeGrid(T, M_ref), krylov=krylov, u0=u0)
        u_ref = ref_run.u
        meta["reference_M"] = M_ref
        meta["reference_max_norm"] = ref_run.diagnostics["max_norm"]
    elif reference == "oracle":
        u_ref = reference_solve(system, T, mode="oracle", tol=ref_tol, u0=u0)
        meta["reference_tol"] = ref_tol
    elif reference == "exact":
        if exact is None:
            raise ValueError("reference='exact' needs an exact solution")
        u_ref = np.asarray(exact(T), float)
    else:
        raise ValueError(f"unknown reference policy {reference!r}")

    ref_norm = system.norm(u_ref)
    R = stability_factor * ref_norm if ref_norm > 0 else math.inf
    meta["reference_norm"] = ref_norm
    meta["stability_R"] = R

    errors, failures, max_norms = [], {}, []
    for M in Ms:
        try:
            res = run_scheme(scheme, system, TimeGrid(T, M), krylov=krylov, u0=u0, stability_R=R)
        except _SOLVER_ERRORS as exc:
            log.warning("M=%d failed: %s", M, exc)
            failures[M] = f"{type(exc).__name__}: {exc}"
            errors.append(math.nan)
            max_norms.append(math.nan)
            continue
        errors.append(system.diff_norm(res.u, u_ref))
        max_norms.append(res.diagnostics["max_norm"])
    meta["max_norms"] = max_norms
    meta["wall_time_s"] = time.perf_counter() - t0

    report = ConvergenceReport(label or f"{scheme} temporal", "temporal", Ms, [T / M for M in Ms],
                               errors, failures=failures, metadata=meta)
    report.fit()
    return report


def spatial_convergence_study(problem: ProblemSpec, ns: Sequence[int], M: int = 2048,
                              scheme: str = "magros", krylov: Optional[KrylovConfig] = None,
                              control: str = "solve", label: Optional[str] = None,
                              metadata: Optional[dict] = None) -> ConvergenceReport:
    """L2 errors at ``problem.T`` against ``problem.exact`` on ``n x n`` meshes.

    ``control="projection"`` skips time stepping and measures the L2
    projection of the exact final state instead.
    """
    if problem.exact is None:
        raise ValueError("spatial study needs a problem with an exact solution")
    ns = [int(n) for n in ns]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError(f"mesh sizes must be strictly increasing, got {ns}")
    T = problem.T
    t0 = time.perf_counter()
    errors, hs, failures = [], [], {}
    for n in ns:
        p = problem.with_mesh(n)
        system = p.system()
        mesh = system.mesh
        hs.append(mesh.h)
        exact_T = lambda x, y: p.exact(x, y, T)  # noqa: E731
        if control == "projection":
            u_full = assembly.project_l2(mesh, system.M_full, exact_T)
        else:
            try:
                u_full = run_scheme(scheme, system, TimeGrid(T, M), krylov=krylov).u_full
            except _SOLVER_ERRORS as exc:
                failures[n] = f"{type(exc).__name__}: {exc}"
                errors.append(math.nan)
                continue
        errors.append(assembly.l2_error(mesh, u_full, exact_T))
    meta = dict(metadata or {})
    meta.update({"scheme": scheme, "T": T, "M": M, "control": control,
                 "wall_time_s": time.perf_counter() - t0})
    report = ConvergenceReport(label or f"{problem.name} spatial", "spatial", ns, hs, errors,
                               failures=failures, metadata=meta)
    report.fit()
    return report


COMPARISON_CASES = (
    ("magros_D_time_dependent", "magros", "time_dependent"),
    ("magros_D_constant", "magros", "constant"),
    ("exprb2_D_constant", "exprb2", "constant"),
)


@dataclass
class ComparisonResult:
    reports: dict

    def combined_rows(self):
        for label, rep in self.reports.items():
            for r, e, o in rep.rows():
                yield label, r, e, o

    def to_csv(self, path, header: Optional[dict] = None) -> None:
        lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
        lines.append("scheme,resolution,error,pairwise_order")
        for label, r, e, o in self.combined_rows():
            lines.append(f"{label},{r},{_fmt(e)},{'' if not np.isfinite(o) else f'{o:.6f}'}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def table(self) -> str:
        labels = list(self.reports)
        first = self.reports[labels[0]]
        head = f"{'M':>6} " + " ".join(f"{lab:>26}" for lab in labels)
        lines = [head]
        for i, M in enumerate(first.resolutions):
            lines.append(f"{M:>6} " + " ".join(f"{_fmt(self.reports[lab].errors[i]):>26}" for lab in labels))
        lines.append(f"{'slope':>6} " + " ".join(f"{self.reports[lab].slope:>26.4f}" for lab in labels))
        return "\n".join(lines)


def compare_schemes(nx: int = 32, Ms: Sequence[int] = (16, 32, 64, 128, 256, 512), M_ref: int = 4096,
                   T: float = 1.0, L1: float = 1.0, L2: float = 1.0, velocity: str = "cellular",
                   velocity_file=None, initial: str = "zero", krylov: Optional[KrylovConfig] = None,
                   metadata: Optional[dict] = None) -> ComparisonResult:
    """Temporal studies of MAGROS (D = 1 + exp(-t)), MAGROS (D = 1) and exprb2 (D = 1)."""
    reports = {}
    for label, scheme, diffusion in COMPARISON_CASES:
        problem = adr_problem(nx=nx, L1=L1, L2=L2, diffusion=diffusion, velocity=velocity,
                               velocity_file=velocity_file, initial=initial, T=T)
        meta = dict(metadata or {})
        meta.update({"nx": nx, "L1": L1, "L2": L2, "velocity": velocity, "diffusion": diffusion})
        reports[label] = temporal_convergence_study(problem.system(), Ms, T=T, scheme=scheme,
                                                    reference="fine_step", M_ref=M_ref, krylov=krylov,
                                                    label=label, metadata=meta)
    return ComparisonResult(reports)


def spatial_floor_check(Ms: Sequence[int] = (256, 512), M_ref: int = 4096, coarse_n: int = 32,
                        fine_n: int = 48, threshold: float = 0.10, krylov: Optional[KrylovConfig] = None,
                        **problem_kwargs) -> dict:
    """Compare temporal errors at the finest steps on two meshes; warn when they differ by > ``threshold``.

    A large shift means the temporal error is contaminated by the spatial discretisation.
    """
    errs = {}
    for n in (coarse_n, fine_n):
        system = adr_problem(nx=n, **problem_kwargs).system()
        rep = temporal_convergence_study(system, Ms, M_ref=M_ref, krylov=krylov)
        errs[n] = rep.errors
    shifts = [abs(a - b) / b for a, b in zip(errs[coarse_n], errs[fine_n])]
    ok = max(shifts) <= threshold
    if not ok:
        log.warning("temporal errors shift by up to %.1f%% between %dx%d and %dx%d meshes",
                    100 * max(shifts), coarse_n, coarse_n, fine_n, fine_n)
    return {"ok": ok, "relative_shift": shifts, "errors": {str(k): v for k, v in errs.items()}}


def initial_data_comparison(nx: int = 32, Ms: Sequence[int] = (16, 32, 64, 128, 256, 512), M_ref: int = 4096,
                            initials: Sequence[str] = ("smooth", "rough"), diffusion: str = "time_dependent",
                            krylov: Optional[KrylovConfig] = None, **problem_kwargs) -> dict:
    """Temporal studies of one configuration under different initial data."""
    out = {}
    for init in initials:
        system = adr_problem(nx=nx, diffusion=diffusion, initial=init, **problem_kwargs).system()
        out[init] = temporal_convergence_study(system, Ms, M_ref=M_ref, krylov=krylov,
                                               label=f"magros_u0_{init}",
                                               metadata={"initial": init, "nx": nx, "diffusion": diffusion})
    return out
