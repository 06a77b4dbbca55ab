"""Command line entry point: ``magros run <config>``, ``magros list-configs``, ``magros dump-default-config``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .assembly import project_l2
from .config import ConfigError, RunConfig
from .expmath import KrylovConfig, NoConvergence
from .harness import (compare_schemes, initial_data_comparison, spatial_convergence_study,
                      spatial_floor_check, temporal_convergence_study)
from .integrator import (InstabilityError, OracleFailure, TimeGrid, reference_solve, run_scheme)
from .mesh import write_vtk
from .nonlinear import DivergedStateError
from .problems import adr_problem, heat_problem, scalar_linear_exact, scalar_linear_system

log = logging.getLogger("magros")

OUTPUT_ENV = "MAGROS_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_KRYLOV = 4


def _problem(cfg: RunConfig):
    p, m = cfg.problem, cfg.mesh
    if p.kind == "adr":
        return adr_problem(nx=m.nx, ny=m.ny, L1=m.L1, L2=m.L2, diffusion=p.diffusion, velocity=p.velocity,
                            velocity_file=p.velocity_file, initial=p.initial, nonlinearity=p.nonlinearity,
                            T=cfg.T, gaarding_shift=p.gaarding_shift, mass_lumping=p.mass_lumping)
    if p.kind == "heat":
        return heat_problem(m.nx, T=cfg.T)
    return None


def _system(cfg: RunConfig):
    if cfg.problem.kind == "scalar_linear":
        return scalar_linear_system()
    return _problem(cfg).system()


def _exact_state(cfg: RunConfig, system):
    if cfg.problem.kind == "scalar_linear":
        return lambda T: np.array([scalar_linear_exact(T)])
    problem = system.problem
    if problem.exact is None:
        return None

    def exact(T):
        full = project_l2(system.mesh, system.M_full, lambda x, y: problem.exact(x, y, T))
        return system.lift.restrict(full)

    return exact


class _Writer:
    def __init__(self, outdir: Path, chash: str):
        self.outdir = outdir
        self.header = {"config_hash": chash}
        self.written = []

    def path(self, name: str) -> Path:
        p = self.outdir / name
        self.written.append(p)
        return p

    def text(self, name: str, body: str) -> None:
        self.path(name).write_text(body)


def _study(cfg: RunConfig, w: _Writer, summary: dict) -> None:
    krylov = KrylovConfig(tol=cfg.krylov_tol, max_dim=cfg.krylov_max_dim)
    R = cfg.stability_R if cfg.stability_R is not None else math.inf
    meta = {"config_hash": w.header["config_hash"]}

    if cfg.study == "single":
        system = _system(cfg)
        if cfg.scheme == "reference":
            u = reference_solve(system, cfg.T, mode=cfg.reference.mode, M_ref=cfg.reference.M,
                                tol=cfg.reference.tol, krylov=krylov)
            u_full, diag, snaps = system.full(u), {"final_norm": system.norm(u)}, {}
        else:
            res = run_scheme(cfg.scheme, system, TimeGrid(cfg.T, cfg.M), krylov=krylov,
                             snapshot_times=cfg.snapshot_times, stability_R=R)
            u_full, snaps = res.u_full, res.snapshots
            diag = {"final_norm": res.diagnostics["final_norm"], "max_norm": res.diagnostics["max_norm"],
                    "max_krylov_dim": max(res.diagnostics["krylov_dims"], default=0),
                    "norms": [float(x) for x in res.diagnostics["norms"]]}
        summary["run"] = diag
        lines = [f"# config_hash: {w.header['config_hash']}"]
        if hasattr(system, "mesh"):
            lines.append("x,y,u")
            lines += [f"{x:.17g},{y:.17g},{u:.17g}" for (x, y), u in zip(system.mesh.nodes, u_full)]
            if cfg.output.vtk:
                write_vtk(w.path("final.vtk"), system.mesh, {"u": u_full},
                          title=f"config_hash {w.header['config_hash']} t={cfg.T}")
                for i, (t, snap) in enumerate(sorted(snaps.items())):
                    write_vtk(w.path(f"snapshot_{i:03d}.vtk"), system.mesh, {"u": snap},
                              title=f"config_hash {w.header['config_hash']} t={t}")
        else:
            lines.append("index,u")
            lines += [f"{i},{u:.17g}" for i, u in enumerate(u_full)]
        w.text("solution.csv", "\n".join(lines) + "\n")
        return

    if cfg.study == "temporal":
        system = _system(cfg)
        rep = temporal_convergence_study(system, cfg.sweep, T=cfg.T, scheme=cfg.scheme if cfg.scheme != "reference"
                                         else "magros", reference=cfg.reference.mode, M_ref=cfg.reference.M,
                                         ref_tol=cfg.reference.tol, exact=_exact_state(cfg, system),
                                         krylov=krylov, label=f"{cfg.scheme}_temporal", metadata=meta)
        rep.to_csv(w.path(f"{rep.label}.csv"), w.header)
        summary["reports"] = {rep.label: rep.as_dict()}
        summary["text"] = rep.summary()
        return

    if cfg.study == "spatial":
        rep = spatial_convergence_study(_problem(cfg), cfg.mesh_sweep, M=cfg.M, scheme=cfg.scheme,
                                        krylov=krylov, label="spatial", metadata=meta)
        rep.to_csv(w.path("spatial.csv"), w.header)
        summary["reports"] = {rep.label: rep.as_dict()}
        summary["text"] = rep.summary()
        return

    m, p = cfg.mesh, cfg.problem
    if cfg.study == "scheme_comparison":
        if cfg.preflight:
            summary["preflight"] = spatial_floor_check(Ms=cfg.sweep[-2:], M_ref=cfg.reference.M,
                                                       coarse_n=m.nx, fine_n=(3 * m.nx) // 2, krylov=krylov,
                                                       L1=m.L1, L2=m.L2, velocity=p.velocity,
                                                       velocity_file=p.velocity_file, initial=p.initial)
        res = compare_schemes(nx=m.nx, Ms=cfg.sweep, M_ref=cfg.reference.M, T=cfg.T, L1=m.L1, L2=m.L2,
                             velocity=p.velocity, velocity_file=p.velocity_file, initial=p.initial,
                             krylov=krylov, metadata=meta)
        for label, rep in res.reports.items():
            rep.to_csv(w.path(f"{label}.csv"), w.header)
        res.to_csv(w.path("comparison_combined.csv"), w.header)
        summary["reports"] = {k: r.as_dict() for k, r in res.reports.items()}
        summary["slopes"] = {k: r.slope for k, r in res.reports.items()}
        summary["text"] = res.table()
        return

    if cfg.study == "initial_data":
        reps = initial_data_comparison(nx=m.nx, Ms=cfg.sweep, M_ref=cfg.reference.M, initials=cfg.initials,
                                       diffusion=p.diffusion, krylov=krylov, L1=m.L1, L2=m.L2,
                                       velocity=p.velocity, velocity_file=p.velocity_file, T=cfg.T)
        for rep in reps.values():
            rep.metadata.update(meta)
            rep.to_csv(w.path(f"{rep.label}.csv"), w.header)
        summary["reports"] = {r.label: r.as_dict() for r in reps.values()}
        summary["slopes"] = {r.label: r.slope for r in reps.values()}
        summary["text"] = "\n\n".join(r.summary() for r in reps.values())
        return


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run(config_path: str) -> int:
    try:
        cfg = cfgmod.load(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = Path(os.environ.get(OUTPUT_ENV) or cfg.output.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    marker = outdir / ".failed"
    if marker.exists():
        marker.unlink()
    chash = cfgmod.config_hash(cfg)
    w = _Writer(outdir, chash)
    summary = {"config_hash": chash, "config": cfg.model_dump(mode="json")}
    t0 = time.perf_counter()
    code, error = EXIT_OK, None
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            _study(cfg, w, summary)
    except (DivergedStateError, InstabilityError, OracleFailure) as exc:
        code, error = EXIT_DIVERGED, ("solver-divergence", exc)
    except NoConvergence as exc:
        code, error = EXIT_KRYLOV, ("krylov-no-convergence", exc)
    except (ValueError, FileNotFoundError) as exc:
        code, error = EXIT_CONFIG, ("config", exc)
    summary["wall_time_s"] = time.perf_counter() - t0
    if error:
        summary["error"] = {"category": error[0], "message": str(error[1])}
        marker.write_text(f"{error[0]}: {error[1]}\n")
        print(f"{error[0]} error: {error[1]}", file=sys.stderr)
    text = summary.pop("text", None)
    (outdir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    if text:
        (outdir / "summary.txt").write_text(f"# config_hash: {chash}\n{text}\n")
        print(text)
    print(f"outputs in {outdir}")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="magros", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a config file or a bundled config by name")
    p_run.add_argument("config")
    sub.add_parser("list-configs", help="list bundled configs")
    p_dump = sub.add_parser("dump-default-config", help="print a config (defaults, or a bundled one) as YAML")
    p_dump.add_argument("name", nargs="?")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "run":
        return run(args.config)
    if args.command == "list-configs":
        for name in cfgmod.bundled_names():
            first = cfgmod.bundled_text(name).splitlines()[0].lstrip("# ")
            print(f"{name:<24} {first}")
        return EXIT_OK
    if args.command == "dump-default-config":
        try:
            cfg = cfgmod.load(args.name) if args.name else RunConfig()
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(cfgmod.dump(cfg))
        return EXIT_OK
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
