"""Command-line orchestration: run, benchmark, export, resample, launch-worker.

Exit statuses: 0 ok, 1 configuration error, 2 numerical divergence,
3 non-convergence, 4 transport failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from .benchmark import run_benchmark
from .config import RunConfig, build_config, format_config
from .errors import (ConfigError, DegenerateSnapshotError, DivergenceError,
                     ExtractionError, NonConvergenceError, ProtocolError,
                     PsiboxError, SingularCoefficientError, TransportError,
                     ZeroNormError)
from .evolve import EvolutionState, check_stability, evolve_to_convergence
from .lattice import Field3D, LatticeSpec, allocate, fill_random_gaussian
from .multires import bootstrap_run, load_wavefunction, resample, save_wavefunction
from .observables import rms_radius
from .parallel import evolve_parallel
from .states import extract_excited, impose_inplace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_UNCONVERGED = 3
EXIT_TRANSPORT = 4

__all__ = ["main", "export_slices", "run_from_config"]


def export_slices(field: Field3D, axis: str, index: int, path,
                  density: bool = False) -> None:
    """CSV of one interior plane: physical coordinates of the two free
    axes plus psi (or psi^2 with ``density``)."""
    spec = field.spec
    n = spec.N
    if axis not in ("x", "y", "z"):
        raise ConfigError(f"axis must be x|y|z, got {axis!r}")
    if not 1 <= index <= n:
        raise ConfigError(f"plane index {index} outside the lattice interior 1..{n}")
    if axis == "x":
        plane = field.values[index, 1:-1, 1:-1]
        free = ("y", "z")
    elif axis == "y":
        plane = field.values[1:-1, index, 1:-1]
        free = ("x", "z")
    else:
        plane = field.values[1:-1, 1:-1, index]
        free = ("x", "y")
    if density:
        plane = plane * plane
    coords = (np.arange(1, n + 1) - spec.center) * spec.a
    column = "psi2" if density else "psi"
    with open(path, "w") as f:
        f.write(f"{free[0]},{free[1]},{column}\n")
        for i in range(n):
            for j in range(n):
                f.write(f"{coords[i]:.17g},{coords[j]:.17g},{plane[i, j]:.17g}\n")


def _write_observables_csv(path, state: EvolutionState) -> None:
    with open(path, "w") as f:
        f.write("step,tau,E,E_binding,norm,r_rms\n")
        for c in state.checks:
            binding = "" if c.binding is None else f"{c.binding:.17g}"
            f.write(f"{c.step},{c.tau:.17g},{c.energy:.17g},{binding},"
                    f"{c.norm2:.17g},{c.r_rms:.17g}\n")


def _parse_endpoints(cfg: RunConfig) -> list[tuple[str, int]]:
    parsed = []
    for item in cfg.endpoints:
        host, _, port = item.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"endpoint must look like host:port, got {item!r}")
        parsed.append((host, int(port)))
    return parsed


def run_from_config(cfg: RunConfig, launch_local: bool = False) -> tuple[int, dict]:
    """Execute a configured run; returns (exit status, summary dict)."""
    spec = cfg.spec()
    stab = check_stability(spec)
    if not stab.ok:
        raise ConfigError(
            f"dtau={spec.dtau} violates the stability bound: "
            f"need dtau < a^2/3 = {stab.limit:.9g}")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    workers_procs: list[subprocess.Popen] = []
    t0 = time.perf_counter()
    if cfg.bootstrap:
        schedule = [cfg.stage_spec(n) for n in cfg.bootstrap]
        state = bootstrap_run(
            schedule, cfg.make_grid, seed=cfg.seed, tol=cfg.tol,
            check_freq=cfg.check_freq, snap_freq=cfg.snap_freq,
            constraints=cfg.symmetry, max_steps=cfg.max_steps,
            max_snapshots=cfg.max_snapshots, reimpose_freq=cfg.reimpose_freq,
            workers=cfg.workers, carry_coefficients=cfg.carry_coefficients,
            polish_steps=cfg.polish_steps)
        grid = cfg.make_grid(spec)
    else:
        grid = cfg.make_grid(spec)
        initial = fill_random_gaussian(allocate(spec), cfg.seed)
        for c in cfg.symmetry:
            impose_inplace(initial.values, spec.N, c)
        if cfg.workers == 1:
            state = evolve_to_convergence(
                initial, grid, tol=cfg.tol, check_freq=cfg.check_freq,
                snap_freq=cfg.snap_freq, constraints=cfg.symmetry,
                max_steps=cfg.max_steps, max_snapshots=cfg.max_snapshots,
                reimpose_freq=cfg.reimpose_freq)
        elif cfg.transport == "inproc":
            state = evolve_parallel(
                grid, workers=cfg.workers, initial=initial, tol=cfg.tol,
                check_freq=cfg.check_freq, snap_freq=cfg.snap_freq,
                constraints=cfg.symmetry, max_steps=cfg.max_steps,
                max_snapshots=cfg.max_snapshots, reimpose_freq=cfg.reimpose_freq)
        else:
            endpoints = _parse_endpoints(cfg)
            if launch_local:
                cfg_path = out_dir / "effective.cfg"
                cfg_path.write_text(format_config(cfg))
                for r in range(1, cfg.workers):
                    workers_procs.append(subprocess.Popen(
                        [sys.executable, "-m", "psibox", "launch-worker",
                         "--config", str(cfg_path), "--rank", str(r)]))
            state = evolve_parallel(
                grid, workers=cfg.workers, initial=initial, transport="tcp",
                endpoints=endpoints, rank=0, scatter_initial=True,
                tol=cfg.tol, check_freq=cfg.check_freq, snap_freq=cfg.snap_freq,
                constraints=cfg.symmetry, max_steps=cfg.max_steps,
                max_snapshots=cfg.max_snapshots, reimpose_freq=cfg.reimpose_freq)
    wall = time.perf_counter() - t0

    for p in workers_procs:
        if p.wait(timeout=120):
            raise TransportError(f"worker process exited with status {p.returncode}")

    _write_observables_csv(out_dir / "observables.csv", state)
    save_wavefunction(state.psi, out_dir / "psi_ground.qwf",
                      step_count=state.step_count)

    excited = []
    if state.converged and cfg.excited_count:
        results = extract_excited(state, grid, cfg.excited_count,
                                  polish_steps=cfg.polish_steps,
                                  check_freq=cfg.check_freq)
        for idx, (psi_k, e_k) in enumerate(results, start=1):
            save_wavefunction(psi_k, out_dir / f"psi_excited_{idx}.qwf",
                              step_count=state.step_count)
            excited.append({
                "level": idx,
                "energy": e_k,
                "binding": None if grid.unbounded else e_k - grid.v_inf,
                "r_rms": rms_radius(psi_k),
            })

    summary = {
        "N": cfg.N, "a": cfg.a, "m": cfg.m, "dtau": spec.dtau,
        "potential": cfg.potential, "workers": cfg.workers,
        "transport": cfg.transport, "seed": cfg.seed,
        "converged": state.converged,
        "iterations": state.step_count,
        "tau": state.tau,
        "wall_time_s": wall,
        "energy": state.energy,
        "binding": state.binding,
        "r_rms": rms_radius(state.psi),
        "excited": excited,
        "halo_messages": state.halo_messages,
        "stages": [
            {"N": r.N, "a": r.a, "iterations": r.iterations,
             "wall_time_s": r.wall_time, "energy": r.energy}
            for r in state.stage_reports
        ],
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    print(f"converged={state.converged} after {state.step_count} sweeps "
          f"(tau={state.tau:.4g}, wall {wall:.1f}s)")
    binding = state.binding
    if binding is None:
        print(f"E0 = {state.energy:.8g}")
    else:
        print(f"E0 = {state.energy:.8g}  E0_binding = {binding:.8g}")
    for item in excited:
        label = item["energy"] if item["binding"] is None else item["binding"]
        print(f"E{item['level']} = {label:.8g}")
    return (EXIT_OK if state.converged else EXIT_UNCONVERGED), summary


def _cmd_run(args) -> int:
    cfg = build_config(args.config, args.set)
    status, _ = run_from_config(cfg, launch_local=args.launch_local)
    return status


def _cmd_benchmark(args) -> int:
    cfg = build_config(args.config, args.set)
    m_list = [int(t) for t in args.m_list.split(",") if t.strip()]
    report = run_benchmark(cfg, m_list, reps=args.reps, steps=args.steps)
    for r in report.results:
        print(f"M={r.workers}: {r.mean * 1e3:.3f} ms/iter  "
              f"sigma_e={r.sigma_e * 1e3:.3f} ms  (R={r.runs})")
    print(f"dtau_u={report.dtau_u:.3e} s/site  dtau_c={report.dtau_c:.3e} s/site")
    print(f"max nodes: 1d {report.estimate.max_nodes_1d}, "
          f"3d {report.estimate.max_nodes_3d}")
    print(f"log-log slope {report.slope:.3f} +- {report.slope_err:.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def _cmd_export(args) -> int:
    field, _spec = load_wavefunction(args.input)
    export_slices(field, args.axis, args.index, args.out, density=args.density)
    return EXIT_OK


def _cmd_resample(args) -> int:
    field, spec = load_wavefunction(args.input)
    if args.n == spec.N:
        fine_spec = spec
    else:
        a_new = spec.L / args.n
        fine_spec = LatticeSpec(N=args.n, a=a_new, m=spec.m,
                                dtau=a_new * a_new / 4.0)
    out = resample(field, fine_spec)
    save_wavefunction(out, args.out)
    print(f"resampled {spec.N}^3 -> {fine_spec.N}^3 at L={spec.L:.6g}")
    return EXIT_OK


def _cmd_launch_worker(args) -> int:
    cfg = build_config(args.config)
    spec = cfg.spec()
    grid = cfg.make_grid(spec)
    endpoints = _parse_endpoints(cfg)
    evolve_parallel(
        grid, workers=cfg.workers, transport="tcp", endpoints=endpoints,
        rank=args.rank, scatter_initial=True, tol=cfg.tol,
        check_freq=cfg.check_freq, snap_freq=cfg.snap_freq,
        constraints=cfg.symmetry, max_steps=cfg.max_steps,
        max_snapshots=cfg.max_snapshots, reimpose_freq=cfg.reimpose_freq)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psibox",
        description="Imaginary-time bound-state solver on a padded 3d lattice")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="converge a configured run")
    p_run.add_argument("--config", default=None, help="key=value config file")
    p_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    p_run.add_argument("--launch-local", action="store_true",
                       help="spawn local worker processes for tcp transport")
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("benchmark", help="time sweeps per worker count")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_bench.add_argument("--m-list", default="1,2", help="comma-separated worker counts")
    p_bench.add_argument("--reps", type=int, default=5)
    p_bench.add_argument("--steps", type=int, default=30)
    p_bench.add_argument("--out", default=None, help="write the report as JSON")
    p_bench.set_defaults(func=_cmd_benchmark)

    p_export = sub.add_parser("export", help="dump one plane of a saved field as CSV")
    p_export.add_argument("--in", dest="input", required=True)
    p_export.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p_export.add_argument("--index", type=int, required=True)
    p_export.add_argument("--density", action="store_true",
                          help="write psi^2 instead of psi")
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=_cmd_export)

    p_res = sub.add_parser("resample", help="resample a saved field at fixed volume")
    p_res.add_argument("--in", dest="input", required=True)
    p_res.add_argument("--n", type=int, required=True, help="new sites per axis")
    p_res.add_argument("--out", required=True)
    p_res.set_defaults(func=_cmd_resample)

    p_worker = sub.add_parser("launch-worker", help="run one tcp worker rank")
    p_worker.add_argument("--config", required=True)
    p_worker.add_argument("--rank", type=int, required=True)
    p_worker.set_defaults(func=_cmd_launch_worker)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SingularCoefficientError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ZeroNormError, DegenerateSnapshotError,
            ExtractionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except PsiboxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
