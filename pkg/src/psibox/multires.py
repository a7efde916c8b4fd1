"""Wavefunction persistence and coarse-to-fine bootstrapping.

Binary field files (little-endian): magic "QWF1", u32 version=1, u8 kind
(0 wavefunction, 1 potential), 3 reserved zero bytes, u64 N, f64 a,
f64 m, f64 V_inf (meaningful for potentials, 0 otherwise), u64
step_count, then (N+2)^3 float64 values in canonical x-major order
including the padding shell. Writes are byte-deterministic.

Resampling interpolates trilinearly in physical coordinates at fixed box
volume, so a converged coarse state seeds a finer lattice and the fine
stage converges in far fewer sweeps than a random start.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, NonConvergenceError
from .evolve import EvolutionState, evolve_to_convergence
from .lattice import (Field3D, LatticeSpec, allocate, apply_dirichlet_boundary,
                      fill_random_gaussian)

__all__ = [
    "save_wavefunction",
    "load_wavefunction",
    "resample",
    "bootstrap_run",
    "StageReport",
    "KIND_WAVEFUNCTION",
    "KIND_POTENTIAL",
]

MAGIC = b"QWF1"
VERSION = 1
KIND_WAVEFUNCTION = 0
KIND_POTENTIAL = 1

_HEADER = struct.Struct("<4sIB3sQdddQ")  # 52 bytes


@dataclass(frozen=True)
class FieldFileHeader:
    kind: int
    N: int
    a: float
    m: float
    v_inf: float
    step_count: int


def write_field_file(path, values: np.ndarray, spec: LatticeSpec, *,
                     v_inf: float = 0.0, kind: int = KIND_WAVEFUNCTION,
                     step_count: int = 0) -> None:
    header = _HEADER.pack(MAGIC, VERSION, kind, b"\x00\x00\x00", spec.N,
                          spec.a, spec.m, v_inf, step_count)
    payload = np.ascontiguousarray(values, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_field_file(path) -> tuple[np.ndarray, FieldFileHeader]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, kind, _, n, a, m, v_inf, step_count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind not in (KIND_WAVEFUNCTION, KIND_POTENTIAL):
        raise FormatError(f"{path}: unknown payload kind {kind}")
    ext = n + 2
    expected = _HEADER.size + ext ** 3 * 8
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload size mismatch ({len(raw)} bytes, expected {expected})")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(ext, ext, ext)
    values = np.ascontiguousarray(values)
    if not np.isfinite(values).all():
        raise FormatError(f"{path}: non-finite values in payload")
    return values, FieldFileHeader(kind=kind, N=int(n), a=a, m=m,
                                   v_inf=v_inf, step_count=int(step_count))


def save_wavefunction(field: Field3D, path, step_count: int = 0) -> None:
    """Write the field in the binary format above (wavefunction kind)."""
    if not np.isfinite(field.values).all():
        raise ConfigError("refusing to save a non-finite field")
    write_field_file(path, field.values, field.spec, v_inf=0.0,
                     kind=KIND_WAVEFUNCTION, step_count=step_count)


def load_wavefunction(path) -> tuple[Field3D, LatticeSpec]:
    """Read a saved wavefunction; padding is restored to Dirichlet zero.

    The file format does not carry dtau; the returned spec uses the
    standard stable choice a^2/4, which evolution callers override.
    """
    values, header = read_field_file(path)
    if header.kind != KIND_WAVEFUNCTION:
        raise FormatError(f"{path}: not a wavefunction file (kind={header.kind})")
    spec = LatticeSpec(N=header.N, a=header.a, m=header.m,
                       dtau=header.a * header.a / 4.0)
    field = Field3D(spec, values)
    apply_dirichlet_boundary(field, 0.0)
    return field, spec


def _axis_interp(arr: np.ndarray, axis: int, u: np.ndarray, n_coarse: int) -> np.ndarray:
    # u holds continuous coarse padded coordinates, already clamped to the
    # interior hull [1, N_coarse]; arr is interior-only (0-based)
    i0 = np.minimum(np.floor(u).astype(np.int64), n_coarse - 1)
    frac = u - i0
    lo = np.take(arr, i0 - 1, axis=axis)
    hi = np.take(arr, i0, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = len(u)
    f = frac.reshape(shape)
    return lo + f * (hi - lo)


def resample(coarse: Field3D, fine_spec: LatticeSpec) -> Field3D:
    """Trilinear resampling onto a lattice of the same physical volume.

    Fine-site centers at (n-(N+1)/2)*a per axis are mapped into coarse
    padded coordinates; points beyond the outermost coarse sites clamp to
    the nearest face. The result is renormalized.
    """
    cs = coarse.spec
    if abs(cs.L - fine_spec.L) > 1e-12 * max(cs.L, fine_spec.L):
        raise ConfigError(
            f"resample requires a fixed box: coarse L={cs.L}, fine L={fine_spec.L}")
    ratio = fine_spec.a / cs.a
    fine_idx = np.arange(1, fine_spec.N + 1, dtype=np.float64)
    u = (fine_idx - fine_spec.center) * ratio + cs.center
    u = np.clip(u, 1.0, float(cs.N))

    out = coarse.interior
    for axis in range(3):
        out = _axis_interp(out, axis, u, cs.N)

    fine = allocate(fine_spec)
    fine.interior[:] = out
    from .evolve import renormalize

    normalized, _ = renormalize(fine)
    return normalized


@dataclass
class StageReport:
    """Per-stage bookkeeping for a bootstrap run."""

    N: int
    a: float
    iterations: int
    converged: bool
    wall_time: float
    energy: float
    binding: float | None


def bootstrap_run(schedule: Sequence[LatticeSpec],
                  make_grid: Callable[[LatticeSpec], "PotentialGrid"], *,
                  seed: int = 1, tol: float = 1e-6, check_freq: int = 100,
                  snap_freq: int | None = None, constraints=(),
                  max_steps: int = 1_000_000, max_snapshots: int = 8,
                  reimpose_freq: int | None = None, workers: int = 1,
                  carry_coefficients: Sequence[float] | None = None,
                  polish_steps: int | None = None) -> EvolutionState:
    """Converge through a coarse-to-fine ladder of lattices at fixed volume.

    The first stage starts from the seeded random field; each later stage
    starts from the resampled output of the previous one (optionally a
    linear combination of its lowest states weighted by
    ``carry_coefficients``; default carries the ground state only).
    Returns the final stage's state with per-stage iteration counts in
    ``stage_reports``.
    """
    from .states import extract_excited, impose_inplace

    schedule = list(schedule)
    if not schedule:
        raise ConfigError("bootstrap schedule is empty")
    for prev, cur in zip(schedule, schedule[1:]):
        if cur.N <= prev.N:
            raise ConfigError("bootstrap schedule must strictly increase N")
        if abs(cur.L - prev.L) > 1e-12 * prev.L:
            raise ConfigError("bootstrap schedule must keep the box length fixed")
    if workers > 1:
        for s in schedule:
            if s.N % workers:
                raise ConfigError(f"stage N={s.N} not divisible by {workers} workers")
    coeffs = [1.0] if carry_coefficients is None else list(carry_coefficients)
    if not coeffs:
        raise ConfigError("carry_coefficients must not be empty")
    constraints = tuple(constraints)

    def run_stage(spec, grid, initial):
        if workers > 1:
            from .parallel import evolve_parallel

            return evolve_parallel(grid, initial=initial, workers=workers,
                                   tol=tol, check_freq=check_freq,
                                   snap_freq=snap_freq, constraints=constraints,
                                   max_steps=max_steps, max_snapshots=max_snapshots,
                                   reimpose_freq=reimpose_freq)
        return evolve_to_convergence(initial, grid, tol=tol, check_freq=check_freq,
                                     snap_freq=snap_freq, constraints=constraints,
                                     max_steps=max_steps, max_snapshots=max_snapshots,
                                     reimpose_freq=reimpose_freq)

    reports: list[StageReport] = []
    carried: list[Field3D] | None = None
    state = None
    for stage_idx, spec in enumerate(schedule):
        grid = make_grid(spec)
        if carried is None:
            initial = fill_random_gaussian(allocate(spec), seed)
        else:
            acc = np.zeros((spec.extent,) * 3)
            for c, psi in zip(coeffs, carried):
                acc += c * resample(psi, spec).values
            initial = Field3D(spec, acc)
        for c in constraints:
            impose_inplace(initial.values, spec.N, c)

        t0 = time.perf_counter()
        state = run_stage(spec, grid, initial)
        wall = time.perf_counter() - t0
        if not state.converged:
            raise NonConvergenceError(
                f"bootstrap stage N={spec.N} unconverged after {max_steps} sweeps")
        reports.append(StageReport(N=spec.N, a=spec.a, iterations=state.step_count,
                                   converged=state.converged, wall_time=wall,
                                   energy=state.energy, binding=state.binding))

        if stage_idx < len(schedule) - 1:
            carried = [state.psi]
            if len(coeffs) > 1:
                excited = extract_excited(state, grid, len(coeffs) - 1,
                                          polish_steps=polish_steps,
                                          check_freq=check_freq)
                carried += [f for f, _ in excited]

    state.stage_reports = reports
    return state
