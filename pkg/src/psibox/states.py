"""Reflection-symmetry constraints and excited-state extraction.

Constraining the start vector to a reflection-parity sector keeps the
evolution inside that sector, so the first antisymmetric state can be
converged directly. Alternatively, mid-run snapshots are orthogonalized
against already-converged states and polished to yield the next level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import observables
from .errors import (ConfigError, DegenerateSnapshotError, ExtractionError,
                     ZeroNormError)
from .evolve import EvolutionState, SweepBuffers, evolve_to_convergence
from .lattice import Field3D, allocate, fill_random_gaussian
from .potential import PotentialGrid

__all__ = [
    "SymmetryConstraint",
    "impose",
    "impose_inplace",
    "project_out",
    "extract_excited",
    "symmetry_excited_run",
]

_AXES = {"x": 0, "y": 1, "z": 2}
_PARITIES = ("symmetric", "antisymmetric")


@dataclass(frozen=True)
class SymmetryConstraint:
    """Reflection parity about the mid-plane of one axis."""

    axis: str
    parity: str

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ConfigError(f"axis must be one of x|y|z, got {self.axis!r}")
        if self.parity not in _PARITIES:
            raise ConfigError(
                f"parity must be symmetric|antisymmetric, got {self.parity!r}")

    @property
    def sign(self) -> float:
        return 1.0 if self.parity == "symmetric" else -1.0

    @classmethod
    def from_token(cls, token: str) -> "SymmetryConstraint":
        """Parse compact config tokens like 'Az' or 'Sx'."""
        t = token.strip()
        if len(t) == 2 and t[0] in "SA" and t[1].lower() in _AXES:
            parity = "symmetric" if t[0] == "S" else "antisymmetric"
            return cls(axis=t[1].lower(), parity=parity)
        raise ConfigError(f"unrecognized symmetry token {token!r} (expected e.g. Az, Sx)")


def _plane(ax: int, idx: int):
    sl: list = [slice(None)] * 3
    sl[ax] = idx
    return tuple(sl)


def impose_inplace(values: np.ndarray, n: int, constraint: SymmetryConstraint):
    """Copy the lower half onto the upper half (sign-flipped when
    antisymmetric) about the mid-plane of the chosen axis; for odd N the
    central plane is zeroed under antisymmetric parity."""
    ax = _AXES[constraint.axis]
    sign = constraint.sign
    half = n // 2
    for target in range(n - half + 1, n + 1):
        source = n + 1 - target
        values[_plane(ax, target)] = sign * values[_plane(ax, source)]
    if n % 2 == 1 and sign < 0:
        values[_plane(ax, (n + 1) // 2)] = 0.0
    return values


def impose(field: Field3D, constraint: SymmetryConstraint) -> Field3D:
    """Pure version of :func:`impose_inplace`."""
    out = field.copy()
    impose_inplace(out.values, field.spec.N, constraint)
    return out


def _project_inplace(values: np.ndarray, basis: list[Field3D], a3: float, n: int):
    # two sequential passes in basis order: the second controls roundoff
    # left by a merely 1e-8-orthogonal basis
    for _ in range(2):
        for b in basis:
            c = observables.combine_plane_sums(
                observables.dot_planes(values, b.values, 1, n)) * a3
            values -= c * b.values


def project_out(snap: Field3D, basis: list[Field3D]) -> Field3D:
    """Remove the components of ``snap`` along each basis state.

    Basis states must be normalized and mutually orthogonal to 1e-8;
    raises DegenerateSnapshotError when nothing is left (residual below
    1e-12 of the snapshot norm), meaning a later snapshot is needed.
    """
    spec = snap.spec
    a3 = observables.cell_volume(spec)
    n = spec.N
    for i, b in enumerate(basis):
        if abs(math.sqrt(observables.norm2(b)) - 1.0) > 1e-8:
            raise ConfigError(f"basis state {i} is not normalized")
        for j in range(i + 1, len(basis)):
            if abs(observables.overlap(b, basis[j])) > 1e-8:
                raise ConfigError(f"basis states {i} and {j} are not orthogonal")
    snap_norm = math.sqrt(observables.norm2(snap))
    if snap_norm == 0.0:
        raise ZeroNormError("cannot project a zero snapshot")
    residual = snap.values.copy()
    _project_inplace(residual, basis, a3, n)
    res_norm = math.sqrt(
        observables.combine_plane_sums(observables.norm_planes(residual, 1, n)) * a3)
    if res_norm < 1e-12 * snap_norm:
        raise DegenerateSnapshotError(
            "snapshot lies entirely in the projected basis; use a later snapshot")
    return Field3D(spec, residual)


def _verify_orthogonal(values: np.ndarray, basis: list[Field3D], a3: float, n: int):
    for i, b in enumerate(basis):
        c = observables.combine_plane_sums(
            observables.dot_planes(values, b.values, 1, n)) * a3
        if abs(c) > 1e-10:
            raise ExtractionError(
                f"extracted state overlaps basis state {i} at {c:.3e}")


def extract_excited(state: EvolutionState, grid: PotentialGrid, count: int,
                    polish_steps: int | None = None,
                    check_freq: int = 100) -> list[tuple[Field3D, float]]:
    """Extract ``count`` states above the converged one, snapshot by snapshot.

    Each round takes the earliest unused snapshot, projects out the
    already-extracted states (ground first), then polishes the residual
    with ``polish_steps`` further sweeps, re-projecting and re-imposing
    the run's symmetry constraints every ``check_freq`` sweeps.
    polish_steps=0 uses the projected snapshot as is.
    """
    if count < 0:
        raise ConfigError("count must be >= 0")
    if count == 0:
        return []
    if not state.converged:
        raise ExtractionError("extraction requires a converged state")
    if len(state.snapshots) < count:
        raise ExtractionError(
            f"need at least {count} snapshots, have {len(state.snapshots)}")
    if polish_steps is None:
        polish_steps = 10 * check_freq

    spec = state.psi.spec
    a3 = observables.cell_volume(spec)
    n = spec.N
    basis = [state.psi]
    prev_energy = observables.energy(state.psi, grid)
    results: list[tuple[Field3D, float]] = []
    snap_idx = 0

    for _ in range(count):
        residual = None
        while snap_idx < len(state.snapshots):
            _, snap = state.snapshots[snap_idx]
            snap_idx += 1
            try:
                residual = project_out(snap, basis)
                break
            except DegenerateSnapshotError:
                continue
        if residual is None:
            raise DegenerateSnapshotError(
                "all snapshots exhausted without a usable residual")

        work = SweepBuffers(residual.values)
        work.renormalize(spec)
        for s in range(1, polish_steps + 1):
            work.sweep(grid, n)
            work.renormalize(spec)
            if s % check_freq == 0:
                _project_inplace(work.psi, basis, a3, n)
                for c in state.constraints:
                    impose_inplace(work.psi, n, c)
                work.renormalize(spec)
        _project_inplace(work.psi, basis, a3, n)
        work.renormalize(spec)
        _verify_orthogonal(work.psi, basis, a3, n)

        psi_k = Field3D(spec, work.psi.copy())
        e_k = observables.energy(psi_k, grid)
        if e_k < prev_energy - 1e-8:
            raise ExtractionError(
                f"extracted energy {e_k:.8g} fell below previous level "
                f"{prev_energy:.8g}")
        results.append((psi_k, e_k))
        basis.append(psi_k)
        prev_energy = e_k

    return results


def symmetry_excited_run(grid: PotentialGrid, constraints, *, seed: int = 1,
                         tol: float = 1e-6, check_freq: int = 100,
                         snap_freq: int | None = None,
                         max_steps: int = 1_000_000, max_snapshots: int = 8,
                         reimpose_freq: int | None = None,
                         initial: Field3D | None = None,
                         workers: int = 1,
                         ) -> tuple[Field3D, float, EvolutionState]:
    """Converge the lowest state of a reflection-parity sector.

    The constraints are imposed on the start vector and re-imposed
    periodically during the evolution; the potential must share the
    symmetry. Returns (state vector, total energy, full run state).
    """
    constraints = tuple(constraints)
    spec = grid.spec
    if initial is None:
        initial = fill_random_gaussian(allocate(spec), seed)
    for c in constraints:
        impose_inplace(initial.values, spec.N, c)
    if workers > 1:
        from .parallel import evolve_parallel

        state = evolve_parallel(grid, initial=initial, workers=workers, tol=tol,
                                check_freq=check_freq, snap_freq=snap_freq,
                                constraints=constraints, max_steps=max_steps,
                                max_snapshots=max_snapshots,
                                reimpose_freq=reimpose_freq)
    else:
        state = evolve_to_convergence(initial, grid, tol=tol,
                                      check_freq=check_freq, snap_freq=snap_freq,
                                      constraints=constraints, max_steps=max_steps,
                                      max_snapshots=max_snapshots,
                                      reimpose_freq=reimpose_freq)
    return state.psi, state.energy, state
