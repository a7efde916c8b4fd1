"""Imaginary-time evolution: stability guard, stencil stepping,
renormalization, snapshot schedule and the serial convergence loop.

The slab engine in :mod:`psibox.parallel` drives the same per-sweep
pieces when more than one worker is used; both paths share the kernels,
the plane-sum reductions and the convergence tracker, and produce
bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, observables
from .errors import ConfigError, DivergenceError, ZeroNormError
from .lattice import Field3D, LatticeSpec, apply_dirichlet_boundary
from .potential import PotentialGrid

__all__ = [
    "StabilityCheck",
    "check_stability",
    "step",
    "renormalize",
    "CheckRecord",
    "EvolutionState",
    "evolve_to_convergence",
]


@dataclass(frozen=True)
class StabilityCheck:
    ok: bool
    limit: float  # a^2/3, the explicit-scheme bound


def check_stability(spec: LatticeSpec) -> StabilityCheck:
    """Von Neumann bound for the explicit update: dtau must stay below a^2/3."""
    limit = spec.a * spec.a / 3.0
    return StabilityCheck(ok=spec.dtau < limit, limit=limit)


def step(psi: Field3D, grid: PotentialGrid) -> Field3D:
    """One update sweep as a pure function; padding carried over unchanged."""
    out = psi.values.copy()
    kernels.stencil_update(psi.values, grid.coef_a, grid.coef_c, out, 1, psi.spec.N)
    if not np.isfinite(out).all():
        raise DivergenceError(
            "sweep produced non-finite values (check dtau against a^2/3)"
        )
    return Field3D(psi.spec, out)


def renormalize(psi: Field3D) -> tuple[Field3D, float]:
    """Scale so that sum(psi^2) a^3 = 1; returns the pre-scaling L2 norm."""
    n2 = observables.norm2(psi)
    if n2 == 0.0:
        raise ZeroNormError("cannot renormalize a zero field")
    if not np.isfinite(n2):
        raise DivergenceError("field norm is non-finite")
    factor = 1.0 / math.sqrt(n2)
    return Field3D(psi.spec, psi.values * factor), math.sqrt(n2)


@dataclass
class CheckRecord:
    """One periodic convergence check."""

    step: int
    tau: float
    energy: float
    binding: float | None
    norm2: float
    r_rms: float

    @property
    def metric(self) -> float:
        """Convergence metric: binding energy, or total energy when unbounded."""
        return self.energy if self.binding is None else self.binding


@dataclass
class EvolutionState:
    """Trajectory endpoint plus everything recorded along the way."""

    psi: Field3D
    tau: float
    step_count: int
    snapshots: list[tuple[float, Field3D]] = field(default_factory=list)
    checks: list[CheckRecord] = field(default_factory=list)
    converged: bool = False
    constraints: tuple = ()
    halo_messages: int = 0
    sweeps_started: int = 0
    stage_reports: list = field(default_factory=list)

    @property
    def energy_history(self) -> list[tuple[int, float, float | None]]:
        return [(c.step, c.energy, c.binding) for c in self.checks]

    @property
    def energy(self) -> float:
        if not self.checks:
            raise ValueError("no convergence checks recorded")
        return self.checks[-1].energy

    @property
    def binding(self) -> float | None:
        if not self.checks:
            raise ValueError("no convergence checks recorded")
        return self.checks[-1].binding


# tracker verdicts, shared with the slab engine broadcast codes
CONTINUE = 0
CONVERGED = 1
DIVERGED = 2

_RISE_MARGIN_REL = 1e-6
_RISE_MARGIN_ABS = 1e-9


class ConvergenceTracker:
    """Relative-change convergence test plus rising-energy divergence guard.

    Imaginary-time evolution descends in energy; with per-step
    renormalization an unstable dtau never overflows, it shows up as the
    check energy climbing toward the top of the spectrum. Two consecutive
    checks above the running minimum by a clear margin flag divergence.
    """

    def __init__(self, tol: float):
        if not tol > 0.0:
            raise ConfigError(f"tolerance must be positive, got {tol}")
        self.tol = tol
        self._prev: float | None = None
        self._min = math.inf
        self._rising = 0

    def update(self, metric: float) -> int:
        if not math.isfinite(metric):
            return DIVERGED
        margin = max(_RISE_MARGIN_REL * abs(self._min), _RISE_MARGIN_ABS)
        if metric > self._min + margin:
            self._rising += 1
        else:
            self._rising = 0
        if self._rising >= 2:
            return DIVERGED
        verdict = CONTINUE
        if self._prev is not None and abs(metric - self._prev) <= self.tol * abs(metric):
            verdict = CONVERGED
        self._min = min(self._min, metric)
        self._prev = metric
        return verdict


class SweepBuffers:
    """Ping-pong buffer pair for in-place sweeping of one field."""

    def __init__(self, values: np.ndarray):
        self.psi = values.copy()
        self.out = values.copy()  # same padding; interior overwritten each sweep

    def sweep(self, grid: PotentialGrid, n: int):
        kernels.stencil_update(self.psi, grid.coef_a, grid.coef_c, self.out, 1, n)
        self.psi, self.out = self.out, self.psi

    def renormalize(self, spec: LatticeSpec) -> float:
        total = observables.combine_plane_sums(
            observables.norm_planes(self.psi, 1, spec.N))
        n2 = total * observables.cell_volume(spec)
        if n2 == 0.0:
            raise ZeroNormError("field collapsed to zero during evolution")
        if not np.isfinite(n2):
            raise DivergenceError(
                "field norm diverged (check dtau against a^2/3)")
        self.psi *= 1.0 / math.sqrt(n2)
        return n2


def measure_check(values: np.ndarray, grid: PotentialGrid,
                  spec: LatticeSpec) -> CheckRecord:
    """Serial-path observables for one convergence check (step/tau filled by caller)."""
    kin = observables.kinetic_factor(spec)
    num, den = observables.energy_planes(values, grid.v, kin, 1, spec.N)
    r2, _ = observables.radius2_planes(values, spec, 1, 1, spec.N)
    return _record_from_sums(num, den, r2, grid, spec)


def _record_from_sums(num, den, r2, grid: PotentialGrid,
                      spec: LatticeSpec) -> CheckRecord:
    den_total = observables.combine_plane_sums(den)
    if den_total == 0.0 or not np.isfinite(den_total):
        raise ZeroNormError("zero-norm field at convergence check")
    e = observables.combine_plane_sums(num) / den_total
    binding = None if grid.unbounded else e - grid.v_inf
    n2 = den_total * observables.cell_volume(spec)
    r_rms = float(np.sqrt(observables.combine_plane_sums(r2) / den_total))
    return CheckRecord(step=0, tau=0.0, energy=e, binding=binding,
                       norm2=n2, r_rms=r_rms)


def evolve_to_convergence(initial: Field3D, grid: PotentialGrid,
                          tol: float = 1e-6, check_freq: int = 100,
                          snap_freq: int | None = None, constraints=(),
                          max_steps: int = 1_000_000,
                          max_snapshots: int = 8,
                          reimpose_freq: int | None = None) -> EvolutionState:
    """Iterate sweeps until the binding energy stops changing.

    Renormalizes every sweep, checks the convergence metric every
    ``check_freq`` sweeps (stopping when the relative change drops below
    ``tol``), stores a snapshot every ``snap_freq`` sweeps (default
    10*check_freq, capped at ``max_snapshots``) and re-imposes any
    symmetry constraints every ``reimpose_freq`` sweeps (default
    check_freq). Returns the state flagged unconverged when ``max_steps``
    runs out.
    """
    from .states import impose_inplace  # deferred: states sits above evolve

    spec = initial.spec
    stab = check_stability(spec)  # violation is the caller's decision; an
    # unstable dtau surfaces as DivergenceError once the energy turns around
    if check_freq < 1:
        raise ConfigError("check_freq must be >= 1")
    if snap_freq is None:
        snap_freq = 10 * check_freq
    if reimpose_freq is None:
        reimpose_freq = check_freq
    constraints = tuple(constraints)
    tracker = ConvergenceTracker(tol)

    work = SweepBuffers(initial.values)
    apply_dirichlet_boundary(Field3D(spec, work.psi), 0.0)
    apply_dirichlet_boundary(Field3D(spec, work.out), 0.0)

    snapshots: list[tuple[float, Field3D]] = []
    checks: list[CheckRecord] = []

    def finish(step_count: int, converged: bool) -> EvolutionState:
        return EvolutionState(psi=Field3D(spec, work.psi), tau=step_count * spec.dtau,
                              step_count=step_count, snapshots=snapshots,
                              checks=checks, converged=converged,
                              constraints=constraints, sweeps_started=step_count)

    for s in range(1, max_steps + 1):
        state_idx = s - 1
        if state_idx > 0 and state_idx % check_freq == 0:
            rec = measure_check(work.psi, grid, spec)
            rec.step = state_idx
            rec.tau = state_idx * spec.dtau
            checks.append(rec)
            verdict = tracker.update(rec.metric)
            if verdict == DIVERGED:
                raise DivergenceError(
                    f"energy rising at step {state_idx} (E={rec.energy:.6g}); "
                    f"dtau={spec.dtau} vs stability limit {stab.limit:.6g}"
                )
            if verdict == CONVERGED:
                return finish(state_idx, True)
        work.sweep(grid, spec.N)
        work.renormalize(spec)
        if constraints and s % reimpose_freq == 0:
            for c in constraints:
                impose_inplace(work.psi, spec.N, c)
        if s % snap_freq == 0 and len(snapshots) < max_snapshots:
            snapshots.append((s * spec.dtau, Field3D(spec, work.psi.copy())))

    return finish(max_steps, False)
