"""Energy functional, binding energy, norm and RMS radius of a field.

All reductions go through per-x-plane partial sums accumulated in a fixed
interior order, combined by a single np.sum over the N-vector of plane
sums. Slab workers compute the same plane sums for the planes they own
and rank 0 concatenates them in ascending rank order, so every observable
is bit-identical for any worker count.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ZeroNormError
from .lattice import Field3D, LatticeSpec
from .potential import PotentialGrid

__all__ = ["energy", "binding_energy", "norm2", "rms_radius"]


def kinetic_factor(spec: LatticeSpec) -> float:
    return 1.0 / (2.0 * spec.m * spec.a * spec.a)


def cell_volume(spec: LatticeSpec) -> float:
    """a^3 with one fixed evaluation order; every norm uses this helper so
    serial and slab paths scale by bit-identical factors."""
    return spec.a * spec.a * spec.a


def combine_plane_sums(plane_sums: np.ndarray) -> float:
    """The one blessed way to turn plane sums into a scalar."""
    return float(np.sum(plane_sums))


def norm_planes(values: np.ndarray, x_lo: int, x_hi: int) -> np.ndarray:
    out = np.empty(x_hi - x_lo + 1, dtype=np.float64)
    kernels.norm_plane_sums(values, x_lo, x_hi, out)
    return out


def energy_planes(values: np.ndarray, v: np.ndarray, kin: float,
                  x_lo: int, x_hi: int) -> tuple[np.ndarray, np.ndarray]:
    num = np.empty(x_hi - x_lo + 1, dtype=np.float64)
    den = np.empty_like(num)
    kernels.energy_plane_sums(values, v, kin, x_lo, x_hi, num, den)
    return num, den


def radius2_planes(values: np.ndarray, spec: LatticeSpec, x_global0: int,
                   x_lo: int, x_hi: int) -> tuple[np.ndarray, np.ndarray]:
    r2 = np.empty(x_hi - x_lo + 1, dtype=np.float64)
    den = np.empty_like(r2)
    kernels.radius2_plane_sums(values, x_global0, spec.center, spec.a,
                               x_lo, x_hi, r2, den)
    return r2, den


def dot_planes(v1: np.ndarray, v2: np.ndarray, x_lo: int, x_hi: int) -> np.ndarray:
    out = np.empty(x_hi - x_lo + 1, dtype=np.float64)
    kernels.dot_plane_sums(v1, v2, x_lo, x_hi, out)
    return out


def norm2(psi: Field3D) -> float:
    """Sum over interior sites of psi^2 * a^3 in canonical order."""
    spec = psi.spec
    total = combine_plane_sums(norm_planes(psi.values, 1, spec.N))
    return total * cell_volume(spec)


def energy(psi: Field3D, grid: PotentialGrid) -> float:
    """Rayleigh quotient of the discrete Hamiltonian, scale invariant."""
    spec = psi.spec
    num, den = energy_planes(psi.values, grid.v, kinetic_factor(spec), 1, spec.N)
    den_total = combine_plane_sums(den)
    if den_total == 0.0 or not np.isfinite(den_total):
        raise ZeroNormError("energy of a zero-norm field is undefined")
    return combine_plane_sums(num) / den_total


def binding_energy(psi: Field3D, grid: PotentialGrid) -> float | None:
    """E - V_inf for potentials with a finite limit, None for unbounded ones."""
    if grid.unbounded:
        return None
    return energy(psi, grid) - grid.v_inf


def rms_radius(psi: Field3D) -> float:
    """Root-mean-squared distance from the lattice center, in length units."""
    spec = psi.spec
    r2, den = radius2_planes(psi.values, spec, 1, 1, spec.N)
    den_total = combine_plane_sums(den)
    if den_total == 0.0 or not np.isfinite(den_total):
        raise ZeroNormError("RMS radius of a zero-norm field is undefined")
    return float(np.sqrt(combine_plane_sums(r2) / den_total))


def overlap(psi1: Field3D, psi2: Field3D) -> float:
    """Inner product including the a^3 measure."""
    spec = psi1.spec
    total = combine_plane_sums(dot_planes(psi1.values, psi2.values, 1, spec.N))
    return total * cell_volume(spec)
