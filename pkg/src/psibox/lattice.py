"""Padded 3d scalar fields on a cubic lattice.

Storage is an (N+2)^3 float64 array. Interior sites live at indices 1..N
per axis; indices 0 and N+1 form the padding shell that carries the
Dirichlet boundary value (or halo data from a neighbor worker under slab
decomposition). The canonical serialization order is x-major,
``((i*(N+2))+j)*(N+2)+k``, which is exactly C order of the storage array;
files and reductions all follow it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .errors import ConfigError

__all__ = [
    "LatticeSpec",
    "Field3D",
    "allocate",
    "fill_random_gaussian",
    "gaussian_plane",
    "apply_dirichlet_boundary",
    "linear_index",
    "lattice_coords",
]

_PHILOX_WORDS_PER_BLOCK = 4
_U53 = 2.0 ** -53


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice geometry and physics parameters (natural units, hbar = 1).

    N sites per axis with spacing a, particle mass m, imaginary-time step
    dtau. The box length L = N*a is derived.
    """

    N: int
    a: float
    m: float = 1.0
    dtau: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 4:
            raise ConfigError(f"N must be an integer >= 4, got {self.N}")
        if not (self.a > 0.0):
            raise ConfigError(f"lattice spacing a must be positive, got {self.a}")
        if not (self.m > 0.0):
            raise ConfigError(f"mass m must be positive, got {self.m}")
        if not (self.dtau > 0.0):
            raise ConfigError(f"imaginary-time step dtau must be positive, got {self.dtau}")

    @property
    def L(self) -> float:
        return self.N * self.a

    @property
    def extent(self) -> int:
        """Storage sites per axis including the padding shell."""
        return self.N + 2

    @property
    def center(self) -> float:
        """Padded coordinate of the lattice center, (N+1)/2 per axis."""
        return 0.5 * (self.N + 1)


@dataclass
class Field3D:
    """Real scalar field on the padded lattice (single-owner mutable)."""

    spec: LatticeSpec
    values: np.ndarray

    def __post_init__(self):
        ext = self.spec.extent
        if self.values.shape != (ext, ext, ext):
            raise ConfigError(
                f"field storage must be {(ext,) * 3}, got {self.values.shape}"
            )
        if self.values.dtype != np.float64:
            raise ConfigError(f"field storage must be float64, got {self.values.dtype}")

    @property
    def interior(self) -> np.ndarray:
        """View of the N^3 interior sites."""
        return self.values[1:-1, 1:-1, 1:-1]

    def copy(self) -> "Field3D":
        return Field3D(self.spec, self.values.copy())


def allocate(spec: LatticeSpec) -> Field3D:
    """Zero-filled padded field for the given lattice."""
    ext = spec.extent
    return Field3D(spec, np.zeros((ext, ext, ext), dtype=np.float64))


def _plane_blocks(n: int) -> int:
    # one 64-bit word per site, padded up to whole Philox blocks so every
    # x-plane starts at a counter boundary (slab workers can skip ahead)
    return (n * n + _PHILOX_WORDS_PER_BLOCK - 1) // _PHILOX_WORDS_PER_BLOCK


def gaussian_plane(seed: int, n: int, plane: int) -> np.ndarray:
    """Standard-normal deviates for one interior x-plane (1-based index).

    Philox4x64 keyed by ``seed``; plane ``i`` draws from counter offset
    (i-1)*ceil(N^2/4) blocks, one word per site in canonical (j,k) order,
    mapped through the inverse normal CDF. Identical output regardless of
    which worker generates the plane.
    """
    if not 1 <= plane <= n:
        raise ConfigError(f"plane index {plane} outside 1..{n}")
    bg = Philox(key=int(seed))
    if plane > 1:
        bg.advance((plane - 1) * _plane_blocks(n))
    raw = bg.random_raw(n * n)
    # (raw >> 11 + 0.5) * 2^-53 is strictly inside (0, 1); ndtri stays finite
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
    return ndtri(u).reshape(n, n)


def fill_random_gaussian(field: Field3D, seed: int) -> Field3D:
    """Fill every interior site with an independent N(0, 1) draw.

    Deterministic in (spec, seed); padding untouched.
    """
    n = field.spec.N
    for i in range(1, n + 1):
        field.values[i, 1:-1, 1:-1] = gaussian_plane(seed, n, i)
    return field


def apply_dirichlet_boundary(field: Field3D, value: float = 0.0) -> Field3D:
    """Set every padding site to ``value``; interior unchanged."""
    v = field.values
    v[0, :, :] = value
    v[-1, :, :] = value
    v[:, 0, :] = value
    v[:, -1, :] = value
    v[:, :, 0] = value
    v[:, :, -1] = value
    return field


def linear_index(spec: LatticeSpec, i: int, j: int, k: int) -> int:
    """Canonical x-major index of a padded-lattice site."""
    ext = spec.extent
    if not (0 <= i < ext and 0 <= j < ext and 0 <= k < ext):
        raise IndexError(f"site ({i},{j},{k}) outside padded lattice 0..{ext - 1}")
    return (i * ext + j) * ext + k


def lattice_coords(spec: LatticeSpec, index: int) -> tuple[int, int, int]:
    """Inverse of :func:`linear_index`."""
    ext = spec.extent
    if not 0 <= index < ext ** 3:
        raise IndexError(f"linear index {index} outside 0..{ext ** 3 - 1}")
    i, rem = divmod(index, ext * ext)
    j, k = divmod(rem, ext)
    return i, j, k
