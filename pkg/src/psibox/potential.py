"""Per-site potential grids and the update coefficients derived from them.

Each generator evaluates V on the interior of the padded lattice and
precomputes the update coefficients

    A = (1 - (dtau/2) V) / (1 + (dtau/2) V)
    B = 1 / (1 + (dtau/2) V)

plus the fused stencil factor C = B * dtau / (2 m a^2) that the sweep
kernel consumes. Grids are immutable after construction and safe for
shared concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, SingularCoefficientError
from .lattice import Field3D, LatticeSpec

__all__ = [
    "PotentialGrid",
    "coulomb",
    "harmonic",
    "dodecahedron",
    "dodecahedron_contains",
    "custom",
    "from_file",
    "save_potential",
    "precompute_coefficients",
]

GOLDEN_RATIO = 0.5 * (1.0 + np.sqrt(5.0))

# Outward face normals of the regular dodecahedron whose 20 vertices are
# (±1/φ,±1/φ,±1/φ) and the classes (0,±1/φ²,±1), (±1/φ²,±1,0),
# (±1,0,±1/φ²): the icosahedral directions (0,±1,±φ) up to cyclic
# permutation, with the chirality fixed by the vertex set (each plane
# passes through exactly 5 vertices). Unnormalized, every face plane
# satisfies n·x = φ.
_DODEC_NORMALS = [
    (0.0, s1 * GOLDEN_RATIO, s2)
    for s1 in (1.0, -1.0)
    for s2 in (1.0, -1.0)
] + [
    (s2, 0.0, s1 * GOLDEN_RATIO)
    for s1 in (1.0, -1.0)
    for s2 in (1.0, -1.0)
] + [
    (s1 * GOLDEN_RATIO, s2, 0.0)
    for s1 in (1.0, -1.0)
    for s2 in (1.0, -1.0)
]
_DODEC_OFFSET = GOLDEN_RATIO
_DODEC_BOUNDARY_SLACK = 1e-12  # boundary points count as inside


@dataclass(frozen=True)
class PotentialGrid:
    """Potential values plus precomputed update coefficients.

    v, coef_a, coef_b, coef_c are padded (N+2)^3 arrays; only interior
    entries are meaningful (padding holds V=0, A=B=1). v_inf is the
    potential at spatial infinity; unbounded potentials (divergent V at
    infinity, e.g. the oscillator) carry v_inf = 0 and disable binding
    energies.
    """

    spec: LatticeSpec
    v: np.ndarray
    coef_a: np.ndarray
    coef_b: np.ndarray
    coef_c: np.ndarray
    v_inf: float
    unbounded: bool = False
    name: str = "custom"


def _radii(spec: LatticeSpec) -> np.ndarray:
    """Physical distance of every interior site from the lattice center."""
    offsets = (np.arange(1, spec.N + 1, dtype=np.float64) - spec.center) * spec.a
    dx2 = (offsets ** 2)[:, None, None]
    dy2 = (offsets ** 2)[None, :, None]
    dz2 = (offsets ** 2)[None, None, :]
    return np.sqrt(dx2 + dy2 + dz2)


def _build(spec: LatticeSpec, v_interior: np.ndarray, v_inf: float,
           unbounded: bool, name: str) -> PotentialGrid:
    if not np.all(np.isfinite(v_interior)):
        raise ConfigError(f"{name} potential produced non-finite values; regulate it first")
    ext = spec.extent
    v = np.zeros((ext, ext, ext), dtype=np.float64)
    v[1:-1, 1:-1, 1:-1] = v_interior
    a, b, c = _coefficients(v, spec.dtau, spec)
    return PotentialGrid(spec=spec, v=v, coef_a=a, coef_b=b, coef_c=c,
                         v_inf=float(v_inf), unbounded=unbounded, name=name)


def _coefficients(v: np.ndarray, dtau: float, spec: LatticeSpec):
    denom = 1.0 + 0.5 * dtau * v
    bad = np.argwhere(denom == 0.0)
    if bad.size:
        i, j, k = (int(x) for x in bad[0])
        raise SingularCoefficientError(
            f"1 + (dtau/2) V = 0 at site ({i},{j},{k}) with V={v[i, j, k]}; "
            "the potential must be regulated"
        )
    coef_a = (1.0 - 0.5 * dtau * v) / denom
    coef_b = 1.0 / denom
    coef_c = coef_b * (dtau / (2.0 * spec.m * spec.a * spec.a))
    # padding is never read by the sweep; keep it at the free-particle values
    return coef_a, coef_b, coef_c


def precompute_coefficients(grid: PotentialGrid, dtau: float) -> PotentialGrid:
    """Rebuild A, B and the fused stencil factor for a different dtau."""
    spec = LatticeSpec(grid.spec.N, grid.spec.a, grid.spec.m, dtau)
    a, b, c = _coefficients(grid.v, dtau, spec)
    return PotentialGrid(spec=spec, v=grid.v, coef_a=a, coef_b=b, coef_c=c,
                         v_inf=grid.v_inf, unbounded=grid.unbounded, name=grid.name)


def coulomb(spec: LatticeSpec) -> PotentialGrid:
    """Regulated attractive Coulomb well: V = 0 for r < a, -1/r + 1/a beyond.

    Continuous at r = a; the center sits between sites for even N, so no
    site meets the singularity. V at infinity is 1/a.
    """
    r = _radii(spec)
    v = np.zeros_like(r)
    far = r >= spec.a
    v[far] = -1.0 / r[far] + 1.0 / spec.a
    return _build(spec, v, v_inf=1.0 / spec.a, unbounded=False, name="coulomb")


def harmonic(spec: LatticeSpec) -> PotentialGrid:
    """Isotropic oscillator V = r^2/2 about the lattice center.

    V diverges at infinity, so binding energies are disabled and total
    energies are reported instead.
    """
    r = _radii(spec)
    return _build(spec, 0.5 * r * r, v_inf=0.0, unbounded=True, name="harmonic")


def custom(spec: LatticeSpec, v_interior: np.ndarray, v_inf: float = 0.0,
           unbounded: bool = False) -> PotentialGrid:
    """Grid from an arbitrary real N^3 array of per-site values."""
    v_interior = np.asarray(v_interior, dtype=np.float64)
    if v_interior.shape != (spec.N,) * 3:
        raise ConfigError(
            f"custom potential must be shaped {(spec.N,) * 3}, got {v_interior.shape}")
    return _build(spec, v_interior, v_inf=v_inf, unbounded=unbounded, name="custom")


def dodecahedron_contains(x: float, y: float, z: float) -> bool:
    """Inside test in the mapped [-1, 1]^3 coordinates, boundary inclusive."""
    limit = _DODEC_OFFSET + _DODEC_BOUNDARY_SLACK
    return all(nx * x + ny * y + nz * z <= limit for nx, ny, nz in _DODEC_NORMALS)


def dodecahedron(spec: LatticeSpec, depth: float = -100.0) -> PotentialGrid:
    """Constant ``depth`` well inside a regular dodecahedron, 0 outside.

    Lattice coordinates map the interior to the cube [-1, 1]^3 (site 1 at
    -1, site N at +1 per axis). A point is inside iff its dot product with
    each of the 12 face normals stays below the common face offset;
    boundary points count as inside.
    """
    n = spec.N
    u = (2.0 * np.arange(1, n + 1, dtype=np.float64) - n - 1.0) / (n - 1.0)
    ux = u[:, None, None]
    uy = u[None, :, None]
    uz = u[None, None, :]
    limit = _DODEC_OFFSET + _DODEC_BOUNDARY_SLACK
    inside = np.ones((n, n, n), dtype=bool)
    for nx, ny, nz in _DODEC_NORMALS:
        inside &= (nx * ux + ny * uy + nz * uz) <= limit
    v = np.where(inside, float(depth), 0.0)
    return _build(spec, v, v_inf=0.0, unbounded=False, name="dodecahedron")


def save_potential(grid: PotentialGrid, path) -> None:
    """Write the potential in the shared binary field format (kind tag 1)."""
    from .multires import KIND_POTENTIAL, write_field_file

    write_field_file(path, grid.v, grid.spec, v_inf=grid.v_inf,
                     kind=KIND_POTENTIAL, step_count=0)


def from_file(path, spec: LatticeSpec) -> PotentialGrid:
    """Load a potential grid written by :func:`save_potential`.

    The header must carry the potential kind tag and match spec.N.
    """
    from .multires import KIND_POTENTIAL, read_field_file

    values, header = read_field_file(path)
    if header.kind != KIND_POTENTIAL:
        raise FormatError(f"{path}: not a potential file (kind={header.kind})")
    if header.N != spec.N:
        raise ConfigError(
            f"{path}: holds N={header.N} but the run lattice has N={spec.N}"
        )
    a, b, c = _coefficients(values, spec.dtau, spec)
    return PotentialGrid(spec=spec, v=values, coef_a=a, coef_b=b, coef_c=c,
                         v_inf=header.v_inf, unbounded=False, name="file")
