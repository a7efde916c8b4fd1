"""Independent dense oracles for small lattices.

Everything here is assembled with explicit site loops and solved with
numpy.linalg, deliberately sharing no code with the package's stencil or
reduction kernels.
"""

import numpy as np

from psibox import Field3D, LatticeSpec, allocate


def site_index(n: int, i: int, j: int, k: int) -> int:
    """0-based interior site index (i, j, k in 0..n-1)."""
    return (i * n + j) * n + k


def dense_hamiltonian(spec: LatticeSpec, v_interior: np.ndarray) -> np.ndarray:
    """H = -(1/2m) discrete Laplacian + V with Dirichlet walls."""
    n = spec.N
    hop = 1.0 / (2.0 * spec.m * spec.a * spec.a)
    dim = n ** 3
    h = np.zeros((dim, dim))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                row = site_index(n, i, j, k)
                h[row, row] = 6.0 * hop + v_interior[i, j, k]
                for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    ii, jj, kk = i + di, j + dj, k + dk
                    if 0 <= ii < n and 0 <= jj < n and 0 <= kk < n:
                        h[row, site_index(n, ii, jj, kk)] = -hop
    return h


def dense_update_operator(spec: LatticeSpec, v_interior: np.ndarray) -> np.ndarray:
    """The affine-free part of one sweep: psi' = U psi with Dirichlet walls."""
    n = spec.N
    dim = n ** 3
    u = np.zeros((dim, dim))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                row = site_index(n, i, j, k)
                v = v_interior[i, j, k]
                denom = 1.0 + 0.5 * spec.dtau * v
                a_coef = (1.0 - 0.5 * spec.dtau * v) / denom
                c_coef = (1.0 / denom) * spec.dtau / (2.0 * spec.m * spec.a * spec.a)
                u[row, row] = a_coef - 6.0 * c_coef
                for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    ii, jj, kk = i + di, j + dj, k + dk
                    if 0 <= ii < n and 0 <= jj < n and 0 <= kk < n:
                        u[row, site_index(n, ii, jj, kk)] = c_coef
    return u


def lowest_eigenpairs(matrix: np.ndarray, count: int):
    """Ascending eigenvalues and eigenvectors of a symmetric dense matrix."""
    vals, vecs = np.linalg.eigh(matrix)
    return vals[:count], vecs[:, :count]


def vector_to_field(spec: LatticeSpec, vec: np.ndarray) -> Field3D:
    f = allocate(spec)
    f.interior[:] = vec.reshape((spec.N,) * 3)
    return f


def field_to_vector(field: Field3D) -> np.ndarray:
    return field.interior.reshape(-1).copy()


def rayleigh(h: np.ndarray, vec: np.ndarray) -> float:
    return float(vec @ (h @ vec) / (vec @ vec))


def oracle_rms_radius(spec: LatticeSpec, vec: np.ndarray) -> float:
    """Moment of the discrete density, assembled with explicit loops."""
    n = spec.N
    num = 0.0
    den = 0.0
    c = 0.5 * (n + 1)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                w = vec[site_index(n, i, j, k)] ** 2
                r2 = (((i + 1) - c) ** 2 + ((j + 1) - c) ** 2
                      + ((k + 1) - c) ** 2) * spec.a ** 2
                num += w * r2
                den += w
    return float(np.sqrt(num / den))
