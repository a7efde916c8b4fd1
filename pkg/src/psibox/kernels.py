"""Numba kernels for the stencil sweep and order-fixed plane reductions.

Every kernel uses one fixed per-site expression ordering so a slab sweep
reproduces the serial sweep bit for bit, and plane sums accumulate in a
fixed (j, k) order so reductions come out identical for any worker count.
fastmath stays off: IEEE evaluation order is part of the contract. All
kernels release the GIL so worker threads overlap.
"""

import numpy as np
from numba import njit

__all__ = [
    "stencil_update",
    "norm_plane_sums",
    "energy_plane_sums",
    "radius2_plane_sums",
    "dot_plane_sums",
]


@njit(cache=True, nogil=True)
def stencil_update(psi, coef_a, coef_c, out, x_lo, x_hi):
    """Apply one update sweep to local planes x_lo..x_hi inclusive.

    out = A*psi + C*(sum of 6 neighbors - 6*psi), with C = B*dtau/(2*m*a^2)
    folded in by the coefficient precompute. Padding is never written.
    """
    n1 = psi.shape[1] - 1
    for i in range(x_lo, x_hi + 1):
        for j in range(1, n1):
            for k in range(1, n1):
                s = (psi[i - 1, j, k] + psi[i + 1, j, k]
                     + psi[i, j - 1, k] + psi[i, j + 1, k]
                     + psi[i, j, k - 1] + psi[i, j, k + 1]
                     - 6.0 * psi[i, j, k])
                out[i, j, k] = coef_a[i, j, k] * psi[i, j, k] + coef_c[i, j, k] * s


@njit(cache=True, nogil=True)
def norm_plane_sums(psi, x_lo, x_hi, out):
    """Per-plane sum of psi^2 over interior (j, k); out[p] = plane x_lo+p."""
    n1 = psi.shape[1] - 1
    for i in range(x_lo, x_hi + 1):
        acc = 0.0
        for j in range(1, n1):
            for k in range(1, n1):
                acc += psi[i, j, k] * psi[i, j, k]
        out[i - x_lo] = acc


@njit(cache=True, nogil=True)
def energy_plane_sums(psi, v, kin, x_lo, x_hi, num_out, den_out):
    """Per-plane sums of psi*(H psi) and psi^2; kin = 1/(2*m*a^2).

    H psi at a site is V*psi - kin*(6-neighbor sum - 6*psi); the neighbor
    sum order matches stencil_update exactly.
    """
    n1 = psi.shape[1] - 1
    for i in range(x_lo, x_hi + 1):
        num = 0.0
        den = 0.0
        for j in range(1, n1):
            for k in range(1, n1):
                s = (psi[i - 1, j, k] + psi[i + 1, j, k]
                     + psi[i, j - 1, k] + psi[i, j + 1, k]
                     + psi[i, j, k - 1] + psi[i, j, k + 1]
                     - 6.0 * psi[i, j, k])
                p = psi[i, j, k]
                h = v[i, j, k] * p - kin * s
                num += p * h
                den += p * p
        num_out[i - x_lo] = num
        den_out[i - x_lo] = den


@njit(cache=True, nogil=True)
def radius2_plane_sums(psi, x_global0, center, a, x_lo, x_hi, r2_out, den_out):
    """Per-plane sums of r^2*psi^2 and psi^2.

    r is measured from the lattice center at padded coordinate (N+1)/2;
    x_global0 maps local plane x_lo to its global padded x index.
    """
    n1 = psi.shape[1] - 1
    for i in range(x_lo, x_hi + 1):
        dx = (x_global0 + (i - x_lo) - center) * a
        dx2 = dx * dx
        r2acc = 0.0
        den = 0.0
        for j in range(1, n1):
            dy = (j - center) * a
            dy2 = dy * dy
            for k in range(1, n1):
                dz = (k - center) * a
                r2 = dx2 + dy2 + dz * dz
                w = psi[i, j, k] * psi[i, j, k]
                r2acc += w * r2
                den += w
        r2_out[i - x_lo] = r2acc
        den_out[i - x_lo] = den


@njit(cache=True, nogil=True)
def dot_plane_sums(psi1, psi2, x_lo, x_hi, out):
    """Per-plane sum of psi1*psi2 over interior (j, k)."""
    n1 = psi1.shape[1] - 1
    for i in range(x_lo, x_hi + 1):
        acc = 0.0
        for j in range(1, n1):
            for k in range(1, n1):
                acc += psi1[i, j, k] * psi2[i, j, k]
        out[i - x_lo] = acc
