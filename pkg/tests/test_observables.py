import numpy as np
import pytest

from oracles import (dense_hamiltonian, field_to_vector, lowest_eigenpairs,
                     oracle_rms_radius, site_index, vector_to_field)
from psibox import (LatticeSpec, allocate, binding_energy, coulomb, energy,
                    fill_random_gaussian, harmonic, norm2, rms_radius)
from psibox.errors import ZeroNormError
from psibox.potential import custom


def box_spec(n, a=1.0):
    return LatticeSpec(N=n, a=a, m=1.0, dtau=a * a / 4.0)


class TestEnergy:
    def test_single_site_kinetic_plus_potential(self):
        n = 5
        spec = box_spec(n)
        v = np.zeros((n, n, n))
        v[2, 2, 2] = 1.7
        grid = custom(spec, v)
        f = allocate(spec)
        f.values[3, 3, 3] = 1.0  # interior site (2,2,2) in 0-based terms
        assert energy(f, grid) == pytest.approx(3.0 + 1.7, rel=1e-14)

    def test_dense_eigenvector_gives_eigenvalue(self):
        rng = np.random.default_rng(12)
        n = 6
        spec = box_spec(n, a=0.8)
        v = rng.uniform(-1.5, 1.5, size=(n, n, n))
        grid = custom(spec, v)
        vals, vecs = lowest_eigenpairs(dense_hamiltonian(spec, v), 3)
        for idx in range(3):
            f = vector_to_field(spec, vecs[:, idx])
            assert energy(f, grid) == pytest.approx(vals[idx], abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        n = 6
        spec = box_spec(n, a=0.5)
        grid = custom(spec, rng.uniform(-1, 1, size=(n, n, n)))
        f = vector_to_field(spec, rng.standard_normal(n ** 3))
        e = energy(f, grid)
        f5 = vector_to_field(spec, 5.0 * field_to_vector(f))
        assert abs(energy(f5, grid) - e) <= 1e-13 * abs(e)
        for c in (-1.0, 3.0, 1e-8):
            fc = vector_to_field(spec, c * field_to_vector(f))
            assert energy(fc, grid) == pytest.approx(e, rel=1e-12)
            assert rms_radius(fc) == pytest.approx(rms_radius(f), rel=1e-12)

    def test_rayleigh_bound_on_small_instances(self):
        rng = np.random.default_rng(44)
        for n, a in ((4, 1.0), (6, 0.7), (8, 0.5)):
            spec = box_spec(n, a)
            v = rng.uniform(-2, 2, size=(n, n, n))
            grid = custom(spec, v)
            lam_min = lowest_eigenpairs(dense_hamiltonian(spec, v), 1)[0][0]
            for _ in range(3):
                f = vector_to_field(spec, rng.standard_normal(n ** 3))
                assert energy(f, grid) >= lam_min - 1e-12

    def test_deterministic_repeatable(self):
        rng = np.random.default_rng(9)
        n = 6
        spec = box_spec(n)
        grid = custom(spec, rng.uniform(-1, 1, size=(n, n, n)))
        f = vector_to_field(spec, rng.standard_normal(n ** 3))
        assert energy(f, grid) == energy(f, grid)

    def test_zero_field_rejected(self):
        spec = box_spec(4)
        grid = custom(spec, np.zeros((4, 4, 4)))
        with pytest.raises(ZeroNormError):
            energy(allocate(spec), grid)


class TestBindingEnergy:
    def test_coulomb_offset(self):
        spec = LatticeSpec(N=8, a=0.5, m=1.0, dtau=0.05)
        grid = coulomb(spec)
        f = fill_random_gaussian(allocate(spec), 6)
        e = energy(f, grid)
        assert binding_energy(f, grid) == pytest.approx(e - 1.0 / spec.a, rel=1e-12)

    def test_zero_potential_binding_equals_energy(self):
        spec = box_spec(6)
        grid = custom(spec, np.zeros((6, 6, 6)))
        f = fill_random_gaussian(allocate(spec), 6)
        assert binding_energy(f, grid) == energy(f, grid)

    def test_unbounded_potential_has_no_binding(self):
        spec = box_spec(6, a=0.5)
        f = fill_random_gaussian(allocate(spec), 6)
        assert binding_energy(f, harmonic(spec)) is None


class TestNorm:
    def test_zero_field(self):
        assert norm2(allocate(box_spec(4))) == 0.0

    def test_single_site(self):
        f = allocate(box_spec(5, a=1.0))
        f.values[2, 3, 4] = 2.0
        assert norm2(f) == 4.0

    def test_normalized_field(self):
        from psibox import renormalize

        f = fill_random_gaussian(allocate(box_spec(8, a=0.3)), 2)
        out, _ = renormalize(f)
        assert norm2(out) == pytest.approx(1.0, abs=1e-13)


class TestRmsRadius:
    def test_single_site_exact_distance(self):
        n = 6
        spec = box_spec(n, a=0.5)
        f = allocate(spec)
        f.values[2, 3, 5] = 1.3
        c = spec.center
        r0 = np.sqrt(((2 - c) ** 2 + (3 - c) ** 2 + (5 - c) ** 2)) * spec.a
        assert rms_radius(f) == pytest.approx(r0, rel=1e-14)

    def test_point_symmetric_pair(self):
        n = 6
        spec = box_spec(n, a=0.5)
        f = allocate(spec)
        f.values[2, 2, 2] = 0.8
        f.values[5, 5, 5] = -0.8  # reflection through the center
        c = spec.center
        r0 = np.sqrt(3 * (2 - c) ** 2) * spec.a
        assert rms_radius(f) == pytest.approx(r0, rel=1e-14)

    def test_box_ground_state_matches_oracle_moment(self):
        # separable box: the 3d ground state is the tensor product of the
        # dense 1d ground modes
        n = 16
        spec = box_spec(n, a=0.5)
        hop = 1.0 / (2.0 * spec.m * spec.a * spec.a)
        h1 = np.zeros((n, n))
        for i in range(n):
            h1[i, i] = 2.0 * hop
            if i:
                h1[i, i - 1] = h1[i - 1, i] = -hop
        _, vecs = np.linalg.eigh(h1)
        g = vecs[:, 0]
        vec3 = np.einsum("i,j,k->ijk", g, g, g).reshape(-1)
        f = vector_to_field(spec, vec3)
        assert rms_radius(f) == pytest.approx(oracle_rms_radius(spec, vec3),
                                              rel=1e-10)

    def test_zero_field_rejected(self):
        with pytest.raises(ZeroNormError):
            rms_radius(allocate(box_spec(4)))
