import numpy as np
import pytest

from psibox import (LatticeSpec, allocate, apply_dirichlet_boundary,
                    fill_random_gaussian, lattice_coords, linear_index)
from psibox.errors import ConfigError
from psibox.lattice import gaussian_plane


def spec_for(n, a=0.5):
    return LatticeSpec(N=n, a=a, m=1.0, dtau=a * a / 4.0)


class TestSpec:
    def test_box_length(self):
        s = LatticeSpec(N=8, a=0.25, m=1.0, dtau=0.01)
        assert s.L == 8 * 0.25
        assert s.extent == 10

    @pytest.mark.parametrize("kwargs", [
        dict(N=3, a=0.5, m=1.0, dtau=0.01),
        dict(N=8, a=0.0, m=1.0, dtau=0.01),
        dict(N=8, a=0.5, m=-1.0, dtau=0.01),
        dict(N=8, a=0.5, m=1.0, dtau=0.0),
    ])
    def test_invariants_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            LatticeSpec(**kwargs)


class TestAllocate:
    @pytest.mark.parametrize("n,extent", [(4, 6), (8, 10), (512, 514)])
    def test_extent(self, n, extent):
        f = allocate(spec_for(n))
        assert f.values.shape == (extent,) * 3
        if n == 4:
            assert f.values.size == 216
        assert not f.values.any()
        del f


class TestRandomFill:
    def test_deterministic(self):
        a = fill_random_gaussian(allocate(spec_for(16)), 123)
        b = fill_random_gaussian(allocate(spec_for(16)), 123)
        assert np.array_equal(a.values, b.values)

    def test_padding_untouched(self):
        f = fill_random_gaussian(allocate(spec_for(8)), 5)
        v = f.values
        assert not v[0].any() and not v[-1].any()
        assert not v[:, 0].any() and not v[:, -1].any()
        assert not v[:, :, 0].any() and not v[:, :, -1].any()

    def test_standard_normal_statistics(self):
        n = 64
        f = fill_random_gaussian(allocate(spec_for(n)), 2024)
        samples = f.interior.ravel()
        assert abs(samples.mean()) < 5.0 / np.sqrt(n ** 3)
        assert abs(samples.std() - 1.0) < 0.02

    def test_disjoint_seeds_differ(self):
        for s1, s2 in ((0, 1), (7, 8), (1000, 2000)):
            a = fill_random_gaussian(allocate(spec_for(8)), s1)
            b = fill_random_gaussian(allocate(spec_for(8)), s2)
            assert not np.array_equal(a.values, b.values)

    def test_plane_stream_is_slab_independent(self):
        # a worker regenerating only its own planes must reproduce the
        # globally generated field bit for bit
        n = 12
        f = fill_random_gaussian(allocate(spec_for(n)), 99)
        for plane in (1, 5, 12):
            expected = f.values[plane, 1:-1, 1:-1]
            assert np.array_equal(gaussian_plane(99, n, plane), expected)


class TestDirichlet:
    def test_value_set_interior_unchanged(self):
        f = fill_random_gaussian(allocate(spec_for(8)), 3)
        interior = f.interior.copy()
        apply_dirichlet_boundary(f, 0.0)
        assert np.array_equal(f.interior, interior)
        assert not f.values[0].any()

    def test_idempotent_and_overwrite(self):
        f = allocate(spec_for(6))
        apply_dirichlet_boundary(f, 1.0)
        assert f.values[0, 0, 0] == 1.0
        once = f.values.copy()
        apply_dirichlet_boundary(f, 1.0)
        assert np.array_equal(f.values, once)
        apply_dirichlet_boundary(f, 0.0)
        assert not f.values.any()

    def test_touches_exactly_the_shell(self):
        n = 6
        f = allocate(spec_for(n))
        apply_dirichlet_boundary(f, 7.5)
        ext = n + 2
        shell = 6 * ext ** 2 - 12 * ext + 8
        assert (f.values == 7.5).sum() == shell


class TestLinearIndex:
    def test_examples(self):
        s = spec_for(4)
        assert linear_index(s, 0, 0, 0) == 0
        assert linear_index(s, 1, 0, 0) == 36
        assert linear_index(s, 5, 5, 5) == 215

    def test_round_trip_all_sites(self):
        s = spec_for(4)
        ext = s.extent
        seen = set()
        for i in range(ext):
            for j in range(ext):
                for k in range(ext):
                    idx = linear_index(s, i, j, k)
                    assert lattice_coords(s, idx) == (i, j, k)
                    seen.add(idx)
        assert seen == set(range(ext ** 3))

    def test_canonical_order_matches_storage(self):
        # the linear index must walk the storage buffer in memory order
        s = spec_for(4)
        f = allocate(s)
        f.values.reshape(-1)[:] = np.arange(s.extent ** 3)
        assert f.values[2, 3, 4] == linear_index(s, 2, 3, 4)

    @pytest.mark.parametrize("site", [(-1, 0, 0), (0, 6, 0), (0, 0, 99)])
    def test_out_of_range(self, site):
        with pytest.raises(IndexError):
            linear_index(spec_for(4), *site)
        with pytest.raises(IndexError):
            lattice_coords(spec_for(4), 216)
