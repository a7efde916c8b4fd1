import numpy as np
import pytest

from oracles import dense_hamiltonian, lowest_eigenpairs, vector_to_field
from psibox import (LatticeSpec, allocate, energy, evolve_to_convergence,
                    fill_random_gaussian, harmonic, impose, norm2, project_out,
                    renormalize, symmetry_excited_run)
from psibox.errors import (ConfigError, DegenerateSnapshotError,
                           ExtractionError)
from psibox.observables import overlap
from psibox.potential import custom
from psibox.states import SymmetryConstraint, extract_excited, impose_inplace


def box_spec(n, a=1.0, dtau=None):
    return LatticeSpec(N=n, a=a, m=1.0, dtau=dtau if dtau else a * a / 4.0)


def reflected(values, axis):
    # mirror the interior about the axis mid-plane, padding untouched
    sl = [slice(1, -1)] * 3
    out = values.copy()
    flipped = [slice(1, -1)] * 3
    flipped[axis] = slice(-2, 0, -1)
    out[tuple(sl)] = values[tuple(flipped)]
    return out


class TestConstraint:
    def test_tokens(self):
        c = SymmetryConstraint.from_token("Az")
        assert c.axis == "z" and c.parity == "antisymmetric" and c.sign == -1.0
        c = SymmetryConstraint.from_token("Sx")
        assert c.axis == "x" and c.parity == "symmetric" and c.sign == 1.0

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            SymmetryConstraint("w", "symmetric")
        with pytest.raises(ConfigError):
            SymmetryConstraint.from_token("Qz")


class TestImpose:
    def test_z_column_copy_semantics(self):
        spec = box_spec(4)
        f = allocate(spec)
        col = np.array([1.5, -2.0, 0.25, 4.0])
        f.values[2, 3, 1:5] = col
        out = impose(f, SymmetryConstraint("z", "antisymmetric"))
        np.testing.assert_array_equal(out.values[2, 3, 1:5],
                                      [1.5, -2.0, 2.0, -1.5])

    def test_symmetric_fixed_point(self):
        spec = box_spec(6)
        f = fill_random_gaussian(allocate(spec), 3)
        c = SymmetryConstraint("y", "symmetric")
        once = impose(f, c)
        assert np.array_equal(impose(once, c).values, once.values)
        # an already-symmetric field passes through unchanged
        again = impose(once, c)
        assert np.array_equal(again.values, once.values)

    def test_projector_idempotent_bitwise(self):
        spec = box_spec(7)
        for axis in "xyz":
            for parity in ("symmetric", "antisymmetric"):
                c = SymmetryConstraint(axis, parity)
                f = fill_random_gaussian(allocate(spec), 11)
                once = impose(f, c)
                twice = impose(once, c)
                assert np.array_equal(once.values, twice.values)

    def test_exact_reflection_parity(self):
        spec = box_spec(8)
        for axis_name, axis in (("x", 0), ("y", 1), ("z", 2)):
            f = fill_random_gaussian(allocate(spec), 5)
            out = impose(f, SymmetryConstraint(axis_name, "antisymmetric"))
            assert np.array_equal(out.values, -reflected(out.values, axis))

    def test_odd_lattice_central_plane(self):
        spec = box_spec(5)
        f = fill_random_gaussian(allocate(spec), 2)
        anti = impose(f, SymmetryConstraint("x", "antisymmetric"))
        assert not anti.values[3, 1:-1, 1:-1].any()  # central plane zeroed
        sym = impose(f, SymmetryConstraint("x", "symmetric"))
        assert np.array_equal(sym.values[3], f.values[3])  # untouched

    def test_antisym_then_sym_copy_composition(self):
        # copy semantics: the lower half survives, so the composition is
        # the symmetrized lower half, not the zero field
        spec = box_spec(4)
        f = fill_random_gaussian(allocate(spec), 9)
        lower = f.values[:, :, 1:3].copy()
        out = impose(impose(f, SymmetryConstraint("z", "antisymmetric")),
                     SymmetryConstraint("z", "symmetric"))
        assert np.array_equal(out.values[:, :, 1:3], lower)
        assert np.array_equal(out.values[:, :, 3], lower[:, :, 1])
        assert np.array_equal(out.values[:, :, 4], lower[:, :, 0])


class TestParityPreservation:
    def test_evolution_preserves_imposed_parity(self):
        n = 8
        spec = box_spec(n, a=0.6)
        off = (np.arange(1, n + 1) - spec.center) * spec.a
        r2 = (off[:, None, None] ** 2 + off[None, :, None] ** 2
              + off[None, None, :] ** 2)
        grid = custom(spec, 0.5 * r2)
        init = fill_random_gaussian(allocate(spec), 21)
        impose_inplace(init.values, n, SymmetryConstraint("z", "antisymmetric"))
        # no re-imposition for 100 sweeps: parity must survive to roundoff
        state = evolve_to_convergence(init, grid, tol=1e-30, check_freq=1000,
                                      max_steps=100)
        v = state.psi.values
        asym = np.abs(v + reflected(v, 2)).max()
        assert asym < 1e-12

    def test_reimposition_is_exact(self):
        spec = box_spec(6)
        f = fill_random_gaussian(allocate(spec), 4)
        c = SymmetryConstraint("x", "antisymmetric")
        impose_inplace(f.values, 6, c)
        assert np.array_equal(f.values, -reflected(f.values, 0))


class TestProjectOut:
    def make_basis(self, spec, seed):
        b, _ = renormalize(fill_random_gaussian(allocate(spec), seed))
        return b

    def test_orthogonal_snap_passes_through(self):
        spec = box_spec(6, a=0.5)
        b = self.make_basis(spec, 1)
        snap = fill_random_gaussian(allocate(spec), 2)
        c = overlap(snap, b)
        snap.values -= c * b.values  # make it orthogonal first
        out = project_out(snap, [b])
        np.testing.assert_allclose(out.values, snap.values, rtol=0,
                                   atol=1e-13 * np.abs(snap.values).max())

    def test_projecting_basis_itself_degenerates(self):
        spec = box_spec(6, a=0.5)
        b = self.make_basis(spec, 1)
        with pytest.raises(DegenerateSnapshotError):
            project_out(b.copy(), [b])

    def test_two_state_toy(self):
        # psi0 = e1, snap = (e1 + e2)/sqrt(2): the residual lies along e2
        spec = box_spec(4, a=1.0)
        psi0 = allocate(spec)
        psi0.values[1, 1, 1] = 1.0
        snap = allocate(spec)
        snap.values[1, 1, 1] = 1.0 / np.sqrt(2.0)
        snap.values[2, 1, 1] = 1.0 / np.sqrt(2.0)
        residual = project_out(snap, [psi0])
        out, _ = renormalize(residual)
        assert out.values[2, 1, 1] == pytest.approx(1.0, rel=1e-12)
        assert abs(out.values[1, 1, 1]) < 1e-12

    def test_residual_orthogonality(self):
        spec = box_spec(8, a=0.5)
        b1 = self.make_basis(spec, 1)
        b2 = project_out(self.make_basis(spec, 2), [b1])
        b2, _ = renormalize(b2)
        snap = fill_random_gaussian(allocate(spec), 3)
        out = project_out(snap, [b1, b2])
        for b in (b1, b2):
            assert abs(overlap(out, b)) < 1e-10 * np.sqrt(norm2(out))

    def test_unnormalized_basis_rejected(self):
        spec = box_spec(6, a=0.5)
        bad = fill_random_gaussian(allocate(spec), 1)
        snap = fill_random_gaussian(allocate(spec), 2)
        with pytest.raises(ConfigError):
            project_out(snap, [bad])


class TestExtraction:
    def converged_box(self, n=8, seed=3):
        spec = box_spec(n, a=1.0)
        grid = custom(spec, np.zeros((n, n, n)))
        state = evolve_to_convergence(
            fill_random_gaussian(allocate(spec), seed), grid,
            tol=1e-10, check_freq=25, snap_freq=50, max_steps=30000,
            max_snapshots=8)
        assert state.converged
        return spec, grid, state

    def test_count_zero_is_empty(self):
        spec, grid, state = self.converged_box()
        assert extract_excited(state, grid, 0) == []

    def test_first_excited_matches_dense_oracle(self):
        spec, grid, state = self.converged_box()
        vals, _ = lowest_eigenpairs(
            dense_hamiltonian(spec, np.zeros((spec.N,) * 3)), 2)
        results = extract_excited(state, grid, 1, polish_steps=1500,
                                  check_freq=50)
        (psi1, e1), = results
        assert e1 == pytest.approx(vals[1], abs=1e-5)
        assert abs(overlap(psi1, state.psi)) < 1e-10

    def test_two_levels_increasing_and_orthogonal(self):
        spec, grid, state = self.converged_box()
        results = extract_excited(state, grid, 2, polish_steps=1500,
                                  check_freq=50)
        (psi1, e1), (psi2, e2) = results
        assert e2 >= e1 - 1e-8
        assert abs(overlap(psi1, psi2)) < 1e-10
        assert abs(overlap(psi2, state.psi)) < 1e-10

    def test_insufficient_snapshots(self):
        spec = box_spec(6)
        grid = custom(spec, np.zeros((6, 6, 6)))
        state = evolve_to_convergence(
            fill_random_gaussian(allocate(spec), 1), grid,
            tol=1e-9, check_freq=25, snap_freq=10 ** 6, max_steps=30000)
        with pytest.raises(ExtractionError, match="snapshot"):
            extract_excited(state, grid, 1)

    def test_unconverged_state_rejected(self):
        spec = box_spec(6)
        grid = custom(spec, np.zeros((6, 6, 6)))
        state = evolve_to_convergence(
            fill_random_gaussian(allocate(spec), 1), grid,
            tol=1e-14, check_freq=10, snap_freq=10, max_steps=30)
        with pytest.raises(ExtractionError, match="converged"):
            extract_excited(state, grid, 1)


class TestSymmetrySectorRun:
    def test_fully_symmetric_sector_equals_ground(self):
        n = 16
        spec = box_spec(n, a=0.5)
        grid = harmonic(spec)
        constraints = [SymmetryConstraint(ax, "symmetric") for ax in "xyz"]
        psi_s, e_s, _ = symmetry_excited_run(grid, constraints, seed=5,
                                             tol=1e-8, check_freq=50,
                                             max_steps=50000)
        free = evolve_to_convergence(
            fill_random_gaussian(allocate(spec), 5), grid,
            tol=1e-8, check_freq=50, max_steps=50000)
        assert e_s == pytest.approx(free.energy, rel=1e-5)

    def test_antisymmetric_sector_matches_dense_oracle(self):
        n = 8
        spec = box_spec(n, a=1.0)
        grid = custom(spec, np.zeros((n, n, n)))
        vals, _ = lowest_eigenpairs(
            dense_hamiltonian(spec, np.zeros((n,) * 3)), 2)
        psi1, e1, state = symmetry_excited_run(
            grid, [SymmetryConstraint("z", "antisymmetric")], seed=8,
            tol=1e-10, check_freq=25, max_steps=30000)
        assert e1 == pytest.approx(vals[1], abs=1e-5)
        v = state.psi.values
        asym = np.abs(v + reflected(v, 2)).max()
        assert asym < 1e-12
