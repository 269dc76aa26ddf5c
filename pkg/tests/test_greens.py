import numpy as np
import pytest

from kvqa.aim import (
    AimModel,
    OracleLanczosEngine,
    dense_hamiltonian,
    dense_moments,
    exact_diagonalize,
    exact_gf,
    random_aim,
)
from kvqa.greens import (
    EnergyGrid,
    GridError,
    GreensFunction,
    MomentTruncationWarning,
    assemble_zero_t_gf,
    continued_fraction,
    dos,
    moments_from_tridiagonal,
    tridiagonal_matrix,
)
from kvqa.krylov import LanczosCoefficients
from kvqa.solvers import finite_t_gf_oracle


class TestEnergyGrid:
    def test_matsubara_points(self):
        g = EnergyGrid.matsubara(50.0, 4)
        want = 1j * (2 * np.arange(4) + 1) * np.pi / 50.0
        assert np.allclose(g.points, want)

    def test_real_axis_needs_broadening(self):
        with pytest.raises(GridError):
            EnergyGrid.real_axis(-1, 1, 11, 0.0)


class TestContinuedFraction:
    def test_depth_one(self):
        coeffs = LanczosCoefficients([2.5], [], "b_zero")
        z = 1.0 + 0.3j
        assert abs(continued_fraction(z, coeffs) - 1 / (z - 2.5)) < 1e-15

    def test_two_level(self):
        coeffs = LanczosCoefficients([0.0, 0.0], [1.0], "b_zero")
        z = 0.7 + 0.2j
        assert abs(continued_fraction(z, coeffs) - z / (z * z - 1)) < 1e-14

    def test_matches_tridiagonal_resolvent_all_depths(self):
        rng = np.random.default_rng(1)
        for depth in range(1, 21):
            a = rng.standard_normal(depth + 1)
            b = np.abs(rng.standard_normal(depth)) + 0.05
            coeffs = LanczosCoefficients(a, b, "max_n")
            t = tridiagonal_matrix(coeffs)
            zs = rng.uniform(-4, 4, 50) + 1j * np.sign(rng.standard_normal(50)) \
                * np.exp(rng.uniform(np.log(0.01), np.log(3), 50))
            g = continued_fraction(zs, coeffs)
            for z, gv in zip(zs, g):
                e0 = np.zeros(depth + 1)
                e0[0] = 1.0
                want = np.linalg.solve(z * np.eye(depth + 1) - t, e0)[0]
                assert abs(gv - want) <= 1e-10 * max(1.0, abs(want))


class TestAssembly:
    def test_occupied_level(self):
        m = AimModel(n_imp=1, n_bath=0, mu=-1.0, U=0.0)
        h = dense_hamiltonian(m)
        dec = exact_diagonalize(m)
        grid = EnergyGrid.matsubara(30.0, 20)
        eng = OracleLanczosEngine(h, dec.ground_state, 1)
        gf = assemble_zero_t_gf(eng, dec.ground_energy, 0, 0, grid)
        assert np.abs(gf.values - 1 / (grid.points + 1.0)).max() < 1e-10

    def test_bonding_antibonding_weights(self):
        m = AimModel(n_imp=1, n_bath=1, mu=0.0, U=0.0, V=[1.0], eps=[0.0])
        h = dense_hamiltonian(m)
        dec = exact_diagonalize(m)
        grid = EnergyGrid.matsubara(30.0, 20)
        eng = OracleLanczosEngine(h, dec.ground_state, 2)
        gf = assemble_zero_t_gf(eng, dec.ground_energy, 0, 0, grid)
        z = grid.points
        want = 0.5 / (z - 1.0) + 0.5 / (z + 1.0)
        assert np.abs(gf.values - want).max() < 1e-10

    @pytest.mark.parametrize("seed", [0, 5, 9])
    def test_matches_dense_resolvent(self, seed):
        model = random_aim(seed)
        h = dense_hamiltonian(model)
        dec = exact_diagonalize(model)
        grid = EnergyGrid.matsubara(50.0, 100)
        eng = OracleLanczosEngine(h, dec.ground_state, model.n_sites)
        gf = assemble_zero_t_gf(eng, dec.ground_energy, 0, 0, grid)
        ref = exact_gf(model, grid, decomposition=dec)
        rel = np.abs(gf.values - ref.values) / np.abs(ref.values)
        assert rel.max() <= 1e-6

    def test_matsubara_reflection_symmetry(self):
        model = random_aim(2)
        h = dense_hamiltonian(model)
        dec = exact_diagonalize(model)
        grid = EnergyGrid.matsubara(50.0, 40)
        eng = OracleLanczosEngine(h, dec.ground_state, model.n_sites)
        gf = assemble_zero_t_gf(eng, dec.ground_energy, 0, 0, grid)
        neg = np.zeros_like(gf.values)
        for b in gf.branches:
            from kvqa.greens import branch_values
            neg += branch_values(b, -grid.points)
        assert np.abs(np.conj(gf.values) - neg).max() < 1e-12


class TestDos:
    def test_lorentzian(self):
        grid = EnergyGrid.real_axis(-4, 2, 1201, 0.05)
        gf = GreensFunction(grid, 1.0 / (grid.points + 1.0))
        a = dos(gf)
        k = np.argmax(a)
        assert abs(grid.frequencies[k] + 1.0) < 0.01
        assert abs(a[k] - 1 / (np.pi * 0.05)) < 0.2

    def test_sum_rule_wide_grid(self):
        model = random_aim(6)
        grid = EnergyGrid.real_axis(-40, 40, 4001, 0.05)
        gf = exact_gf(model, grid)
        a = dos(gf)
        total = np.trapezoid(a, grid.frequencies)
        assert abs(total - 1.0) < 0.02

    def test_positivity(self):
        model = random_aim(7)
        grid = EnergyGrid.real_axis(-12, 12, 601, 0.05)
        gf = exact_gf(model, grid)
        assert dos(gf).min() >= -1e-10 / np.pi

    def test_matsubara_rejected(self):
        gf = GreensFunction(EnergyGrid.matsubara(10, 5), np.zeros(5, complex))
        with pytest.raises(GridError):
            dos(gf)


class TestFiniteTemperature:
    def test_boltzmann_collapse_to_zero_t(self):
        model = random_aim(12)
        h = dense_hamiltonian(model)
        dec = exact_diagonalize(model)
        grid = EnergyGrid.matsubara(50.0, 30)
        cold = finite_t_gf_oracle(model, 1e4, grid, decomposition=dec)
        eng = OracleLanczosEngine(h, dec.ground_state, model.n_sites)
        zero = assemble_zero_t_gf(eng, dec.ground_energy, 0, 0, grid)
        assert np.abs(cold.values - zero.values).max() < 1e-8

    def test_matches_thermal_trace_oracle(self):
        model = AimModel(n_imp=1, n_bath=1, mu=-1.0, U=3.0, V=[0.8], eps=[0.4])
        grid = EnergyGrid.matsubara(1.0, 25)
        got = finite_t_gf_oracle(model, 1.0, grid)
        want = exact_gf(model, grid, beta=1.0)
        assert np.abs(got.values - want.values).max() < 1e-8

    def test_cutoff_keeps_only_ground_state(self):
        model = random_aim(14)
        h = dense_hamiltonian(model)
        dec = exact_diagonalize(model)
        grid = EnergyGrid.matsubara(50.0, 20)
        only_gs = finite_t_gf_oracle(model, 5.0, grid, omega_b=1.0,
                                     decomposition=dec)
        eng = OracleLanczosEngine(h, dec.ground_state, model.n_sites)
        zero = assemble_zero_t_gf(eng, dec.ground_energy, 0, 0, grid)
        # saturated cutoff keeps only the lowest state, renormalized
        assert np.abs(only_gs.values - zero.values).max() < 1e-10

    def test_monotone_approach_to_zero_t(self):
        model = random_aim(15)
        h = dense_hamiltonian(model)
        dec = exact_diagonalize(model)
        grid = EnergyGrid.matsubara(50.0, 20)
        eng = OracleLanczosEngine(h, dec.ground_state, model.n_sites)
        zero = assemble_zero_t_gf(eng, dec.ground_energy, 0, 0, grid)
        dists = []
        for beta in (5.0, 20.0, 80.0):
            ft = finite_t_gf_oracle(model, beta, grid, decomposition=dec)
            dists.append(np.abs(ft.values - zero.values).max())
        assert dists[0] >= dists[1] >= dists[2]


class TestIterativeMoments:
    def test_pure_pauli_alternation(self):
        from kvqa.ansatz import build_hea
        from kvqa.greens import compute_moments_iterative
        from kvqa.pauli import PauliSum, PauliTerm

        hz = PauliSum([PauliTerm("Z")], 1)
        circ = build_hea(1, 1)
        out = compute_moments_iterative(circ, [np.pi / 2, 0.0], hz, 6, seed=0)
        assert np.allclose(out.mu[::2], 1.0, atol=1e-6)
        assert np.allclose(out.mu[1::2], 0.0, atol=1e-6)

    def test_ground_state_first_moment_is_energy(self):
        from kvqa.ansatz import build_hea, vqe_ground_state, VqeOptions
        from kvqa.greens import compute_moments_iterative
        from kvqa.pauli import fermion_hamiltonian_to_pauli
        from kvqa.solvers import sector_bitstrings

        m = AimModel(n_imp=1, n_bath=1, mu=-2.0, U=4.0, V=[1.0], eps=[0.0])
        h = fermion_hamiltonian_to_pauli(m)
        circ = build_hea(4, 4)
        vqe = vqe_ground_state(h, circ, VqeOptions(
            restarts=6, seed=2, seed_bitstrings=sector_bitstrings(m)))
        out = compute_moments_iterative(circ, vqe.params, h, 1, seed=3)
        assert abs(out.mu[1] - vqe.energy) < 1e-9

    def test_matches_dense_moments_small_model(self):
        from kvqa.ansatz import build_hea, vqe_ground_state, VqeOptions
        from kvqa.greens import compute_moments_iterative
        from kvqa.pauli import fermion_hamiltonian_to_pauli
        from kvqa.solvers import sector_bitstrings

        m = AimModel(n_imp=1, n_bath=1, mu=-2.0, U=4.0, V=[1.0], eps=[0.0])
        h = fermion_hamiltonian_to_pauli(m)
        hd = dense_hamiltonian(m)
        dec = exact_diagonalize(m)
        mu_exact = dense_moments(hd, dec.ground_state, 8)
        circ = build_hea(4, 4)
        vqe = vqe_ground_state(h, circ, VqeOptions(
            restarts=6, seed=5, seed_bitstrings=sector_bitstrings(m)))
        out = compute_moments_iterative(circ, vqe.params, h, 8, seed=6)
        rel = np.abs(out.mu[1:] - mu_exact[1:]) / np.abs(mu_exact[1:])
        assert rel.max() < 1e-3
        assert min(out.fit_fidelities) > 1 - 1e-6


class TestMomentsFromTridiagonal:
    def test_low_orders(self):
        coeffs = LanczosCoefficients([1.5, -0.5], [2.0], "b_zero")
        assert moments_from_tridiagonal(coeffs, 0) == 1.0
        assert moments_from_tridiagonal(coeffs, 1) == 1.5
        assert abs(moments_from_tridiagonal(coeffs, 2) - (1.5 ** 2 + 4.0)) < 1e-12

    def test_matches_dense_moments_through_reliable_depth(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((14, 14))
        h = (a + a.T) / 2
        phi = rng.standard_normal(14)
        phi /= np.linalg.norm(phi)
        from kvqa.aim import classical_lanczos

        coeffs = classical_lanczos(h, phi, max_n=8)
        mu = dense_moments(h, phi, 10)
        for n in range(0, 11):
            got = moments_from_tridiagonal(coeffs, n)
            assert abs(got - mu[n]) <= 1e-9 * max(1.0, abs(mu[n])), n

    def test_truncation_warning(self):
        coeffs = LanczosCoefficients([0.0, 0.0], [1.0], "max_n")
        with pytest.warns(MomentTruncationWarning):
            moments_from_tridiagonal(coeffs, 4)
