import numpy as np
import pytest

from kvqa.aim import (
    AimModel,
    apply_fermion_dense,
    classical_lanczos,
    dense_hamiltonian,
    exact_diagonalize,
)
from kvqa.ansatz import build_hea, prepare_state
from kvqa.krylov import (
    KrylovOptions,
    KvqaError,
    LanczosCoefficients,
    compute_b_squared,
    eps0,
    eps1,
    eps2,
    fit_state_to_target,
    krylov_cost,
    run_kvqa,
)
from kvqa.pauli import PauliSum, PauliTerm, fermion_hamiltonian_to_pauli, spin_orbital

HZ = PauliSum([PauliTerm("Z")], 1)


def plus_state_params():
    # Ry(pi/2)|0> = |+> on the single-qubit, one-layer circuit
    return np.array([np.pi / 2, 0.0])


class TestLanczosCoefficients:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            LanczosCoefficients([1.0], [1.0], "max_n")

    def test_positive_b_required(self):
        with pytest.raises(ValueError):
            LanczosCoefficients([0.0, 0.0], [0.0], "max_n")


class TestEpsilons:
    def test_eps1_self_overlap(self):
        c = build_hea(2, 1)
        theta = np.random.default_rng(0).uniform(-1, 1, c.parameter_count)
        assert abs(eps1(c, theta, theta) - 1.0) < 1e-12

    def test_eps1_orthogonal(self):
        c = build_hea(1, 0)
        assert eps1(c, np.array([0.0]), np.array([np.pi])) < 1e-24

    def test_eps2_missing_state(self):
        c = build_hea(1, 0)
        assert eps2(c, np.array([0.2]), None) == 0.0

    def test_eps_matches_overlap_squared(self):
        from kvqa.emulator import overlap

        c = build_hea(3, 2)
        rng = np.random.default_rng(3)
        for _ in range(10):
            ta = rng.uniform(-np.pi, np.pi, c.parameter_count)
            tb = rng.uniform(-np.pi, np.pi, c.parameter_count)
            want = abs(overlap(prepare_state(c, ta), prepare_state(c, tb))) ** 2
            assert abs(eps1(c, ta, tb) - want) < 1e-12

    def test_eps0_definition(self):
        # exact matrix element equal to b_n gives 0; doubling b_n gives 1/4...
        # checked directly against the statevector value
        c = build_hea(1, 1)
        theta = plus_state_params()
        me = 1.0  # |<0|U(0)^dag Z U(pi/2 prep)|0>| = |<0|Z|+>| = 1/sqrt(2)...
        from kvqa.emulator import apply_pauli_sum, overlap

        left = prepare_state(c, np.zeros(2))
        right = prepare_state(c, theta)
        me = abs(overlap(left, apply_pauli_sum(right, HZ)))
        assert abs(eps0(c, np.zeros(2), theta, HZ, me)) < 1e-12
        assert abs(eps0(c, np.zeros(2), theta, HZ, 2 * me) - 0.25) < 1e-12
        # a matrix element twice the requested b_n costs (2 - 1)^2 = 1
        assert abs(eps0(c, np.zeros(2), theta, HZ, me / 2) - 1.0) < 1e-12

    def test_eps0_backends_agree(self):
        m = AimModel(n_imp=1, n_bath=1, mu=-1.0, U=2.0, V=[0.7], eps=[0.3])
        h = fermion_hamiltonian_to_pauli(m)
        c = build_hea(4, 1)
        rng = np.random.default_rng(5)
        ta = rng.uniform(-np.pi, np.pi, c.parameter_count)
        tb = rng.uniform(-np.pi, np.pi, c.parameter_count)
        sv = eps0(c, ta, tb, h, 1.3, backend="statevector")
        ht = eps0(c, ta, tb, h, 1.3, backend="hadamard")
        assert abs(sv - ht) < 1e-10
        # the trotter estimator assumes (near-)orthogonal preparations:
        # flip one qubit of a zero-layer product circuit by pi
        cp = build_hea(4, 0)
        ta2 = rng.uniform(-np.pi, np.pi, 4)
        tb2 = ta2.copy()
        tb2[2] += np.pi
        sv2 = eps0(cp, ta2, tb2, h, 1.3, backend="statevector")
        tr2 = eps0(cp, ta2, tb2, h, 1.3, backend="trotter",
                   dt_list=(0.004, 0.002, 0.001))
        assert abs(np.sqrt(sv2) - np.sqrt(tr2)) < 1e-3

    def test_zero_bn_rejected(self):
        c = build_hea(1, 0)
        with pytest.raises(KvqaError):
            eps0(c, np.zeros(1), np.zeros(1), HZ, 0.0)


class TestKrylovCost:
    def test_exact_next_state_gives_zero(self):
        c = build_hea(1, 1)
        theta0 = plus_state_params()
        # chi_1 = |-> for H=Z from |+>: prepared by Ry(-pi/2)
        theta1 = np.array([-np.pi / 2, 0.0])
        val = krylov_cost(c, theta1, theta0, None, HZ, 1.0)
        assert val < 1e-12

    def test_previous_state_costs_at_least_w1(self):
        c = build_hea(1, 1)
        theta0 = plus_state_params()
        val = krylov_cost(c, theta0, theta0, None, HZ, 1.0, weights=(1.0, 2.5, 1.0))
        assert val >= 2.5

    def test_weights_must_be_positive(self):
        c = build_hea(1, 0)
        with pytest.raises(ValueError):
            krylov_cost(c, np.zeros(1), np.zeros(1), None, HZ, 1.0,
                        weights=(1.0, 0.0, 1.0))


class TestComputeBSquared:
    def test_plus_state(self):
        c = build_hea(1, 1)
        assert abs(compute_b_squared(c, plus_state_params(), HZ, 0.0, 0.0) - 1.0) < 1e-12

    def test_eigenstate_terminates(self):
        c = build_hea(1, 1)
        assert abs(compute_b_squared(c, np.zeros(2), HZ, 1.0, 0.0)) < 1e-12

    def test_matches_dense(self):
        m = AimModel(n_imp=1, n_bath=1, mu=-2.0, U=4.0, V=[1.0], eps=[0.0])
        h = fermion_hamiltonian_to_pauli(m)
        hd = dense_hamiltonian(m)
        c = build_hea(4, 2)
        rng = np.random.default_rng(9)
        theta = rng.uniform(-np.pi, np.pi, c.parameter_count)
        psi = prepare_state(c, theta).amplitudes
        a_prev = np.real(np.vdot(psi, hd @ psi))
        want = np.real(np.vdot(psi, hd @ hd @ psi)) - a_prev ** 2
        got = compute_b_squared(c, theta, h, a_prev, 0.0)
        assert abs(got - want) < 1e-8


class TestRunKvqa:
    def test_two_dim_krylov_space(self):
        c = build_hea(1, 1)
        out = run_kvqa(c, plus_state_params(), HZ, max_n=5,
                       opts=KrylovOptions(seed=0))
        assert np.allclose(out.a, [0.0, 0.0], atol=1e-6)
        assert np.allclose(out.b, [1.0], atol=1e-6)
        assert out.terminated_reason == "b_zero"
        assert out.residuals.shape == (1, 3)
        assert out.residuals.max() < 1e-8

    def test_eigenstate_start(self):
        c = build_hea(1, 1)
        out = run_kvqa(c, np.zeros(2), HZ, max_n=5, opts=KrylovOptions(seed=0))
        assert np.allclose(out.a, [1.0], atol=1e-10)
        assert out.b.size == 0
        assert out.terminated_reason == "b_zero"

    def test_matches_classical_lanczos_two_site(self):
        m = AimModel(n_imp=1, n_bath=1, mu=-2.0, U=4.0, V=[1.0], eps=[0.0])
        h = fermion_hamiltonian_to_pauli(m)
        hd = dense_hamiltonian(m)
        dec = exact_diagonalize(m)
        phi = apply_fermion_dense(dec.ground_state, spin_orbital(0, 0, 2), True)
        phi /= np.linalg.norm(phi)
        ref = classical_lanczos(hd, phi)
        c = build_hea(4, 4)
        fit = fit_state_to_target(c, phi, seed=1)
        assert fit.fidelity > 1 - 1e-9
        out = run_kvqa(c, fit.params, h, max_n=10, opts=KrylovOptions(seed=2),
                       krylov_dim=2)
        assert out.terminated_reason == "krylov_dim"
        assert np.abs(out.a - ref.a).max() < 1e-3
        assert np.abs(out.b - ref.b).max() < 1e-3
        assert out.residuals.max() <= 1e-6

    def test_krylov_dim_one_returns_immediately(self):
        c = build_hea(1, 0)
        out = run_kvqa(c, np.array([0.3]), HZ, max_n=5,
                       opts=KrylovOptions(seed=0), krylov_dim=1)
        assert out.terminated_reason == "krylov_dim"
        assert out.b.size == 0

    def test_steps_expose_residuals(self):
        c = build_hea(1, 1)
        out = run_kvqa(c, plus_state_params(), HZ, max_n=3,
                       opts=KrylovOptions(seed=1))
        assert len(out.steps) == 1
        assert out.steps[0].cost_value >= 0
        assert out.steps[0].b_n > 0


class TestFitStateToTarget:
    def test_reaches_reachable_target(self):
        c = build_hea(3, 3)
        rng = np.random.default_rng(4)
        target = prepare_state(c, rng.uniform(-np.pi, np.pi,
                                              c.parameter_count)).amplitudes
        fit = fit_state_to_target(c, target, seed=5)
        assert fit.fidelity > 1 - 1e-8

    def test_rejects_zero_vector(self):
        c = build_hea(2, 1)
        with pytest.raises(ValueError):
            fit_state_to_target(c, np.zeros(4))
