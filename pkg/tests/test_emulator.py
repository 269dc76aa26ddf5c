import numpy as np
import pytest

from kvqa.ansatz import build_hea
from kvqa.emulator import (
    EmulatorError,
    GateOp,
    StateVector,
    apply_gate,
    apply_pauli_exponential,
    apply_pauli_sum,
    basis_state,
    expectation,
    hadamard_test,
    overlap,
    run_circuit,
    trotter_overlap,
    trotter_overlap_curve,
    zero_state,
)
from kvqa.pauli import PauliSum, PauliTerm, fermion_hamiltonian_to_pauli
from kvqa.aim import random_aim


def random_state(n_qubits, seed):
    rng = np.random.default_rng(seed)
    amps = rng.standard_normal(1 << n_qubits) + 1j * rng.standard_normal(1 << n_qubits)
    return StateVector(amps / np.linalg.norm(amps), n_qubits)


def _near_orthogonal_pair(h, seed, n_qubits=8):
    """Exactly orthogonal complex product-plus-phase preparations."""
    rng = np.random.default_rng(seed)
    base = [GateOp.ry(q, rng.uniform(-np.pi, np.pi)) for q in range(n_qubits)]
    flip = int(rng.integers(n_qubits))
    left = list(base)
    left[flip] = GateOp.ry(flip, left[flip].angle + np.pi)
    phase = [GateOp.pauli_exp("".join(rng.choice(list("IZ"), n_qubits)),
                              rng.uniform(0.2, 1.0))]
    left = left + phase
    right = base + phase
    lv = run_circuit(zero_state(n_qubits), left).amplitudes
    rv = run_circuit(zero_state(n_qubits), right).amplitudes
    exact = abs(np.vdot(lv, h.dense() @ rv))
    return left, right, exact


class TestGates:
    def test_ry_pi_flips(self):
        out = apply_gate(zero_state(1), GateOp.ry(0, np.pi))
        assert np.allclose(out.amplitudes, [0.0, 1.0], atol=1e-15)

    def test_ry_zero_identity(self):
        st = random_state(3, 1)
        out = apply_gate(st, GateOp.ry(1, 0.0))
        assert np.allclose(out.amplitudes, st.amplitudes)

    def test_cnot_makes_bell_state(self):
        st = apply_gate(zero_state(2), GateOp.ry(0, np.pi / 2))
        out = apply_gate(st, GateOp.cnot(0, 1))
        assert np.allclose(out.amplitudes,
                           np.array([1, 0, 0, 1]) / np.sqrt(2), atol=1e-15)

    def test_index_out_of_range(self):
        with pytest.raises(EmulatorError):
            apply_gate(zero_state(2), GateOp.ry(2, 0.1))

    def test_norm_preserved_random_circuit(self):
        rng = np.random.default_rng(3)
        st = zero_state(4)
        gates = []
        for _ in range(60):
            if rng.random() < 0.5:
                gates.append(GateOp.ry(int(rng.integers(4)), rng.uniform(-np.pi, np.pi)))
            else:
                q = int(rng.integers(3))
                gates.append(GateOp.cnot(q, q + 1))
        out = run_circuit(st, gates)
        assert abs(out.norm() - 1.0) < 1e-12


class TestPauliExponential:
    def test_diagonal_phase(self):
        out = apply_pauli_exponential(zero_state(1), "Z", np.pi / 2)
        assert np.allclose(out.amplitudes, [1j, 0.0], atol=1e-14)

    def test_x_rotation_identity(self):
        t = 0.37
        out = apply_pauli_exponential(zero_state(1), "X", t)
        assert np.allclose(out.amplitudes, [np.cos(t), 1j * np.sin(t)], atol=1e-14)

    def test_matches_dense_exponential(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            ops = "".join(rng.choice(list("IXYZ"), 3))
            t = rng.uniform(-1.5, 1.5)
            st = random_state(3, int(rng.integers(1 << 30)))
            p = PauliTerm(ops).dense()
            want = (np.cos(t) * np.eye(8) + 1j * np.sin(t) * p) @ st.amplitudes
            got = apply_pauli_exponential(st, ops, t).amplitudes
            assert np.abs(got - want).max() < 1e-10

    def test_forward_backward_restores(self):
        st = random_state(4, 9)
        out = apply_pauli_exponential(st, "XYZI", 0.83)
        out = apply_pauli_exponential(out, "XYZI", -0.83)
        assert np.abs(out.amplitudes - st.amplitudes).max() < 1e-12


class TestExpectationOverlap:
    def test_z_on_zero(self):
        assert expectation(zero_state(1), PauliSum([PauliTerm("Z")], 1)) == 1.0

    def test_bell_zz(self):
        st = run_circuit(zero_state(2), [GateOp.ry(0, np.pi / 2), GateOp.cnot(0, 1)])
        assert abs(expectation(st, PauliSum([PauliTerm("ZZ")], 2)) - 1.0) < 1e-12

    def test_matches_dense_quadratic_form(self):
        model = random_aim(2)
        h = fermion_hamiltonian_to_pauli(model)
        st = random_state(8, 21)
        want = np.real(np.vdot(st.amplitudes, h.dense() @ st.amplitudes))
        assert abs(expectation(st, h) - want) < 1e-10

    def test_non_hermitian_rejected(self):
        s = PauliSum([PauliTerm("X", 1j)], 1)
        with pytest.raises(EmulatorError):
            expectation(zero_state(1), s)

    def test_overlap_normalization_and_orthogonality(self):
        st = random_state(3, 4)
        assert abs(overlap(st, st) - 1.0) < 1e-12
        z, o = basis_state("000"), basis_state("001")
        assert overlap(z, o) == 0.0

    def test_overlap_equals_concatenated_circuit_amplitude(self):
        rng = np.random.default_rng(8)
        circuit = build_hea(3, 2)
        ta = rng.uniform(-np.pi, np.pi, circuit.parameter_count)
        tb = rng.uniform(-np.pi, np.pi, circuit.parameter_count)
        a = run_circuit(zero_state(3), circuit.bind(ta))
        b = run_circuit(zero_state(3), circuit.bind(tb))
        inv = [g.inverse() for g in reversed(circuit.bind(ta))]
        composed = run_circuit(b, inv)
        assert abs(abs(overlap(a, b)) ** 2 - abs(composed.amplitudes[0]) ** 2) < 1e-12


class TestHadamardTest:
    def test_identity_circuits(self):
        assert abs(hadamard_test([], "II", [], 2) - 1.0) < 1e-12
        assert abs(hadamard_test([], "ZI", [], 2) - 1.0) < 1e-12
        assert abs(hadamard_test([], "XI", [], 2) - 0.0) < 1e-12

    def test_agrees_with_statevector_on_random_instances(self):
        rng = np.random.default_rng(10)
        circuit = build_hea(3, 2)
        for _ in range(200):
            ta = rng.uniform(-np.pi, np.pi, circuit.parameter_count)
            tb = rng.uniform(-np.pi, np.pi, circuit.parameter_count)
            ops = "".join(rng.choice(list("IXYZ"), 3))
            got = hadamard_test(circuit.bind(ta), ops, circuit.bind(tb), 3)
            left = run_circuit(zero_state(3), circuit.bind(ta)).amplitudes
            right = run_circuit(zero_state(3), circuit.bind(tb)).amplitudes
            want = np.vdot(left, PauliTerm(ops).dense() @ right)
            assert abs(got - want) < 1e-10


class TestTrotterOverlap:
    def test_orthogonal_single_term(self):
        # U prepares |1>, U' = identity; H = Z: |<1|Z|0>| = 0
        h = PauliSum([PauliTerm("Z")], 1)
        est = trotter_overlap([GateOp.ry(0, np.pi)], h, [], [0.02, 0.01], 1)
        assert abs(est) < 1e-12

    def test_single_term_matrix_element(self):
        # orthogonal product states; single-term H has only expansion error,
        # removed up to the small quadratic remainder by the linear fit
        h = PauliSum([PauliTerm("XI", 0.8)], 2)
        left = [GateOp.ry(0, np.pi)]
        est = trotter_overlap(left, h, [], [0.004, 0.002, 0.001], 2)
        lv = run_circuit(zero_state(2), left).amplitudes
        want = abs(np.vdot(lv, h.dense() @ zero_state(2).amplitudes))
        assert abs(est - want) < 1e-5

    def test_error_scales_linearly(self):
        # real-amplitude pairs have a vanishing linear error term, so the
        # scaling check needs generically complex preparations; individual
        # pairs carry subleading terms, the mean over pairs scales cleanly
        model = random_aim(4)
        h = fermion_hamiltonian_to_pauli(model)
        coarse, fine = [], []
        for seed in range(6):
            left, right, exact = _near_orthogonal_pair(h, seed=seed)
            dts, est = trotter_overlap_curve(left, h, right, [0.004, 0.002], 8)
            fine.append(abs(est[0] - exact))
            coarse.append(abs(est[1] - exact))
            extrap = trotter_overlap(left, h, right, [0.004, 0.002, 0.001], 8)
            assert abs(extrap - exact) < 1e-3
        ratio = np.mean(coarse) / np.mean(fine)
        assert 1.6 <= ratio <= 2.4

    def test_empty_dt_list_rejected(self):
        h = PauliSum([PauliTerm("Z")], 1)
        with pytest.raises(EmulatorError):
            trotter_overlap([], h, [], [], 1)


class TestApplyPauliSum:
    def test_linear_combination(self):
        st = random_state(2, 6)
        h = PauliSum([PauliTerm("XI", 0.5), PauliTerm("ZY", -1.5j)], 2)
        got = apply_pauli_sum(st, h).amplitudes
        want = h.dense() @ st.amplitudes
        assert np.abs(got - want).max() < 1e-12
