"""Noiseless statevector emulation of quantum circuits.

Amplitude arrays follow the convention of :mod:`kvqa.pauli`: qubit 0 is the
most significant bit of a basis index.  Expectation values are exact
("infinite shots"); there is no noise or sampling model.

The private ``_*_batch`` kernels act on arrays of shape ``(batch, 2**n)`` so
that parameter-shift evaluations and multi-start optimizations amortize the
per-gate numpy overhead; the public API wraps single states.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .pauli import PauliSum, PauliTerm

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


class EmulatorError(ValueError):
    """Raised on invalid gate targets or mismatched registers."""


# ---------------------------------------------------------------------------
# batched kernels

@njit(cache=True)
def _run_template_core(amps, codes, angles):  # pragma: no cover - jitted
    """In-place batched circuit application.

    ``codes`` rows are (0, stride, param_index) for Ry gates and
    (1, control_mask, target_mask) for CNOTs; strides/masks use the
    qubit-0-is-MSB index convention.
    """
    b, dim = amps.shape
    for g in range(codes.shape[0]):
        kind = codes[g, 0]
        if kind == 0:
            stride = codes[g, 1]
            pidx = codes[g, 2]
            for r in range(b):
                half = 0.5 * angles[r, pidx]
                c = np.cos(half)
                s = np.sin(half)
                base = 0
                while base < dim:
                    for off in range(stride):
                        i0 = base + off
                        i1 = i0 + stride
                        a0 = amps[r, i0]
                        a1 = amps[r, i1]
                        amps[r, i0] = c * a0 - s * a1
                        amps[r, i1] = s * a0 + c * a1
                    base += 2 * stride
        else:
            cmask = codes[g, 1]
            tmask = codes[g, 2]
            for r in range(b):
                for i in range(dim):
                    if (i & cmask) != 0 and (i & tmask) == 0:
                        j = i | tmask
                        tmp = amps[r, i]
                        amps[r, i] = amps[r, j]
                        amps[r, j] = tmp


def _ry_batch(amps: np.ndarray, n_qubits: int, qubit: int, theta) -> np.ndarray:
    """Apply Ry(theta) = exp(-i theta Y / 2) on one qubit of a batch."""
    half = np.asarray(theta, dtype=float) / 2.0
    c = np.cos(half)
    s = np.sin(half)
    b = amps.shape[0]
    blk = amps.reshape(b, 1 << qubit, 2, -1)
    if c.ndim == 1:
        c = c[:, None, None]
        s = s[:, None, None]
    a0 = blk[:, :, 0, :]
    a1 = blk[:, :, 1, :]
    out = np.empty_like(blk)
    out[:, :, 0, :] = c * a0 - s * a1
    out[:, :, 1, :] = s * a0 + c * a1
    return out.reshape(b, -1)


@lru_cache(maxsize=None)
def _cnot_perm(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    cbit = (idx >> (n_qubits - 1 - control)) & 1
    return np.where(cbit == 1, idx ^ (1 << (n_qubits - 1 - target)), idx)


def _cnot_batch(amps: np.ndarray, n_qubits: int, control: int, target: int) -> np.ndarray:
    return amps[:, _cnot_perm(n_qubits, control, target)]


@lru_cache(maxsize=None)
def _pauli_action(ops: str) -> tuple[np.ndarray, np.ndarray]:
    """Precompute P|i> = phase(i) |i ^ flip> as gather indices and phases.

    Returns ``(src, coef)`` with ``(P psi)[j] = coef[j] * psi[src[j]]``.
    """
    n = len(ops)
    dim = 1 << n
    flip = 0
    zy_mask = 0
    y_count = 0
    for q, c in enumerate(ops):
        bit = 1 << (n - 1 - q)
        if c in "XY":
            flip |= bit
        if c in "ZY":
            zy_mask |= bit
        if c == "Y":
            y_count += 1
    idx = np.arange(dim)
    src = idx ^ flip
    parity = np.bitwise_count(src & zy_mask) & 1
    coef = (1j ** y_count) * (1.0 - 2.0 * parity).astype(complex)
    return src, coef


def _pauli_batch(amps: np.ndarray, ops: str) -> np.ndarray:
    src, coef = _pauli_action(ops)
    return coef * amps[:, src]


def _pauli_exp_batch(amps: np.ndarray, ops: str, t: float) -> np.ndarray:
    """exp(i t P) = cos(t) I + i sin(t) P, exact because P^2 = I."""
    return np.cos(t) * amps + 1j * np.sin(t) * _pauli_batch(amps, ops)


def _apply_sum_batch(amps: np.ndarray, h: PauliSum) -> np.ndarray:
    out = np.zeros_like(amps)
    for term in h.terms:
        out += term.coeff * _pauli_batch(amps, term.ops)
    return out


# ---------------------------------------------------------------------------
# public single-state API

@dataclass
class StateVector:
    """Complex amplitudes over the computational basis of an n-qubit register."""

    amplitudes: np.ndarray
    n_qubits: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise EmulatorError("amplitude array has wrong length")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.n_qubits)


def zero_state(n_qubits: int) -> StateVector:
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(amps, n_qubits)


def basis_state(bits: str) -> StateVector:
    """Computational basis state from a bitstring, qubit 0 first."""
    n = len(bits)
    amps = np.zeros(1 << n, dtype=complex)
    amps[int(bits, 2)] = 1.0
    return StateVector(amps, n)


@dataclass(frozen=True)
class GateOp:
    """One circuit element: 'ry', 'cnot', 'pauli' or 'pauli_exp'."""

    kind: str
    qubits: tuple[int, ...] = ()
    angle: float = 0.0
    ops: str | None = None

    @classmethod
    def ry(cls, qubit: int, angle: float) -> "GateOp":
        return cls("ry", (qubit,), angle)

    @classmethod
    def cnot(cls, control: int, target: int) -> "GateOp":
        if control == target:
            raise EmulatorError("CNOT control and target must differ")
        return cls("cnot", (control, target))

    @classmethod
    def pauli(cls, ops: str) -> "GateOp":
        return cls("pauli", ops=ops)

    @classmethod
    def pauli_exp(cls, ops: str, angle: float) -> "GateOp":
        return cls("pauli_exp", angle=angle, ops=ops)

    def inverse(self) -> "GateOp":
        if self.kind in ("ry", "pauli_exp"):
            return GateOp(self.kind, self.qubits, -self.angle, self.ops)
        return self


def _check_qubits(gate: GateOp, n_qubits: int) -> None:
    for q in gate.qubits:
        if not 0 <= q < n_qubits:
            raise EmulatorError(f"qubit {q} out of range for {n_qubits} qubits")


def _apply_gate_batch(amps: np.ndarray, n_qubits: int, gate: GateOp) -> np.ndarray:
    if gate.kind == "ry":
        return _ry_batch(amps, n_qubits, gate.qubits[0], gate.angle)
    if gate.kind == "cnot":
        return _cnot_batch(amps, n_qubits, *gate.qubits)
    if gate.kind == "pauli":
        return _pauli_batch(amps, gate.ops)
    if gate.kind == "pauli_exp":
        return _pauli_exp_batch(amps, gate.ops, gate.angle)
    raise EmulatorError(f"unknown gate kind {gate.kind!r}")


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    _check_qubits(gate, state.n_qubits)
    out = _apply_gate_batch(state.amplitudes[None, :], state.n_qubits, gate)
    return StateVector(out[0], state.n_qubits)


def run_circuit(state: StateVector, gates) -> StateVector:
    amps = state.amplitudes[None, :]
    for g in gates:
        _check_qubits(g, state.n_qubits)
        amps = _apply_gate_batch(amps, state.n_qubits, g)
    return StateVector(amps[0], state.n_qubits)


def apply_pauli_term(state: StateVector, ops: str) -> StateVector:
    if len(ops) != state.n_qubits:
        raise EmulatorError("Pauli string width mismatch")
    return StateVector(_pauli_batch(state.amplitudes[None, :], ops)[0],
                       state.n_qubits)


def apply_pauli_exponential(state: StateVector, ops: str, t: float) -> StateVector:
    """State <- exp(i t P) state for a bare Pauli string P."""
    if len(ops) != state.n_qubits:
        raise EmulatorError("Pauli string width mismatch")
    out = _pauli_exp_batch(state.amplitudes[None, :], ops, t)
    return StateVector(out[0], state.n_qubits)


def apply_pauli_sum(state: StateVector, h: PauliSum) -> StateVector:
    """H|psi> for a general Pauli sum (not unitary; norm not preserved)."""
    if h.n_qubits != state.n_qubits:
        raise EmulatorError("operator register mismatch")
    return StateVector(_apply_sum_batch(state.amplitudes[None, :], h)[0],
                       state.n_qubits)


def expectation(state: StateVector, h: PauliSum, imag_tol: float = 1e-10) -> float:
    """<psi|H|psi> for a hermitian Pauli sum."""
    if not h.is_hermitian():
        raise EmulatorError("expectation requires a hermitian operator")
    val = np.vdot(state.amplitudes, apply_pauli_sum(state, h).amplitudes)
    if abs(val.imag) > imag_tol:
        raise EmulatorError(f"expectation has spurious imaginary part {val.imag:g}")
    return float(val.real)


def overlap(a: StateVector, b: StateVector) -> complex:
    """<a|b>."""
    if a.n_qubits != b.n_qubits:
        raise EmulatorError("overlap requires equal register sizes")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


# ---------------------------------------------------------------------------
# measurement protocols for |<0|U^† H U'|0>|-type matrix elements

def _daggered(gates) -> list[GateOp]:
    return [g.inverse() for g in reversed(list(gates))]


def _hadamard_component(gates: list[GateOp], n_qubits: int, imag: bool) -> float:
    """<Z> on the ancilla after one controlled-V interferometry round."""
    dim = 1 << n_qubits
    # ancilla is one extra qubit, kept as the least significant bit
    amps = np.zeros((dim, 2), dtype=complex)
    amps[0, 0] = 1.0 / np.sqrt(2.0)
    amps[0, 1] = (1j if imag else 1.0) / np.sqrt(2.0)
    branch = amps[:, 1].copy()[None, :]
    for g in gates:
        branch = _apply_gate_batch(branch, n_qubits, g)
    amps[:, 1] = branch[0]
    # final Hadamard on the ancilla
    a0 = (amps[:, 0] + amps[:, 1]) / np.sqrt(2.0)
    a1 = (amps[:, 0] - amps[:, 1]) / np.sqrt(2.0)
    return float(np.sum(np.abs(a0) ** 2) - np.sum(np.abs(a1) ** 2))


def hadamard_test(prep_left, pauli_ops: str, prep_right, n_qubits: int) -> complex:
    """Ancilla-interferometric estimate of <0|U_left^† P U_right|0>.

    ``prep_left``/``prep_right`` are gate sequences; the controlled unitary is
    V = U_left^† P U_right.  Two ancilla preparations give the real and
    imaginary parts; on this noiseless emulator the result is exact.
    """
    gates = list(prep_right) + [GateOp.pauli(pauli_ops)] + _daggered(prep_left)
    re = _hadamard_component(gates, n_qubits, imag=False)
    im = -_hadamard_component(gates, n_qubits, imag=True)
    return complex(re, im)


def hadamard_test_sum(prep_left, h: PauliSum, prep_right, n_qubits: int) -> complex:
    """<0|U_left^† H U_right|0> as a coefficient-weighted sum of Hadamard tests."""
    out = 0.0 + 0.0j
    for term in h.terms:
        out += term.coeff * hadamard_test(prep_left, term.ops, prep_right, n_qubits)
    return complex(out)


def trotter_overlap_curve(prep_left, h: PauliSum, prep_right, dt_list,
                          n_qubits: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-step estimates |<0|U^† Π_j exp(i h_j P_j dt) U'|0>| / dt.

    Hamiltonian terms are exponentiated in their canonical (simplified) order.
    Valid as an estimator of |<0|U^† H U'|0>| when the two preparations are
    (near-)orthogonal, which is what the Krylov cost function enforces.
    """
    if len(dt_list) == 0:
        raise EmulatorError("dt_list must not be empty")
    if not h.is_hermitian():
        raise EmulatorError("trotter overlap requires a hermitian Hamiltonian")
    dts = np.asarray(sorted(dt_list), dtype=float)
    if np.any(dts <= 0):
        raise EmulatorError("dt values must be positive")
    estimates = np.empty_like(dts)
    right = run_circuit(zero_state(n_qubits), prep_right).amplitudes[None, :]
    inv_left = _daggered(prep_left)
    for k, dt in enumerate(dts):
        amps = right
        for term in h.terms:
            amps = _pauli_exp_batch(amps, term.ops, float(term.coeff.real) * dt)
        for g in inv_left:
            amps = _apply_gate_batch(amps, n_qubits, g)
        estimates[k] = abs(amps[0, 0]) / dt
    return dts, estimates


def trotter_overlap(prep_left, h: PauliSum, prep_right, dt_list,
                    n_qubits: int) -> float:
    """Linear extrapolation of the Trotterized overlap estimates to dt -> 0."""
    dts, est = trotter_overlap_curve(prep_left, h, prep_right, dt_list, n_qubits)
    if len(dts) == 1:
        return float(est[0])
    slope, intercept = np.polyfit(dts, est, 1)
    return float(intercept)
