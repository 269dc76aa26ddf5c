"""Pauli-string algebra and the Jordan-Wigner fermion-to-qubit mapping.

Conventions, fixed once and relied on everywhere else in the package:

* A Pauli string is a label such as ``"XZIY"``; character ``q`` acts on
  qubit ``q``.  Dense matrices are assembled as ``kron(op[0], op[1], ...)``,
  so qubit 0 is the most significant bit of a computational-basis index.
* Fermionic modes map one-to-one onto qubits.  All spin-up modes come first
  (impurity orbitals, then bath sites), followed by the spin-down modes in
  the same order; :func:`spin_orbital` encodes this.
* Qubit value 1 means "occupied".  The annihilator of mode ``j`` maps to
  ``Z``-strings on modes below ``j`` times ``(X + iY)/2`` on mode ``j``;
  the creator is its adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

# Products of distinct non-identity Paulis: a*b = phase * c.
_PRODUCT = {
    ("X", "Y"): (1j, "Z"),
    ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"),
    ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"),
    ("X", "Z"): (-1j, "Y"),
}

DEFAULT_TOL = 1e-12


class PauliError(ValueError):
    """Raised on malformed Pauli operators or dimension mismatches."""


def _mul1(a: str, b: str) -> tuple[complex, str]:
    if a == "I":
        return 1.0, b
    if b == "I":
        return 1.0, a
    if a == b:
        return 1.0, "I"
    phase, c = _PRODUCT[(a, b)]
    return phase, c


@dataclass(frozen=True)
class PauliTerm:
    """A tensor product of single-qubit Paulis with a complex coefficient."""

    ops: str
    coeff: complex = 1.0

    def __post_init__(self):
        if not self.ops or any(c not in "IXYZ" for c in self.ops):
            raise PauliError(f"invalid Pauli string {self.ops!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.ops)

    def dense(self) -> np.ndarray:
        mats = [PAULI_MATRICES[c] for c in self.ops]
        return self.coeff * reduce(np.kron, mats)

    def dagger(self) -> "PauliTerm":
        return PauliTerm(self.ops, np.conj(self.coeff))


def pauli_mul(a: PauliTerm, b: PauliTerm) -> PauliTerm:
    """Operator product of two Pauli terms, phase absorbed into the coefficient."""
    if a.n_qubits != b.n_qubits:
        raise PauliError(
            f"qubit count mismatch: {a.n_qubits} vs {b.n_qubits}"
        )
    phase = a.coeff * b.coeff
    out = []
    for x, y in zip(a.ops, b.ops):
        p, c = _mul1(x, y)
        phase *= p
        out.append(c)
    return PauliTerm("".join(out), phase)


@dataclass
class PauliSum:
    """A linear combination of :class:`PauliTerm` on a fixed qubit register."""

    terms: list[PauliTerm] = field(default_factory=list)
    n_qubits: int = 0

    def __post_init__(self):
        if self.n_qubits <= 0:
            raise PauliError("n_qubits must be positive")
        for t in self.terms:
            if t.n_qubits != self.n_qubits:
                raise PauliError("term width does not match register size")

    @classmethod
    def identity(cls, n_qubits: int, coeff: complex = 1.0) -> "PauliSum":
        return cls([PauliTerm("I" * n_qubits, coeff)], n_qubits)

    @classmethod
    def zero(cls, n_qubits: int) -> "PauliSum":
        return cls([], n_qubits)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.n_qubits != self.n_qubits:
            raise PauliError("cannot add sums on different registers")
        return simplify(PauliSum(self.terms + other.terms, self.n_qubits))

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (-1.0) * other

    def __rmul__(self, scalar: complex) -> "PauliSum":
        return PauliSum([PauliTerm(t.ops, scalar * t.coeff) for t in self.terms],
                        self.n_qubits)

    def __matmul__(self, other: "PauliSum") -> "PauliSum":
        if other.n_qubits != self.n_qubits:
            raise PauliError("cannot multiply sums on different registers")
        prods = [pauli_mul(a, b) for a in self.terms for b in other.terms]
        return simplify(PauliSum(prods, self.n_qubits))

    def dagger(self) -> "PauliSum":
        return PauliSum([t.dagger() for t in self.terms], self.n_qubits)

    def dense(self) -> np.ndarray:
        dim = 1 << self.n_qubits
        out = np.zeros((dim, dim), dtype=complex)
        for t in self.terms:
            out += t.dense()
        return out

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        merged = simplify(self, tol=0.0)
        return all(abs(t.coeff.imag) <= tol for t in merged.terms)

    def coefficient_norm(self) -> float:
        """Sum of coefficient magnitudes; an upper bound on the operator norm."""
        return float(sum(abs(t.coeff) for t in self.terms))

    def __len__(self) -> int:
        return len(self.terms)


def simplify(s: PauliSum, tol: float = DEFAULT_TOL) -> PauliSum:
    """Merge duplicate strings, drop negligible coefficients, sort canonically."""
    acc: dict[str, complex] = {}
    for t in s.terms:
        acc[t.ops] = acc.get(t.ops, 0.0) + t.coeff
    terms = [PauliTerm(ops, c) for ops, c in sorted(acc.items())
             if abs(c) > tol]
    return PauliSum(terms, s.n_qubits)


@dataclass(frozen=True)
class FermionOperator:
    """A single creation or annihilation operator on a flattened mode index."""

    mode: int
    dagger: bool = False


def spin_orbital(site: int, spin: int, n_sites: int) -> int:
    """Flattened mode index: spin-up block (sites in order), then spin-down."""
    if not 0 <= site < n_sites or spin not in (0, 1):
        raise PauliError(f"invalid site/spin ({site}, {spin}) for {n_sites} sites")
    return site + spin * n_sites


def jordan_wigner(op: FermionOperator, n_modes: int) -> PauliSum:
    """Map a fermionic ladder operator to its Pauli-string representation.

    The annihilator on mode ``j`` becomes ``Z^{⊗j} ⊗ (X + iY)/2`` padded with
    identities; the creator is the adjoint.  With this phase convention the
    canonical anticommutation relations hold exactly (covered by tests).
    """
    j = op.mode
    if not 0 <= j < n_modes:
        raise PauliError(f"mode {j} out of range for {n_modes} modes")
    head = "Z" * j
    tail = "I" * (n_modes - j - 1)
    y_coeff = -0.5j if op.dagger else 0.5j
    return PauliSum(
        [PauliTerm(head + "X" + tail, 0.5), PauliTerm(head + "Y" + tail, y_coeff)],
        n_modes,
    )


def fermion_product_to_pauli(coeff: complex,
                             factors: tuple[tuple[int, bool], ...],
                             n_modes: int) -> PauliSum:
    """Jordan-Wigner image of ``coeff * c^(±)_{m1} c^(±)_{m2} ...``."""
    out = PauliSum.identity(n_modes, coeff)
    for mode, dagger in factors:
        out = out @ jordan_wigner(FermionOperator(mode, dagger), n_modes)
    return out


def fermion_terms_to_pauli(terms, n_modes: int, tol: float = DEFAULT_TOL) -> PauliSum:
    """Sum of Jordan-Wigner images of second-quantized product terms.

    ``terms`` is an iterable of ``(coeff, ((mode, dagger), ...))`` entries.
    """
    total = PauliSum.zero(n_modes)
    collected: list[PauliTerm] = []
    for coeff, factors in terms:
        collected.extend(fermion_product_to_pauli(coeff, tuple(factors), n_modes).terms)
    total = PauliSum(collected, n_modes)
    return simplify(total, tol)


def fermion_hamiltonian_to_pauli(model, tol: float = DEFAULT_TOL) -> PauliSum:
    """Qubit Hamiltonian of an impurity model (any object with ``fermion_terms``).

    The result is hermitian by construction; a non-hermitian outcome signals
    invalid model parameters and raises.
    """
    h = fermion_terms_to_pauli(model.fermion_terms(), 2 * model.n_sites, tol)
    if not h.is_hermitian():
        raise PauliError("model parameters produce a non-hermitian Hamiltonian")
    # Hermitian sums carry real coefficients; store them exactly real so that
    # downstream consumers (Trotter gates, expectation values) need no casts.
    h = PauliSum([PauliTerm(t.ops, complex(t.coeff.real)) for t in h.terms],
                 h.n_qubits)
    return h


def number_operator(n_sites: int) -> PauliSum:
    """Total particle-number operator over both spin blocks."""
    n_modes = 2 * n_sites
    terms = [PauliTerm("I" * n_modes, 0.5 * n_modes)]
    for m in range(n_modes):
        terms.append(PauliTerm("I" * m + "Z" + "I" * (n_modes - m - 1), -0.5))
    return simplify(PauliSum(terms, n_modes))


def sz_operator(n_sites: int) -> PauliSum:
    """Spin imbalance n_up - n_down (twice the z-magnetization)."""
    n_modes = 2 * n_sites
    terms = []
    for site in range(n_sites):
        up = spin_orbital(site, 0, n_sites)
        dn = spin_orbital(site, 1, n_sites)
        terms.append(PauliTerm("I" * up + "Z" + "I" * (n_modes - up - 1), -0.5))
        terms.append(PauliTerm("I" * dn + "Z" + "I" * (n_modes - dn - 1), 0.5))
    return simplify(PauliSum(terms, n_modes))
