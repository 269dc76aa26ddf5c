"""Anderson impurity models and exact classical reference solvers.

The dense Hamiltonian here is built directly in the occupation-number basis
with fermionic sign bookkeeping on bit masks; it never touches the Pauli
path, so it serves as an independent oracle for the qubit mapping, for
eigenspectra, for resolvent Green's functions evaluated by linear solves,
and for Lanczos coefficients with full reorthogonalization.

Basis conventions match :mod:`kvqa.pauli`: mode ``m`` occupies bit position
``n_modes - 1 - m`` of a basis index (spin-up block first), and a set bit
means occupied, with the vacuum-ordering ``c^†_0 c^†_1 ...`` defining signs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .greens import EnergyGrid, GreensFunction
from .krylov import LanczosCoefficients
from .pauli import spin_orbital


class ModelError(ValueError):
    """Raised on ill-formed impurity-model parameters."""


def _as_matrix(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return np.eye(n) * float(arr)
    if arr.ndim == 1:
        if arr.shape != (n,):
            raise ModelError(f"{name} vector must have length {n}")
        return np.diag(arr)
    if arr.shape != (n, n):
        raise ModelError(f"{name} must be {n}x{n}")
    return arr


@dataclass
class AimModel:
    """Impurity + bath model: one-body impurity block ``mu``, local
    interaction ``U`` (scalar per-orbital n_up*n_down fast path, or a full
    four-index tensor), impurity-bath hoppings ``V`` and bath matrix ``eps``.

    All energies are in eV.
    """

    n_imp: int
    n_bath: int
    mu: float | np.ndarray
    U: float | np.ndarray
    V: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.n_imp < 1 or self.n_bath < 0:
            raise ModelError("need n_imp >= 1 and n_bath >= 0")
        self.mu_mat = _as_matrix(self.mu, self.n_imp, "mu")
        if not np.allclose(self.mu_mat, self.mu_mat.conj().T, atol=1e-12):
            raise ModelError("impurity one-body block must be hermitian")
        u = np.asarray(self.U, dtype=float)
        if u.ndim not in (0, 4):
            raise ModelError("U must be a scalar or a rank-4 tensor")
        if u.ndim == 4 and u.shape != (self.n_imp,) * 4:
            raise ModelError("U tensor must be n_imp^4")
        self.V = np.asarray(self.V, dtype=float)
        if self.V.size == 0:
            self.V = np.zeros((self.n_bath, self.n_imp))
        if self.V.ndim == 1:
            self.V = self.V.reshape(self.n_bath, 1)
        if self.V.shape != (self.n_bath, self.n_imp):
            raise ModelError("V must have shape (n_bath, n_imp)")
        self.eps_mat = _as_matrix(self.eps, self.n_bath, "eps") \
            if self.n_bath else np.zeros((0, 0))
        if not np.allclose(self.eps_mat, self.eps_mat.conj().T, atol=1e-12):
            raise ModelError("bath matrix must be hermitian (eps_ij = eps_ji*)")

    @property
    def n_sites(self) -> int:
        return self.n_imp + self.n_bath

    @property
    def n_qubits(self) -> int:
        return 2 * self.n_sites

    def fermion_terms(self):
        """Second-quantized terms as ``(coeff, ((mode, dagger), ...))``."""
        ns = self.n_sites
        terms = []
        for sigma in (0, 1):
            for a in range(self.n_imp):
                for b in range(self.n_imp):
                    c = self.mu_mat[a, b]
                    if c != 0.0:
                        terms.append((c, ((spin_orbital(a, sigma, ns), True),
                                          (spin_orbital(b, sigma, ns), False))))
            for i in range(self.n_bath):
                for a in range(self.n_imp):
                    v = self.V[i, a]
                    if v != 0.0:
                        fi = spin_orbital(self.n_imp + i, sigma, ns)
                        ca = spin_orbital(a, sigma, ns)
                        terms.append((v, ((fi, True), (ca, False))))
                        terms.append((np.conj(v), ((ca, True), (fi, False))))
            for i in range(self.n_bath):
                for j in range(self.n_bath):
                    e = self.eps_mat[i, j]
                    if e != 0.0:
                        terms.append((e, ((spin_orbital(self.n_imp + i, sigma, ns), True),
                                          (spin_orbital(self.n_imp + j, sigma, ns), False))))
        u = np.asarray(self.U, dtype=float)
        if u.ndim == 0:
            for a in range(self.n_imp):
                if float(u) != 0.0:
                    up = spin_orbital(a, 0, ns)
                    dn = spin_orbital(a, 1, ns)
                    terms.append((float(u), ((up, True), (up, False),
                                             (dn, True), (dn, False))))
        else:
            for a in range(self.n_imp):
                for b in range(self.n_imp):
                    for c in range(self.n_imp):
                        for d in range(self.n_imp):
                            coeff = u[a, b, c, d]
                            if coeff == 0.0:
                                continue
                            for s1 in (0, 1):
                                for s2 in (0, 1):
                                    terms.append((coeff, (
                                        (spin_orbital(a, s1, ns), True),
                                        (spin_orbital(b, s2, ns), True),
                                        (spin_orbital(c, s2, ns), False),
                                        (spin_orbital(d, s1, ns), False))))
        return terms

    def to_dict(self) -> dict:
        u = np.asarray(self.U)
        return {
            "n_imp": self.n_imp,
            "n_bath": self.n_bath,
            "mu": self.mu_mat.tolist() if np.ndim(self.mu) else float(self.mu),
            "U": u.tolist() if u.ndim else float(u),
            "V": self.V.tolist(),
            "eps": self.eps_mat.tolist(),
            "units": "eV",
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AimModel":
        try:
            return cls(n_imp=int(doc["n_imp"]), n_bath=int(doc["n_bath"]),
                       mu=np.asarray(doc["mu"], dtype=float)
                       if isinstance(doc["mu"], list) else float(doc["mu"]),
                       U=np.asarray(doc["U"], dtype=float)
                       if isinstance(doc["U"], list) else float(doc["U"]),
                       V=np.asarray(doc["V"], dtype=float),
                       eps=np.asarray(doc["eps"], dtype=float))
        except KeyError as exc:
            raise ModelError(f"model document missing field {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AimModel":
        return cls.from_dict(json.loads(text))


def random_aim(seed) -> AimModel:
    """One impurity plus three bath sites with benchmark-range parameters.

    Hoppings are uniform on [0, 3], the symmetric bath matrix has entries
    uniform on [-3, 3], the interaction is one of {4, 8, 12} and the impurity
    level one of {U/2 - 2, U/2, -U/2 + 2}.  Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    u = float(rng.choice([4.0, 8.0, 12.0]))
    mu = float(rng.choice([u / 2 - 2.0, u / 2, -u / 2 + 2.0]))
    v = rng.uniform(0.0, 3.0, 3)
    tri = rng.uniform(-3.0, 3.0, (3, 3))
    eps = np.triu(tri) + np.triu(tri, 1).T
    return AimModel(n_imp=1, n_bath=3, mu=mu, U=u, V=v, eps=eps)


# ---------------------------------------------------------------------------
# occupation-number-basis machinery (independent of the Pauli path)

MAX_DENSE_QUBITS = 14


def _bit(n_modes: int, mode: int) -> int:
    return 1 << (n_modes - 1 - mode)


def _parity_mask(n_modes: int, mode: int) -> int:
    # modes below `mode` sit at the high bit positions
    return ((1 << mode) - 1) << (n_modes - mode)


def dense_hamiltonian(model: AimModel) -> np.ndarray:
    """Dense matrix in the occupation basis via bit arithmetic and sign masks."""
    n_modes = model.n_qubits
    if n_modes > MAX_DENSE_QUBITS:
        raise ModelError(f"dense construction limited to {MAX_DENSE_QUBITS} modes")
    dim = 1 << n_modes
    h = np.zeros((dim, dim), dtype=complex)
    cols = np.arange(dim)
    for coeff, factors in model.fermion_terms():
        idx = cols.copy()
        amp = np.full(dim, coeff, dtype=complex)
        alive = np.ones(dim, dtype=bool)
        for mode, dagger in reversed(factors):
            bit = _bit(n_modes, mode)
            occ = (idx & bit) != 0
            alive &= (~occ if dagger else occ)
            par = (np.bitwise_count(idx & _parity_mask(n_modes, mode)) & 1).astype(bool)
            amp = np.where(par, -amp, amp)
            idx = idx ^ bit
        h[idx[alive], cols[alive]] += amp[alive]
    return h


def apply_fermion_dense(vec: np.ndarray, mode: int, dagger: bool) -> np.ndarray:
    """c_mode or c^†_mode applied to a dense occupation-basis vector."""
    dim = len(vec)
    n_modes = dim.bit_length() - 1
    bit = _bit(n_modes, mode)
    idx = np.arange(dim)
    occ = (idx & bit) != 0
    ok = ~occ if dagger else occ
    par = (np.bitwise_count(idx & _parity_mask(n_modes, mode)) & 1).astype(bool)
    sign = np.where(par, -1.0, 1.0)
    out = np.zeros_like(np.asarray(vec, dtype=complex))
    src = idx[ok]
    out[src ^ bit] = sign[ok] * vec[src]
    return out


def sector_of_index(i: int, n_sites: int) -> tuple[int, int]:
    """(N, Sz) labels of one occupation basis index."""
    up_mask = ((1 << n_sites) - 1) << n_sites
    dn_mask = (1 << n_sites) - 1
    n_up = int(i & up_mask).bit_count()
    n_dn = int(i & dn_mask).bit_count()
    return n_up + n_dn, n_up - n_dn


def sector_indices(n_sites: int, n_particles: int, sz: int) -> np.ndarray:
    """All occupation basis indices in one (N, Sz) sector."""
    dim = 1 << (2 * n_sites)
    idx = np.arange(dim)
    up_mask = ((1 << n_sites) - 1) << n_sites
    dn_mask = (1 << n_sites) - 1
    # bitwise_count yields unsigned ints; cast before the signed difference
    n_up = np.bitwise_count(idx & up_mask).astype(int)
    n_dn = np.bitwise_count(idx & dn_mask).astype(int)
    return idx[(n_up + n_dn == n_particles) & (n_up - n_dn == sz)]


@dataclass
class SpectralDecomposition:
    energies: np.ndarray
    states: np.ndarray          # eigenvectors in columns
    sectors: list[tuple[int, int]]

    @property
    def ground_energy(self) -> float:
        return float(self.energies[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.states[:, 0]


def exact_diagonalize(model: AimModel, blocked: bool = True) -> SpectralDecomposition:
    """Full spectrum with sharp (N, Sz) labels, block-diagonalized by sector."""
    h = dense_hamiltonian(model)
    dim = h.shape[0]
    if not blocked:
        energies, states = np.linalg.eigh(h)
        sectors = [(-1, 0)] * dim
        return SpectralDecomposition(energies, states, sectors)
    ns = model.n_sites
    energies = np.empty(dim)
    states = np.zeros((dim, dim), dtype=complex)
    sectors: list[tuple[int, int]] = [(0, 0)] * dim
    pos = 0
    for n in range(0, 2 * ns + 1):
        for sz in range(-n, n + 1, 2):
            ix = sector_indices(ns, n, sz)
            if len(ix) == 0:
                continue
            block = h[np.ix_(ix, ix)]
            evals, evecs = np.linalg.eigh(block)
            for k in range(len(ix)):
                energies[pos] = evals[k]
                states[ix, pos] = evecs[:, k]
                sectors[pos] = (n, sz)
                pos += 1
    order = np.argsort(energies, kind="stable")
    return SpectralDecomposition(energies[order], states[:, order],
                                 [sectors[int(k)] for k in order])


def classical_lanczos(h_dense: np.ndarray, phi: np.ndarray,
                      max_n: int | None = None,
                      tol_b: float = 1e-8) -> LanczosCoefficients:
    """Lanczos recursion with full reorthogonalization (ground-truth oracle).

    The three-term recurrence alone loses orthogonality in floating point;
    every new direction is therefore projected twice against the whole stored
    basis before normalization.  Termination mirrors the variational runner:
    a squared off-diagonal coefficient at or below ``tol_b`` stops the
    recursion.
    """
    v = np.asarray(phi, dtype=complex)
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError("initial vector must be normalized")
    v = v / nrm
    basis = [v]
    w = h_dense @ v
    a = [float(np.real(np.vdot(v, w)))]
    b: list[float] = []
    w = w - a[0] * v
    limit = max_n if max_n is not None else len(v)
    reason = "max_n"
    while True:
        if len(b) >= limit:
            reason = "max_n"
            break
        for _ in range(2):
            for u in basis:
                w = w - np.vdot(u, w) * u
        b2 = float(np.real(np.vdot(w, w)))
        if b2 <= tol_b:
            reason = "b_zero"
            break
        bn = math.sqrt(b2)
        v = w / bn
        basis.append(v)
        w = h_dense @ v
        an = float(np.real(np.vdot(v, w)))
        a.append(an)
        b.append(bn)
        w = w - an * v - bn * basis[-2]
    return LanczosCoefficients(np.array(a), np.array(b), reason)


def dense_moments(h_dense: np.ndarray, phi: np.ndarray, max_order: int) -> np.ndarray:
    """mu_n = <phi|H^n|phi> by iterated matrix-vector products."""
    v = np.asarray(phi, dtype=complex)
    out = np.empty(max_order + 1)
    out[0] = np.real(np.vdot(v, v))
    cur = v
    for n in range(1, max_order + 1):
        cur = h_dense @ cur
        out[n] = float(np.real(np.vdot(v, cur)))
    return out


def krylov_dimension(n_sites: int, n_particles: int, sz: int) -> int:
    """Sector dimension bound: C(N_s, n_up) * C(N_s, n_down)."""
    if (n_particles + sz) % 2 != 0:
        return 0
    n_up = (n_particles + sz) // 2
    n_dn = (n_particles - sz) // 2
    if not (0 <= n_up <= n_sites and 0 <= n_dn <= n_sites):
        return 0
    return math.comb(n_sites, n_up) * math.comb(n_sites, n_dn)


def krylov_rank(h_dense: np.ndarray, phi: np.ndarray, tol: float = 1e-8,
                max_dim: int | None = None) -> int:
    """Numerical dimension of span{phi, H phi, H^2 phi, ...}.

    Determined by progressive orthogonalization of the power sequence with a
    residual-norm threshold; this is the numerically stable equivalent of a
    singular-value cut on the (exponentially ill-conditioned) Krylov matrix.
    """
    v = np.asarray(phi, dtype=complex)
    v = v / np.linalg.norm(v)
    basis: list[np.ndarray] = []
    w = v
    limit = max_dim if max_dim is not None else len(v)
    while len(basis) < limit:
        for _ in range(2):
            for u in basis:
                w = w - np.vdot(u, w) * u
        r = np.linalg.norm(w)
        if r <= tol:
            break
        basis.append(w / r)
        w = h_dense @ basis[-1]
    return len(basis)


# ---------------------------------------------------------------------------
# dense-resolvent Green's functions

def exact_gf(model: AimModel, grid: EnergyGrid, orbital: int = 0, spin: int = 0,
             beta: float | None = None,
             decomposition: SpectralDecomposition | None = None,
             weight_cutoff: float = 1e-14) -> GreensFunction:
    """Reference Green's function from dense linear algebra.

    At zero temperature (``beta=None``) each branch is evaluated by linear
    solves against the ground state; at finite temperature the full spectral
    (Lehmann) sum is used with Boltzmann weights over all eigenstates.
    """
    h = dense_hamiltonian(model)
    dec = decomposition or exact_diagonalize(model)
    mode = spin_orbital(orbital, spin, model.n_sites)
    z = grid.points
    if beta is None:
        gs = dec.ground_state
        e0 = dec.ground_energy
        gs_sector = dec.sectors[0]
        values = np.zeros(len(z), dtype=complex)
        for dagger, sgn in ((True, 1.0), (False, -1.0)):
            phi = apply_fermion_dense(gs, mode, dagger)
            if np.vdot(phi, phi).real <= weight_cutoff:
                continue
            # H conserves (N, Sz); restrict the solves to the branch sector
            if gs_sector[0] >= 0:
                dn = 1 if dagger else -1
                ds = dn if spin == 0 else -dn
                ix = sector_indices(model.n_sites, gs_sector[0] + dn,
                                    gs_sector[1] + ds)
                h_blk = h[np.ix_(ix, ix)]
                phi_blk = phi[ix]
            else:
                h_blk, phi_blk = h, phi
            eye = np.eye(h_blk.shape[0])
            for k, zk in enumerate(z):
                x = np.linalg.solve((zk + sgn * e0) * eye - sgn * h_blk, phi_blk)
                values[k] += np.vdot(phi_blk, x)
        return GreensFunction(grid, values, label=f"orb{orbital}_s{spin}")
    # finite temperature: Lehmann representation over the full spectrum
    energies = dec.energies
    states = dec.states
    rho = np.exp(-beta * (energies - energies[0]))
    rho = rho / rho.sum()
    cdag = _ladder_dense(h.shape[0], mode, dagger=True)
    cd_eig = states.conj().T @ cdag @ states
    w_plus = np.abs(cd_eig) ** 2          # w_plus[m, k] = |<m|c^†|k>|^2
    values = np.zeros(len(z), dtype=complex)
    for k in np.nonzero(rho > weight_cutoff)[0]:
        de_p = energies - energies[k]      # particle: E_m - E_k
        values += rho[k] * (w_plus[:, k] / (z[:, None] - de_p[None, :])).sum(axis=1)
        values += rho[k] * (w_plus[k, :] / (z[:, None] + de_p[None, :])).sum(axis=1)
    return GreensFunction(grid, values, label=f"orb{orbital}_s{spin}")


def _ladder_dense(dim: int, mode: int, dagger: bool) -> np.ndarray:
    n_modes = dim.bit_length() - 1
    out = np.zeros((dim, dim), dtype=complex)
    cols = np.arange(dim)
    bit = _bit(n_modes, mode)
    occ = (cols & bit) != 0
    ok = ~occ if dagger else occ
    par = (np.bitwise_count(cols & _parity_mask(n_modes, mode)) & 1).astype(bool)
    sign = np.where(par, -1.0, 1.0)
    out[cols[ok] ^ bit, cols[ok]] = sign[ok]
    return out


class OracleLanczosEngine:
    """Branch engine backed by the dense Hamiltonian and an exact eigenstate."""

    def __init__(self, h_dense: np.ndarray, reference_state: np.ndarray,
                 n_sites: int, tol_b: float = 1e-8, max_n: int | None = None,
                 weight_tol: float = 1e-10):
        self.h_dense = h_dense
        self.state = np.asarray(reference_state, dtype=complex)
        self.n_sites = n_sites
        self.tol_b = tol_b
        self.max_n = max_n
        self.weight_tol = weight_tol

    def branch(self, orbital: int, spin: int, dagger: bool):
        mode = spin_orbital(orbital, spin, self.n_sites)
        phi = apply_fermion_dense(self.state, mode, dagger)
        weight = float(np.real(np.vdot(phi, phi)))
        if weight <= self.weight_tol:
            return weight, None
        coeffs = classical_lanczos(self.h_dense, phi / math.sqrt(weight),
                                   max_n=self.max_n, tol_b=self.tol_b)
        return weight, coeffs
