"""Continued-fraction Green's functions, spectral functions, and moments.

The resolvent element of a normalized state phi,

    g(z) = <phi| (z - H)^{-1} |phi> = 1 / (z - a_0 - b_1^2 / (z - a_1 - ...)),

is evaluated by a backward recurrence from the deepest level, which is stable
for the depths used here.  Diagonal fermionic Green's functions combine a
particle branch (state c^†|k>) and a hole branch (state c|k>):

    G(z) = w_+ g_+(z - E_k)  -  w_- g_-(-z + E_k),

with branch weights w_± the squared norms of the unnormalized branch states;
their sum is pinned to 1 by the anticommutator.  At finite temperature the
eigenstate contributions are Boltzmann-weighted, and states whose weight
falls below a cutoff are skipped.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ansatz import AnsatzCircuit, prepare_batch
from .krylov import LanczosCoefficients, fit_state_to_target
from .pauli import PauliSum, simplify


class GridError(ValueError):
    """Raised when an operation receives the wrong kind of energy grid."""


class MomentTruncationWarning(UserWarning):
    """A requested moment order exceeds the reliable depth of the recursion."""


@dataclass
class EnergyGrid:
    """Complex energies where a Green's function is evaluated."""

    kind: str
    points: np.ndarray
    beta: float | None = None
    eta: float | None = None

    @classmethod
    def matsubara(cls, beta: float, n_freq: int) -> "EnergyGrid":
        if beta <= 0 or n_freq < 1:
            raise GridError("need beta > 0 and n_freq >= 1")
        w = (2 * np.arange(n_freq) + 1) * np.pi / beta
        return cls("matsubara", 1j * w, beta=beta)

    @classmethod
    def real_axis(cls, omega_min: float, omega_max: float, n_points: int,
                  eta: float) -> "EnergyGrid":
        if eta <= 0:
            raise GridError("real-axis evaluation needs a positive broadening")
        w = np.linspace(omega_min, omega_max, n_points)
        return cls("real_axis", w + 1j * eta, eta=eta)

    @property
    def frequencies(self) -> np.ndarray:
        """Matsubara frequencies or real energies, without the complex shift."""
        return self.points.imag if self.kind == "matsubara" else self.points.real


@dataclass
class GreensFunction:
    grid: EnergyGrid
    values: np.ndarray
    label: str = ""
    branches: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["re_z", "im_z", "re_G", "im_G"])
            for z, g in zip(self.grid.points, self.values):
                writer.writerow([f"{z.real:.17g}", f"{z.imag:.17g}",
                                 f"{g.real:.17g}", f"{g.imag:.17g}"])


@dataclass
class GfBranch:
    """One resolvent branch of a diagonal Green's function."""

    weight: float
    coeffs: LanczosCoefficients | None
    sign: str          # "particle" or "hole"
    e_ref: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("branch weight is a squared norm and cannot be < 0")
        if self.sign not in ("particle", "hole"):
            raise ValueError(f"unknown branch sign {self.sign!r}")


def continued_fraction(z, coeffs: LanczosCoefficients):
    """Backward evaluation of the resolvent continued fraction at z.

    Accepts scalar or array arguments; poles on the real axis require a
    finite imaginary part in z.
    """
    if len(coeffs.a) == 0:
        raise ValueError("coefficients must contain at least a_0")
    z = np.asarray(z, dtype=complex)
    g = z - coeffs.a[-1]
    for k in range(coeffs.depth - 1, -1, -1):
        g = z - coeffs.a[k] - coeffs.b[k] ** 2 / g
    if np.any(g == 0):
        raise ZeroDivisionError("continued fraction hit a pole; add broadening")
    return 1.0 / g


def branch_values(branch: GfBranch, z: np.ndarray) -> np.ndarray:
    """Contribution of one branch at energies z (relative to e_ref).

    The particle branch is the resolvent at z + e_ref (poles at addition
    energies E_m - e_ref), the hole branch enters with a minus sign at
    -z + e_ref (poles at removal energies e_ref - E_m).
    """
    if branch.coeffs is None or branch.weight == 0.0:
        return np.zeros_like(np.asarray(z, dtype=complex))
    if branch.sign == "particle":
        return branch.weight * continued_fraction(z + branch.e_ref, branch.coeffs)
    return -branch.weight * continued_fraction(-z + branch.e_ref, branch.coeffs)


def assemble_zero_t_gf(engine, e_gs: float, orbital: int, spin: int,
                       grid: EnergyGrid, weight_tol: float = 1e-10,
                       label: str = "") -> GreensFunction:
    """Two-branch zero-temperature Green's function from a Lanczos engine.

    ``engine.branch(orbital, spin, dagger)`` must return the branch weight and
    the Lanczos coefficients of the normalized branch state (or None when the
    weight is negligible). Branches below ``weight_tol`` are skipped.
    """
    branches = []
    for dagger, sign in ((True, "particle"), (False, "hole")):
        weight, coeffs = engine.branch(orbital, spin, dagger)
        if weight <= weight_tol:
            branches.append(GfBranch(weight, None, sign, e_gs))
        else:
            branches.append(GfBranch(weight, coeffs, sign, e_gs))
    if all(b.coeffs is None for b in branches):
        warnings.warn("both branch weights vanish; returning a zero function")
    values = np.zeros(len(grid.points), dtype=complex)
    for b in branches:
        values += branch_values(b, grid.points)
    return GreensFunction(grid, values, label=label, branches=branches)


def assemble_finite_t_gf(states, beta: float, branch_fn, grid: EnergyGrid,
                         omega_b: float = 1e-10,
                         label: str = "") -> GreensFunction:
    """Boltzmann-weighted Green's function over a list of eigenstates.

    ``states`` is a sequence of ``(energy, token)`` pairs sorted by energy and
    including the ground state; ``branch_fn(token, dagger)`` returns the
    weight and Lanczos coefficients of one branch of that eigenstate.
    Boltzmann factors are computed over the supplied states; eigenstates
    whose normalized factor is at most ``omega_b`` are skipped (the lowest
    state always survives) and the weights are renormalized over the kept
    set, so a saturated cutoff reproduces the zero-temperature result
    exactly.  Truncation of the supplied list itself is the caller's
    responsibility.
    """
    if len(states) == 0:
        raise ValueError("need at least one eigenstate")
    if beta <= 0:
        raise ValueError("need beta > 0")
    energies = np.array([e for e, _ in states], dtype=float)
    e0_index = int(np.argmin(energies))
    boltzmann = np.exp(-beta * (energies - energies[e0_index]))
    rho = boltzmann / boltzmann.sum()
    keep = np.nonzero(rho > omega_b)[0].tolist()
    if e0_index not in keep:
        keep.append(e0_index)
    kept_weight = rho[keep].sum()
    values = np.zeros(len(grid.points), dtype=complex)
    branches = []
    for k in keep:
        energy, token = states[k]
        weight = rho[k] / kept_weight
        for dagger, sign in ((True, "particle"), (False, "hole")):
            bw, coeffs = branch_fn(token, dagger)
            br = GfBranch(bw, coeffs if bw > 0 else None, sign, float(energy))
            branches.append(br)
            values += weight * branch_values(br, grid.points)
    return GreensFunction(grid, values, label=label, branches=branches)


def dos(gf: GreensFunction) -> np.ndarray:
    """Spectral function A(w) = -Im G(w + i eta) / pi on a real-axis grid."""
    if gf.grid.kind != "real_axis":
        raise GridError("DOS requires a real-axis Green's function")
    return -gf.values.imag / np.pi


# ---------------------------------------------------------------------------
# Hamiltonian moments

@dataclass
class MomentSequence:
    """Moments mu_n = <phi|H^n|phi>, with provenance and per-fit fidelities."""

    mu: np.ndarray
    origin: str
    fit_fidelities: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if len(self.mu) and abs(self.mu[0] - 1.0) > 1e-12:
            raise ValueError("mu_0 must equal 1 for a normalized state")


def compute_moments_iterative(circuit: AnsatzCircuit, theta_phi, h: PauliSum,
                              max_order: int, *, seed: int = 0,
                              restarts: int = 6, fid_tol: float = 1e-6,
                              zero_tol: float = 1e-12) -> MomentSequence:
    """Moments from pairs of expectation values over iterated circuit states.

    From the state carrying moments up to order 2n, the next odd/even pair is
    mu_{2n+1} = mu_{2n} <H> and mu_{2n+2} = mu_{2n} <H^2>; the next carrier
    state, proportional to H applied to the current one, is loaded onto the
    circuit by maximizing the overlap with it.  A vanishing <H^2> makes all
    remaining moments zero.  Fit infidelities above ``fid_tol`` flag the
    affected orders.
    """
    if max_order < 1:
        raise ValueError("need max_order >= 1")
    h_dense = h.dense()
    h2_dense = h_dense @ h_dense
    theta = np.asarray(theta_phi, dtype=float)
    mu = [1.0]
    fidelities: list[float] = []
    flagged: list[int] = []
    scale = max(h.coefficient_norm(), 1.0)
    step = 0
    while len(mu) <= max_order:
        psi = prepare_batch(circuit, theta[None, :])[0]
        hpsi = h_dense @ psi
        exp_h = float(np.real(np.vdot(psi, hpsi)))
        exp_h2 = float(np.real(np.vdot(psi, h2_dense @ psi)))
        base = mu[2 * step]
        mu.append(base * exp_h)
        if len(mu) <= max_order:
            mu.append(base * exp_h2)
        if len(mu) > max_order:
            break
        if exp_h2 <= zero_tol * scale ** 2:
            mu.extend([0.0] * (max_order + 1 - len(mu)))
            break
        fit = fit_state_to_target(circuit, hpsi, warm_starts=[theta],
                                  seed=seed + 101 * step, restarts=restarts)
        fidelities.append(fit.fidelity)
        if 1.0 - fit.fidelity > fid_tol:
            flagged.append(2 * (step + 1))
        theta = fit.params
        step += 1
    return MomentSequence(np.array(mu[: max_order + 1]), "iterative_quantum",
                          fidelities, flagged)


def tridiagonal_matrix(coeffs: LanczosCoefficients) -> np.ndarray:
    t = np.diag(coeffs.a)
    if coeffs.depth:
        t += np.diag(coeffs.b, 1) + np.diag(coeffs.b, -1)
    return t


def moments_from_tridiagonal(coeffs: LanczosCoefficients, n: int) -> float:
    """mu_n as the (0, 0) element of the n-th power of the tridiagonal matrix.

    Exact for n up to 2m+1 when m off-diagonal coefficients are available;
    beyond that the value is returned with a truncation warning.
    """
    if n < 0:
        raise ValueError("need n >= 0")
    if n > 2 * coeffs.depth + 1:
        warnings.warn(
            f"moment order {n} exceeds the reliable depth {2 * coeffs.depth + 1} "
            "of the available coefficients", MomentTruncationWarning)
    t = tridiagonal_matrix(coeffs)
    return float(np.linalg.matrix_power(t, n)[0, 0])
