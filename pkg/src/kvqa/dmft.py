"""Self-consistent impurity embedding on a Bethe lattice.

The lattice enters only through the semicircular density of states of
half-bandwidth D = 2t, whose self-consistency condition is the closure
Delta = t^2 G.  Each iteration discretizes the current hybridization into a
finite bath, solves the resulting impurity model (variationally or with the
dense oracle), extracts the self-energy through the Dyson equation against
the fitted bath, and rebuilds the hybridization from the lattice-consistent
impurity Green's function with linear mixing.

Sign conventions: ``mu`` in a loop configuration is the chemical potential;
the impurity level of the discretized model is ``-mu``, so half filling for
interaction U sits at mu = U/2.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .aim import AimModel
from .greens import EnergyGrid, GreensFunction, dos
from .solvers import KvqaGfSolver, OracleGfSolver


class DmftError(ValueError):
    """Raised on invalid loop configurations."""


@dataclass
class Hybridization:
    grid: EnergyGrid
    values: np.ndarray


@dataclass
class DmftConfig:
    t: float = 1.0
    U: float = 4.0
    mu: float = 2.0
    beta: float = 50.0
    n_matsubara: int = 200
    n_bath: int = 3
    solver: str = "oracle"
    mixing: float = 0.5
    max_iter: int = 50
    tol: float = 1e-4
    n_layers: int = 6
    seed: int = 0
    ph_symmetric: bool | None = None   # default: on exactly at half filling
    omega_min: float = -12.0
    omega_max: float = 12.0
    n_omega: int = 1201
    eta: float = 0.05

    def __post_init__(self):
        if self.t < 0 or self.beta <= 0 or self.n_bath < 0:
            raise DmftError("need t >= 0, beta > 0 and n_bath >= 0")
        if self.solver not in ("oracle", "kvqa"):
            raise DmftError(f"unknown solver {self.solver!r}")
        if not 0 < self.mixing <= 1:
            raise DmftError("mixing must lie in (0, 1]")

    @property
    def half_bandwidth(self) -> float:
        return 2.0 * self.t


@dataclass
class DmftState:
    iteration: int
    bath_v: np.ndarray
    bath_eps: np.ndarray
    g_imp: GreensFunction
    g_imp_real: GreensFunction
    sigma: np.ndarray
    converged: bool
    history: list[float] = field(default_factory=list)
    fit_residuals: list[float] = field(default_factory=list)
    degenerate_iterations: list[int] = field(default_factory=list)


def bethe_lattice_gf(z, half_bandwidth: float) -> np.ndarray:
    """Local lattice Green's function 2(z - sqrt(z^2 - D^2)) / D^2.

    The square-root branch keeps Im G <= 0 in the upper half plane and
    G -> 1/z at large |z|.
    """
    d = half_bandwidth
    z = np.asarray(z, dtype=complex)
    s = np.sqrt(z - d) * np.sqrt(z + d)
    return 2.0 * (z - s) / d ** 2


def hybridization_from_bath(v, eps_matrix, grid: EnergyGrid) -> Hybridization:
    """Delta(z) = sum_k |v_k|^2 / (z - e_k) after diagonalizing the bath block."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    eps_matrix = np.atleast_2d(np.asarray(eps_matrix, dtype=float))
    if eps_matrix.shape != (len(v), len(v)):
        raise DmftError("bath matrix and hopping vector sizes disagree")
    evals, q = np.linalg.eigh(eps_matrix)
    v_rot = q.conj().T @ v
    z = grid.points[:, None]
    values = np.sum(np.abs(v_rot) ** 2 / (z - evals[None, :]), axis=1)
    return Hybridization(grid, values)


def fit_bath(target: Hybridization, n_bath: int, *, seed: int = 0,
             n_starts: int = 4, warm=None,
             ph_symmetric: bool = False) -> tuple[np.ndarray, np.ndarray, float]:
    """Discretize a hybridization into ``n_bath`` poles by weighted least squares.

    Minimizes sum_n |Delta_fit(iw_n) - Delta(iw_n)|^2 / w_n (low frequencies
    dominate the metal/insulator balance, hence the 1/w weight).  Multi-start
    and deterministic; returns (V, eps, residual) with eps sorted ascending
    and V non-negative.  With ``ph_symmetric`` the poles come in exact
    (-e, +e) pairs with equal couplings (plus one pinned at zero when n_bath
    is odd), so particle-hole symmetric problems stay exactly symmetric.
    """
    if n_bath < 1:
        raise DmftError("need at least one bath site")
    w = target.grid.frequencies
    vals = target.values
    weights = 1.0 / np.abs(w)
    n_pairs = n_bath // 2
    center = n_bath % 2

    def unpack(x):
        if not ph_symmetric:
            return x[:n_bath], x[n_bath:]
        vp = x[:n_pairs]
        ep = x[n_pairs: 2 * n_pairs]
        v = np.concatenate([vp, x[2 * n_pairs: 2 * n_pairs + center], vp])
        e = np.concatenate([-np.abs(ep), np.zeros(center), np.abs(ep)])
        return v, e

    def residual(x):
        v, e = unpack(x)
        fit = np.sum(v[None, :] ** 2 / (1j * w[:, None] - e[None, :]), axis=1)
        diff = (fit - vals) * np.sqrt(weights)
        return np.concatenate([diff.real, diff.imag])

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scale = max(float(np.max(np.abs(vals) * np.abs(w))) ** 0.5, 0.1)

    def pack(v, e):
        if not ph_symmetric:
            return np.concatenate([v, e])
        order = np.argsort(e)
        v, e = np.asarray(v)[order], np.asarray(e)[order]
        return np.concatenate([v[:n_pairs], np.abs(e[:n_pairs]),
                               v[n_pairs:n_pairs + center]])

    starts = []
    if warm is not None:
        starts.append(pack(np.abs(warm[0]), warm[1]))
    starts.append(pack(np.full(n_bath, scale), np.linspace(-1.0, 1.0, n_bath)))
    while len(starts) < n_starts + (warm is not None):
        starts.append(pack(rng.uniform(0.1, 2 * scale, n_bath),
                           np.sort(rng.uniform(-3.0, 3.0, n_bath))))
    best = None
    for x0 in starts:
        res = least_squares(residual, x0, method="lm", max_nfev=20000)
        if best is None or res.cost < best.cost:
            best = res
    v, e = unpack(best.x)
    v = np.abs(v)
    order = np.argsort(e)
    return v[order], e[order], float(2.0 * best.cost)


def dyson_self_energy(g0_inv: np.ndarray, g_imp: np.ndarray) -> np.ndarray:
    """Sigma = G0^{-1} - G^{-1}."""
    g_imp = np.asarray(g_imp, dtype=complex)
    if np.any(g_imp == 0):
        raise ZeroDivisionError("impurity Green's function vanishes on the grid")
    return np.asarray(g0_inv, dtype=complex) - 1.0 / g_imp


def bethe_self_consistency(g_imp, t: float) -> Hybridization:
    """Closure Delta = t^2 G for the infinite-coordination Bethe lattice."""
    if isinstance(g_imp, GreensFunction):
        return Hybridization(g_imp.grid, t ** 2 * g_imp.values)
    grid, values = g_imp
    return Hybridization(grid, t ** 2 * np.asarray(values, dtype=complex))


def _make_solver(config: DmftConfig):
    if config.solver == "oracle":
        return OracleGfSolver()
    return KvqaGfSolver(n_layers=config.n_layers, seed=config.seed)


def _write_iteration(out_dir: Path, it: int, g_mats: GreensFunction,
                     g_real: GreensFunction, v, e) -> None:
    d = out_dir / f"it_{it:03d}"
    d.mkdir(parents=True, exist_ok=True)
    g_mats.write_csv(d / "gf_matsubara.csv")
    g_real.write_csv(d / "gf_real.csv")
    with open(d / "bath.csv", "w") as fh:
        fh.write("V,eps\n")
        for vk, ek in zip(v, e):
            fh.write(f"{vk:.17g},{ek:.17g}\n")


def run_dmft(config: DmftConfig, out_dir=None) -> DmftState:
    """Iterate the impurity/lattice loop to self-consistency.

    The loop Green's function is the lattice-consistent impurity propagator
    1/(iw + mu - Delta - Sigma) built from the continuous hybridization and
    the self-energy of the discretized model; the first iteration sets the
    self-energy to zero.  Convergence is the max-norm change of this function
    between iterations.
    """
    grid_m = EnergyGrid.matsubara(config.beta, config.n_matsubara)
    grid_r = EnergyGrid.real_axis(config.omega_min, config.omega_max,
                                  config.n_omega, config.eta)
    mu, t, d_half = config.mu, config.t, config.half_bandwidth
    zeta_m = grid_m.points + mu
    zeta_r = grid_r.points + mu
    solver = _make_solver(config)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    # first iteration: dynamic self-energy zero, static Hartree shift kept
    # (U/2 at the paramagnetic half-filled starting density; 0 when U = 0)
    hartree = config.U / 2.0
    g_m = bethe_lattice_gf(zeta_m - hartree, d_half)
    g_r = bethe_lattice_gf(zeta_r - hartree, d_half)
    delta_m = t ** 2 * g_m
    delta_r = t ** 2 * g_r
    g_prev = g_m.copy()

    history: list[float] = []
    fit_residuals: list[float] = []
    degenerate: list[int] = []
    warm = None
    converged = False
    state = None
    sigma_m = np.zeros_like(g_m)
    start = time.time()
    symmetric = config.ph_symmetric
    if symmetric is None:
        symmetric = abs(config.mu - config.U / 2.0) < 1e-12
    for it in range(1, config.max_iter + 1):
        v, e, resid = fit_bath(Hybridization(grid_m, delta_m), config.n_bath,
                               seed=config.seed + it, warm=warm,
                               ph_symmetric=symmetric)
        warm = (v, e)
        fit_residuals.append(resid)
        model = AimModel(n_imp=1, n_bath=config.n_bath, mu=-mu, U=config.U,
                         V=v, eps=np.diag(e))
        sol = solver.solve(model, {"mats": grid_m, "real": grid_r})
        if sol.degenerate:
            degenerate.append(it)
        delta_fit_m = hybridization_from_bath(v, np.diag(e), grid_m).values
        delta_fit_r = hybridization_from_bath(v, np.diag(e), grid_r).values
        sigma_m = dyson_self_energy(zeta_m - delta_fit_m, sol.gf["mats"].values)
        sigma_r = dyson_self_energy(zeta_r - delta_fit_r, sol.gf["real"].values)
        g_m = 1.0 / (zeta_m - delta_m - sigma_m)
        g_r = 1.0 / (zeta_r - delta_r - sigma_r)
        metric = float(np.max(np.abs(g_m - g_prev)))
        history.append(metric)
        gf_m = GreensFunction(grid_m, g_m, label="g_loop")
        gf_r = GreensFunction(grid_r, g_r, label="g_loop")
        if out_dir is not None:
            _write_iteration(out_dir, it, gf_m, gf_r, v, e)
        state = DmftState(iteration=it, bath_v=v, bath_eps=e, g_imp=gf_m,
                          g_imp_real=gf_r, sigma=sigma_m,
                          converged=False, history=history,
                          fit_residuals=fit_residuals,
                          degenerate_iterations=degenerate)
        if metric <= config.tol:
            converged = True
            break
        delta_m = config.mixing * (t ** 2 * g_m) + (1 - config.mixing) * delta_m
        delta_r = config.mixing * (t ** 2 * g_r) + (1 - config.mixing) * delta_r
        g_prev = g_m.copy()
    state.converged = converged
    if out_dir is not None:
        manifest = {
            "config": config.__dict__ | {"solver": config.solver},
            "converged": converged,
            "iterations": state.iteration,
            "history": history,
            "fit_residuals": fit_residuals,
            "degenerate_iterations": degenerate,
            "final_dos_at_zero": float(np.interp(
                0.0, grid_r.frequencies, dos(state.g_imp_real))),
            "duration_seconds": time.time() - start,
        }
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=float)
    return state
