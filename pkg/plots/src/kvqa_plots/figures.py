"""Deterministic figure rendering from solver CSV outputs.

Four figure kinds are supported:

* ``benchmark_layers`` - mean relative Green's-function deviation per
  Matsubara index, one curve per ansatz depth, std-dev bands.
* ``gf_evolution`` - Im G on the Matsubara axis and the spectral function on
  the real axis for every iteration of a self-consistency run directory.
* ``dos_compare`` - spectral functions of two runs overlaid, solid versus
  dashed (circuit versus reference convention).
* ``moments_error`` - mean relative moment error per order with bands.

Rendering is a pure function of the input files: fixed styles, no
timestamps, deterministic colors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("benchmark_layers", "gf_evolution", "dos_compare",
                "moments_error")


class FigureError(ValueError):
    """Missing files or columns; raised before any rendering happens."""


@dataclass
class FigureSpec:
    kind: str
    inputs: dict = field(default_factory=dict)
    out_path: str | Path = "figure.png"

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise FigureError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {FIGURE_KINDS}")


def _read_csv(path: Path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    if not Path(path).exists():
        raise FigureError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    missing = [c for c in required if c not in header]
    if missing:
        raise FigureError(f"{path}: missing required columns {missing} "
                          f"(found {header})")
    cols = {name: [] for name in header}
    for row in rows:
        for name, val in zip(header, row):
            cols[name].append(float(val))
    return {name: np.asarray(vals) for name, vals in cols.items()}


def _dos_from_gf_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = _read_csv(path, ("re_z", "im_z", "re_G", "im_G"))
    return data["re_z"], -data["im_G"] / np.pi


_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "font.size": 9.5,
}

_COLORS = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f"]


def _render_benchmark_layers(spec: FigureSpec, ax) -> None:
    data = _read_csv(Path(spec.inputs["csv"]),
                     ("n_layers", "omega_index", "mean_dG", "std_dG"))
    layers = np.unique(data["n_layers"].astype(int))
    for k, nl in enumerate(sorted(layers)):
        sel = data["n_layers"].astype(int) == nl
        idx = data["omega_index"][sel]
        order = np.argsort(idx)
        idx = idx[order]
        mean = data["mean_dG"][sel][order]
        std = data["std_dG"][sel][order]
        color = _COLORS[k % len(_COLORS)]
        ax.plot(idx, mean, color=color, label=f"{nl} layers")
        ax.fill_between(idx, np.maximum(mean - std, 1e-12), mean + std,
                        color=color, alpha=0.25, linewidth=0)
    ax.set_yscale("log")
    ax.set_xlabel("Matsubara index n")
    ax.set_ylabel(r"relative deviation $\Delta G(i\omega_n)$")
    ax.legend(frameon=False)


def _iteration_dirs(run_dir: Path) -> list[Path]:
    dirs = sorted(run_dir.glob("it_*"))
    if not dirs:
        raise FigureError(f"{run_dir}: no it_*/ iteration directories found")
    return dirs


def _render_gf_evolution(spec: FigureSpec, fig) -> None:
    run_dir = Path(spec.inputs["run_dir"])
    dirs = _iteration_dirs(run_dir)
    ax_m, ax_r = fig.subplots(2, 1)
    for k, d in enumerate(dirs):
        mats = _read_csv(d / "gf_matsubara.csv", ("re_z", "im_z", "re_G", "im_G"))
        w, a = _dos_from_gf_csv(d / "gf_real.csv")
        color = plt.cm.viridis(k / max(len(dirs) - 1, 1))
        label = f"it {k + 1}"
        ax_m.plot(mats["im_z"], mats["im_G"], color=color, label=label)
        ax_r.plot(w, a, color=color, label=label)
    ax_m.set_xlabel(r"$\omega_n$ (eV)")
    ax_m.set_ylabel(r"Im $G(i\omega_n)$ (1/eV)")
    ax_r.set_xlabel(r"$\omega$ (eV)")
    ax_r.set_ylabel(r"$A(\omega)$ (1/eV)")
    if len(dirs) <= 10:
        ax_m.legend(frameon=False, ncol=2, fontsize=8)


def _render_dos_compare(spec: FigureSpec, ax) -> None:
    w1, a1 = _dos_from_gf_csv(Path(spec.inputs["solid"]))
    w2, a2 = _dos_from_gf_csv(Path(spec.inputs["dashed"]))
    ax.plot(w1, a1, "-", color=_COLORS[1], label=spec.inputs.get(
        "solid_label", "circuit emulator"))
    ax.plot(w2, a2, "--", color=_COLORS[0], label=spec.inputs.get(
        "dashed_label", "reference"))
    ax.set_xlabel(r"$\omega$ (eV)")
    ax.set_ylabel(r"$A(\omega)$ (1/eV)")
    ax.legend(frameon=False)


def _render_moments_error(spec: FigureSpec, ax) -> None:
    data = _read_csv(Path(spec.inputs["csv"]),
                     ("n_layers", "order", "mean_rel_err", "std_rel_err"))
    layers = np.unique(data["n_layers"].astype(int))
    for k, nl in enumerate(sorted(layers)):
        sel = (data["n_layers"].astype(int) == nl) & (data["order"] >= 1)
        order = data["order"][sel]
        srt = np.argsort(order)
        order = order[srt]
        mean = data["mean_rel_err"][sel][srt]
        std = data["std_rel_err"][sel][srt]
        color = _COLORS[k % len(_COLORS)]
        ax.plot(order, mean, "o-", color=color, markersize=3,
                label=f"{nl} layers")
        ax.fill_between(order, np.maximum(mean - std, 1e-16), mean + std,
                        color=color, alpha=0.25, linewidth=0)
    ax.set_yscale("log")
    ax.set_xlabel("moment order n")
    ax.set_ylabel("relative error")
    ax.legend(frameon=False)


def render(spec: FigureSpec) -> Path:
    """Render one figure to ``spec.out_path``; returns the written path."""
    out = Path(spec.out_path)
    with plt.rc_context(_STYLE):
        fig = plt.figure()
        try:
            if spec.kind == "benchmark_layers":
                _render_benchmark_layers(spec, fig.subplots())
            elif spec.kind == "dos_compare":
                _render_dos_compare(spec, fig.subplots())
            elif spec.kind == "moments_error":
                _render_moments_error(spec, fig.subplots())
            else:
                _render_gf_evolution(spec, fig)
            fig.tight_layout()
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out, metadata={"Software": None})
        finally:
            plt.close(fig)
    return out
