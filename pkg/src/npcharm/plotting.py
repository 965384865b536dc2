"""PNG figures for run reports (non-interactive Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.5, 3.4),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return str(path)


def energy_history(energies, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        E = np.asarray(energies, dtype=float)
        ax.semilogy(np.arange(len(E)), E - E.min() + 1e-16, lw=1.2)
        ax.set_xlabel("sweep")
        ax.set_ylabel("E - min E")
        return _save(fig, path)


def field_image(field, path, label="value"):
    """Heat map of a 2-D vertex field (middle slice for 3-D grids)."""
    grid = field.grid
    vals = np.where(field.mask, field.values, np.nan)
    if grid.dim == 3:
        vals = vals[:, :, grid.shape[2] // 2]
    elif grid.dim != 2:
        return None
    x0, y0 = grid.origin[:2]
    x1 = x0 + grid.spacing * (vals.shape[0] - 1)
    y1 = y0 + grid.spacing * (vals.shape[1] - 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        im = ax.imshow(vals.T, origin="lower", extent=(x0, x1, y0, y1), cmap="viridis")
        fig.colorbar(im, ax=ax, label=label)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        return _save(fig, path)


def holder_fits(fits, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for f in fits:
            if f.constant_map:
                continue
            r = np.asarray(f.radii)
            o = np.asarray(f.oscillation)
            ax.loglog(r, o, "o-", ms=3, lw=1, label=f"{tuple(f.center)}: {f.alpha:.3f}")
        ax.set_xlabel("radius")
        ax.set_ylabel("oscillation")
        if ax.lines:
            ax.legend(frameon=False)
        return _save(fig, path)


def gehring_curve(report, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        p = np.asarray(report.exponents)
        ax.plot(p, report.p_means, "o-", ms=3, lw=1, label="p-mean on half cube")
        ax.plot(p, report.C * np.asarray(report.rhs), "--", lw=1, label="C x bound")
        ax.set_xlabel("p")
        ax.legend(frameon=False)
        return _save(fig, path)
