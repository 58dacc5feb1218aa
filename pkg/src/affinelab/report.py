"""Matplotlib figure rendering for sweep and reconstruction outputs.

Every CLI mode that writes delimited results also renders the matching
figure(s) next to them; the verify-all report stays figure-free so its bytes
are reproducible.  All figures use the non-interactive Agg backend.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "save_mu_roots_figure",
    "save_field_figure",
    "save_metric_sweep_figure",
    "save_holonomy_figure",
    "save_prop4_figure",
    "save_surface_figure",
]

_FIGSIZE = (6.4, 4.0)


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_mu_roots_figure(path, thetas=None):
    """The three root branches 2 cos(theta - 2 pi k / 3) over one period."""
    from .cubics import mu_roots

    if thetas is None:
        thetas = np.linspace(0.0, 2.0 * math.pi / 3.0, 241)
    roots = np.array([mu_roots(t).as_array() for t in thetas])
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for k, label in enumerate(("mu1", "mu2", "mu3")):
        ax.plot(thetas, roots[:, k], label=label)
    ax.set_xlabel(r"$\theta$")
    ax.set_ylabel(r"roots of $\mu^3 - 3\mu - 2\cos 3\theta$")
    ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, path)


def save_field_figure(field, path, title="conformal factor"):
    g = field.grid
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    im = ax.imshow(field.values, origin="lower", extent=(g.x0, g.x1, g.y0, g.y1),
                   aspect="equal", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("Re z")
    ax.set_ylabel("Im z")
    ax.set_title(title)
    _finish(fig, path)


def _loglog_with_fit(ax, lams, vals, label, slope):
    ax.loglog(lams, vals, "o-", label=f"{label} (slope {slope:.3f})")


def save_metric_sweep_figure(sweep, path):
    """log-log decay of the flat-metric deviation and its gradient."""
    lams = [r["lambda"] for r in sweep.records]
    ms = [r["m_sup"] for r in sweep.records]
    gs = [r["g_sup"] for r in sweep.records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 4.0))
    _loglog_with_fit(ax1, lams, ms, r"$\sup_K |\,\|U\|^2 e^{-3u} - 1/2\,|$", sweep.slope_m)
    ax1.loglog(lams, ms[0] * (np.array(lams) / lams[0]) ** (-2 / 3), "k--",
               alpha=0.5, label=r"$\lambda^{-2/3}$")
    _loglog_with_fit(ax2, lams, gs, "flat-chart gradient sup", sweep.slope_g)
    ax2.loglog(lams, gs[0] * (np.array(lams) / lams[0]) ** (-1 / 3), "k--",
               alpha=0.5, label=r"$\lambda^{-1/3}$")
    for ax in (ax1, ax2):
        ax.set_xlabel(r"$\lambda$")
        ax.legend()
        ax.grid(alpha=0.3, which="both")
    _finish(fig, path)


def save_holonomy_figure(rows, path):
    """Measured log-eigenvalues against predicted lambda^(1/3) mu_i L."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    lams = [r["lambda"] for r in rows]
    for i in range(3):
        ax.semilogx(lams, [r["log_spectrum"][i] for r in rows], "o",
                    label=f"measured l{i + 1}")
        ax.semilogx(lams, [r["predicted"][i] for r in rows], "k--", alpha=0.5)
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel("log eigenvalues")
    ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, path)


def save_prop4_figure(rows, path):
    """Perturbation size, growth ratios and characteristic-polynomial deviations."""
    lams = [r["lambda"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 4.0))
    ax1.semilogx(lams, [r["R_ratio"] for r in rows], "o-",
                 label=r"$R \cdot \lambda^{1/3}$")
    ax1.semilogx(lams, [r["offdiag_sup_ratio"] for r in rows], "s-",
                 label=r"column-1 growth / $\lambda^{-1/3}$")
    ax1.set_xlabel(r"$\lambda$")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.loglog(lams, [r["dev1"] for r in rows], "o-", label="trace deviation")
    ax2.loglog(lams, [r["dev2"] for r in rows], "s-", label="2nd-symmetric deviation")
    ax2.loglog(lams, rows[0]["dev1"] * (np.array(lams) / lams[0]) ** (-1 / 3),
               "k--", alpha=0.5, label=r"$\lambda^{-1/3}$")
    ax2.set_xlabel(r"$\lambda$")
    ax2.legend()
    ax2.grid(alpha=0.3, which="both")
    _finish(fig, path)


def save_surface_figure(patch, path):
    """3-D rendering of the reconstructed immersion patch."""
    fig = plt.figure(figsize=(6.4, 5.2))
    ax = fig.add_subplot(projection="3d")
    x, y, z = (patch.f[:, :, k] for k in range(3))
    ax.plot_surface(x, y, z, cmap="viridis", linewidth=0.2, edgecolor="k",
                    alpha=0.9)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_zlabel("x3")
    _finish(fig, path)
