"""Figures for step traces and scaling fits (Agg backend, no timestamps in the files)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden = (np.sqrt(5) - 1.0) / 2.0
fig_width = 6.0
colors = ["#08589e", "#2b8cbe", "#4eb3d3", "#7bccc4", "#a8ddb5", "#e34a33"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 9,
    "font.family": "serif",
    "font.size": 8,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden],
    "figure.dpi": 120,
    "lines.linewidth": 1,
    "lines.markersize": 3,
}

PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_step_traces(traces, path):
    """Energy gaps, corrector sizes and stress pieces against time."""
    with plt.rc_context(params):
        fig, axes = plt.subplots(1, 3, figsize=(fig_width * 1.6, fig_width * golden * 0.8))
        t = np.array([r["t"] for r in traces])
        ax = axes[0]
        ax.plot(t, [r["gap_q"] for r in traces], "o-", label="e - |v_q|^2")
        ax.plot(t, [r["gap_q1"] for r in traces], "s-", label="e - |v_q+1|^2")
        ax.axhline(0.0, color="0.6", lw=0.5)
        ax.set_xlabel("t")
        ax.set_ylabel("energy gap")
        ax.legend(frameon=False)
        ax = axes[1]
        for key in ("wp_l2", "wc_l2", "wt_l2"):
            y = np.array([r[key] for r in traces])
            ax.semilogy(t[y > 0], y[y > 0], "o-", label=key.replace("_l2", ""))
        ax.set_xlabel("t")
        ax.set_ylabel("L2 norm")
        ax.legend(frameon=False)
        ax = axes[2]
        for key in ("R_lin", "R_cor", "R_osc", "R_com", "R_loc"):
            y = np.array([r[key] for r in traces])
            if np.any(y > 0):
                ax.semilogy(t[y > 0], y[y > 0], "o-", label=key)
        ax.set_xlabel("t")
        ax.set_ylabel("L1 norm")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_scaling(fit, path):
    """Measured norms against lambda on log-log axes, one panel per field."""
    names = sorted({r["field"] for r in fit.rows})
    with plt.rc_context(params):
        fig, axes = plt.subplots(1, len(names), figsize=(fig_width * 1.6, fig_width * golden * 0.8), squeeze=False)
        for ax, name in zip(axes[0], names):
            keys = sorted({(r["N"], r["M"], r["p"]) for r in fit.rows if r["field"] == name})
            for N, M, p in keys:
                rows = [r for r in fit.rows if (r["field"], r["N"], r["M"], r["p"]) == (name, N, M, p)]
                ax.loglog([r["lambda"] for r in rows], [r["measured"] for r in rows], "o-", label=f"N{N} M{M} p{p:g}")
            ax.set_title(name)
            ax.set_xlabel("lambda")
        axes[0][0].legend(frameon=False, fontsize=5)
        fig.tight_layout()
        return _save(fig, path)


def plot_checks(report, path):
    """Measured/bound ratio of every finite-bound check, log scale."""
    rows = [c for c in report.checks if c.relation == "<=" and np.isfinite(c.bound) and c.bound > 0]
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(fig_width, max(2.0, 0.16 * len(rows) + 0.8)))
        vals = [max(c.measured / c.bound, 1e-18) for c in rows]
        ypos = np.arange(len(rows))
        ax.barh(ypos, vals, color=[colors[0] if c.passed else colors[5] for c in rows])
        ax.set_xscale("log")
        ax.axvline(1.0, color="k", lw=0.6)
        ax.set_yticks(ypos)
        ax.set_yticklabels([c.name for c in rows], fontsize=5)
        ax.set_xlabel("measured / bound")
        fig.tight_layout()
        return _save(fig, path)
