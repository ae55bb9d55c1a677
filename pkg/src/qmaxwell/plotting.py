"""Report figures written next to the trace CSV (non-interactive backend)."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _positive(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 0, y, np.nan)


def plot_energies(trace, path):
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), sharex=True)
    for ax, prefix, title in zip(axes, "edz", ("energies e_k", "boundary dissipation d_k", "norms z_k")):
        for k in range(4):
            ax.semilogy(trace.t, _positive(trace[f"{prefix}{k}"]), label=f"k={k}")
        ax.set_title(title)
        ax.set_xlabel("t")
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def plot_divergence(trace, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for col in ("divD", "divB", "bc_residual"):
        ax.semilogy(trace.t, _positive(trace[col]) + 1e-300, label=col)
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.set_title("divergence and boundary residuals")
    return _save(fig, path)


def plot_decay(trace, fit, path, column="e0"):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.semilogy(trace.t, _positive(trace[column]), label=column)
    if fit is not None:
        t = np.linspace(fit.window[0], fit.window[1], 50)
        ax.semilogy(t, fit.M * np.exp(-fit.omega * t), "--", label=f"fit omega={fit.omega:.3g}, R2={fit.r2:.4f}")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    return _save(fig, path)


def write_report_figures(trace, out_dir, prefix="run", fit=None, column="e0"):
    """Write the standard figures and return their paths."""
    return [
        plot_energies(trace, os.path.join(out_dir, f"{prefix}_energies.png")),
        plot_divergence(trace, os.path.join(out_dir, f"{prefix}_divergence.png")),
        plot_decay(trace, fit, os.path.join(out_dir, f"{prefix}_decay.png"), column),
    ]
