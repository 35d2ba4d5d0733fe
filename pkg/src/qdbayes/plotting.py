"""Static figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(t_ns, ratio_opt, ansatz: dict[str, np.ndarray], spectrum_mT, probs, path,
               events=(), title: str = "") -> None:
    """Ratio curves, spectrum of the optimal observable and its outcome probabilities."""
    t_ns = np.asarray(t_ns)
    fig, axes = plt.subplots(3, 1, figsize=(7, 9), sharex=True)
    ax = axes[0]
    for name, curve in ansatz.items():
        ax.plot(t_ns, curve, "--", lw=1, label=name)
    ax.plot(t_ns, ratio_opt, "k-", lw=2, label="optimal")
    ax.set_ylabel("posterior / prior variance")
    ax.set_ylim(top=1.02)
    ax.legend(fontsize=8)
    axes[1].plot(t_ns, spectrum_mT, ".", ms=2)
    axes[1].set_ylabel("eigenvalues of L (mT)")
    axes[2].plot(t_ns, probs, ".", ms=2)
    axes[2].set_ylabel("outcome probabilities")
    axes[2].set_xlabel("t (ns)")
    for a in axes:
        a.set_xscale("log")
        for e in events:
            a.axvspan(e.t_lo, e.t_hi, color="r" if e.kind == "zeroth" else "b", alpha=0.2)
    if title:
        axes[0].set_title(title)
    _finish(fig, path)


def plot_channel_curves(t_ns, curves: dict[str, tuple[np.ndarray, np.ndarray]], path) -> None:
    """Population coefficient A and coherence modulus |E| against time, one line per field."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name, (A, E) in curves.items():
        axes[0].plot(t_ns, A, label=name)
        axes[1].plot(t_ns, np.abs(E), label=name)
    axes[0].set_ylabel("A")
    axes[1].set_ylabel("|E|")
    axes[1].set_xlabel("t (ns)")
    axes[0].legend(fontsize=8)
    for a in axes:
        a.set_xscale("log")
    _finish(fig, path)


def plot_n_comparison(t_ns, curves: dict[int, np.ndarray], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for N, curve in sorted(curves.items()):
        ax.plot(t_ns, curve, label=f"N = {N}")
    ax.set_xscale("log")
    ax.set_xlabel("t (ns)")
    ax.set_ylabel("posterior / prior variance")
    ax.legend()
    _finish(fig, path)


def plot_prior_scan(rows, path) -> None:
    """Minimum ratio against the number of dots, one line per prior."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    keys = sorted({(r.B0, r.dB) for r in rows})
    for B0, dB in keys:
        sel = sorted((r for r in rows if (r.B0, r.dB) == (B0, dB)), key=lambda r: r.N)
        ax.plot([r.N for r in sel], [r.min_ratio for r in sel], "o-",
                label=f"B0 = {B0 * 1e3:g} mT, dB = {dB * 1e3:g} mT")
    ax.set_xlabel("number of dots")
    ax.set_ylabel("minimum ratio over t")
    ax.legend(fontsize=8)
    _finish(fig, path)
