"""Figure rendering for evaluation artifacts.

Every report command can drop plot-ready CSVs; these helpers render the
standard figures (error-rate curves, training-loss curves, latency bars)
next to them.  Matplotlib is imported lazily with the Agg backend so library
users who never plot pay nothing and no display is required.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np

__all__ = ["plot_error_curves", "plot_loss_curves", "plot_latency_bars"]

_STYLE = {
    "viterbi-hard": dict(color="tab:red", marker="s"),
    "viterbi-soft": dict(color="tab:green", marker="^"),
    "map-oracle": dict(color="tab:purple", marker="d"),
    "bit-flip": dict(color="tab:orange", marker="v"),
    "bp": dict(color="tab:green", marker="^"),
    "cnn": dict(color="tab:blue", marker="o"),
    "hard-slice": dict(color="tab:gray", marker="x"),
}


def _pyplot():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def plot_error_curves(report, path, metric: str = "ber", title: str | None = None):
    """Semilog error-rate curves per decoder with 95% interval bars."""
    if metric not in ("ber", "bler"):
        raise ValueError("metric must be 'ber' or 'bler'")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    for name in report.decoders():
        pts = sorted((p for p in report.points if p.decoder == name),
                     key=lambda p: p.snr_db)
        x = [p.snr_db for p in pts]
        y = [getattr(p, metric) for p in pts]
        err = [getattr(p, f"{metric}_ci95") for p in pts]
        ax.errorbar(x, y, yerr=err, label=name, capsize=2.5,
                    **_STYLE.get(name, {}))
    positive = [getattr(p, metric) for p in report.points if getattr(p, metric) > 0]
    ax.set_yscale("log")
    if positive:
        ax.set_ylim(bottom=min(positive) / 3)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel(metric.upper())
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_loss_curves(results, path, title: str | None = None):
    """Training-loss curves, one line per sweep configuration.

    Seeds sharing a configuration id prefix (everything before the trailing
    ``-s<seed>``) share a color.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    groups = defaultdict(list)
    for r in results:
        cid = r.config_id if hasattr(r, "config_id") else r[0]
        hist = r.history if hasattr(r, "history") else r[1]
        base = cid.rsplit("-s", 1)[0]
        groups[base].append((cid, hist))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for gi, (base, members) in enumerate(sorted(groups.items())):
        color = colors[gi % len(colors)]
        for mi, (cid, hist) in enumerate(members):
            its = [e[0] for e in hist.entries]
            ls = [e[1] for e in hist.entries]
            ax.plot(its, ls, color=color, alpha=0.8,
                    label=base if mi == 0 else None)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("batch MSE loss")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_latency_bars(records, path, title: str | None = None):
    """Per-dataword decode time grouped by blocklength, one bar per decoder."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    ns = sorted({r.n for r in records})
    names = sorted({r.decoder for r in records})
    width = 0.8 / max(len(names), 1)
    for di, name in enumerate(names):
        xs, ys = [], []
        for ni, n in enumerate(ns):
            rec = [r for r in records if r.decoder == name and r.n == n]
            if rec:
                xs.append(ni + di * width)
                ys.append(rec[0].mean_ms)
        color = _STYLE.get(name, {}).get("color")
        ax.bar(xs, ys, width=width, label=name, color=color)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(ns))])
    ax.set_xticklabels([str(n) for n in ns])
    ax.set_yscale("log")
    ax.set_xlabel("blocklength n")
    ax.set_ylabel("time per dataword (ms)")
    ax.grid(True, axis="y", which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
