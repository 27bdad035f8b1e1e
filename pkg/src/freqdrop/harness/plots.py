"""Robustness figures rendered from comparison rows."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .compare import ALL, method_sort_key  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

LABELS = {"baseline": "Baseline", "cbs": "CBS", "fd_gf": "FD-GF", "fd_rf": "FD-RF"}


def _series(rows, method, kind):
    """(severities, means, spreads) with severity 0 taken from the clean cell."""
    pts = {}
    for r in rows:
        if r.method != method:
            continue
        if r.phase == "test":
            pts[0] = (r.mean, r.spread)
        elif r.corruption == kind and r.severity != ALL:
            pts[int(r.severity)] = (r.mean, r.spread)
    sev = sorted(pts)
    return sev, [pts[s][0] for s in sev], [pts[s][1] for s in sev]


def robustness_figure(rows, path, title="Accuracy under corruption"):
    """Accuracy vs. severity: one panel averaged over kinds, one per kind."""
    methods = sorted({r.method for r in rows}, key=method_sort_key)
    kinds = sorted({r.corruption for r in rows if r.phase == "corrupt" and r.corruption != ALL})
    panels = [ALL] + kinds
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6), sharey=True, squeeze=False)
        for ax, kind in zip(axes[0], panels):
            for m in methods:
                sev, mean, spread = _series(rows, m, kind)
                ax.errorbar(sev, mean, yerr=spread, marker="o", ms=3, lw=1.2, capsize=2, label=LABELS.get(m, m))
            ax.set_title("mean over kinds" if kind == ALL else kind.replace("_", " "))
            ax.set_xlabel("severity")
            ax.set_xticks(range(0, 6))
            ax.grid(alpha=0.3, lw=0.5)
        axes[0][0].set_ylabel("accuracy")
        axes[0][0].legend(frameon=False, loc="lower left")
        fig.suptitle(title)
        fig.tight_layout()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
    return path
