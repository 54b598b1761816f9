"""Line plots of experiment reports (rejection rate vs n, power vs delta)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import ExperimentReport  # noqa: E402

_STYLE = {"selective": ("C0", "o"), "oc": ("C1", "s"), "naive": ("C2", "^")}


def plot_report(report: ExperimentReport, path: str | Path, per_trial: bool | None = None) -> Path:
    """Write one line per method; the format follows the file suffix (svg, png, pdf).

    Power reports plot the per-trial (all K rejected) rate by default, every
    other kind plots the per-change-point rejection rate.
    """
    path = Path(path)
    power = report.kind == "power"
    if per_trial is None:
        per_trial = power
    xkey = "delta" if power else "n"
    alpha = report.config.get("alpha")

    # fixed hash salt and no date keep SVG output byte-stable across runs
    with plt.rc_context({"svg.hashsalt": "rnncpsi", "font.size": 9}):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        for method in report.config["methods"]:
            cells = sorted((c for c in report.cells if c.method == method), key=lambda c: getattr(c, xkey))
            xs = [getattr(c, xkey) for c in cells]
            ys = [c.rate_trial if per_trial else c.rate for c in cells]
            color, marker = _STYLE.get(method, ("k", "x"))
            ax.plot(xs, ys, color=color, marker=marker, label=method)
        if alpha is not None and not power:
            ax.axhline(alpha, color="0.5", lw=0.8, ls="--")
        ax.set_xlabel("shift size" if power else "sequence length n")
        ax.set_ylabel("power" if power else "rejection rate")
        ax.set_ylim(0.0, 1.0 if power else max(0.2, ax.get_ylim()[1]))
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
        plt.close(fig)
    return path
