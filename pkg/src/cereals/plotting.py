"""SVG learning-curve plots (matplotlib Agg, no UI)."""

from __future__ import annotations

from pathlib import Path

from .metrics import ALCurve


def plot_curves(
    rep_curves: list[ALCurve], mean_curve: ALCurve, p100_miou: float, path: str | Path
) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_px, ax_click) = plt.subplots(1, 2, figsize=(11, 4.2))
    for axis, attr, label in (
        (ax_px, "pixel_frac", "labeled pixel fraction"),
        (ax_click, "click_frac", "click fraction"),
    ):
        for curve in rep_curves:
            axis.plot(
                [getattr(p, attr) for p in curve.points],
                [p.miou for p in curve.points],
                color="0.75",
                linewidth=0.8,
            )
        axis.plot(
            [getattr(p, attr) for p in mean_curve.points],
            [p.miou for p in mean_curve.points],
            color="tab:blue",
            linewidth=1.8,
            label="mean",
        )
        axis.axhline(p100_miou, color="black", linewidth=1.0, label="p100")
        axis.axhline(0.95 * p100_miou, color="black", linestyle="--", linewidth=1.0, label="95% of p100")
        axis.set_xlabel(label)
        axis.set_ylabel("mIoU")
        axis.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
