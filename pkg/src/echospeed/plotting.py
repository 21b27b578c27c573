"""Report figures written as SVG files.

Output is byte-reproducible: the SVG id salt is fixed and no creation date
is embedded.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "echospeed",
    "svg.fonttype": "path",
    "axes.labelsize": 11,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "legend.fontsize": 9,
    "legend.frameon": False,
}

COLORS = ("#1f77b4", "#d62728")


def _svg_bytes(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def speed_distribution_svg(a, b, labels=("a", "b"), unit="km/h", bins=20) -> bytes:
    """Overlaid histograms beside box plots of two speed samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with plt.rc_context(STYLE):
        fig, (ax_hist, ax_box) = plt.subplots(
            1, 2, figsize=(8, 3.5), gridspec_kw={"width_ratios": [3, 1]}
        )
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        edges = np.linspace(lo, hi if hi > lo else lo + 1, bins + 1)
        for sample, label, color in zip((a, b), labels, COLORS):
            ax_hist.hist(sample, bins=edges, density=True, alpha=0.5, color=color, label=label)
        ax_hist.set_xlabel(f"speed [{unit}]")
        ax_hist.set_ylabel("density")
        ax_hist.legend()

        box = ax_box.boxplot([a, b], patch_artist=True)
        ax_box.set_xticks([1, 2], labels)
        for patch, color in zip(box["boxes"], COLORS):
            patch.set_facecolor(color)
            patch.set_alpha(0.5)
        ax_box.set_ylabel(f"speed [{unit}]")
        fig.tight_layout()
        return _svg_bytes(fig)


def residual_scatter_svg(predicted, residuals, split=100.0) -> bytes:
    """Residual (predicted minus reference) against predicted speed."""
    predicted = np.asarray(predicted, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.axhline(0.0, color="0.5", lw=0.8)
        ax.axvline(split, color="0.5", lw=0.8, ls="--")
        ax.scatter(predicted, residuals, s=18, color=COLORS[0])
        ax.set_xlabel("predicted speed [km/h]")
        ax.set_ylabel("residual [km/h]")
        fig.tight_layout()
        return _svg_bytes(fig)


def mask_preview_svg(mask, band=None) -> bytes:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 5))
        if band is not None:
            ax.imshow(band, cmap="gray", interpolation="nearest")
        ax.imshow(np.ma.masked_where(~mask, mask), cmap="autumn", alpha=0.4, interpolation="nearest")
        ax.set_xticks([])
        ax.set_yticks([])
        return _svg_bytes(fig)
