"""Report figures. Everything renders off-screen with the Agg backend.

PNG metadata is stripped so reruns produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
}


def _save(fig, path):
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_eval(rows, path, title="per-frame metrics"):
    """PSNR and SSIM per frame (two stacked panels)."""
    frames = [r["frame"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 4), sharex=True)
        top.plot(frames, [r["psnr"] for r in rows], color="tab:blue")
        top.set_ylabel("PSNR [dB]")
        bottom.plot(frames, [r["ssim"] for r in rows], color="tab:green")
        bottom.set_ylabel("SSIM")
        bottom.set_xlabel("frame")
        top.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def plot_leakage(angles, leak_rotate_first, leak_deform_first, path):
    """Expression leakage against rotation angle for both transform orders (log y)."""
    floor = 1e-18
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        ax.scatter(angles, np.maximum(leak_rotate_first, floor), s=8, color="tab:red",
                   label="rotate, then deform")
        ax.scatter(angles, np.maximum(leak_deform_first, floor), s=8, color="tab:blue",
                   label="deform, then rotate")
        ax.set_yscale("log")
        ax.set_xlabel("rotation angle [deg]")
        ax.set_ylabel("max |delta error|")
        ax.legend(loc="center right", frameon=False)
        fig.tight_layout()
        _save(fig, path)
