"""SVG export of generated motions: one panel per frame, bones drawn as segments."""
from __future__ import annotations

import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .common import ArtifactIOError  # noqa: E402
from .motion_data import MotionSequence  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed salt keeps SVG element ids stable between runs.
matplotlib.rcParams["svg.hashsalt"] = "dualmotion"


def plot_sequence(seq: MotionSequence, path: Path | str, columns: int = 8, panel_size: float = 1.6) -> Path:
    """
    Write an orthographic x/y projection of every frame

    Args:
        seq: Motion to draw
        path: Target .svg file
        columns: Panels per row
        panel_size: Panel edge in inches

    Returns:
        The written path
    """
    path = Path(path)
    joints = seq.joints()
    rows = math.ceil(seq.length / columns)
    fig, axes = plt.subplots(rows, columns, figsize=(columns * panel_size, rows * panel_size), squeeze=False)
    lo, hi = joints[..., :2].min(), joints[..., :2].max()
    pad = 0.05 * max(hi - lo, 1e-6)
    for index, ax in enumerate(axes.flat):
        ax.set_axis_off()
        if index >= seq.length:
            continue
        frame = joints[index]
        for joint, parent in enumerate(seq.skeleton.parents):
            if parent < 0:
                continue
            ax.plot([frame[parent, 0], frame[joint, 0]], [frame[parent, 1], frame[joint, 1]],
                    color="tab:blue", linewidth=1.2)
        ax.scatter(frame[:, 0], frame[:, 1], s=4, color="black")
        ax.set_xlim(lo - pad, hi + pad)
        ax.set_ylim(lo - pad, hi + pad)
        ax.set_aspect("equal")
        ax.set_title(str(index), fontsize=6)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise ArtifactIOError(path, f"could not write plot: {e}") from e
    finally:
        plt.close(fig)
    logger.info(f"Saved plot to {path}")
    return path
