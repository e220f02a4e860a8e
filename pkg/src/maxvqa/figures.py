"""Heatmaps, response bar charts and quality-map overlays.

Every figure is written together with a tab-separated sidecar holding the
exact numbers plotted, so results can be checked without reading images.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402


def _sidecar(path: Path, header: list[str], rows) -> Path:
    side = path.with_suffix(".tsv")
    lines = ["\t".join(header)]
    lines += ["\t".join(str(v) if isinstance(v, str) else repr(float(v)) for v in row) for row in rows]
    side.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return side


def matrix_heatmap(matrix, labels, path, title="", row_labels=None):
    if matrix is None:
        raise DataError("no matrix to plot")
    matrix = np.asarray(matrix, dtype=float)
    row_labels = list(row_labels or labels)
    path = Path(path)
    fig, ax = plt.subplots(figsize=(0.45 * len(labels) + 2, 0.45 * len(row_labels) + 1.5))
    im = ax.imshow(matrix, vmin=-1, vmax=1, cmap="RdYlGn")
    ax.set_xticks(range(len(labels)), labels, rotation=90)
    ax.set_yticks(range(len(row_labels)), row_labels)
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=5)
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    side = _sidecar(path, ["axis"] + list(labels), ([r] + list(row) for r, row in zip(row_labels, matrix)))
    return path, side


def response_bars(rows: list[dict], path, title="Absolute responses"):
    """Paired AMR / ARR bars per axis; ``rows`` as produced by analytics.opinion_summary."""
    if not rows:
        raise DataError("no response statistics to plot")
    path = Path(path)
    codes = [r["axis_code"] for r in rows]
    x = np.arange(len(codes))
    fig, ax = plt.subplots(figsize=(0.5 * len(codes) + 2, 3.5))
    ax.bar(x - 0.2, [r["amr"] for r in rows], width=0.4, label="AMR")
    ax.bar(x + 0.2, [r["arr"] for r in rows], width=0.4, label="ARR", color="0.6")
    ax.set_xticks(x, codes, rotation=45)
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    side = _sidecar(path, ["axis_code", "amr", "arr"], ([r["axis_code"], r["amr"], r["arr"]] for r in rows))
    return path, side


def quality_map_overlays(frame: np.ndarray, maps: dict[str, np.ndarray], path, alpha=0.5):
    """One panel per axis: the frame with that axis's (G, G) map upsampled on top."""
    if not maps:
        raise DataError("no quality maps to plot")
    path = Path(path)
    h, w = frame.shape[:2]
    fig, axes = plt.subplots(1, len(maps), figsize=(3.2 * len(maps), 3.2 * h / w + 0.6), squeeze=False)
    rows = []
    for ax, (code, grid) in zip(axes[0], maps.items()):
        grid = np.asarray(grid, dtype=float)
        ax.imshow(frame)
        ax.imshow(grid, cmap="RdYlGn", alpha=alpha, extent=(0, w, h, 0), interpolation="nearest",
                  vmin=float(grid.min()), vmax=float(grid.max()) if grid.max() > grid.min() else float(grid.min()) + 1e-6)
        ax.set_title(code)
        ax.axis("off")
        for (i, j), v in np.ndenumerate(grid):
            rows.append([code, str(i), str(j), v])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    side = _sidecar(path, ["axis_code", "row", "col", "score"], rows)
    return path, side


def grayscale_map(grid: np.ndarray, path, scale: int = 16):
    """Quality map as an 8-bit grayscale PNG (0 -> black, 1 -> white)."""
    from PIL import Image

    grid = np.clip(np.asarray(grid, dtype=float), 0, 1)
    img = Image.fromarray(np.round(grid * 255).astype(np.uint8), mode="L")
    img = img.resize((grid.shape[1] * scale, grid.shape[0] * scale), Image.NEAREST)
    img.save(path)
    return Path(path)
