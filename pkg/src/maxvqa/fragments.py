"""Temporally aligned fragment sampling.

Each frame is cut into a ``G_f x G_f`` grid, one ``S_f x S_f`` mini-patch is
taken from every cell at native resolution, and the patches are spliced back
in grid order. One offset table is drawn per clip and reused for every
sampled frame, so a given cell always looks at the same pixels over time.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FrameTooSmallError, GeometryMismatchError

logger = logging.getLogger(__name__)

DEFAULT_GRID = 7
DEFAULT_PATCH = 32
DEFAULT_FRAMES = 32


@dataclass
class VideoClip:
    frames: np.ndarray  # (N, H, W, 3) uint8
    frame_rate: float = 30.0
    source_id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 3:
            frames = frames[None]
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise DataError(f"frames must be (N, H, W, 3), got {frames.shape}")
        if frames.shape[0] < 1:
            raise DataError("clip has no frames")
        if frames.dtype != np.uint8:
            raise DataError(f"frames must be uint8, got {frames.dtype}")
        self.frames = frames

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class SamplingPlan:
    grid_count: int
    patch_size: int
    offsets: np.ndarray  # (G_f, G_f, 2) absolute (row, col) of each patch's top-left corner
    frame_indices: np.ndarray  # (T,)
    seed: int
    height: int
    width: int

    @property
    def num_frames(self) -> int:
        return len(self.frame_indices)

    @property
    def output_size(self) -> int:
        return self.grid_count * self.patch_size


@dataclass
class FragmentView:
    frames: np.ndarray  # (T, G_f*S_f, G_f*S_f, 3) uint8
    plan: SamplingPlan
    source_id: str = ""


def _boundaries(length: int, grid: int) -> np.ndarray:
    return np.array([(i * length) // grid for i in range(grid + 1)], dtype=np.int64)


def partition_grid(frame_shape, grid_count: int, patch_size: int = DEFAULT_PATCH):
    """Cell boundaries for a ``grid_count`` square grid.

    Returns ``(row_edges, col_edges)``; cell (i, j) spans rows
    ``[row_edges[i], row_edges[i+1])`` and cols ``[col_edges[j], col_edges[j+1])``.
    ``frame_shape`` may be an image array or an ``(H, W)`` pair.
    """
    if grid_count < 1:
        raise ValueError("grid_count must be >= 1")
    if hasattr(frame_shape, "shape"):
        frame_shape = frame_shape.shape
    height, width = int(frame_shape[0]), int(frame_shape[1])
    rows = _boundaries(height, grid_count)
    cols = _boundaries(width, grid_count)
    min_h, min_w = int(np.diff(rows).min()), int(np.diff(cols).min())
    if min_h < patch_size or min_w < patch_size:
        raise FrameTooSmallError(
            f"frame {height}x{width} with {grid_count}x{grid_count} grid gives "
            f"{min_h}x{min_w} cells, smaller than patch size {patch_size}"
        )
    return rows, cols


def uniform_frame_indices(num_source: int, num_frames: int) -> np.ndarray:
    """Evenly strided indices over ``[0, num_source)``, first frame included."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    if num_source < 1:
        raise DataError("clip has no frames")
    return (np.arange(num_frames, dtype=np.int64) * num_source) // num_frames


def make_plan(clip: VideoClip, grid_count: int = DEFAULT_GRID, patch_size: int = DEFAULT_PATCH,
              num_frames: int = DEFAULT_FRAMES, seed: int = 0) -> SamplingPlan:
    rows, cols = partition_grid((clip.height, clip.width), grid_count, patch_size)
    rng = np.random.default_rng(seed)
    offsets = np.empty((grid_count, grid_count, 2), dtype=np.int64)
    for i in range(grid_count):
        for j in range(grid_count):
            # integers() upper bound is exclusive; +1 keeps the last valid start
            offsets[i, j, 0] = rng.integers(rows[i], rows[i + 1] - patch_size + 1)
            offsets[i, j, 1] = rng.integers(cols[j], cols[j + 1] - patch_size + 1)
    return SamplingPlan(
        grid_count=grid_count,
        patch_size=patch_size,
        offsets=offsets,
        frame_indices=uniform_frame_indices(len(clip), num_frames),
        seed=seed,
        height=clip.height,
        width=clip.width,
    )


def splice(clip: VideoClip, plan: SamplingPlan) -> FragmentView:
    if (clip.height, clip.width) != (plan.height, plan.width):
        raise GeometryMismatchError(
            f"plan built for {plan.height}x{plan.width}, clip is {clip.height}x{clip.width}"
        )
    if plan.frame_indices.max(initial=0) >= len(clip):
        raise GeometryMismatchError("plan references frames beyond the clip length")
    g, s = plan.grid_count, plan.patch_size
    source = clip.frames[plan.frame_indices]
    out = np.empty((len(plan.frame_indices), g * s, g * s, 3), dtype=np.uint8)
    for i in range(g):
        for j in range(g):
            r, c = plan.offsets[i, j]
            out[:, i * s:(i + 1) * s, j * s:(j + 1) * s] = source[:, r:r + s, c:c + s]
    return FragmentView(frames=out, plan=plan, source_id=clip.source_id)


def ensure_min_size(clip: VideoClip, grid_count: int, patch_size: int) -> VideoClip:
    """Bilinearly upscale clips too small for the grid, keeping aspect ratio."""
    need = grid_count * patch_size
    if clip.height >= need and clip.width >= need:
        return clip
    import cv2

    scale = max(need / clip.height, need / clip.width)
    new_h = max(need, int(np.ceil(clip.height * scale)))
    new_w = max(need, int(np.ceil(clip.width * scale)))
    logger.warning("upscaling %s from %dx%d to %dx%d for fragment sampling",
                   clip.source_id or "clip", clip.height, clip.width, new_h, new_w)
    frames = np.stack([cv2.resize(f, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
                       for f in clip.frames])
    return VideoClip(frames=frames, frame_rate=clip.frame_rate, source_id=clip.source_id)


def sample_fragments(clip: VideoClip, grid_count: int = DEFAULT_GRID, patch_size: int = DEFAULT_PATCH,
                     num_frames: int = DEFAULT_FRAMES, seed: int = 0) -> FragmentView:
    clip = ensure_min_size(clip, grid_count, patch_size)
    return splice(clip, make_plan(clip, grid_count, patch_size, num_frames, seed))


# -- cache record: 4-byte little-endian header length, JSON header, raw pixels --

def fragment_header(view: FragmentView) -> dict:
    plan = view.plan
    return {
        "format": "maxvqa-fragment/1",
        "source_id": view.source_id,
        "grid_count": plan.grid_count,
        "patch_size": plan.patch_size,
        "num_frames": plan.num_frames,
        "seed": plan.seed,
        "height": plan.height,
        "width": plan.width,
        "frame_indices": plan.frame_indices.tolist(),
        "offsets": plan.offsets.tolist(),
        "shape": list(view.frames.shape),
    }


def save_fragment_view(view: FragmentView, path) -> None:
    header = json.dumps(fragment_header(view), sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(view.frames, dtype=np.uint8).tobytes())
    tmp.replace(path)


def load_fragment_view(path) -> FragmentView:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4:4 + n].decode("utf-8"))
    frames = np.frombuffer(raw[4 + n:], dtype=np.uint8).reshape(header["shape"]).copy()
    plan = SamplingPlan(
        grid_count=header["grid_count"],
        patch_size=header["patch_size"],
        offsets=np.asarray(header["offsets"], dtype=np.int64),
        frame_indices=np.asarray(header["frame_indices"], dtype=np.int64),
        seed=header["seed"],
        height=header["height"],
        width=header["width"],
    )
    return FragmentView(frames=frames, plan=plan, source_id=header["source_id"])
