"""Feature bundles, extraction from raw clips, and the on-disk feature cache."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbones import DualEncoder, FragmentEncoder, encode_fragments, encode_frames
from .errors import CacheMissError, DataError
from .fragments import (DEFAULT_FRAMES, DEFAULT_GRID, DEFAULT_PATCH, VideoClip, ensure_min_size,
                        make_plan, splice)

CACHE_FORMAT = "maxvqa-features/1"
_BLOCKS = ("local", "global_", "fragment")


@dataclass
class FeatureBundle:
    video_id: str
    local: torch.Tensor  # (T, G, G, d)
    global_: torch.Tensor | None = None  # (T, d)
    fragment: torch.Tensor | None = None  # (T, G, G, d_f), aligned to the local grid
    fused: torch.Tensor | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.local.ndim != 4 or self.local.shape[0] == 0:
            raise DataError(f"local features must be a non-empty (T, G, G, d) grid, got {tuple(self.local.shape)}")
        if self.fragment is not None and self.fragment.shape[:3] != self.local.shape[:3]:
            raise DataError(
                f"fragment grid {tuple(self.fragment.shape[:3])} not aligned with local {tuple(self.local.shape[:3])}")

    @property
    def num_frames(self) -> int:
        return self.local.shape[0]

    @property
    def grid(self) -> int:
        return self.local.shape[1]

    @property
    def dim(self) -> int:
        return self.local.shape[-1]


@dataclass(frozen=True)
class ExtractionSettings:
    dual_encoder: str = "stub"
    fragment_encoder: str | None = "stub"
    grid_count: int = DEFAULT_GRID
    patch_size: int = DEFAULT_PATCH
    num_frames: int = DEFAULT_FRAMES
    seed: int = 0

    def key(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:16]


def extract_bundle(clip: VideoClip, dual: DualEncoder, fragment_encoder: FragmentEncoder | None = None,
                   settings: ExtractionSettings = ExtractionSettings()) -> FeatureBundle:
    """Run both branches on one clip.

    The visual branch sees exactly the frames the fragment plan selected, so
    frame t of both feature grids refers to the same source frame.
    """
    sized = ensure_min_size(clip, settings.grid_count, settings.patch_size)
    plan = make_plan(sized, settings.grid_count, settings.patch_size, settings.num_frames, settings.seed)
    global_, local, _ = encode_frames(sized.frames[plan.frame_indices], dual)
    fragment = None
    if fragment_encoder is not None:
        view = splice(sized, plan)
        fragment = encode_fragments(view, fragment_encoder, grid=local.shape[1])
    meta = {
        "source_id": clip.source_id,
        "dual_encoder": dual.name,
        "fragment_encoder": fragment_encoder.name if fragment_encoder is not None else None,
        "grid_count": settings.grid_count,
        "patch_size": settings.patch_size,
        "seed": settings.seed,
        "frame_indices": plan.frame_indices.tolist(),
    }
    return FeatureBundle(clip.source_id, local, global_, fragment, meta=meta)


class FeatureCache:
    """One record per video: ``<id>.json`` header plus ``<id>.f32`` little-endian payload.

    Records live under ``root/<settings key>/`` so changing a backbone,
    fragment geometry or seed never reuses stale features.
    """

    def __init__(self, root, settings: ExtractionSettings = ExtractionSettings()):
        self.settings = settings
        self.dir = Path(root) / settings.key()

    def _paths(self, video_id: str):
        safe = video_id.replace(os.sep, "__")
        return self.dir / f"{safe}.json", self.dir / f"{safe}.f32"

    def __contains__(self, video_id: str) -> bool:
        header, payload = self._paths(video_id)
        return header.exists() and payload.exists()

    def ids(self) -> list[str]:
        if not self.dir.exists():
            return []
        return sorted(json.loads(p.read_text())["video_id"] for p in self.dir.glob("*.json"))

    def write(self, bundle: FeatureBundle) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        header_path, payload_path = self._paths(bundle.video_id)
        blocks, offset, chunks = {}, 0, []
        for name in _BLOCKS:
            arr = getattr(bundle, name)
            if arr is None:
                continue
            data = arr.detach().cpu().numpy().astype("<f4", copy=False)
            blocks[name] = {"shape": list(data.shape), "offset": offset, "count": int(data.size)}
            offset += data.size * 4
            chunks.append(data.tobytes())
        s = self.settings
        header = {
            "format": CACHE_FORMAT,
            "video_id": bundle.video_id,
            "source_id": bundle.meta.get("source_id", bundle.video_id),
            "T": bundle.num_frames,
            "G": bundle.grid,
            "d": bundle.dim,
            "d_f": None if bundle.fragment is None else bundle.fragment.shape[-1],
            "dual_encoder": s.dual_encoder,
            "fragment_encoder": s.fragment_encoder,
            "grid_count": s.grid_count,
            "patch_size": s.patch_size,
            "fragment_seed": s.seed,
            "frame_indices": bundle.meta.get("frame_indices"),
            "blocks": blocks,
        }
        _atomic_write(payload_path, b"".join(chunks))
        _atomic_write(header_path, json.dumps(header, indent=1, sort_keys=True).encode())

    def read(self, video_id: str, dtype=torch.float32) -> FeatureBundle:
        header_path, payload_path = self._paths(video_id)
        if not (header_path.exists() and payload_path.exists()):
            raise CacheMissError(f"no cached features for {video_id!r} in {self.dir}")
        header = json.loads(header_path.read_text())
        raw = np.fromfile(payload_path, dtype="<f4")
        arrays = {}
        for name, info in header["blocks"].items():
            start = info["offset"] // 4
            arrays[name] = torch.from_numpy(
                raw[start:start + info["count"]].reshape(info["shape"]).astype(np.float32)).to(dtype)
        meta = {k: header[k] for k in ("source_id", "dual_encoder", "fragment_encoder", "frame_indices")}
        return FeatureBundle(header["video_id"], arrays["local"], arrays.get("global_"), arrays.get("fragment"),
                             meta=meta)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
