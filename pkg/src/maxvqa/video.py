"""Decoding video and image files into VideoClips."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DecodeError
from .fragments import VideoClip

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mkv", ".mov", ".webm", ".m4v", ".mpg", ".mpeg", ".yuv"}


def ingest(path, max_frames: int | None = None) -> VideoClip:
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"{path}: no such file")
    if path.suffix.lower() in IMAGE_SUFFIXES:
        from PIL import Image

        try:
            with Image.open(path) as img:
                frame = np.asarray(img.convert("RGB"))
        except Exception as exc:
            raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
        return VideoClip(frame[None], frame_rate=0.0, source_id=path.stem)

    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"{path}: cannot open video")
    fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
    frames = []
    try:
        while max_frames is None or len(frames) < max_frames:
            ok, frame = cap.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    finally:
        cap.release()
    if not frames:
        raise DecodeError(f"{path}: decoded zero frames")
    return VideoClip(np.stack(frames), frame_rate=float(fps), source_id=path.stem)


def list_media(directory) -> list[Path]:
    directory = Path(directory)
    suffixes = IMAGE_SUFFIXES | VIDEO_SUFFIXES
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in suffixes)


def write_video(path, frames: np.ndarray, fps: float = 30.0) -> None:
    """Write RGB uint8 frames with the MJPG codec (used for fixtures and demos)."""
    import cv2

    h, w = frames.shape[1:3]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (w, h))
    if not writer.isOpened():
        raise DecodeError(f"{path}: cannot open video writer")
    try:
        for f in frames:
            writer.write(cv2.cvtColor(f, cv2.COLOR_RGB2BGR))
    finally:
        writer.release()
