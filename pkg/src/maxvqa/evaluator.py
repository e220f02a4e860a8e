"""Similarity pooling, two-way softmax scores, and local quality maps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbones import DualEncoder, FusionMLP
from .dimensions import AXIS_CODES, axis_index
from .errors import CacheMissError, DataError, DegenerateInputError
from .features import ExtractionSettings, FeatureBundle, extract_bundle
from .fragments import VideoClip
from .prompts import PromptLearner, literal_text_embeddings


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def softmax_score(s_pos, s_neg):
    """e^{S+} / (e^{S+} + e^{S-}), evaluated as the logistic of S+ - S-."""
    if isinstance(s_pos, torch.Tensor) or isinstance(s_neg, torch.Tensor):
        return torch.sigmoid(torch.as_tensor(s_pos) - torch.as_tensor(s_neg))
    diff = float(s_pos) - float(s_neg)
    if diff >= 0:
        return 1.0 / (1.0 + math.exp(-diff))
    z = math.exp(diff)
    return z / (1.0 + z)


def cell_similarities(features: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    """Cosine of every feature cell against every prompt.

    features: (..., d); text: (A, 2, d)  ->  (..., A, 2)
    """
    f = F.normalize(features, dim=-1)
    t = F.normalize(text.to(features.dtype), dim=-1)
    return torch.einsum("...d,apd->...ap", f, t)


def pooled_similarities(features: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    """(B, T, G, G, d) -> (B, A, 2): spatial mean per frame, then mean over frames."""
    if features.numel() == 0:
        raise DataError("empty feature grid")
    sims = cell_similarities(features, text)
    return sims.mean(dim=(2, 3)).mean(dim=1)


def axis_similarities(features: torch.Tensor, text: torch.Tensor, axis: str | None = None):
    """(S+, S-) for one axis (or all axes when ``axis`` is None) of a (T, G, G, d) grid."""
    if features.ndim != 4 or features.shape[0] == 0:
        raise DataError("feature bundle has no frames")
    sims = pooled_similarities(features[None], text)[0]
    if axis is None:
        return sims
    s = sims[axis_index(axis)]
    return float(s[0]), float(s[1])


def local_quality_map(features: torch.Tensor, text: torch.Tensor, axis: str) -> torch.Tensor:
    """Per-cell score sigma(cos(pos, f) - cos(neg, f)), shape (T, G, G)."""
    sims = cell_similarities(features, text[axis_index(axis)][None])[..., 0, :]
    return torch.sigmoid(sims[..., 0] - sims[..., 1])


@dataclass
class QualityReport:
    video_id: str
    scores: dict[str, float]
    similarities: dict[str, tuple[float, float]]
    local_maps: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def to_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
        writer.writerow(["video_id", "axis_code", "score", "s_pos", "s_neg"])
        for code in AXIS_CODES:
            if code in self.scores:
                sp, sn = self.similarities[code]
                writer.writerow([self.video_id, code, repr(self.scores[code]), repr(sp), repr(sn)])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> list["QualityReport"]:
        reports: dict[str, QualityReport] = {}
        for row in csv.DictReader(text.splitlines(), delimiter="\t"):
            rep = reports.setdefault(row["video_id"], cls(row["video_id"], {}, {}))
            rep.scores[row["axis_code"]] = float(row["score"])
            rep.similarities[row["axis_code"]] = (float(row["s_pos"]), float(row["s_neg"]))
        return list(reports.values())


def _report(video_id: str, sims: torch.Tensor, maps=None) -> QualityReport:
    q = torch.sigmoid(sims[:, 0] - sims[:, 1])
    scores = {code: float(q[i]) for i, code in enumerate(AXIS_CODES)}
    similarities = {code: (float(sims[i, 0]), float(sims[i, 1])) for i, code in enumerate(AXIS_CODES)}
    return QualityReport(video_id, scores, similarities, maps)


class MaxVQA(nn.Module):
    """Trainable state (fusion MLP and context embedding) over frozen encoders.

    The encoders are held as plain attributes so they never appear in
    ``parameters()`` or the checkpoint.
    """

    def __init__(self, encoder: DualEncoder, fragment_dim: int, hidden_dim: int | None = None,
                 dropout: float = 0.5, per_axis_context: bool = False):
        super().__init__()
        self.encoder = encoder
        dtype = next(encoder.text.parameters()).dtype
        self.fusion = FusionMLP(encoder.embed_dim, fragment_dim, hidden_dim, dropout).to(dtype)
        self.prompts = PromptLearner(encoder, per_axis_context=per_axis_context)
        self.axis_codes = list(self.prompts.axis_codes)

    def text_embeddings(self) -> torch.Tensor:
        return self.prompts(self.encoder.text)

    def fuse(self, local: torch.Tensor, fragment: torch.Tensor | None) -> torch.Tensor:
        if fragment is None:
            raise DataError("fragment features missing; use zero-shot mode for the dual encoder alone")
        return self.fusion(local, fragment)

    def forward(self, local: torch.Tensor, fragment: torch.Tensor):
        """Batched scores. local (B, T, G, G, d), fragment (B, T, G, G, d_f) -> (Q (B, A), sims (B, A, 2))."""
        sims = pooled_similarities(self.fuse(local, fragment), self.text_embeddings())
        return torch.sigmoid(sims[..., 0] - sims[..., 1]), sims

    @torch.no_grad()
    def predict_bundle(self, bundle: FeatureBundle, maps_for=()) -> QualityReport:
        was_training = self.training
        self.eval()
        try:
            fused = self.fuse(bundle.local[None], bundle.fragment[None] if bundle.fragment is not None else None)
            text = self.text_embeddings()
            sims = pooled_similarities(fused, text)[0]
            maps = {a: local_quality_map(fused[0], text, a).numpy() for a in maps_for} or None
        finally:
            self.train(was_training)
        return _report(bundle.video_id, sims, maps)


def _resolve(source, encoder, fragment_encoder, settings, cache, need_fragment=True) -> FeatureBundle:
    if isinstance(source, FeatureBundle):
        return source
    if isinstance(source, VideoClip):
        return extract_bundle(source, encoder, fragment_encoder if need_fragment else None, settings)
    if isinstance(source, str):
        if cache is None:
            raise CacheMissError(f"no cached features for {source!r} and no raw clip given")
        return cache.read(source, dtype=next(encoder.text.parameters()).dtype)
    raise TypeError(f"cannot score {type(source).__name__}")


def predict(source, model: MaxVQA, fragment_encoder=None, settings: ExtractionSettings = ExtractionSettings(),
            cache=None, maps_for=()) -> QualityReport:
    """Score a clip, a cached video id, or a FeatureBundle on all axes."""
    bundle = _resolve(source, model.encoder, fragment_encoder, settings, cache)
    return model.predict_bundle(bundle, maps_for)


@torch.no_grad()
def zero_shot_predict(source, encoder: DualEncoder, settings: ExtractionSettings = ExtractionSettings(),
                      cache=None, maps_for=()) -> QualityReport:
    """Score with the dual encoder alone: local features, literal "X" prompts, no fusion."""
    bundle = _resolve(source, encoder, None, settings, cache, need_fragment=False)
    text = literal_text_embeddings(encoder)
    local = bundle.local[None]
    sims = pooled_similarities(local, text)[0]
    maps = {a: local_quality_map(local[0], text, a).numpy() for a in maps_for} or None
    return _report(bundle.video_id, sims, maps)
