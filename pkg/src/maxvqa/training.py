"""Optimising the context embedding and fusion MLP on cached features."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .analytics import plcc, srcc
from .dimensions import AXIS_CODES, validate_codes
from .errors import ConfigError, DataError, DegenerateInputError
from .evaluator import MaxVQA
from .features import FeatureBundle

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MAXWELL_TRAIN, MAXWELL_TEST = 3634, 909


def rescale_mos(mos):
    """Map a MOS in [-1, 1] onto the [0, 1] range of the softmax score."""
    arr = np.asarray(mos, dtype=np.float64)
    if np.any(arr < -1) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise DataError(f"MOS outside [-1, 1]: {mos}")
    out = (arr + 1.0) / 2.0
    return float(out) if out.ndim == 0 else out


@dataclass
class TrainTarget:
    video_id: str
    targets: dict[str, float]
    mask: dict[str, bool] | None = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = {c: c in self.targets for c in AXIS_CODES}
        validate_codes(list(self.targets))
        for code, on in self.mask.items():
            if on and code not in self.targets:
                raise DataError(f"{self.video_id}: axis {code} masked in but has no target")
            if on and not 0.0 <= self.targets[code] <= 1.0:
                raise DataError(f"{self.video_id}: target {self.targets[code]} for {code} outside [0, 1]")

    def vectors(self, axes=AXIS_CODES):
        y = [self.targets.get(a, 0.0) if self.mask.get(a, False) else 0.0 for a in axes]
        m = [bool(self.mask.get(a, False)) for a in axes]
        return y, m


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 30
    loss_weights: tuple[float, float] = (1.0, 0.3)
    seed: int = 0
    axis_subset: list[str] | None = None
    cosine_decay: bool = True

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if min(self.loss_weights) < 0 or sum(self.loss_weights) == 0:
            raise ConfigError("loss weights must be non-negative and not both zero")
        if self.axis_subset is not None:
            self.axis_subset = validate_codes(self.axis_subset)


# ---------------------------------------------------------------------- loss

def plcc_term(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = pred - pred.mean()
    t = target - target.mean()
    denom = (p.pow(2).sum() * t.pow(2).sum()).sqrt().clamp_min(1e-12)
    return 1.0 - (p * t).sum() / denom


def rank_term(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over ordered pairs of relu((p_j - p_i) * sign(t_i - t_j)); tied targets contribute 0."""
    n = pred.shape[0]
    dp = pred[:, None] - pred[None, :]
    sign = torch.sign(target[:, None] - target[None, :])
    return torch.relu(-dp * sign).sum() / (n * (n - 1))


def batch_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None = None,
               loss_weights=(1.0, 0.3)) -> torch.Tensor:
    """Mean over usable axes of w_plcc * (1 - PLCC) + w_rank * pairwise rank loss.

    pred, target, mask: (B, A). Axes with fewer than two unmasked samples are
    skipped; an axis with constant targets keeps its rank term (zero) and skips
    its PLCC term with a warning.
    """
    if pred.ndim == 1:
        pred, target = pred[:, None], target[:, None]
        mask = None if mask is None else mask[:, None]
    if mask is None:
        mask = torch.ones_like(pred, dtype=torch.bool)
    target = target.to(pred.dtype)
    w_plcc, w_rank = loss_weights
    terms = []
    for a in range(pred.shape[1]):
        sel = mask[:, a]
        if int(sel.sum()) < 2:
            continue
        p, t = pred[sel, a], target[sel, a]
        term = w_rank * rank_term(p, t)
        if torch.all(t == t[0]):
            logger.warning("axis %d has constant targets in this batch; PLCC term skipped", a)
        else:
            term = term + w_plcc * plcc_term(p, t)
        terms.append(term)
    if not terms:
        raise DegenerateInputError("no axis has two or more labelled samples in this batch")
    return torch.stack(terms).mean()


# ------------------------------------------------------------------- dataset

@dataclass
class Sample:
    bundle: FeatureBundle
    target: TrainTarget


def stack_samples(samples: list[Sample], dtype=None, axes=AXIS_CODES):
    if not samples:
        raise DataError("empty dataset")
    for s in samples:
        if s.bundle.fragment is None:
            raise DataError(f"{s.bundle.video_id}: cached features lack the fragment branch")
    dtype = dtype or samples[0].bundle.local.dtype
    local = torch.stack([s.bundle.local for s in samples]).to(dtype)
    fragment = torch.stack([s.bundle.fragment for s in samples]).to(dtype)
    ys, ms = zip(*(s.target.vectors(axes) for s in samples))
    return local, fragment, torch.tensor(ys, dtype=dtype), torch.tensor(ms, dtype=torch.bool)


def parameter_checksums(*modules) -> dict[str, str]:
    out = {}
    for k, module in enumerate(modules):
        for name, p in module.state_dict().items():
            data = p.detach().cpu().contiguous().numpy().tobytes()
            out[f"{k}.{name}"] = hashlib.sha256(data).hexdigest()
    return out


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metrics: dict[str, tuple[float, float]] = field(default_factory=dict)  # axis -> (SRCC, PLCC)


@dataclass
class TrainResult:
    model: MaxVQA
    history: list[EpochRecord]
    steps: int

    def history_text(self) -> str:
        axes = sorted({a for r in self.history for a in r.metrics}, key=AXIS_CODES.index)
        header = ["epoch", "loss"] + [f"{a}_{m}" for a in axes for m in ("srcc", "plcc")]
        lines = ["\t".join(header)]
        for r in self.history:
            vals = [str(r.epoch), repr(r.loss)]
            for a in axes:
                s, p = r.metrics.get(a, (float("nan"), float("nan")))
                vals += [repr(s), repr(p)]
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"


def _safe_corr(fn, x, y):
    try:
        return fn(x, y)
    except DegenerateInputError:
        return float("nan")


@torch.no_grad()
def score_samples(model: MaxVQA, samples: list[Sample], batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(samples), batch_size):
        local, fragment, _, _ = stack_samples(samples[start:start + batch_size],
                                              dtype=next(model.parameters()).dtype)
        q, _ = model(local, fragment)
        out.append(q)
    return torch.cat(out).cpu().numpy()


def validation_metrics(model: MaxVQA, samples: list[Sample], axes=AXIS_CODES) -> dict[str, tuple[float, float]]:
    q = score_samples(model, samples)
    metrics = {}
    for a in axes:
        j = AXIS_CODES.index(a)
        idx = [i for i, s in enumerate(samples) if s.target.mask.get(a, False)]
        if len(idx) < 2:
            continue
        y = np.array([samples[i].target.targets[a] for i in idx])
        metrics[a] = (_safe_corr(srcc, q[idx, j], y), _safe_corr(plcc, q[idx, j], y))
    return metrics


def train(samples: list[Sample], config: TrainConfig, model: MaxVQA,
          val_samples: list[Sample] | None = None) -> TrainResult:
    """Adam over the fusion MLP and context embedding; everything else stays frozen."""
    if not samples:
        raise DataError("empty dataset")
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    dtype = next(model.parameters()).dtype
    local, fragment, targets, mask = stack_samples(samples, dtype)
    if config.axis_subset is not None:
        keep = torch.tensor([a in config.axis_subset for a in AXIS_CODES])
        mask = mask & keep[None, :]
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    n = len(samples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = steps_per_epoch * config.epochs
    scheduler = (torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(total, 1))
                 if config.cosine_decay else None)
    val = val_samples if val_samples is not None else samples
    val_axes = config.axis_subset or AXIS_CODES
    history, step = [], 0
    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            q, _ = model(local[idx], fragment[idx])
            try:
                loss = batch_loss(q, targets[idx], mask[idx], config.loss_weights)
            except DegenerateInputError:
                continue
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            losses.append(loss.item())
            step += 1
        record = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"),
                             validation_metrics(model, val, val_axes))
        history.append(record)
        logger.info("epoch %d loss %.5f", epoch, record.loss)
    model.eval()
    return TrainResult(model, history, step)


# ---------------------------------------------------------------- checkpoint

def save_checkpoint(model: MaxVQA, path, steps: int = 0, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v for k, v in model.state_dict().items() if not k.endswith(".ids")}
    torch.save({"version": CHECKPOINT_VERSION, "state_dict": state}, path)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "dual_encoder": model.encoder.name,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "init": {"fc2": "zeros", "ctx": "token embedding of 'X'"},
        "per_axis_context": model.prompts.per_axis_context,
        "dropout": model.fusion.drop.p,
        "hidden_dim": model.fusion.fc1.out_features,
        "fragment_dim": model.fusion.fragment_dim,
        "steps": steps,
        **(extra or {}),
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(model: MaxVQA, path) -> dict:
    path = Path(path)
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {blob.get('version')}")
    missing, unexpected = model.load_state_dict(blob["state_dict"], strict=False)
    if unexpected or [m for m in missing if not m.endswith(".ids")]:
        raise DataError(f"checkpoint mismatch: missing {missing}, unexpected {unexpected}")
    manifest_path = path.with_suffix(".json")
    return json.loads(manifest_path.read_text()) if manifest_path.exists() else {}


# -------------------------------------------------------------------- splits

def maxwell_split(video_ids, seed: int = 0, test_size: int = MAXWELL_TEST):
    """Fixed train/test partition; 3,634 / 909 for the full 4,543-video corpus."""
    ids = sorted(video_ids)
    if test_size >= len(ids):
        raise DataError(f"cannot reserve {test_size} test videos from {len(ids)}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    test = sorted(ids[i] for i in perm[:test_size])
    train_ = sorted(ids[i] for i in perm[test_size:])
    return train_, test


def random_splits(video_ids, k: int = 10, test_fraction: float = 0.2, seed: int = 0):
    ids = sorted(video_ids)
    n_test = max(1, int(round(len(ids) * test_fraction)))
    out = []
    for s in range(k):
        perm = np.random.default_rng(seed + s).permutation(len(ids))
        out.append((sorted(ids[i] for i in perm[n_test:]), sorted(ids[i] for i in perm[:n_test])))
    return out


def normalize_mixed(datasets: dict[str, np.ndarray], spread: float = 3.0) -> dict[str, np.ndarray]:
    """Per-dataset z-score, then (z + spread) / (2 * spread) clipped to [0, 1].

    An approximation for pooling datasets whose scores live on different scales.
    """
    out = {}
    for name, y in datasets.items():
        y = np.asarray(y, dtype=np.float64)
        sd = y.std()
        if sd == 0:
            raise DegenerateInputError(f"dataset {name} has constant scores")
        out[name] = np.clip(((y - y.mean()) / sd + spread) / (2 * spread), 0.0, 1.0)
    return out
