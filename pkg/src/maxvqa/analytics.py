"""Subjective-opinion statistics and correlation metrics.

Opinions are ternary (-1 negative, 0 neutral, +1 positive). MOS, AMR and ARR
are ratios of integers, so they are accumulated exactly with ``Fraction`` and
rounded once at the end; results do not depend on summation order.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from scipy.stats import rankdata

from .dimensions import AXIS_CODES, lookup
from .errors import DataError, DegenerateInputError

logger = logging.getLogger(__name__)


class Opinion(NamedTuple):
    video_id: str
    axis_code: str
    subject_id: str
    opinion: int


@dataclass
class AnnotationTable:
    rows: list[Opinion]
    accepted_subjects: set[str] | None = None  # None accepts everyone
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        rows = []
        for r in self.rows:
            r = Opinion(str(r[0]), str(r[1]), str(r[2]), int(r[3]))
            if r.opinion not in (-1, 0, 1):
                raise DataError(f"opinion must be -1, 0 or +1, got {r.opinion} ({r.video_id}, {r.axis_code})")
            lookup(r.axis_code)
            rows.append(r)
        self.rows = rows
        index = defaultdict(list)
        for r in rows:
            if self.accepted_subjects is None or r.subject_id in self.accepted_subjects:
                index[(r.video_id, r.axis_code)].append(r.opinion)
        self._index = dict(index)

    @classmethod
    def from_file(cls, path, accepted_subjects=None, delimiter=None) -> "AnnotationTable":
        text = Path(path).read_text(encoding="utf-8")
        if delimiter is None:
            delimiter = "\t" if "\t" in text.splitlines()[0] else ","
        reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
        missing = {"video_id", "axis_code", "subject_id", "opinion"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        rows = [Opinion(r["video_id"], r["axis_code"], r["subject_id"], int(r["opinion"])) for r in reader]
        return cls(rows, accepted_subjects)

    def to_file(self, path, delimiter="\t") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(["video_id", "axis_code", "subject_id", "opinion"])
            writer.writerows(self.rows)

    def opinions(self, video_id: str, axis: str) -> list[int]:
        return self._index.get((video_id, axis), [])

    def axis_opinions(self, axis: str) -> list[int]:
        return [o for (v, a), ops in self._index.items() if a == axis for o in ops]

    def videos(self, axis: str | None = None) -> list[str]:
        seen = dict.fromkeys(v for (v, a) in self._index if axis is None or a == axis)
        return list(seen)

    def axes(self) -> list[str]:
        present = {a for (_, a) in self._index}
        return [c for c in AXIS_CODES if c in present]


def _mos_exact(ops: list[int]) -> Fraction:
    return Fraction(sum(ops), len(ops))


def mos(table: AnnotationTable, video_id: str, axis: str) -> float:
    ops = table.opinions(video_id, axis)
    if not ops:
        raise DataError(f"no accepted opinions for video {video_id!r} on axis {axis}")
    return float(_mos_exact(ops))


def mos_matrix(table: AnnotationTable, axes=AXIS_CODES, videos=None):
    """(videos, axes, N x len(axes) array); NaN where a video lacks opinions on an axis."""
    videos = list(videos) if videos is not None else table.videos()
    out = np.full((len(videos), len(axes)), np.nan)
    for i, v in enumerate(videos):
        for j, a in enumerate(axes):
            ops = table.opinions(v, a)
            if ops:
                out[i, j] = float(_mos_exact(ops))
    return videos, list(axes), out


def amr(table: AnnotationTable, axis: str) -> float:
    """Mean of |MOS| over the videos rated on ``axis``."""
    videos = table.videos(axis)
    if not videos:
        raise DataError(f"no opinions for axis {axis}")
    total = sum(abs(_mos_exact(table.opinions(v, axis))) for v in videos)
    return float(total / len(videos))


def arr(table: AnnotationTable, axis: str) -> float:
    """Fraction of raw opinions on ``axis`` that are not neutral."""
    ops = table.axis_opinions(axis)
    if not ops:
        raise DataError(f"no opinions for axis {axis}")
    return float(Fraction(sum(1 for o in ops if o != 0), len(ops)))


class Tendency(NamedTuple):
    ratio: float  # positives / negatives; inf when there are no negatives
    positives: int
    negatives: int
    unbounded: bool


def tendency(table: AnnotationTable, axis: str) -> Tendency:
    ops = table.axis_opinions(axis)
    pos = sum(1 for o in ops if o == 1)
    neg = sum(1 for o in ops if o == -1)
    if pos + neg == 0:
        raise DataError(f"axis {axis} has no non-neutral opinions")
    if neg == 0:
        return Tendency(math.inf, pos, 0, True)
    return Tendency(float(Fraction(pos, neg)), pos, neg, False)


# ------------------------------------------------------------------ metrics

def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise DegenerateInputError("correlation needs at least 2 samples")
    return x, y


def plcc(x, y) -> float:
    x, y = _check_pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(xc @ xc), math.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise DegenerateInputError("PLCC undefined for constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def srcc(x, y) -> float:
    """Spearman correlation: Pearson of average (fractional) ranks."""
    x, y = _check_pair(x, y)
    return plcc(rankdata(x, method="average"), rankdata(y, method="average"))


@dataclass
class MetricsResult:
    per_axis: dict[str, tuple[float, float]]  # code -> (SRCC, PLCC)
    n_samples: int

    def mean(self) -> tuple[float, float]:
        vals = np.array(list(self.per_axis.values()))
        return float(vals[:, 0].mean()), float(vals[:, 1].mean())


def evaluate_axes(predictions: dict[str, Iterable[float]], targets: dict[str, Iterable[float]]) -> MetricsResult:
    """SRCC and PLCC per axis; axes whose scores or targets are constant are skipped with a warning."""
    per_axis, n = {}, None
    for code in AXIS_CODES:
        if code in predictions and code in targets:
            p, t = np.asarray(predictions[code], float), np.asarray(targets[code], float)
            try:
                per_axis[code] = (srcc(p, t), plcc(p, t))
            except DegenerateInputError as exc:
                logger.warning("axis %s left out of the metrics: %s", code, exc)
                continue
            n = len(p)
    if not per_axis:
        raise DataError("no axis present in both predictions and targets")
    return MetricsResult(per_axis, n)


def correlation_map(matrix) -> np.ndarray:
    """Pairwise PLCC between the columns of an (N videos x K axes) MOS matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise DegenerateInputError("correlation map needs an (N >= 2) x K matrix")
    constant = [j for j in range(m.shape[1]) if np.ptp(m[:, j]) == 0]
    if constant:
        names = [AXIS_CODES[j] if m.shape[1] == len(AXIS_CODES) else str(j) for j in constant]
        raise DegenerateInputError(f"constant columns: {', '.join(names)}")
    k = m.shape[1]
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = plcc(m[:, i], m[:, j])
    return out


@dataclass
class CrossDimensionResult:
    matrix: np.ndarray  # rows: predicted axis, cols: subjective axis
    axes: list[str]

    @property
    def row_argmax(self) -> list[str]:
        return [self.axes[j] for j in self.matrix.argmax(axis=1)]

    @property
    def diagonal_dominant(self) -> list[bool]:
        """Whether each predicted axis correlates best with its own subjective axis (reported, not enforced)."""
        return [bool(self.matrix[i, i] >= self.matrix[i].max()) for i in range(len(self.axes))]


def cross_dimension_matrix(predictions: dict[str, dict[str, float]], subjective: dict[str, dict[str, float]],
                           axes=AXIS_CODES) -> CrossDimensionResult:
    """PLCC of every predicted axis against every subjective axis.

    Both arguments map video_id -> {axis_code: value}; the video sets must match.
    """
    if set(predictions) != set(subjective):
        only_p = sorted(set(predictions) - set(subjective))[:5]
        only_s = sorted(set(subjective) - set(predictions))[:5]
        raise DataError(f"video sets differ (prediction-only {only_p}, subjective-only {only_s})")
    videos = sorted(predictions)
    axes = list(axes)
    p = np.array([[predictions[v][a] for a in axes] for v in videos])
    s = np.array([[subjective[v][a] for a in axes] for v in videos])
    out = np.empty((len(axes), len(axes)))
    for i in range(len(axes)):
        for j in range(len(axes)):
            out[i, j] = plcc(p[:, i], s[:, j])
    return CrossDimensionResult(out, axes)


def opinion_summary(table: AnnotationTable) -> list[dict]:
    """Per-axis AMR, ARR and tendency rows for every axis present in the table."""
    rows = []
    for axis in table.axes():
        t = tendency(table, axis) if any(table.axis_opinions(axis)) else None
        rows.append({
            "axis_code": axis,
            "n_videos": len(table.videos(axis)),
            "amr": amr(table, axis),
            "arr": arr(table, axis),
            "positives": t.positives if t else 0,
            "negatives": t.negatives if t else 0,
            "tendency": t.ratio if t else float("nan"),
        })
    return rows
