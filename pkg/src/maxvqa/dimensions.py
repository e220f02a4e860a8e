"""The 16 Maxwell quality axes and their prompt vocabulary."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

from .errors import UnknownAxisError


class Perspective(str, Enum):
    TECHNICAL = "technical"
    AESTHETIC = "aesthetic"
    OVERALL = "overall"


@dataclass(frozen=True)
class DimensionSpec:
    code: str
    name: str
    positive_desc: str
    negative_desc: str
    perspective: Perspective
    temporal: bool = False
    # Label as printed in the study form, e.g. "(Camera) Trajectory".
    full_name: str = ""

    @property
    def is_abstract(self) -> bool:
        return self.code in ABSTRACT_CODES

    @property
    def label(self) -> str:
        return self.full_name or self.name


_T, _A, _O = Perspective.TECHNICAL, Perspective.AESTHETIC, Perspective.OVERALL

_REGISTRY: tuple[DimensionSpec, ...] = (
    DimensionSpec("T-1", "Sharpness", "Sharp", "Fuzzy", _T),
    DimensionSpec("T-2", "Focus", "In-Focus", "Out-of-Focus", _T),
    DimensionSpec("T-3", "Noise", "Noiseless", "Noisy", _T),
    DimensionSpec("T-4", "Motion Blur", "Clear-Motion", "Blurry-Motion", _T),
    DimensionSpec("T-5", "Flicker", "Stable", "Shaky", _T, temporal=True),
    DimensionSpec("T-6", "Exposure", "Well-exposed", "Poorly-exposed", _T),
    DimensionSpec("T-7", "Compression Artifacts", "Original", "Compressed", _T),
    DimensionSpec("T-8", "Fluency", "Fluent", "Choppy", _T, temporal=True),
    DimensionSpec("T-all", "Technical Perspective", "Not Degraded", "Severely Degraded", _T),
    DimensionSpec("A-1", "Contents", "Good", "Bad", _A),
    DimensionSpec("A-2", "Composition", "Organized", "Chaotic", _A),
    DimensionSpec("A-3", "Color", "Vibrant", "Faded", _A),
    DimensionSpec("A-4", "Lighting", "Contrastive", "Gloomy", _A),
    DimensionSpec("A-5", "Trajectory", "Consistent", "Incoherent", _A, temporal=True,
                  full_name="(Camera) Trajectory"),
    DimensionSpec("A-all", "Aesthetic Perspective", "Good Aesthetics", "Bad Aesthetics", _A),
    DimensionSpec("O", "Overall Quality score", "High Quality", "Low Quality", _O),
)

ABSTRACT_CODES = frozenset({"T-all", "A-all", "O"})
AXIS_CODES: tuple[str, ...] = tuple(spec.code for spec in _REGISTRY)
_BY_CODE = {spec.code: spec for spec in _REGISTRY}

# The 13 specific factors, excluding the three abstract ratings.
FACTOR_CODES: tuple[str, ...] = tuple(c for c in AXIS_CODES if c not in ABSTRACT_CODES)


def registry() -> list[DimensionSpec]:
    """All axes in the fixed table order (T-1..T-8, T-all, A-1..A-5, A-all, O)."""
    return list(_REGISTRY)


def lookup(code: str) -> DimensionSpec:
    try:
        return _BY_CODE[code]
    except (KeyError, TypeError):
        raise UnknownAxisError(code) from None


def validate_codes(codes) -> list[str]:
    """Resolve every code or raise on the first unregistered one."""
    return [lookup(c).code for c in codes]


def axis_index(code: str) -> int:
    return AXIS_CODES.index(lookup(code).code)


_EXPORT_FIELDS = ("code", "name", "positive_desc", "negative_desc", "perspective", "temporal")


def export_registry(path: str | Path | None = None) -> str:
    """Write the registry as tab-separated text; returns the text as well."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_EXPORT_FIELDS, delimiter="\t", lineterminator="\n")
    writer.writeheader()
    for spec in _REGISTRY:
        row = asdict(spec)
        row["perspective"] = spec.perspective.value
        row["temporal"] = str(spec.temporal).lower()
        writer.writerow({k: row[k] for k in _EXPORT_FIELDS})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_registry_file(path: str | Path) -> list[DimensionSpec]:
    """Parse an exported registry file, checking it against the built-in table."""
    rows = list(csv.DictReader(Path(path).read_text(encoding="utf-8").splitlines(), delimiter="\t"))
    specs = []
    for row in rows:
        spec = lookup(row["code"])
        got = (row["name"], row["positive_desc"], row["negative_desc"], row["perspective"],
               row["temporal"] == "true")
        want = (spec.name, spec.positive_desc, spec.negative_desc, spec.perspective.value, spec.temporal)
        if got != want:
            raise ValueError(f"registry file disagrees with built-in axis {spec.code}: {got} != {want}")
        specs.append(spec)
    return specs


# Column order of the benchmark tables: aesthetic block, technical block, overall.
BENCHMARK_ORDER: tuple[str, ...] = (
    "A-1", "A-2", "A-3", "A-4", "A-5", "A-all",
    "T-1", "T-2", "T-3", "T-4", "T-5", "T-6", "T-7", "T-8", "T-all", "O",
)
