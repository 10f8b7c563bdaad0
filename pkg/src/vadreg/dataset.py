"""FER2013 ingestion and the 5-point VAD annotation data model.

Covers CSV parsing for the 48x48 grayscale corpus, the emotion-category to
VAD anchor table, annotation loading/validation, multi-annotator
consistency filtering, per-dimension value distributions, and assembly of
normalized training tensors.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Iterator

import numpy as np

IMAGE_SIDE = 48
PIXELS_PER_IMAGE = IMAGE_SIDE * IMAGE_SIDE
SCALE_VALUES = (-2, -1, 0, 1, 2)

ANNOTATION_HEADER = ("image_index", "annotator_id", "v", "a", "d", "timestamp")
REDUCED_HEADER = ("image_index", "v", "a", "d")
FER_HEADER = ("emotion", "pixels", "Usage")


class FerParseError(ValueError):
    """A FER2013 CSV row could not be parsed; the message names the row."""


class AnnotationValidationError(ValueError):
    """A VAD annotation fell outside the 5-point scale or was malformed."""


class DuplicateAnnotationError(ValueError):
    """The same (image, annotator) pair appeared twice."""


class MissingImageError(KeyError):
    """A label references an image index that is not present."""


class Split(str, Enum):
    TRAINING = "Training"
    PUBLIC_TEST = "PublicTest"
    PRIVATE_TEST = "PrivateTest"


class EmotionCategory(str, Enum):
    HAPPY = "Happy"
    SAD = "Sad"
    SURPRISE = "Surprise"
    ANGRY = "Angry"
    DISGUST = "Disgust"
    FEAR = "Fear"
    NEUTRAL = "Neutral"


# FER2013 encodes emotions as integers in this public convention.
EMOTION_CODES = {
    0: EmotionCategory.ANGRY,
    1: EmotionCategory.DISGUST,
    2: EmotionCategory.FEAR,
    3: EmotionCategory.HAPPY,
    4: EmotionCategory.SAD,
    5: EmotionCategory.SURPRISE,
    6: EmotionCategory.NEUTRAL,
}
CODES_BY_EMOTION = {v: k for k, v in EMOTION_CODES.items()}


@dataclass(frozen=True)
class VadTriple:
    """One (valence, arousal, dominance) point in the [-2, 2] cube.

    Annotations are restricted to the 5-point scale {-2,-1,0,1,2};
    anchors and predictions may be real-valued.
    """

    v: float
    a: float
    d: float

    def __post_init__(self):
        for name, val in (("v", self.v), ("a", self.a), ("d", self.d)):
            if not -2.0 <= val <= 2.0:
                raise AnnotationValidationError(f"{name}={val} outside [-2, 2]")

    @property
    def is_annotation_grade(self) -> bool:
        return all(float(x).is_integer() and int(x) in SCALE_VALUES
                   for x in (self.v, self.a, self.d))

    @classmethod
    def annotation(cls, v, a, d) -> "VadTriple":
        triple = cls(float(v), float(a), float(d))
        if not triple.is_annotation_grade:
            raise AnnotationValidationError(
                f"annotation values must lie in {SCALE_VALUES}, got {(v, a, d)}")
        return triple

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.v, self.a, self.d)


@dataclass
class FaceImage:
    index: int
    pixels: np.ndarray                  # (48, 48) uint8
    split: Split
    category: EmotionCategory | None = None

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.shape != (IMAGE_SIDE, IMAGE_SIDE):
            raise FerParseError(f"image {self.index}: expected 48x48 pixels, got {arr.shape}")
        self.pixels = arr.astype(np.uint8)


@dataclass(frozen=True)
class AnnotationRecord:
    image_index: int
    annotator_id: str
    triple: VadTriple
    timestamp: int                      # UTC seconds
    reviewed: bool = False              # reserved for a future review pass


# Emotion-category anchor points in the VAD cube.
EMOTION_ANCHORS: dict[EmotionCategory, VadTriple] = {
    EmotionCategory.HAPPY: VadTriple(1.7, 1.8, 1.5),
    EmotionCategory.SAD: VadTriple(-1.3, -1.5, -1.4),
    EmotionCategory.SURPRISE: VadTriple(-1.6, 1.5, -0.5),
    EmotionCategory.ANGRY: VadTriple(-2.0, 1.2, -1.0),
    EmotionCategory.DISGUST: VadTriple(-1.8, 1.2, 1.0),
    EmotionCategory.FEAR: VadTriple(-2.0, 0.5, -2.0),
    EmotionCategory.NEUTRAL: VadTriple(0.0, 0.0, 0.0),
}

DIMENSION_DEFINITIONS = {
    "valence": "How pleasant or unpleasant the expression looks; "
               "-2 is strongly negative, +2 strongly positive.",
    "arousal": "How activated or calm the person appears; "
               "-2 is lethargic or relaxed, +2 highly energized.",
    "dominance": "How much in control of the situation the person seems; "
                 "-2 is submissive or overwhelmed, +2 confident and commanding.",
}


def emotion_to_vad(category: EmotionCategory) -> VadTriple:
    """Anchor coordinates of a basic emotion category."""
    return EMOTION_ANCHORS[category]


# ---------------------------------------------------------------------------
# FER2013 CSV
# ---------------------------------------------------------------------------

def parse_fer2013(stream: IO[str] | Iterable[str]) -> list[FaceImage]:
    """Parse the `emotion,pixels,Usage` CSV into FaceImage records.

    Image indices are row positions (0-based over data rows). Any malformed
    row aborts with an error naming it.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise FerParseError("empty file: missing header") from None
    if tuple(h.strip() for h in header) != FER_HEADER:
        raise FerParseError(f"unexpected header {header!r}, want {','.join(FER_HEADER)}")
    images: list[FaceImage] = []
    for i, row in enumerate(reader):
        if not row:
            continue
        if len(row) != 3:
            raise FerParseError(f"row {i}: expected 3 fields, got {len(row)}")
        emotion_s, pixels_s, usage = row
        try:
            code = int(emotion_s)
            category = EMOTION_CODES[code]
        except (ValueError, KeyError):
            raise FerParseError(f"row {i}: unknown emotion code {emotion_s!r}") from None
        try:
            split = Split(usage.strip())
        except ValueError:
            raise FerParseError(f"row {i}: unknown Usage {usage!r}") from None
        parts = pixels_s.split()
        if len(parts) != PIXELS_PER_IMAGE:
            raise FerParseError(
                f"row {i}: expected {PIXELS_PER_IMAGE} pixels, got {len(parts)}")
        try:
            flat = np.array([int(p) for p in parts], dtype=np.int64)
        except ValueError:
            raise FerParseError(f"row {i}: non-integer pixel value") from None
        if flat.min() < 0 or flat.max() > 255:
            raise FerParseError(f"row {i}: pixel value outside [0, 255]")
        images.append(FaceImage(index=i, pixels=flat.reshape(IMAGE_SIDE, IMAGE_SIDE),
                                split=split, category=category))
    return images


def parse_fer2013_path(path) -> list[FaceImage]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return parse_fer2013(f)


def fer2013_row(image: FaceImage) -> str:
    pixels = " ".join(str(int(p)) for p in image.pixels.reshape(-1))
    code = CODES_BY_EMOTION[image.category] if image.category is not None else 6
    return f"{code},{pixels},{image.split.value}"


def write_fer2013(images: Iterable[FaceImage], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(FER_HEADER) + "\n")
        for img in images:
            f.write(fer2013_row(img) + "\n")


def split_counts(images: Iterable[FaceImage]) -> dict[Split, int]:
    counts = {s: 0 for s in Split}
    for img in images:
        counts[img.split] += 1
    return counts


# ---------------------------------------------------------------------------
# annotation CSV
# ---------------------------------------------------------------------------

def _parse_scale_value(raw: str, row: int, name: str) -> int:
    try:
        val = int(raw)
    except ValueError:
        raise AnnotationValidationError(f"row {row}: {name}={raw!r} is not an integer") from None
    if val not in SCALE_VALUES:
        raise AnnotationValidationError(
            f"row {row}: {name}={val} outside the 5-point scale {SCALE_VALUES}")
    return val


def load_annotations(stream: IO[str] | Iterable[str]) -> list[AnnotationRecord]:
    """Load the canonical annotation CSV (or the reduced published form).

    Canonical rows are `image_index,annotator_id,v,a,d,timestamp`; the
    reduced import form `image_index,v,a,d` gets a fixed annotator id and a
    zero timestamp. A header row matching either layout is skipped.
    """
    reader = csv.reader(stream)
    records: list[AnnotationRecord] = []
    seen: set[tuple[int, str]] = set()
    width: int | None = None
    for i, row in enumerate(reader):
        if not row:
            continue
        stripped = tuple(f.strip() for f in row)
        if i == 0 and stripped in (ANNOTATION_HEADER, REDUCED_HEADER):
            width = len(stripped)
            continue
        if len(stripped) not in (4, 6):
            raise AnnotationValidationError(
                f"row {i}: expected 4 or 6 fields, got {len(stripped)}")
        if width is None:
            width = len(stripped)
        elif len(stripped) != width:
            raise AnnotationValidationError(
                f"row {i}: mixed {len(stripped)}-field row in a {width}-field file")
        try:
            image_index = int(stripped[0])
        except ValueError:
            raise AnnotationValidationError(
                f"row {i}: image_index {stripped[0]!r} is not an integer") from None
        if width == 6:
            annotator = stripped[1]
            v = _parse_scale_value(stripped[2], i, "v")
            a = _parse_scale_value(stripped[3], i, "a")
            d = _parse_scale_value(stripped[4], i, "d")
            try:
                ts = int(stripped[5])
            except ValueError:
                raise AnnotationValidationError(
                    f"row {i}: timestamp {stripped[5]!r} is not an integer") from None
        else:
            annotator = "published"
            v = _parse_scale_value(stripped[1], i, "v")
            a = _parse_scale_value(stripped[2], i, "a")
            d = _parse_scale_value(stripped[3], i, "d")
            ts = 0
        if not annotator:
            raise AnnotationValidationError(f"row {i}: empty annotator_id")
        key = (image_index, annotator)
        if key in seen:
            raise DuplicateAnnotationError(
                f"row {i}: duplicate annotation for image {image_index} by {annotator!r}")
        seen.add(key)
        records.append(AnnotationRecord(image_index, annotator,
                                        VadTriple.annotation(v, a, d), ts))
    return records


def load_annotations_path(path) -> list[AnnotationRecord]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return load_annotations(f)


def write_annotations(records: Iterable[AnnotationRecord], path) -> None:
    """Canonical annotation CSV, sorted by (image_index, annotator_id)."""
    ordered = sorted(records, key=lambda r: (r.image_index, r.annotator_id))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(ANNOTATION_HEADER) + "\n")
        for r in ordered:
            f.write(f"{r.image_index},{r.annotator_id},{int(r.triple.v)},"
                    f"{int(r.triple.a)},{int(r.triple.d)},{r.timestamp}\n")


def load_exclusions(stream: IO[str] | Iterable[str]) -> set[int]:
    """Exclusion list: one image index per line; blanks ignored."""
    out: set[int] = set()
    for line in stream:
        line = line.strip()
        if line:
            out.add(int(line))
    return out


# ---------------------------------------------------------------------------
# aggregation / statistics
# ---------------------------------------------------------------------------

def _median_toward_zero(values: list[int]) -> int:
    ordered = sorted(values)
    n = len(ordered)
    if n % 2 == 1:
        return ordered[n // 2]
    mid = (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0
    return int(mid)  # int() truncates toward zero


@dataclass
class FilterResult:
    accepted: dict[int, VadTriple] = field(default_factory=dict)
    rejected: dict[int, str] = field(default_factory=dict)


def consistency_filter(records: Iterable[AnnotationRecord], min_annotators: int = 1,
                       max_spread: int = 1) -> FilterResult:
    """Accept an image when enough annotators agree within the spread bound.

    Per dimension the max-min spread must not exceed ``max_spread``; the
    accepted label is the per-dimension median, with even-count ties rounded
    toward zero. Order of records never matters.
    """
    if min_annotators < 1:
        raise ValueError("min_annotators must be >= 1")
    if max_spread < 0:
        raise ValueError("max_spread must be >= 0")
    by_image: dict[int, list[AnnotationRecord]] = defaultdict(list)
    for rec in records:
        by_image[rec.image_index].append(rec)
    result = FilterResult()
    for idx in sorted(by_image):
        group = by_image[idx]
        if len(group) < min_annotators:
            result.rejected[idx] = f"only {len(group)} annotator(s), need {min_annotators}"
            continue
        per_dim = {name: [int(getattr(r.triple, name)) for r in group] for name in "vad"}
        spreads = {name: max(vals) - min(vals) for name, vals in per_dim.items()}
        wide = [name for name, s in spreads.items() if s > max_spread]
        if wide:
            result.rejected[idx] = (
                f"spread {spreads[wide[0]]} on {wide[0]} exceeds {max_spread}")
            continue
        result.accepted[idx] = VadTriple.annotation(
            *(_median_toward_zero(per_dim[name]) for name in "vad"))
    return result


def vad_distribution(labels: Iterable[VadTriple]) -> np.ndarray:
    """3x5 count table: rows are (v, a, d), columns the values -2..2."""
    table = np.zeros((3, 5), dtype=np.int64)
    for triple in labels:
        for r, val in enumerate(triple.as_tuple()):
            table[r, SCALE_VALUES.index(int(val))] += 1
    return table


def format_distribution(table: np.ndarray) -> str:
    lines = ["dim   " + "".join(f"{v:>8}" for v in SCALE_VALUES)]
    for name, row in zip(("V", "A", "D"), table):
        lines.append(f"{name:<6}" + "".join(f"{int(c):>8}" for c in row))
    return "\n".join(lines)


def to_training_set(images: Iterable[FaceImage],
                    labels: dict[int, VadTriple]) -> tuple[np.ndarray, np.ndarray]:
    """Paired (images, targets) tensors in ascending image-index order.

    Pixels are scaled to [0, 1] by /255; targets are (n, 3) float rows
    (v, a, d) on the raw [-2, 2] scale.
    """
    by_index = {img.index: img for img in images}
    order = sorted(labels)
    for idx in order:
        if idx not in by_index:
            raise MissingImageError(f"label references missing image index {idx}")
    x = np.stack([by_index[idx].pixels.astype(np.float64) / 255.0 for idx in order])
    x = x[:, None, :, :]
    y = np.array([labels[idx].as_tuple() for idx in order], dtype=np.float64)
    return x, y
