"""Deterministic synthetic face-stand-in images rendered from known VAD triples.

Desk-scale training needs a labeled 48x48 grayscale corpus whose labels are
recoverable from pixels. Each dimension modulates its own zero-mean spatial
carrier (vertical stripes, horizontal stripes, checkerboard), so the three
signals are mutually orthogonal and each needs a genuine matched filter
rather than a global brightness read-out. Seeded per-image texture is added
on top. The mapping is exact and fixed, so fixtures regenerate
bit-identically from (n, seed).
"""

from __future__ import annotations

import numpy as np

from .dataset import FaceImage, Split, VadTriple

SCALE_VALUES = (-2, -1, 0, 1, 2)

_COLS = np.arange(48)[None, :]
_ROWS = np.arange(48)[:, None]
CARRIER_V = np.cos(2 * np.pi * _COLS / 4.0) * np.ones((48, 48))
CARRIER_A = np.cos(2 * np.pi * _ROWS / 4.0) * np.ones((48, 48))
CARRIER_D = np.cos(np.pi * _COLS) * np.cos(np.pi * _ROWS)


def render_image(triple: VadTriple, rng: np.random.Generator) -> np.ndarray:
    """48x48 uint8 image encoding one triple."""
    img = (128.0
           + 25.0 * (triple.v / 2.0) * CARRIER_V
           + 25.0 * (triple.a / 2.0) * CARRIER_A
           + 25.0 * (triple.d / 2.0) * CARRIER_D
           + rng.normal(0.0, 3.0, size=(48, 48)))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_fixture(n: int, seed: int = 0,
                 split: Split = Split.TRAINING) -> tuple[list[FaceImage], dict[int, VadTriple]]:
    """n labeled images with annotation-grade triples drawn uniformly."""
    rng = np.random.default_rng(seed)
    images: list[FaceImage] = []
    labels: dict[int, VadTriple] = {}
    for i in range(n):
        v, a, d = (int(rng.choice(SCALE_VALUES)) for _ in range(3))
        triple = VadTriple(v, a, d)
        images.append(FaceImage(index=i, pixels=render_image(triple, rng), split=split))
        labels[i] = triple
    return images, labels


def write_fixture_csvs(n: int, seed: int, fer_path, labels_path,
                       splits: tuple[int, int, int] | None = None) -> None:
    """Write a FER2013-format CSV and a canonical annotation CSV.

    ``splits`` optionally partitions the n images into
    (training, public test, private test) counts, in index order.
    """
    from .dataset import AnnotationRecord, write_annotations, write_fer2013

    images, labels = make_fixture(n, seed)
    if splits is not None:
        n_train, n_pub, n_priv = splits
        if n_train + n_pub + n_priv != n:
            raise ValueError("splits must sum to n")
        for img in images:
            if img.index >= n_train + n_pub:
                img.split = Split.PRIVATE_TEST
            elif img.index >= n_train:
                img.split = Split.PUBLIC_TEST
    write_fer2013(images, fer_path)
    write_annotations(
        [AnnotationRecord(idx, "synth", labels[idx], 0) for idx in sorted(labels)],
        labels_path)
