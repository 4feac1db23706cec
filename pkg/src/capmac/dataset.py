"""The four-letter capacitive image corpus: canonical glyph bitmaps at 3x3
and 5x5, capacitive encoding, and seeded noisy batch generation."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .device import SensorParams, apply_noise


class Glyph(enum.Enum):
    H = "h"
    L = "l"
    Y = "y"
    INV_Z = "invz"


# One-hot label order is fixed as H, L, Y, INV_Z = 0..3.
GLYPH_ORDER = (Glyph.H, Glyph.L, Glyph.Y, Glyph.INV_Z)
NUM_GLYPHS = len(GLYPH_ORDER)

# Canonical 3x3 bitmaps, rows top to bottom, 1 = inside the stroke.
_PATTERNS_3 = {
    Glyph.H: ((1, 0, 1), (1, 1, 1), (1, 0, 1)),
    Glyph.L: ((1, 0, 0), (1, 0, 0), (1, 1, 1)),
    Glyph.Y: ((1, 0, 1), (0, 1, 0), (0, 1, 0)),
    Glyph.INV_Z: ((1, 1, 1), (0, 1, 0), (1, 1, 1)),
}


@dataclass(frozen=True)
class LetterImage:
    glyph: Glyph
    grid: np.ndarray  # binary, shape (resolution, resolution)
    resolution: int


@dataclass(frozen=True)
class CapacitiveSample:
    c_i: np.ndarray        # induced capacitances, pF
    label: np.ndarray      # one-hot, length 4
    clean_source: LetterImage


def letter_patterns(resolution: int) -> list[LetterImage]:
    """The four canonical letters at 3x3, or at 5x5 via centering the 3x3
    glyph and extending its strokes to the border by edge replication."""
    if resolution not in (3, 5):
        raise ValueError(f"unsupported resolution: {resolution}")
    out = []
    for glyph in GLYPH_ORDER:
        grid = np.array(_PATTERNS_3[glyph], dtype=np.uint8)
        if resolution == 5:
            grid = np.pad(grid, 1, mode="edge")
        grid.setflags(write=False)
        out.append(LetterImage(glyph=glyph, grid=grid, resolution=resolution))
    return out


def one_hot(glyph: Glyph) -> np.ndarray:
    label = np.zeros(NUM_GLYPHS)
    label[GLYPH_ORDER.index(glyph)] = 1.0
    return label


def encode_capacitive(image: LetterImage, params: SensorParams) -> CapacitiveSample:
    """Map the binary bitmap to induced capacitances: inside -> c_ih,
    outside -> c_il."""
    c_i = np.where(image.grid > 0, params.c_ih, params.c_il).astype(float)
    return CapacitiveSample(c_i=c_i, label=one_hot(image.glyph), clean_source=image)


def _noise_nominal(clean: np.ndarray, params: SensorParams) -> np.ndarray:
    if params.noise_mode == "global":
        return np.full_like(clean, params.c_ih)
    return clean


def _noisy_samples(indices, patterns, params: SensorParams, rng) -> list[CapacitiveSample]:
    # One vectorized draw for the whole batch keeps the stream layout fixed.
    grids = np.stack([patterns[i].grid for i in indices]).astype(float)
    clean = np.where(grids > 0, params.c_ih, params.c_il)
    noisy = apply_noise(clean, _noise_nominal(clean, params), params.noise_frac, rng)
    return [
        CapacitiveSample(c_i=noisy[j], label=one_hot(patterns[i].glyph),
                         clean_source=patterns[i])
        for j, i in enumerate(indices)
    ]


def sample_batch(size: int, params: SensorParams, rng, resolution: int = 3
                 ) -> list[CapacitiveSample]:
    """Draw `size` letters uniformly with replacement, each with a fresh
    noise realization. Deterministic for a seeded rng."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    patterns = letter_patterns(resolution)
    indices = rng.integers(0, NUM_GLYPHS, size)
    return _noisy_samples(indices, patterns, params, rng)


def balanced_batch(per_glyph: int, params: SensorParams, rng, resolution: int = 3
                   ) -> list[CapacitiveSample]:
    """Glyph-ordered batch with `per_glyph` fresh noisy samples of each
    letter; used for per-epoch evaluation."""
    if per_glyph < 1:
        raise ValueError("per_glyph must be >= 1")
    patterns = letter_patterns(resolution)
    indices = np.repeat(np.arange(NUM_GLYPHS), per_glyph)
    return _noisy_samples(indices, patterns, params, rng)


def batch_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a sample list into (c_i, labels, label_indices) arrays."""
    c_i = np.stack([s.c_i for s in batch])
    labels = np.stack([s.label for s in batch])
    return c_i, labels, labels.argmax(axis=1)


def write_bitmap(path, grid):
    """Plain-text bitmap fixture format: one row of 0/1 characters per line."""
    rows = ["".join(str(int(v)) for v in row) for row in np.asarray(grid)]
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def read_bitmap(path) -> np.ndarray:
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    return np.array([[int(ch) for ch in row] for row in rows], dtype=np.uint8)


def write_capacitance_csv(path, matrix):
    """Capacitance dump: one CSV row per pixel row, repr-formatted pF values."""
    mat = np.asarray(matrix, dtype=float)
    lines = [",".join(repr(float(v)) for v in row) for row in mat]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_capacitance_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    return np.array([[float(v) for v in row.split(",")] for row in rows])
