"""Synthetic meme-shaped fixtures for tests and desk-scale runs.

Captions mix neutral filler with class cue words; images are class-tinted
32x32 rasters with random blobs. Both channels carry signal, neither is
perfect unless ``separable`` is set.
"""
from __future__ import annotations

import numpy as np

from .dataset import Dataset, MemeSample

NEUTRAL = ("the", "people", "today", "this", "city", "month", "parade", "flag", "when", "they", "said",
           "about", "new", "rights", "trans", "are", "right", "time", "world", "everyone", "march", "week",
           "news", "post", "photo", "street", "crowd", "event", "school", "family")
BENIGN_CUES = ("pride", "love", "celebrate", "together", "support", "happy", "rainbow", "friends",
               "proud", "kind", "welcome", "equal")
HATEFUL_CUES = ("disgusting", "wrong", "stop", "ban", "shame", "sick", "nonsense", "agenda",
                "never", "against", "fake", "ugly")

# class signal in the images: a red/blue balance shift on a random base colour
TINT_AXIS = np.array([1.0, 0.0, -1.0])


def make_caption(label: int, rng: np.random.Generator, separable: bool = False, conflict: float = 0.2) -> str:
    n = int(rng.integers(2, 6))
    words = list(rng.choice(NEUTRAL, size=n))
    cues = (BENIGN_CUES, HATEFUL_CUES)
    own = cues[label]
    other = cues[1 - label]
    for _ in range(int(rng.integers(2, 4))):
        pool = other if (not separable and rng.random() < conflict) else own
        words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(pool)))
    return " ".join(words)


def make_image(label: int, rng: np.random.Generator, size: int = 32, separable: bool = False,
               shift: float = 22.0) -> np.ndarray:
    base = rng.uniform(60.0, 190.0, 3)
    sign = 1.0 if label == 0 else -1.0
    tint = base + sign * (90.0 if separable else shift) * TINT_AXIS
    img = np.broadcast_to(tint, (size, size, 3)).copy()
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(0 if separable else int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(size / 10, size / 4)
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[blob] = rng.uniform(30, 230, 3)
    img += rng.normal(0.0, 12.0, img.shape)
    return np.rint(np.clip(img, 0, 255)).astype(np.uint8)


def make_fixture(n: int, seed: int = 0, split: str = "train", separable: bool = False,
                 image_size: int = 32, prefix: str | None = None) -> Dataset:
    """Balanced (label alternates after a shuffle) dataset of ``n`` samples."""
    rng = np.random.default_rng([seed, 7])
    labels = rng.permutation(np.arange(n) % 2)
    prefix = prefix if prefix is not None else split
    samples = []
    for k, y in enumerate(labels):
        y = int(y)
        samples.append(MemeSample(
            id=f"{prefix}-{k:05d}",
            image=make_image(y, rng, image_size, separable),
            caption=make_caption(y, rng, separable),
            label=y,
        ))
    return Dataset(samples, split)


def make_splits(seed: int = 0, n_train: int = 400, n_val: int = 100, n_test: int = 200,
                separable: bool = False) -> dict:
    return {
        "train": make_fixture(n_train, seed, "train", separable),
        "val": make_fixture(n_val, seed + 1, "val", separable),
        "test": make_fixture(n_test, seed + 2, "test", separable),
    }
