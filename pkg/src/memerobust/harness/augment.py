"""Augmented training set: back-translated captions with AugMix images."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from ..dataset import Dataset, ManifestWriter, MemeSample
from ..imagenoise import augmix
from ..paraphrase import ParaphraseProvider, RuleParaphraser
from ..textnoise import backtranslate
from .core import HarnessConfig, HarnessError, derive_seed


def gen_aug_dataset(dataset: Dataset, n: int, run_seed: int, out_dir, config: HarnessConfig = HarnessConfig(),
                    provider: Optional[ParaphraseProvider] = None) -> Path:
    """Draw ``n`` samples with replacement and stream the augmented copies to disk.

    Output ids are ``aug-00000`` onward; ``aux["source_id"]`` records the
    sample each one came from. Returns the manifest path.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > 0 and len(dataset) == 0:
        raise HarnessError("cannot augment an empty dataset")
    rng = np.random.default_rng(derive_seed(run_seed, 0xA06))
    picks = rng.integers(0, len(dataset), size=n) if n else np.zeros(0, dtype=int)
    width = max(5, len(str(max(n - 1, 0))))
    with ManifestWriter(out_dir) as w:
        for k, idx in enumerate(picks):
            src = dataset[int(idx)]
            p = provider if provider is not None else RuleParaphraser(seed=derive_seed(run_seed, k, 0))
            image = augmix(src.image, config.augmix_width, config.augmix_depth, config.augmix_alpha,
                           derive_seed(run_seed, k, 1), config.augmix_severity)
            aux = dict(src.aux)
            aux["source_id"] = src.id
            w.write(MemeSample(f"aug-{k:0{width}d}", image, backtranslate(src.caption, p), src.label, aux), "aug")
    return w.path
