"""Image perturbation families: universal perturbations, corruptions, AugMix."""
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from .augmix import OPERATIONS, augmix, mixing_weights
from .corruptions import CORRUPTIONS, SEVERITIES, apply_corruption, catalog
from .uap import UapDelta, apply_uap, fooling_rate, load_uap, random_sign_delta, save_uap, train_uap


class ImageFamily(IntEnum):
    NONE = 0
    UAP = 1
    CORRUPTION = 2
    AUGMIX = 3


IMAGE_FAMILY_NAMES = {
    ImageFamily.NONE: "None",
    ImageFamily.UAP: "Universal Adversarial Perturbations",
    ImageFamily.CORRUPTION: "ImageNet-C Corruptions",
    ImageFamily.AUGMIX: "AugMix",
}


@dataclass(frozen=True)
class ImageNoiseSpec:
    family: ImageFamily = ImageFamily.NONE
    corruption_kind: Optional[str] = None  # None picks a kind per sample
    severity: int = 3
    seed: int = 0
    uap_delta: Optional[UapDelta] = None

    def __post_init__(self):
        object.__setattr__(self, "family", ImageFamily(self.family))
        if self.family == ImageFamily.CORRUPTION:
            if self.severity not in SEVERITIES:
                raise ValueError(f"severity must be in {SEVERITIES}")
            if self.corruption_kind is not None and self.corruption_kind not in CORRUPTIONS:
                raise ValueError(f"unknown corruption kind {self.corruption_kind!r}")
