"""AugMix: Dirichlet-weighted mix of random augmentation chains plus a Beta skip."""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageOps

# contrast/brightness/noise are left out so nothing overlaps the corruption set
OPERATIONS = ("rotate", "shear_x", "shear_y", "translate_x", "translate_y",
              "posterize", "solarize", "equalize", "autocontrast")
MAX_SEVERITY = 10


def _level(severity, rng, hi):
    # uniform in [0.1, severity/10] of the op's max magnitude
    return rng.uniform(0.1, max(0.1, severity / MAX_SEVERITY)) * hi


def _signed(v, rng):
    return -v if rng.random() < 0.5 else v


def apply_op(img: Image.Image, name: str, severity: int, rng: np.random.Generator) -> Image.Image:
    w, h = img.size
    if name == "rotate":
        return img.rotate(_signed(_level(severity, rng, 30.0), rng), resample=Image.BILINEAR)
    if name == "shear_x":
        s = _signed(_level(severity, rng, 0.3), rng)
        return img.transform(img.size, Image.AFFINE, (1, s, 0, 0, 1, 0), resample=Image.BILINEAR)
    if name == "shear_y":
        s = _signed(_level(severity, rng, 0.3), rng)
        return img.transform(img.size, Image.AFFINE, (1, 0, 0, s, 1, 0), resample=Image.BILINEAR)
    if name == "translate_x":
        t = _signed(_level(severity, rng, w / 3), rng)
        return img.transform(img.size, Image.AFFINE, (1, 0, t, 0, 1, 0), resample=Image.BILINEAR)
    if name == "translate_y":
        t = _signed(_level(severity, rng, h / 3), rng)
        return img.transform(img.size, Image.AFFINE, (1, 0, 0, 0, 1, t), resample=Image.BILINEAR)
    if name == "posterize":
        return ImageOps.posterize(img, max(1, 4 - int(_level(severity, rng, 4.0))))
    if name == "solarize":
        return ImageOps.solarize(img, 256 - int(_level(severity, rng, 256.0)))
    if name == "equalize":
        return ImageOps.equalize(img)
    if name == "autocontrast":
        return ImageOps.autocontrast(img)
    raise ValueError(f"unknown augmentation {name!r}")


def mixing_weights(width: int, alpha: float, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Chain weights w ~ Dir(alpha * 1_k) and skip weight m ~ Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    w = rng.dirichlet([alpha] * width) if width > 0 else np.zeros(0)
    m = float(rng.beta(alpha, alpha))
    return w, m


def augmix(image: np.ndarray, width: int = 3, depth: int = 3, alpha: float = 1.0, seed: int = 0,
           severity: int = 3, skip_weight: float | None = None) -> np.ndarray:
    """Mix ``width`` chains of 1..depth random ops with the original image.

    ``skip_weight`` overrides the Beta draw (m=1 gives the input back).
    Mixing happens in float on the 0-255 scale, then rounds once.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    image = np.asarray(image, dtype=np.uint8)
    if width <= 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    w, m = mixing_weights(width, alpha, rng)
    if skip_weight is not None:
        m = float(skip_weight)
    pil = Image.fromarray(image)
    mix = np.zeros(image.shape, dtype=np.float64)
    for i in range(width):
        aug = pil
        for _ in range(int(rng.integers(1, max(1, depth) + 1))):
            aug = apply_op(aug, OPERATIONS[int(rng.integers(len(OPERATIONS)))], severity, rng)
        mix += w[i] * np.asarray(aug, dtype=np.float64)
    out = m * image.astype(np.float64) + (1.0 - m) * mix
    return np.rint(np.clip(out, 0, 255)).astype(np.uint8)
