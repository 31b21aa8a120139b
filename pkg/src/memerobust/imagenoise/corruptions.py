"""Fifteen common image corruptions at five severities.

Constants live in the bundled ``corruption_catalog.txt`` so a given
(kind, severity, seed) produces the same bytes across releases. Frost, snow
and fog textures are generated procedurally instead of loading photographs.
"""
from __future__ import annotations

import configparser
import io
from functools import lru_cache
from importlib import resources

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image
from scipy import ndimage

CORRUPTIONS = (
    "gaussian_noise", "shot_noise", "impulse_noise",
    "defocus_blur", "glass_blur", "motion_blur", "zoom_blur",
    "snow", "frost", "fog",
    "brightness", "contrast", "elastic_transform", "pixelate", "jpeg_compression",
)
SEVERITIES = (1, 2, 3, 4, 5)


class CorruptionCatalog:
    def __init__(self, text: str):
        cp = configparser.ConfigParser()
        cp.read_string(text)
        self.version = cp.getint("catalog", "version")
        self.params = {}
        self.constants = {}
        for kind in CORRUPTIONS:
            if not cp.has_section(kind):
                raise ValueError(f"catalog lacks section [{kind}]")
            sec = cp[kind]
            self.params[kind] = tuple(p.strip() for p in sec["params"].split(","))
            for s in SEVERITIES:
                vals = tuple(float(v) for v in sec[str(s)].split(","))
                if len(vals) != len(self.params[kind]):
                    raise ValueError(f"[{kind}] severity {s}: expected {len(self.params[kind])} constants")
                self.constants[kind, s] = vals

    def __getitem__(self, key) -> tuple:
        return self.constants[key]


@lru_cache(maxsize=1)
def catalog() -> CorruptionCatalog:
    text = resources.files("memerobust").joinpath("data/corruption_catalog.txt").read_text(encoding="utf-8")
    return CorruptionCatalog(text)


# ---------------------------------------------------------------- helpers

def _blur(x, sigma):
    return ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0), mode="nearest")


def _convolve(x, kernel):
    return np.stack([ndimage.convolve(x[..., c], kernel, mode="nearest") for c in range(3)], axis=-1)


def _warp(x, rows, cols):
    return np.stack([ndimage.map_coordinates(x[..., c], [rows, cols], order=1, mode="reflect")
                     for c in range(3)], axis=-1)


def _disk(radius, alias_sigma):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = (xx ** 2 + yy ** 2 <= radius ** 2).astype(np.float64)
    k = ndimage.gaussian_filter(k, alias_sigma)
    return k / k.sum()


def _line_kernel(length, angle_deg):
    n = int(length)
    c = n // 2
    k = np.zeros((n, n))
    t = np.linspace(-(n - 1) / 2, (n - 1) / 2, 4 * n)
    a = np.deg2rad(angle_deg)
    rows = np.clip(np.rint(c - t * np.sin(a)).astype(int), 0, n - 1)
    cols = np.clip(np.rint(c + t * np.cos(a)).astype(int), 0, n - 1)
    k[rows, cols] = 1.0
    return k / k.sum()


def fractal_noise(h, w, decay, rng, octaves=None):
    """Multi-octave value noise in [0, 1]; amplitude shrinks by ``decay`` per octave."""
    size = max(h, w)
    octaves = octaves or max(1, int(np.ceil(np.log2(size))))
    field = np.zeros((size, size))
    amp = 1.0
    for o in range(octaves):
        n = 2 ** (o + 1) + 1
        grid = rng.normal(size=(n, n))
        field += amp * ndimage.zoom(grid, size / n, order=1, mode="nearest", grid_mode=True)[:size, :size]
        amp /= decay
    field = field[:h, :w]
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


# ---------------------------------------------------------------- kinds

def gaussian_noise(x, c, rng):
    return x + rng.normal(0.0, c[0], x.shape)


def shot_noise(x, c, rng):
    lam = c[0]
    return rng.poisson(np.clip(x, 0, 1) * lam) / lam


def impulse_noise(x, c, rng):
    out = x.copy()
    hit = rng.random(x.shape) < c[0]
    salt = rng.random(x.shape) < 0.5
    out[hit & salt] = 1.0
    out[hit & ~salt] = 0.0
    return out


def defocus_blur(x, c, rng):
    return _convolve(x, _disk(c[0], c[1]))


def glass_blur(x, c, rng):
    sigma, max_delta, iters = c[0], int(c[1]), int(c[2])
    x = _blur(x, sigma)
    h, w = x.shape[:2]
    for _ in range(iters):
        for r in range(h - max_delta - 1, max_delta - 1, -1):
            for col in range(w - max_delta - 1, max_delta - 1, -1):
                dr, dc = rng.integers(-max_delta, max_delta + 1, size=2)
                r2, c2 = r + dr, col + dc
                x[r, col], x[r2, c2] = x[r2, c2].copy(), x[r, col].copy()
    return _blur(x, sigma)


def motion_blur(x, c, rng):
    return _convolve(x, _line_kernel(c[0], rng.uniform(-45, 45)))


def zoom_blur(x, c, rng):
    h, w = x.shape[:2]
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    out = x.copy()
    zooms = np.arange(1.0 + c[1], c[0] + 1e-9, c[1])
    for z in zooms:
        out += _warp(x, cy + (rows - cy) / z, cx + (cols - cx) / z)
    return out / (len(zooms) + 1)


def snow(x, c, rng):
    loc, scale, thresh, length, blend = c
    h, w = x.shape[:2]
    layer = rng.normal(loc, scale, (h, w))
    layer[layer < thresh] = 0.0
    streak = ndimage.convolve(layer, _line_kernel(length, rng.uniform(-135, -45)), mode="wrap")
    gray = x.mean(axis=2, keepdims=True)
    x = blend * x + (1 - blend) * np.maximum(x, gray * 1.5 + 0.5)
    return x + streak[..., None] + np.rot90(streak, 2)[..., None]


def frost(x, c, rng):
    h, w = x.shape[:2]
    tex = fractal_noise(h, w, 1.3, rng) ** 2
    specks = ndimage.gaussian_filter((rng.random((h, w)) > 0.97).astype(np.float64), 0.7)
    tex = np.clip(tex + 4 * specks, 0, 1)
    frost_rgb = np.stack([tex * 0.85, tex * 0.92, tex], axis=-1)
    return c[0] * x + c[1] * frost_rgb


def fog(x, c, rng):
    h, w = x.shape[:2]
    peak = x.max()
    out = x + c[0] * fractal_noise(h, w, c[1], rng)[..., None]
    return out * peak / (peak + c[0])


def brightness(x, c, rng):
    hsv = rgb_to_hsv(np.clip(x, 0, 1))
    hsv[..., 2] = np.clip(hsv[..., 2] + c[0], 0, 1)
    return hsv_to_rgb(hsv)


def contrast(x, c, rng):
    means = x.mean(axis=(0, 1), keepdims=True)
    return (x - means) * c[0] + means


def elastic_transform(x, c, rng):
    disp, sigma = c
    h, w = x.shape[:2]
    fields = []
    for _ in range(2):
        f = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma, mode="reflect")
        peak = np.abs(f).max()
        fields.append(f * disp / peak if peak > 0 else f)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    return _warp(x, rows + fields[0], cols + fields[1])


def pixelate(x, c, rng):
    h, w = x.shape[:2]
    img = Image.fromarray(_to_uint8(x))
    small = img.resize((max(1, int(w * c[0])), max(1, int(h * c[0]))), Image.BOX)
    return np.asarray(small.resize((w, h), Image.NEAREST), dtype=np.float64) / 255.0


def jpeg_compression(x, c, rng):
    buf = io.BytesIO()
    Image.fromarray(_to_uint8(x)).save(buf, format="JPEG", quality=int(c[0]))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


_KINDS = {f.__name__: f for f in (
    gaussian_noise, shot_noise, impulse_noise, defocus_blur, glass_blur, motion_blur, zoom_blur,
    snow, frost, fog, brightness, contrast, elastic_transform, pixelate, jpeg_compression)}


def _to_uint8(x):
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def apply_corruption(image: np.ndarray, kind: str, severity: int, seed: int = 0) -> np.ndarray:
    """Corrupt an 8-bit RGB raster; output keeps its shape and dtype."""
    if kind not in _KINDS:
        raise ValueError(f"unknown corruption kind {kind!r}")
    if severity not in SEVERITIES:
        raise ValueError(f"severity must be one of {SEVERITIES}, got {severity!r}")
    rng = np.random.default_rng(seed)
    x = np.asarray(image, dtype=np.float64) / 255.0
    return _to_uint8(_KINDS[kind](x, catalog()[kind, severity], rng))
