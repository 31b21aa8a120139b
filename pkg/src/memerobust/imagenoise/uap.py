"""Universal adversarial perturbation by projected sign-gradient ascent."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..toymodel.model import (Batch, ToyModel, backward, batch_from_samples, forward_batch,
                              labels_from_probs, make_batch, model_fingerprint)


@dataclass
class UapDelta:
    delta: np.ndarray   # H x W x 3 float32, [0,1] pixel scale
    eps: float
    fooling_rate: float = 0.0
    model_hash: str = ""

    @property
    def shape(self):
        return self.delta.shape


def float32_radius(eps: float) -> np.float32:
    """Largest float32 not above ``eps``, so a float32 clip keeps |delta| <= eps exactly."""
    r = np.float32(eps)
    if float(r) > eps:
        r = np.nextafter(r, np.float32(-np.inf))
    return r


def project(delta: np.ndarray, eps: float) -> np.ndarray:
    r = float32_radius(eps)
    return np.clip(delta.astype(np.float32), -r, r)


def apply_uap(image: np.ndarray, delta: UapDelta) -> np.ndarray:
    """Add the perturbation on the [0,1] scale and requantize to 8 bits."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape[:2]
    d = delta.delta
    if d.shape[:2] != (h, w):
        d = _resize_delta(d, h, w)
    out = image / 255.0 + d.astype(np.float64)
    return np.rint(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)


def _resize_delta(d, h, w):
    rows = np.minimum(((np.arange(h) + 0.5) * d.shape[0] / h).astype(int), d.shape[0] - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * d.shape[1] / w).astype(int), d.shape[1] - 1)
    return d[rows][:, cols]


def random_sign_delta(shape, eps: float, seed: int = 0) -> UapDelta:
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=shape)
    return UapDelta(project(signs * float(float32_radius(eps)), eps), eps)


def _perturbed_batch(model: ToyModel, dataset, delta: UapDelta) -> Batch:
    return make_batch(model, [s.caption for s in dataset], [apply_uap(s.image, delta) for s in dataset])


def fooling_rate(model: ToyModel, dataset, delta: UapDelta, channel: str = "multimodal") -> float:
    """Fraction of samples whose predicted label changes under the perturbation."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    clean = labels_from_probs(forward_batch(model, batch_from_samples(model, dataset), "eval", channel)[1])
    pert = labels_from_probs(forward_batch(model, _perturbed_batch(model, dataset, delta), "eval", channel)[1])
    return float(np.mean(clean != pert))


def train_uap(model: ToyModel, dataset, eps: float = 8 / 255, iterations: int = 10, step: Optional[float] = None,
              batch_size: int = 32, seed: int = 0, channel: str = "multimodal",
              on_step: Optional[Callable[[int, np.ndarray], None]] = None) -> UapDelta:
    """Universal PGD against the model's own clean predictions.

    ``iterations`` counts epochs over ``dataset``. Every step moves delta by
    ``step`` along the sign of the summed input gradient and projects back
    onto the L-inf ball; ``on_step(k, delta)`` sees each projected iterate.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if len(dataset) == 0:
        raise ValueError("cannot train a perturbation on an empty dataset")
    model.require_trained()
    step = eps / 8 if step is None else step
    s = model.config.image_size
    delta = np.zeros((s, s, 3), dtype=np.float32)
    batch = batch_from_samples(model, dataset)
    targets = labels_from_probs(forward_batch(model, batch, "eval", channel)[1])
    rng = np.random.default_rng([seed, 2])
    n = len(targets)
    k = 0
    for _ in range(iterations):
        order = rng.permutation(n)
        for start in range(0, n, max(1, batch_size)):
            idx = order[start:start + batch_size]
            sub = batch.subset(idx)
            raw = sub.pixels + delta.astype(np.float64)
            adv = Batch(sub.counts, sub.lengths, np.clip(raw, 0.0, 1.0))
            _, _, cache = forward_batch(model, adv, "attack", channel)
            grad = backward(model, cache, targets[idx]).pixels
            # clipped pixels pass no gradient to delta
            grad = np.where((raw > 0.0) & (raw < 1.0), grad, 0.0).sum(axis=0)
            delta = project(delta + np.float32(step) * np.sign(grad).astype(np.float32), eps)
            k += 1
            if on_step is not None:
                on_step(k, delta)
    out = UapDelta(delta, float(eps), model_hash=model_fingerprint(model))
    out.fooling_rate = fooling_rate(model, dataset, out, channel)
    return out


def save_uap(delta: UapDelta, path) -> Path:
    """Raw little-endian float32 raster at ``path`` plus a ``.json`` sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(delta.delta, dtype="<f4").tobytes())
    meta = {"eps": delta.eps, "fooling_rate": delta.fooling_rate, "model_hash": delta.model_hash,
            "shape": list(delta.delta.shape)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return path


def load_uap(path) -> UapDelta:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{path}: raster size does not match sidecar shape {shape}")
    return UapDelta(raw.reshape(shape).astype(np.float32), float(meta["eps"]), float(meta["fooling_rate"]),
                    meta["model_hash"])
