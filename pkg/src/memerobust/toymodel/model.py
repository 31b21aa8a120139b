"""A small multimodal classifier trained with hand-written backpropagation.

Text path: mean of byte embeddings -> projection -> optional adapter.
Image path: fixed 8x8-pixel patch means -> projection.
Fusion: concatenation -> affine -> tanh -> affine -> softmax over 2 classes.

Every forward pass keeps a cache so that ``backward`` can return exact
gradients for parameters *and* inputs (byte one-hots, pixels), which is what
the HotFlip, trigger and UAP attacks consume.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .tda import TdaCache, TdaParams, tda_backward_batch, tda_forward_batch

VOCAB = 256
MODES = ("train", "eval", "attack")
CHANNELS = ("multimodal", "text_only", "image_only")
_MAGIC = b"MRCKPT"
_FORMAT_VERSION = 1


class NotTrainedError(RuntimeError):
    pass


class StaleCacheError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 16
    d_t: int = 16
    hidden: int = 32
    image_size: int = 32
    patch: int = 8
    activation: str = "tanh"  # "identity" turns the head into an affine map
    gate: str = "scalar"
    dropout_p: float = 0.1
    init_scale: float = 0.1

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ValueError("image_size must be a multiple of patch")
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_patch_features(self) -> int:
        return (self.image_size // self.patch) ** 2 * 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 0.0


PARAM_NAMES = ("char_embedding", "text_w", "text_b", "image_w", "image_b",
               "head_w1", "head_b1", "head_w2", "head_b2")


class ToyModel:
    def __init__(self, config: ModelConfig, params: dict, tda: Optional[TdaParams] = None,
                 seed: int = 0, trained: bool = False):
        self.config = config
        self.params = params
        self.tda = tda
        self.seed = seed
        self.trained = trained
        self.version = 0
        self.curve: list = []
        self.train_config: Optional[TrainConfig] = None

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), with_tda: bool = False, seed: int = 0) -> "ToyModel":
        rng = np.random.default_rng(seed)
        c = config
        sc = c.init_scale
        params = {
            "char_embedding": rng.normal(0.0, 1.0, (VOCAB, c.d_t)),
            "text_w": rng.normal(0.0, 1.0 / np.sqrt(c.d_t), (c.d_t, c.d)),
            "text_b": np.zeros(c.d),
            "image_w": rng.normal(0.0, 1.0 / np.sqrt(c.n_patch_features), (c.n_patch_features, c.d)),
            "image_b": np.zeros(c.d),
            "head_w1": rng.normal(0.0, 1.0 / np.sqrt(2 * c.d), (2 * c.d, c.hidden)),
            "head_b1": np.zeros(c.hidden),
            "head_w2": rng.normal(0.0, sc, (c.hidden, 2)),
            "head_b2": np.zeros(2),
        }
        tda = TdaParams.init(c.d, rng, gate=c.gate, dropout_p=c.dropout_p) if with_tda else None
        return cls(config, params, tda, seed=seed)

    @property
    def with_tda(self) -> bool:
        return self.tda is not None

    def named_parameters(self) -> dict:
        out = dict(self.params)
        if self.tda is not None:
            out.update({f"tda.{k}": v for k, v in self.tda.arrays().items()})
        return out

    def copy(self) -> "ToyModel":
        m = ToyModel(self.config, {k: v.copy() for k, v in self.params.items()},
                     self.tda.copy() if self.tda is not None else None,
                     seed=self.seed, trained=self.trained)
        m.curve = list(self.curve)
        m.train_config = self.train_config
        return m

    def touch(self) -> None:
        """Mark parameters as changed; outstanding caches become stale."""
        self.version += 1

    def require_trained(self) -> None:
        if not self.trained:
            raise NotTrainedError("model has not been trained")


# ---------------------------------------------------------------- inputs

def caption_bytes(caption: str) -> np.ndarray:
    return np.frombuffer(caption.encode("utf-8"), dtype=np.uint8)


def byte_counts(captions: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Byte histograms (B x 256) and byte lengths of a batch of captions."""
    counts = np.zeros((len(captions), VOCAB))
    lengths = np.zeros(len(captions))
    for i, c in enumerate(captions):
        b = caption_bytes(c)
        counts[i] = np.bincount(b, minlength=VOCAB)
        lengths[i] = b.size
    return counts, lengths


def bag_of_bytes(counts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    # an empty caption pools to the zero vector
    return counts / np.maximum(lengths, 1.0)[:, None]


def resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    if h == size and w == size:
        return image
    rows = np.minimum(((np.arange(size) + 0.5) * h / size).astype(int), h - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * w / size).astype(int), w - 1)
    return image[rows][:, cols]


def image_inputs(images: Sequence[np.ndarray], size: int) -> np.ndarray:
    """uint8 rasters -> B x size x size x 3 floats in [0, 1]."""
    out = np.empty((len(images), size, size, 3))
    for i, im in enumerate(images):
        out[i] = resize_nearest(im, size) / 255.0
    return out


def patch_features(pixels: np.ndarray, patch: int) -> np.ndarray:
    b, s = pixels.shape[0], pixels.shape[1]
    k = s // patch
    return pixels.reshape(b, k, patch, k, patch, 3).mean(axis=(2, 4)).reshape(b, -1)


@dataclass
class Batch:
    counts: np.ndarray
    lengths: np.ndarray
    pixels: np.ndarray

    def __len__(self):
        return self.counts.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.counts[idx], self.lengths[idx], self.pixels[idx])


def make_batch(model: ToyModel, captions: Sequence[str], images: Sequence[np.ndarray]) -> Batch:
    counts, lengths = byte_counts(captions)
    return Batch(counts, lengths, image_inputs(images, model.config.image_size))


def batch_from_samples(model: ToyModel, samples) -> Batch:
    samples = list(samples)
    return make_batch(model, [s.caption for s in samples], [s.image for s in samples])


# ---------------------------------------------------------------- forward / backward

@dataclass
class ForwardCache:
    version: int
    model_id: int
    mode: str
    channel: str
    bow: np.ndarray
    lengths: np.ndarray
    feats: np.ndarray
    pooled: np.ndarray
    tda_cache: Optional[TdaCache]
    z: np.ndarray
    hdn: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    patch: int = field(default=8)
    image_size: int = field(default=32)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(model: ToyModel, batch: Batch, mode: str = "eval", channel: str = "multimodal",
                  rng: Optional[np.random.Generator] = None):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    p = model.params
    bow = bag_of_bytes(batch.counts, batch.lengths)
    pooled = bow @ p["char_embedding"]
    t = pooled @ p["text_w"] + p["text_b"]
    tda_cache = None
    if model.tda is not None:
        t, _, tda_cache = tda_forward_batch(t, model.tda, "train" if mode == "train" else "eval", rng)
    feats = patch_features(batch.pixels, model.config.patch)
    v = feats @ p["image_w"] + p["image_b"]
    if channel == "image_only":
        t = np.zeros_like(t)
    elif channel == "text_only":
        v = np.zeros_like(v)
    z = np.concatenate([t, v], axis=1)
    a = z @ p["head_w1"] + p["head_b1"]
    hdn = np.tanh(a) if model.config.activation == "tanh" else a
    logits = hdn @ p["head_w2"] + p["head_b2"]
    probs = softmax(logits)
    cache = ForwardCache(model.version, id(model), mode, channel, bow, batch.lengths, feats, pooled,
                         tda_cache, z, hdn, logits, probs, model.config.patch, model.config.image_size)
    return logits, probs, cache


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    idx = np.arange(len(labels))
    return -np.log(np.maximum(probs[idx, labels], 1e-300))


@dataclass
class GradientBundle:
    params: dict
    pooled_text: np.ndarray  # dL/d(mean byte embedding), B x d_t
    text_onehot: np.ndarray  # dL/d(one-hot of any byte position), B x 256
    pixels: np.ndarray       # dL/d(pixel in [0,1]), B x S x S x 3
    loss: float


def backward(model: ToyModel, cache: ForwardCache, labels, weights=None) -> GradientBundle:
    """Exact gradients of the (weighted) mean cross-entropy.

    Mean pooling makes the one-hot gradient identical for every byte position
    of a caption, so ``text_onehot`` holds one 256-vector per sample.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError("cache does not belong to the current model parameters")
    labels = np.asarray(labels, dtype=np.int64)
    b = labels.shape[0]
    if b != cache.probs.shape[0]:
        raise ValueError("label count does not match the cached batch")
    w = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
    p = model.params
    d = model.config.d
    ce = cross_entropy(cache.probs, labels)
    loss = float(np.sum(w * ce) / b)

    glogits = cache.probs.copy()
    glogits[np.arange(b), labels] -= 1.0
    glogits *= (w / b)[:, None]
    g = {}
    g["head_w2"] = cache.hdn.T @ glogits
    g["head_b2"] = glogits.sum(axis=0)
    ghdn = glogits @ p["head_w2"].T
    ga = ghdn * (1.0 - cache.hdn ** 2) if model.config.activation == "tanh" else ghdn
    g["head_w1"] = cache.z.T @ ga
    g["head_b1"] = ga.sum(axis=0)
    gz = ga @ p["head_w1"].T
    gt, gv = gz[:, :d], gz[:, d:]
    if cache.channel == "image_only":
        gt = np.zeros_like(gt)
    elif cache.channel == "text_only":
        gv = np.zeros_like(gv)

    g["image_w"] = cache.feats.T @ gv
    g["image_b"] = gv.sum(axis=0)
    gfeats = gv @ p["image_w"].T

    if model.tda is not None:
        gt, tda_grads = tda_backward_batch(cache.tda_cache, gt, model.tda)
        g.update({f"tda.{k}": v for k, v in tda_grads.items()})
    g["text_w"] = cache.pooled.T @ gt
    g["text_b"] = gt.sum(axis=0)
    gpooled = gt @ p["text_w"].T
    g["char_embedding"] = cache.bow.T @ gpooled

    onehot = (gpooled @ p["char_embedding"].T) / np.maximum(cache.lengths, 1.0)[:, None]
    onehot[cache.lengths == 0] = 0.0
    k = cache.image_size // cache.patch
    gpatch = gfeats.reshape(b, k, k, 3) / (cache.patch ** 2)
    gpix = np.repeat(np.repeat(gpatch, cache.patch, axis=1), cache.patch, axis=2)
    return GradientBundle(g, gpooled, onehot, gpix, loss)


def forward(model: ToyModel, sample, mode: str = "eval", channel: str = "multimodal", seed: int = 0):
    """Single-sample forward; returns ``(logits, probs, cache)``."""
    batch = make_batch(model, [sample.caption], [sample.image])
    rng = np.random.default_rng(seed) if mode == "train" else None
    logits, probs, cache = forward_batch(model, batch, mode, channel, rng)
    return logits[0], probs[0], cache


def predict_proba(model: ToyModel, batch: Batch, channel: str = "multimodal") -> np.ndarray:
    model.require_trained()
    return forward_batch(model, batch, "eval", channel)[1]


def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    # exact ties resolve to label 0 (benign)
    return (probs[..., 1] > probs[..., 0]).astype(np.int64)


def predict(model: ToyModel, sample, channel: str = "multimodal"):
    """Returns ``(label, probs)`` in eval mode."""
    probs = predict_proba(model, make_batch(model, [sample.caption], [sample.image]), channel)[0]
    return int(labels_from_probs(probs)), probs


def sample_losses(model: ToyModel, batch: Batch, labels, channel: str = "multimodal") -> np.ndarray:
    probs = forward_batch(model, batch, "attack", channel)[1]
    return cross_entropy(probs, np.asarray(labels, dtype=np.int64))


# ---------------------------------------------------------------- training

def _check_finite(model: ToyModel, epoch: int, step: int, loss: float) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, step {step}")
    for name, arr in model.named_parameters().items():
        if not np.isfinite(arr).all():
            raise TrainingError(f"non-finite values in {name} at epoch {epoch}, step {step}")


def train_classifier(dataset, config: TrainConfig = TrainConfig(), with_tda: bool = False, seed: int = 0,
                     model_config: ModelConfig = ModelConfig(), curve_path=None,
                     channel: str = "multimodal") -> ToyModel:
    """Momentum SGD on clean data only. Returns a model with ``trained`` set."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = ToyModel.init(model_config, with_tda=with_tda, seed=seed)
    model.train_config = config
    rng = np.random.default_rng([seed, 1])
    batch = batch_from_samples(model, dataset)
    labels = dataset.labels
    n = len(labels)
    named = model.named_parameters()
    velocity = {k: np.zeros_like(v) for k, v in named.items()}
    bs = max(1, config.batch_size)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for step, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            _, _, cache = forward_batch(model, batch.subset(idx), "train", channel, rng)
            grads = backward(model, cache, labels[idx])
            for name, arr in named.items():
                gr = grads.params[name]
                if config.weight_decay:
                    gr = gr + config.weight_decay * arr
                vel = velocity[name]
                vel *= config.momentum
                vel -= config.lr * gr
                arr += vel
            model.touch()
            _check_finite(model, epoch, step, grads.loss)
        probs = forward_batch(model, batch, "eval", channel)[1]
        loss = float(np.mean(cross_entropy(probs, labels)))
        acc = float(np.mean(labels_from_probs(probs) == labels))
        model.curve.append((epoch, loss, acc))
    model.trained = True
    if curve_path is not None:
        write_curve(model.curve, curve_path)
    return model


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for epoch, loss, acc in curve:
            w.writerow([epoch, f"{loss:.10f}", f"{acc:.10f}"])


# ---------------------------------------------------------------- persistence

def config_hash(model: ToyModel) -> str:
    payload = {"model": asdict(model.config),
               "train": asdict(model.train_config) if model.train_config else None}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def model_fingerprint(model: ToyModel) -> str:
    h = hashlib.sha256(config_hash(model).encode())
    for name, arr in sorted(model.named_parameters().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(model: ToyModel, path) -> Path:
    """Binary checkpoint: magic, u32 header length, JSON header, raw <f8 arrays."""
    arrays = model.named_parameters()
    header = {
        "format_version": _FORMAT_VERSION,
        "d": model.config.d,
        "d_t": model.config.d_t,
        "with_tda": model.with_tda,
        "seed": model.seed,
        "config_hash": config_hash(model),
        "trained": model.trained,
        "model_config": asdict(model.config),
        "train_config": asdict(model.train_config) if model.train_config else None,
        "dropout_p": model.tda.dropout_p if model.tda is not None else None,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<HI", _FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> ToyModel:
    data = Path(path).read_bytes()
    if data[:len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    off = len(_MAGIC)
    version, hlen = struct.unpack_from("<HI", data, off)
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += struct.calcsize("<HI")
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[spec["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing or missing bytes")
    config = ModelConfig(**header["model_config"])
    params = {k: arrays[k] for k in PARAM_NAMES}
    tda = None
    if header["with_tda"]:
        tda = TdaParams(**{k: arrays[f"tda.{k}"] for k in TdaParams.NAMES}, dropout_p=header["dropout_p"])
    model = ToyModel(config, params, tda, seed=header["seed"], trained=header["trained"])
    if header["train_config"]:
        model.train_config = TrainConfig(**header["train_config"])
    if config_hash(model) != header["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    return model
