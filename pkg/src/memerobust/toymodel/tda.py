"""Text denoising adapter: a gated, scaled residual MLP over text embeddings.

    g = sigmoid(W_g x + b_g)
    y = x + Dropout(s * g * MLP(LayerNorm(x)))

Forward and backward are written out by hand so gradients can flow back to
the caption one-hots for the text attacks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf, expit

LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
# expit rounds to exactly 0 or 1 in float64 past about |a| = 37; clamping the
# gate logit keeps g strictly inside (0, 1)
GATE_CLAMP = 30.0


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


@dataclass
class TdaParams:
    w_g: np.ndarray      # (d, 1) scalar gate or (d, d) per-dimension gate
    b_g: np.ndarray      # (1,) or (d,)
    ln_scale: np.ndarray  # (d,)
    ln_shift: np.ndarray  # (d,)
    w1: np.ndarray       # (d, d // 4)
    b1: np.ndarray
    w2: np.ndarray       # (d // 4, d)
    b2: np.ndarray
    s: np.ndarray        # (1,)
    dropout_p: float = 0.1

    NAMES = ("w_g", "b_g", "ln_scale", "ln_shift", "w1", "b1", "w2", "b2", "s")

    @property
    def d(self) -> int:
        return self.ln_scale.shape[0]

    @property
    def vector_gate(self) -> bool:
        return self.w_g.shape[1] != 1

    def arrays(self) -> dict:
        return {n: getattr(self, n) for n in self.NAMES}

    def copy(self) -> "TdaParams":
        return TdaParams(**{n: a.copy() for n, a in self.arrays().items()}, dropout_p=self.dropout_p)

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, gate: str = "scalar",
             dropout_p: float = 0.1, scale: float = 0.1) -> "TdaParams":
        if d < 4:
            raise ValueError("adapter width must be at least 4")
        if not 0.0 <= dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        gdim = 1 if gate == "scalar" else d
        if gate not in ("scalar", "vector"):
            raise ValueError(f"unknown gate kind {gate!r}")
        h = d // 4
        return cls(
            w_g=rng.normal(0.0, scale, (d, gdim)),
            b_g=np.zeros(gdim),
            ln_scale=np.ones(d),
            ln_shift=np.zeros(d),
            w1=rng.normal(0.0, 1.0 / np.sqrt(d), (d, h)),
            b1=np.zeros(h),
            w2=rng.normal(0.0, 1.0 / np.sqrt(h), (h, d)),
            b2=np.zeros(d),
            # zero scale: the adapter starts out as the identity
            s=np.zeros(1),
            dropout_p=dropout_p,
        )


@dataclass
class TdaCache:
    x: np.ndarray
    g: np.ndarray
    gate_live: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    ln: np.ndarray
    m1: np.ndarray
    h1: np.ndarray
    m: np.ndarray
    mask: Optional[np.ndarray]


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def tda_forward_batch(x: np.ndarray, params: TdaParams, mode: str = "eval",
                      rng: Optional[np.random.Generator] = None):
    """Batched forward over rows of ``x`` (B x d). Returns (y, g, cache)."""
    a = x @ params.w_g + params.b_g
    g = expit(np.clip(a, -GATE_CLAMP, GATE_CLAMP))
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv_std
    ln = xhat * params.ln_scale + params.ln_shift
    m1 = ln @ params.w1 + params.b1
    h1 = gelu(m1)
    m = h1 @ params.w2 + params.b2
    update = params.s[0] * g * m
    mask = None
    if mode == "train" and params.dropout_p > 0:
        if rng is None:
            raise ValueError("train mode needs an rng for dropout")
        mask = dropout_mask(update.shape, params.dropout_p, rng)
        update = update * mask
    y = x + update
    return y, g, TdaCache(x, g, np.abs(a) < GATE_CLAMP, xhat, inv_std, ln, m1, h1, m, mask)


def tda_backward_batch(cache: TdaCache, grad_y: np.ndarray, params: TdaParams):
    """Returns (grad_x, dict of parameter gradients)."""
    s = params.s[0]
    gu = grad_y if cache.mask is None else grad_y * cache.mask
    grads = {}
    grads["s"] = np.array([np.sum(gu * cache.g * cache.m)])
    gg = gu * s * cache.m
    if not params.vector_gate:
        gg = gg.sum(axis=1, keepdims=True)
    ga = gg * cache.g * (1.0 - cache.g) * cache.gate_live
    grads["w_g"] = cache.x.T @ ga
    grads["b_g"] = ga.sum(axis=0)
    gm = gu * s * cache.g
    grads["w2"] = cache.h1.T @ gm
    grads["b2"] = gm.sum(axis=0)
    gm1 = (gm @ params.w2.T) * gelu_grad(cache.m1)
    grads["w1"] = cache.ln.T @ gm1
    grads["b1"] = gm1.sum(axis=0)
    gln = gm1 @ params.w1.T
    grads["ln_scale"] = (gln * cache.xhat).sum(axis=0)
    grads["ln_shift"] = gln.sum(axis=0)
    gxhat = gln * params.ln_scale
    gx_ln = cache.inv_std * (
        gxhat
        - gxhat.mean(axis=1, keepdims=True)
        - cache.xhat * (gxhat * cache.xhat).mean(axis=1, keepdims=True)
    )
    grad_x = grad_y + ga @ params.w_g.T + gx_ln
    return grad_x, grads


def tda_forward(x: np.ndarray, params: TdaParams, mode: str = "eval", seed: int = 0):
    """Single-vector adapter pass; returns ``(y, g)``.

    ``g`` is a float for the scalar gate and a d-vector for the per-dimension
    variant. Dropout is applied only in train mode, seeded by ``seed``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed) if mode == "train" else None
    y, g, _ = tda_forward_batch(x[None, :], params, mode, rng)
    g = g[0]
    return y[0], (float(g[0]) if g.shape[0] == 1 else g)
