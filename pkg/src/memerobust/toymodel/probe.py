"""Input-sensitivity probing via finite-difference Jacobians.

``BottleneckEncoder`` is a frozen random feature map followed by a learned
attention bottleneck of ``q`` query rows; everything downstream sees at most
``q * d`` directions, so its input Jacobian has rank at most ``q * d`` no
matter how wide the final embedding is.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .model import ToyModel, patch_features
from .tda import tda_forward_batch


def _softmax_rows(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


class BottleneckEncoder:
    def __init__(self, n_in: int = 192, tokens: int = 16, d_feat: int = 24, q: int = 4, d: int = 8,
                 out_dim: int = None, seed: int = 0):
        if n_in % tokens:
            raise ValueError("n_in must split evenly into tokens")
        rng = np.random.default_rng(seed)
        self.n_in, self.tokens, self.q, self.d = n_in, tokens, q, d
        self.out_dim = out_dim if out_dim is not None else 2 * q * d
        tok = n_in // tokens
        # frozen backbone: fixed random patch projection
        self.frozen = rng.normal(0.0, 1.0 / np.sqrt(tok), (tok, d_feat))
        # learned bottleneck
        self.queries = rng.normal(0.0, 1.0, (q, d_feat))
        self.w_k = rng.normal(0.0, 1.0 / np.sqrt(d_feat), (d_feat, d_feat))
        self.w_v = rng.normal(0.0, 1.0 / np.sqrt(d_feat), (d_feat, d))
        self.lift = rng.normal(0.0, 1.0 / np.sqrt(q * d), (q * d, self.out_dim))

    @property
    def rank_bound(self) -> int:
        return self.q * self.d

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x.reshape(self.tokens, -1) @ self.frozen)

    def bottleneck(self, x: np.ndarray) -> np.ndarray:
        f = self.features(x)
        att = _softmax_rows(self.queries @ (f @ self.w_k).T / np.sqrt(f.shape[1]))
        return att @ (f @ self.w_v)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.bottleneck(np.asarray(x, dtype=np.float64)).ravel() @ self.lift


class LinearEncoder:
    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=np.float64)

    def encode(self, x):
        return self.matrix @ x


def image_pathway(model: ToyModel) -> Callable[[np.ndarray], np.ndarray]:
    """Flattened [0,1] pixels -> image embedding of the toy model."""
    s, p = model.config.image_size, model.config.patch

    def f(x):
        feats = patch_features(np.asarray(x).reshape(1, s, s, 3), p)
        return (feats @ model.params["image_w"] + model.params["image_b"])[0]
    return f


def text_pathway(model: ToyModel) -> Callable[[np.ndarray], np.ndarray]:
    """Normalized byte histogram (256) -> text embedding, adapter included."""

    def f(bow):
        pooled = np.asarray(bow).reshape(1, -1) @ model.params["char_embedding"]
        t = pooled @ model.params["text_w"] + model.params["text_b"]
        if model.tda is not None:
            t = tda_forward_batch(t, model.tda, "eval")[0]
        return t[0]
    return f


@dataclass
class ProbeReport:
    displacement: float
    jacobian_norm_estimate: float
    rank_estimate: int
    singular_values: np.ndarray
    delta_norm: float
    slack: float

    @property
    def bound(self) -> float:
        return self.jacobian_norm_estimate * self.delta_norm + self.slack

    @property
    def bound_holds(self) -> bool:
        return self.displacement <= self.bound


def finite_difference_jacobian(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))).ravel() / (2 * h))
    return np.stack(cols, axis=1)


def power_iteration(jac: np.ndarray, steps: int = 100, seed: int = 0, tol: float = 1e-13) -> float:
    """Largest singular value of ``jac`` by power iteration on J^T J."""
    v = np.random.default_rng(seed).normal(size=jac.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max(1, steps)):
        w = jac.T @ (jac @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(np.sqrt(nrm))
        if abs(new - sigma) <= tol * new:
            sigma = new
            break
        sigma = new
    return sigma


Encoder = Union[BottleneckEncoder, LinearEncoder, Callable[[np.ndarray], np.ndarray]]


def sensitivity_probe(encoder: Encoder, x, delta, samples: int = 200, h: float = 1e-5,
                      rank_tol: float = 1e-8) -> ProbeReport:
    """Measure ``||f(x+delta) - f(x)||`` against the first-order bound.

    ``samples`` caps the power-iteration steps. The second-order slack is half
    the norm of the symmetric second difference along ``delta``.
    """
    f = encoder.encode if hasattr(encoder, "encode") else encoder
    x = np.asarray(x, dtype=np.float64).ravel()
    delta = np.asarray(delta, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("probe input has zero dimension")
    if delta.shape != x.shape:
        raise ValueError("delta must match the input shape")
    f0 = np.asarray(f(x))
    fp = np.asarray(f(x + delta))
    fm = np.asarray(f(x - delta))
    jac = finite_difference_jacobian(f, x, h)
    sv = np.linalg.svd(jac, compute_uv=False)
    rank = int(np.sum(sv > rank_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    return ProbeReport(
        displacement=float(np.linalg.norm(fp - f0)),
        jacobian_norm_estimate=power_iteration(jac, samples),
        rank_estimate=rank,
        singular_values=sv,
        delta_norm=float(np.linalg.norm(delta)),
        slack=0.5 * float(np.linalg.norm(fp + fm - 2 * f0)),
    )


__all__ = ["BottleneckEncoder", "LinearEncoder", "ProbeReport", "sensitivity_probe",
           "finite_difference_jacobian", "power_iteration", "image_pathway", "text_pathway"]
