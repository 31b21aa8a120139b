"""Client for a remote classifier: POST {caption, image} -> {label, probs}."""
from __future__ import annotations

import base64
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import requests
from PIL import Image

from ..dataset import Dataset
from ..metrics import MetricsRow, compute_row


class RemoteError(RuntimeError):
    """Base class for remote-classifier failures."""


class RemoteTransportError(RemoteError):
    """Network failure, timeout or 5xx after all retries."""


class RemoteAuthError(RemoteError):
    pass


class RemoteResponseError(RemoteError):
    """The endpoint answered but the payload is unusable."""


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    api_key_env: str = "MEMEROBUST_API_KEY"
    timeout: float = 10.0
    retries: int = 3
    backoff: float = 0.5  # seconds, doubled after every failed attempt
    max_in_flight: int = 4


def encode_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _parse(payload) -> tuple[int, np.ndarray]:
    try:
        label = payload["label"]
        probs = np.asarray(payload["probs"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise RemoteResponseError(f"malformed response: {payload!r}") from exc
    if label not in (0, 1) or isinstance(label, bool) or probs.shape != (2,) or not np.isfinite(probs).all():
        raise RemoteResponseError(f"malformed response: {payload!r}")
    return int(label), probs


def remote_predict(endpoint: EndpointConfig, sample, session: Optional[requests.Session] = None,
                   sleep=time.sleep) -> tuple[int, np.ndarray]:
    """Classify one sample remotely; errors are raised, never defaulted."""
    body = {"caption": sample.caption, "image": encode_png(sample.image)}
    key = os.environ.get(endpoint.api_key_env)
    headers = {"Authorization": f"Bearer {key}"} if key else {}
    post = session.post if session is not None else requests.post
    delay = endpoint.backoff
    last = None
    for attempt in range(endpoint.retries + 1):
        if attempt:
            sleep(delay)
            delay *= 2
        try:
            resp = post(endpoint.url, json=body, headers=headers, timeout=endpoint.timeout)
        except requests.Timeout as exc:
            last = RemoteTransportError(f"timeout after {endpoint.timeout}s: {exc}")
            continue
        except requests.RequestException as exc:
            last = RemoteTransportError(f"request failed: {exc}")
            continue
        if resp.status_code in (401, 403):
            raise RemoteAuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
        if resp.status_code >= 500 or resp.status_code == 429:
            last = RemoteTransportError(f"HTTP {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise RemoteResponseError(f"unexpected HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise RemoteResponseError("response is not JSON") from exc
        return _parse(payload)
    raise RemoteTransportError(f"giving up after {endpoint.retries + 1} attempts: {last}") from last


def remote_evaluate(endpoint: EndpointConfig, dataset: Dataset, condition: str = "remote",
                    session: Optional[requests.Session] = None, clean: Optional[MetricsRow] = None) -> MetricsRow:
    samples = list(dataset)
    with ThreadPoolExecutor(max_workers=max(1, endpoint.max_in_flight)) as ex:
        out = list(ex.map(lambda s: remote_predict(endpoint, s, session), samples))
    preds = np.array([o[0] for o in out])
    scores = np.array([o[1][1] for o in out])
    return compute_row(condition, preds, scores, dataset.labels, clean)
