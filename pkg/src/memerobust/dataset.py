"""Meme records, JSONL manifests and lossless PNG persistence."""
from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "test", "aug")
MANIFEST_FIELDS = ("id", "image_path", "caption", "label", "split", "aux")


class DatasetError(ValueError):
    """Raised for unreadable, malformed or inconsistent datasets."""


@dataclass(frozen=True)
class MemeSample:
    id: str
    image: np.ndarray  # H x W x 3, uint8
    caption: str
    label: int
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise DatasetError("sample id must be non-empty")
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
            raise DatasetError(f"{self.id}: image must be HxWx3, got {img.shape}")
        if img.dtype != np.uint8:
            raise DatasetError(f"{self.id}: image must be 8-bit, got {img.dtype}")
        if self.label not in (0, 1):
            raise DatasetError(f"{self.id}: label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    split: Optional[str] = None
    source_manifest: Optional[Path] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.split is not None and self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DatasetError(f"duplicate id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[MemeSample]:
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def captions(self) -> list[str]:
        return [s.caption for s in self.samples]


def _decode_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc


def _parse_line(raw: str, lineno: int, base: Path) -> tuple[dict, Path]:
    try:
        rec = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise DatasetError(f"line {lineno}: expected a JSON object")
    missing = [k for k in MANIFEST_FIELDS if k not in rec]
    extra = [k for k in rec if k not in MANIFEST_FIELDS]
    if missing or extra:
        raise DatasetError(f"line {lineno}: fields must be exactly {MANIFEST_FIELDS}; "
                           f"missing {missing}, unexpected {extra}")
    if not isinstance(rec["id"], str) or not rec["id"]:
        raise DatasetError(f"line {lineno}: id must be a non-empty string")
    if not isinstance(rec["caption"], str):
        raise DatasetError(f"line {lineno}: caption must be a string")
    if rec["label"] not in (0, 1) or isinstance(rec["label"], bool):
        raise DatasetError(f"line {lineno}: label must be 0 or 1")
    if rec["split"] not in SPLITS:
        raise DatasetError(f"line {lineno}: split must be one of {SPLITS}")
    if not isinstance(rec["aux"], dict):
        raise DatasetError(f"line {lineno}: aux must be an object")
    img_path = Path(rec["image_path"])
    if not img_path.is_absolute():
        img_path = base / img_path
    if not img_path.is_file():
        raise DatasetError(f"line {lineno}: image_path does not resolve: {rec['image_path']}")
    return rec, img_path


def load_manifest(path, split: Optional[str] = None) -> Dataset:
    """Load a JSONL manifest in file order.

    With ``split`` given only matching lines are kept; otherwise all lines must
    share one split. Captions are NFC-normalized.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    base = path.parent
    samples = []
    splits = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            rec, img_path = _parse_line(raw, lineno, base)
            if split is not None and rec["split"] != split:
                continue
            splits.add(rec["split"])
            try:
                samples.append(MemeSample(
                    id=rec["id"],
                    image=_decode_image(img_path),
                    caption=unicodedata.normalize("NFC", rec["caption"]),
                    label=int(rec["label"]),
                    aux=dict(rec["aux"]),
                ))
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
    if split is None and len(splits) > 1:
        raise DatasetError(f"{path} mixes splits {sorted(splits)}; pass split= or use load_splits")
    declared = split if split is not None else (splits.pop() if splits else None)
    return Dataset(samples=samples, split=declared, source_manifest=path)


def load_splits(path) -> dict[str, Dataset]:
    """Load every split present in a manifest, keyed by split name."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    present = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                try:
                    sp = json.loads(raw).get("split")
                except (json.JSONDecodeError, AttributeError) as exc:
                    raise DatasetError(f"line {lineno}: invalid manifest line") from exc
                if sp not in present:
                    present.append(sp)
    return {sp: load_manifest(path, split=sp) for sp in present}


class ManifestWriter:
    """Streaming single-writer for a manifest plus its PNG directory.

    Each ``write`` appends one flushed line, so an interrupted run leaves a
    loadable prefix behind.
    """

    def __init__(self, directory, name: str = "manifest.jsonl", image_dir: str = "images"):
        self.dir = Path(directory)
        self.image_dir = self.dir / image_dir
        self.image_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / name
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self._count = 0
        self._ids: set = set()

    def write(self, sample: MemeSample, split: str) -> None:
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}")
        if sample.id in self._ids:
            raise DatasetError(f"duplicate id {sample.id!r}")
        rel = Path(self.image_dir.name) / f"{self._count:06d}.png"
        try:
            Image.fromarray(sample.image).save(self.dir / rel, format="PNG")
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot encode image for {sample.id}: {exc}") from exc
        rec = {
            "id": sample.id,
            "image_path": rel.as_posix(),
            "caption": sample.caption,
            "label": int(sample.label),
            "split": split,
            "aux": sample.aux,
        }
        self._fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=False) + "\n")
        self._fh.flush()
        self._ids.add(sample.id)
        self._count += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_dataset(dataset: Dataset, directory, split: Optional[str] = None) -> Path:
    """Write images as PNG plus ``manifest.jsonl``; returns the manifest path."""
    split = split or dataset.split
    if split is None:
        raise DatasetError("dataset has no split; pass split=")
    try:
        with ManifestWriter(directory) as w:
            for s in dataset:
                w.write(s, split)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {directory}: {exc}") from exc
    return w.path


def save_splits(datasets: Iterable[Dataset], directory) -> Path:
    """Write several split datasets into one manifest."""
    with ManifestWriter(directory) as w:
        for ds in datasets:
            for s in ds:
                w.write(s, ds.split)
    return w.path


def replace_samples(dataset: Dataset, samples) -> Dataset:
    return Dataset(samples=samples, split=dataset.split, source_manifest=dataset.source_manifest)


def iter_manifest_ids(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                yield json.loads(raw)["id"]

