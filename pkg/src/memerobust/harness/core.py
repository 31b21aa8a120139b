"""Noise cells, shared attack artifacts and evaluation of one cell or a grid."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..dataset import Dataset, MemeSample
from ..imagenoise import (CORRUPTIONS, ImageFamily, ImageNoiseSpec, UapDelta, apply_corruption, apply_uap,
                          augmix, train_uap)
from ..metrics import MetricsRow, compute_row
from ..paraphrase import ParaphraseProvider, RuleParaphraser
from ..textnoise import (TextFamily, TextNoiseSpec, Trigger, apply_trigger, hotflip_attack, perturb_typos,
                         universal_trigger_search)
from ..toymodel.model import CHANNELS, ToyModel, batch_from_samples, forward_batch, labels_from_probs

MASK64 = 0xFFFFFFFFFFFFFFFF
TEXT_KEYS = {0: "clean", 1: "typos", 2: "hotflip", 3: "triggers", 4: "backtranslation"}
IMAGE_KEYS = {0: "none", 1: "uap", 2: "corruption", 3: "augmix"}
GRID_CELLS = tuple((t, i) for t in (1, 2, 3, 4) for i in (1, 2, 3))


class HarnessError(RuntimeError):
    """A noise cell cannot be evaluated as specified."""


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Order-sensitive hash of integers; adding cells never shifts others."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


@dataclass(frozen=True)
class HarnessConfig:
    typo_rate: float = 0.3
    hotflip_fraction: float = 0.05
    trigger_length: int = 3
    trigger_iterations: int = 10
    trigger_target: str = "flip"  # "flip", "0" or "1"
    corruption_severity: int = 3
    corruption_kind: Optional[str] = None  # None draws a kind per sample
    uap_eps: float = 8 / 255
    uap_epochs: int = 10
    uap_step: Optional[float] = None
    augmix_width: int = 3
    augmix_depth: int = 3
    augmix_alpha: float = 1.0
    augmix_severity: int = 3

    def __post_init__(self):
        if self.trigger_target not in ("flip", "0", "1"):
            raise ValueError("trigger_target must be 'flip', '0' or '1'")
        if self.corruption_kind is not None and self.corruption_kind not in CORRUPTIONS:
            raise ValueError(f"unknown corruption kind {self.corruption_kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    text: TextNoiseSpec
    image: ImageNoiseSpec
    cell_seed: int

    @property
    def families(self) -> tuple:
        return int(self.text.family), int(self.image.family)

    @property
    def is_clean(self) -> bool:
        return self.families == (0, 0)

    @property
    def condition(self) -> str:
        return condition_name(*self.families)


def condition_name(t: int, i: int) -> str:
    if (t, i) == (0, 0):
        return "clean"
    if i == 0:
        return TEXT_KEYS[t]
    if t == 0:
        return IMAGE_KEYS[i]
    return f"{TEXT_KEYS[t]}+{IMAGE_KEYS[i]}"


def make_spec(run_seed: int, t: int, i: int, config: HarnessConfig = HarnessConfig(),
              artifacts: Optional["Artifacts"] = None) -> NoiseSpec:
    cell_seed = derive_seed(run_seed, t, i)
    severity = {1: config.typo_rate, 2: config.hotflip_fraction}.get(t, 0.0)
    text = TextNoiseSpec(TextFamily(t), severity, cell_seed)
    uap = artifacts.uap if (artifacts is not None and i == ImageFamily.UAP) else None
    image = ImageNoiseSpec(ImageFamily(i), config.corruption_kind, config.corruption_severity, cell_seed, uap)
    return NoiseSpec(text, image, cell_seed)


@dataclass
class Artifacts:
    """Attack artifacts built once per grid from the train split."""
    uap: Optional[UapDelta] = None
    triggers: dict = field(default_factory=dict)  # target label -> Trigger

    def trigger_for(self, label: int, config: HarnessConfig) -> Trigger:
        target = 1 - label if config.trigger_target == "flip" else int(config.trigger_target)
        if target not in self.triggers:
            raise HarnessError(f"no universal trigger prepared for target label {target}")
        return self.triggers[target]


def prepare_artifacts(model: ToyModel, train: Dataset, run_seed: int, config: HarnessConfig = HarnessConfig(),
                      channel: str = "multimodal", uap: bool = True, triggers: bool = True) -> Artifacts:
    """Train the shared UAP and search the shared triggers (never on test data)."""
    out = Artifacts()
    if uap:
        out.uap = train_uap(model, train, eps=config.uap_eps, iterations=config.uap_epochs,
                            step=config.uap_step, seed=derive_seed(run_seed, 0xA11))
    if triggers:
        targets = (0, 1) if config.trigger_target == "flip" else (int(config.trigger_target),)
        for target in targets:
            # a flip trigger is searched on the samples it will be attached to
            pool = [s for s in train if s.label != target] if config.trigger_target == "flip" else list(train)
            if not pool:
                pool = list(train)
            out.triggers[target] = universal_trigger_search(model, pool, config.trigger_length, target,
                                                            iterations=config.trigger_iterations,
                                                            channel=channel)
    return out


def needs(specs) -> tuple[bool, bool]:
    """(needs a UAP, needs triggers) for a collection of NoiseSpecs."""
    specs = list(specs)
    return (any(s.image.family == ImageFamily.UAP and s.image.uap_delta is None for s in specs),
            any(s.text.family == TextFamily.TRIGGERS and s.text.trigger is None for s in specs))


# ---------------------------------------------------------------- perturbation

def perturb_caption(model: ToyModel, sample: MemeSample, spec: TextNoiseSpec, seed: int,
                    config: HarnessConfig, artifacts: Optional[Artifacts], channel: str,
                    provider: Optional[ParaphraseProvider] = None) -> str:
    fam = spec.family
    if fam == TextFamily.NONE:
        return sample.caption
    if fam == TextFamily.TYPOS:
        return perturb_typos(sample.caption, spec.severity, seed)
    if fam == TextFamily.HOTFLIP:
        budget = math.ceil(spec.severity * len(sample.caption))
        return hotflip_attack(model, sample, budget, channel=channel)
    if fam == TextFamily.TRIGGERS:
        trig = spec.trigger
        if trig is None:
            if artifacts is None:
                raise HarnessError("trigger cell evaluated without a prepared trigger")
            trig = artifacts.trigger_for(sample.label, config)
        return apply_trigger(sample.caption, trig)
    if fam == TextFamily.BACKTRANSLATION:
        p = provider if provider is not None else RuleParaphraser(seed=seed)
        return p.paraphrase(sample.caption) if sample.caption else ""
    raise HarnessError(f"unknown text family {fam!r}")


def perturb_image(image: np.ndarray, spec: ImageNoiseSpec, seed: int, config: HarnessConfig,
                  artifacts: Optional[Artifacts]) -> np.ndarray:
    fam = spec.family
    if fam == ImageFamily.NONE:
        return image
    if fam == ImageFamily.UAP:
        delta = spec.uap_delta if spec.uap_delta is not None else (artifacts.uap if artifacts else None)
        if delta is None:
            raise HarnessError("UAP cell evaluated without a trained perturbation")
        return apply_uap(image, delta)
    if fam == ImageFamily.CORRUPTION:
        kind = spec.corruption_kind
        if kind is None:
            kind = CORRUPTIONS[int(np.random.default_rng(derive_seed(seed, 0xC0)).integers(len(CORRUPTIONS)))]
        return apply_corruption(image, kind, spec.severity, seed)
    if fam == ImageFamily.AUGMIX:
        return augmix(image, config.augmix_width, config.augmix_depth, config.augmix_alpha, seed,
                      config.augmix_severity)
    raise HarnessError(f"unknown image family {fam!r}")


def perturb_sample(model: ToyModel, sample: MemeSample, k: int, spec: NoiseSpec, config: HarnessConfig,
                   artifacts: Optional[Artifacts], channel: str = "multimodal",
                   provider: Optional[ParaphraseProvider] = None) -> MemeSample:
    """Text first, then image, each from its own per-sample seed."""
    text_seed = derive_seed(spec.cell_seed, k, 0)
    image_seed = derive_seed(spec.cell_seed, k, 1)
    caption = perturb_caption(model, sample, spec.text, text_seed, config, artifacts, channel, provider)
    image = perturb_image(sample.image, spec.image, image_seed, config, artifacts)
    if caption is sample.caption and image is sample.image:
        return sample
    return replace(sample, caption=caption, image=image)


# ---------------------------------------------------------------- evaluation

def _check_mode(mode: str) -> None:
    if mode not in CHANNELS:
        raise ValueError(f"mode must be one of {CHANNELS}")


def evaluate(model: ToyModel, dataset: Dataset, spec: NoiseSpec, mode: str = "multimodal",
             config: HarnessConfig = HarnessConfig(), artifacts: Optional[Artifacts] = None,
             clean: Optional[MetricsRow] = None, provider: Optional[ParaphraseProvider] = None) -> MetricsRow:
    """Perturb every sample per ``spec``, classify, and compute one metrics row.

    Robustness fields are filled against ``clean`` when given (never for the
    clean spec itself).
    """
    model.require_trained()
    _check_mode(mode)
    if len(dataset) == 0:
        raise HarnessError("cannot evaluate an empty dataset")
    if spec.image.family == ImageFamily.UAP and spec.image.uap_delta is None and \
            (artifacts is None or artifacts.uap is None):
        raise HarnessError("spec needs a UAP but none was trained for this run")
    samples = [perturb_sample(model, s, k, spec, config, artifacts, mode, provider)
               for k, s in enumerate(dataset)]
    probs = forward_batch(model, batch_from_samples(model, samples), "eval", mode)[1]
    preds = labels_from_probs(probs)
    row = compute_row(spec.condition, preds, probs[:, 1], dataset.labels)
    if clean is not None and not spec.is_clean:
        row.with_robustness(clean)
    return row


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def run_grid(model: ToyModel, dataset: Dataset, run_seed: int, config: HarnessConfig = HarnessConfig(),
             train: Optional[Dataset] = None, artifacts: Optional[Artifacts] = None, mode: str = "multimodal",
             jobs: int = 1, cells=GRID_CELLS):
    """Clean baseline plus every (text, image) cell; returns a GridReport."""
    from .report import GridReport

    if artifacts is None:
        if train is None:
            raise HarnessError("run_grid needs the train split (or prepared artifacts) for UAP/trigger cells")
        need_uap = any(i == ImageFamily.UAP for _, i in cells)
        need_trig = any(t == TextFamily.TRIGGERS for t, _ in cells)
        artifacts = prepare_artifacts(model, train, run_seed, config, mode, need_uap, need_trig)
    clean = evaluate(model, dataset, make_spec(run_seed, 0, 0, config), mode, config, artifacts)
    specs = [make_spec(run_seed, t, i, config, artifacts) for t, i in cells]
    rows = _map(lambda s: evaluate(model, dataset, s, mode, config, artifacts, clean), specs, jobs)
    return GridReport(clean, {c: r for c, r in zip(cells, rows)})


def run_single_channel_suite(model: ToyModel, dataset: Dataset, run_seed: int,
                             config: HarnessConfig = HarnessConfig(), train: Optional[Dataset] = None,
                             artifacts: Optional[Artifacts] = None, jobs: int = 1, label: str = "model"):
    """Text-only table over the text families, image-only table over the image families."""
    from .report import SuiteReport, SuiteTable

    if artifacts is None:
        if train is None:
            raise HarnessError("the suite needs the train split (or prepared artifacts)")
        # artifacts are searched against the channel they will attack
        text_art = prepare_artifacts(model, train, run_seed, config, "text_only", uap=False)
        img_art = prepare_artifacts(model, train, run_seed, config, "image_only", triggers=False)
    else:
        text_art = img_art = artifacts
    tables = []
    for mode, fams, art, key in (("text_only", (1, 2, 3, 4), text_art, 0), ("image_only", (1, 2, 3), img_art, 1)):
        clean = evaluate(model, dataset, make_spec(run_seed, 0, 0, config), mode, config, art)
        specs = [make_spec(run_seed, *((f, 0) if key == 0 else (0, f)), config, art) for f in fams]
        rows = _map(lambda s: evaluate(model, dataset, s, mode, config, art, clean), specs, jobs)
        tables.append(SuiteTable(label, mode, clean, dict(zip(fams, rows))))
    return SuiteReport(tables[0], tables[1])


__all__ = ["HarnessConfig", "HarnessError", "NoiseSpec", "Artifacts", "GRID_CELLS", "condition_name",
           "derive_seed", "splitmix64", "make_spec", "prepare_artifacts", "perturb_sample", "evaluate",
           "run_grid", "run_single_channel_suite"]
