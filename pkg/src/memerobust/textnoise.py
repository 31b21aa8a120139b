"""Caption perturbations: typos, HotFlip character edits, universal triggers
and back-translation.

HotFlip and trigger search score every candidate edit by the first-order
change of the loss in the pooled byte-embedding space. Because the toy model
mean-pools byte embeddings, an edit's effect on that pooled vector is known in
closed form, so substitutions, insertions and deletions are all scored
exactly to first order without re-running the model.
"""
from __future__ import annotations

import itertools
import re
import string
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .paraphrase import ParaphraseProvider, RuleParaphraser
from .toymodel.model import (
    Batch,
    ToyModel,
    backward,
    byte_counts,
    caption_bytes,
    forward_batch,
    image_inputs,
    make_batch,
    sample_losses,
)


class TextFamily(IntEnum):
    NONE = 0
    TYPOS = 1
    HOTFLIP = 2
    TRIGGERS = 3
    BACKTRANSLATION = 4


TEXT_FAMILY_NAMES = {
    TextFamily.NONE: "Clean",
    TextFamily.TYPOS: "Natural+Synthetic Typos",
    TextFamily.HOTFLIP: "HotFlip",
    TextFamily.TRIGGERS: "Universal Triggers",
    TextFamily.BACKTRANSLATION: "Back-Translation",
}

DEFAULT_TYPO_RATE = 0.3
NATURAL_SHARE = 0.5
DEFAULT_CHARSET = string.ascii_lowercase + string.digits + " "


@dataclass(frozen=True)
class Trigger:
    tokens: tuple
    target_label: int
    search_loss: float = float("nan")


@dataclass(frozen=True)
class TextNoiseSpec:
    family: TextFamily = TextFamily.NONE
    severity: float = DEFAULT_TYPO_RATE
    seed: int = 0
    trigger: Optional[Trigger] = None


# ---------------------------------------------------------------- typos

@lru_cache(maxsize=1)
def typo_lexicon() -> dict:
    text = resources.files("memerobust").joinpath("data/typo_lexicon.txt").read_text(encoding="utf-8")
    lex = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        word, *typos = line.split()
        lex[word] = tuple(typos)
    return lex


_CORE = re.compile(r"^(\W*)(.*?)(\W*)$", re.S)


def _match_case(template: str, word: str) -> str:
    if template.isupper() and len(template) > 1:
        return word.upper()
    if template[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def _swap_internal(core: str, rng: np.random.Generator) -> str:
    # adjacent pairs strictly inside the word whose characters differ
    cand = [i for i in range(1, len(core) - 2) if core[i] != core[i + 1]]
    if not cand:
        return core
    i = cand[int(rng.integers(len(cand)))]
    return core[:i] + core[i + 1] + core[i] + core[i + 2:]


def perturb_typos(caption: str, rate: float = DEFAULT_TYPO_RATE, seed: int = 0,
                  lexicon: Optional[dict] = None) -> str:
    """Inject natural and synthetic typos into words of four or more letters.

    Each eligible word is hit with probability ``rate``. A word found in the
    natural-typo lexicon takes one of its listed misspellings with probability
    ``NATURAL_SHARE``; otherwise two adjacent interior characters are
    swapped. First and last characters and the word count never change.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    lex = typo_lexicon() if lexicon is None else lexicon
    rng = np.random.default_rng(seed)
    parts = re.split(r"(\s+)", caption)
    out = []
    for part in parts:
        if not part or part.isspace():
            out.append(part)
            continue
        lead, core, trail = _CORE.match(part).groups()
        if len(core) < 4 or rng.random() >= rate:
            out.append(part)
            continue
        key = core.lower()
        natural = lex.get(key)
        # lexicon words still get a synthetic swap half of the time
        if natural and core in (key, key.capitalize(), key.upper()) and rng.random() < NATURAL_SHARE:
            new = _match_case(core, natural[int(rng.integers(len(natural)))])
        else:
            new = _swap_internal(core, rng)
        out.append(lead + new + trail)
    return "".join(out)


# ---------------------------------------------------------------- HotFlip

@dataclass(frozen=True)
class Edit:
    op: str
    position: int
    char: str
    score: float


def _char_sums(chars: Sequence[str], emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sums = np.zeros((len(chars), emb.shape[1]))
    lens = np.zeros(len(chars))
    for k, ch in enumerate(chars):
        b = caption_bytes(ch)
        sums[k] = emb[b].sum(axis=0)
        lens[k] = b.size
    return sums, lens


def _pooled(total: np.ndarray, n) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    safe = np.where(n > 0, n, 1.0)
    return np.where((n > 0)[..., None], total / safe[..., None], 0.0)


def score_edits(chars: list, charset: str, emb: np.ndarray, grad_pooled: np.ndarray):
    """First-order loss change of every single edit.

    Returns a list of (score, key, Edit) with key = (position, op index,
    charset index) used for deterministic tie-breaking.
    """
    n_chars = len(chars)
    csums, clens = _char_sums(chars, emb)
    total = csums.sum(axis=0) if n_chars else np.zeros(emb.shape[1])
    n = clens.sum()
    base = grad_pooled @ _pooled(total, n)
    rep, rep_lens = _char_sums(list(charset), emb)
    gr = rep @ grad_pooled
    gt = grad_pooled @ total
    out = []
    if rep.shape[0]:
        # substitute char k by charset entry c
        if n_chars:
            gc = csums @ grad_pooled
            new_n = n - clens[:, None] + rep_lens[None, :]
            sub = (gt - gc[:, None] + gr[None, :]) / new_n - base
            for k in range(n_chars):
                for c, ch in enumerate(charset):
                    if ch != chars[k]:
                        out.append((sub[k, c], (k, 0, c), Edit("substitute", k, ch, sub[k, c])))
        # insert before position k (k == n_chars appends); every position scores alike
        ins = (gt + gr) / (n + rep_lens) - base
        for k in range(n_chars + 1):
            for c, ch in enumerate(charset):
                out.append((ins[c], (k, 1, c), Edit("insert", k, ch, ins[c])))
    for k in range(n_chars):
        rem_n = n - clens[k]
        new = (gt - csums[k] @ grad_pooled) / rem_n if rem_n > 0 else 0.0
        out.append((new - base, (k, 2, -1), Edit("delete", k, "", new - base)))
    return out


def apply_edit(chars: list, edit: Edit) -> list:
    chars = list(chars)
    if edit.op == "substitute":
        chars[edit.position] = edit.char
    elif edit.op == "insert":
        chars.insert(edit.position, edit.char)
    else:
        del chars[edit.position]
    return chars


def best_edit(scored) -> Optional[Edit]:
    if not scored:
        return None
    top = max(s for s, _, _ in scored)
    return min((k, e) for s, k, e in scored if s == top)[1]


def _label_batch(model, caption, image):
    return make_batch(model, [caption], [image])


def hotflip_edits(model: ToyModel, sample, budget: int, charset: str = DEFAULT_CHARSET,
                  channel: str = "multimodal") -> tuple[str, list]:
    """Greedy HotFlip; returns the edited caption and the accepted edits."""
    model.require_trained()
    if budget < 0:
        raise ValueError("budget must be non-negative")
    chars = list(sample.caption)
    emb = model.params["char_embedding"]
    edits = []
    for _ in range(budget):
        caption = "".join(chars)
        _, _, cache = forward_batch(model, _label_batch(model, caption, sample.image), "attack", channel)
        grad = backward(model, cache, [sample.label]).pooled_text[0]
        edit = best_edit(score_edits(chars, charset, emb, grad))
        # stop once no edit is estimated to raise the loss
        if edit is None or not edit.score > 0:
            break
        chars = apply_edit(chars, edit)
        edits.append(edit)
    return "".join(chars), edits


def hotflip_attack(model: ToyModel, sample, budget: int, charset: str = DEFAULT_CHARSET,
                   channel: str = "multimodal") -> str:
    return hotflip_edits(model, sample, budget, charset, channel)[0]


# ---------------------------------------------------------------- triggers

def apply_trigger(caption: str, trigger, position: str = "prepend") -> str:
    tokens = trigger.tokens if isinstance(trigger, Trigger) else tuple(trigger)
    if not tokens:
        return caption
    phrase = " ".join(tokens)
    if not caption:
        return phrase
    if position == "prepend":
        return phrase + " " + caption
    if position == "append":
        return caption + " " + phrase
    raise ValueError(f"position must be 'prepend' or 'append', got {position!r}")


@lru_cache(maxsize=4)
def default_trigger_vocab(length: int = 3) -> tuple:
    return tuple("".join(t) for t in itertools.product(string.ascii_lowercase, repeat=length))


def _token_sums(vocab: Sequence[str], emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    counts, lens = byte_counts(list(vocab))
    return counts @ emb, lens


def universal_trigger_search(model: ToyModel, samples, length: int, target_label: int,
                             iterations: int = 10, vocab: Optional[Sequence[str]] = None,
                             batch_size: int = 64, init_token: str = "the",
                             position: str = "prepend", channel: str = "multimodal") -> Trigger:
    """Search a fixed token sequence that pushes every caption toward ``target_label``.

    Slots start as ``init_token``. Each iteration takes the next minibatch and,
    slot by slot, proposes the vocabulary token with the best first-order
    decrease of the mean target loss; the swap is kept only if the true batch
    loss drops. Stops after ``iterations`` or a pass without changes.
    """
    model.require_trained()
    if length < 0:
        raise ValueError("trigger length must be non-negative")
    samples = list(samples)
    if not samples:
        raise ValueError("trigger search needs at least one sample")
    if target_label not in (0, 1):
        raise ValueError("target_label must be 0 or 1")
    vocab = tuple(default_trigger_vocab() if vocab is None else vocab)
    if not vocab:
        raise ValueError("empty trigger vocabulary")
    emb = model.params["char_embedding"]
    vsum, vlen = _token_sums(vocab, emb)
    tokens = [init_token] * length
    tok_sum, tok_len = _token_sums([init_token], emb)
    cur_sum = {init_token: tok_sum[0]}
    cur_len = {init_token: tok_len[0]}
    for v, s, ln in zip(vocab, vsum, vlen):
        cur_sum[v], cur_len[v] = s, ln

    pixels = image_inputs([s.image for s in samples], model.config.image_size)
    captions = [s.caption for s in samples]
    n = len(samples)
    bs = max(1, min(batch_size, n))
    targets = np.full(n, target_label)

    def batch_for(idx, toks):
        counts, lens = byte_counts([apply_trigger(captions[i], toks, position) for i in idx])
        return Batch(counts, lens, pixels[idx])

    for it in range(iterations if length else 0):
        idx = np.arange(it * bs, it * bs + bs) % n
        changed = False
        for slot in range(length):
            batch = batch_for(idx, tokens)
            _, _, cache = forward_batch(model, batch, "attack", channel)
            grads = backward(model, cache, targets[idx])
            g = grads.pooled_text * len(idx)  # per-sample loss gradients
            sums = batch.counts @ emb
            lens = batch.lengths
            base = np.einsum("bd,bd->b", g, _pooled(sums, lens))
            cur = tokens[slot]
            rest = np.einsum("bd,bd->b", g, sums - cur_sum[cur])
            new_len = lens[None, :] - cur_len[cur] + vlen[:, None]
            est = ((rest[None, :] + vsum @ g.T) / new_len - base[None, :]).mean(axis=1)
            best = int(np.argmin(est))
            if vocab[best] == cur or not est[best] < 0:
                continue
            trial = list(tokens)
            trial[slot] = vocab[best]
            before = sample_losses(model, batch, targets[idx], channel).mean()
            after = sample_losses(model, batch_for(idx, trial), targets[idx], channel).mean()
            if after < before:
                tokens = trial
                changed = True
        if not changed:
            break
    final = batch_for(np.arange(n), tokens)
    loss = float(sample_losses(model, final, targets, channel).mean())
    return Trigger(tuple(tokens), int(target_label), loss)


def trigger_loss(model: ToyModel, samples, tokens, target_label: int, position: str = "prepend",
                 channel: str = "multimodal") -> float:
    """Mean cross-entropy toward ``target_label`` with ``tokens`` attached."""
    samples = list(samples)
    batch = make_batch(model, [apply_trigger(s.caption, tokens, position) for s in samples],
                       [s.image for s in samples])
    return float(sample_losses(model, batch, np.full(len(samples), target_label), channel).mean())


# ---------------------------------------------------------------- back-translation

def backtranslate(caption: str, provider: Optional[ParaphraseProvider] = None) -> str:
    if not caption:
        return ""
    provider = provider if provider is not None else RuleParaphraser()
    return provider.paraphrase(caption)
