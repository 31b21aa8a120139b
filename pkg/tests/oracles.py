"""Independent reference implementations used as test oracles.

Nothing here calls the code under test except plain forward passes (to read
true losses); the search or formula being checked is redone from scratch.
"""
import itertools

import numpy as np

from memerobust.toymodel.model import make_batch, sample_losses


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar f at array x (x is modified in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric):
    """Norm-wise relative error; elementwise ratios blow up on entries that are ~0."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    den = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / den)


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


def hand_confusion(preds, labels):
    tp = tn = fp = fn = 0
    for p, y in zip(preds, labels):
        if p == 1 and y == 1:
            tp += 1
        elif p == 0 and y == 0:
            tn += 1
        elif p == 1:
            fp += 1
        else:
            fn += 1
    return tp, tn, fp, fn


def true_loss(model, caption, image, label, channel="multimodal"):
    batch = make_batch(model, [caption], [image])
    return float(sample_losses(model, batch, [label], channel)[0])


def all_single_edits(caption, charset):
    """Every caption reachable by one substitute/insert/delete, in the order
    (position, operation, charset index) with operations substitute < insert < delete."""
    out = []
    n = len(caption)
    for pos in range(n + 1):
        if pos < n:
            for c in charset:
                if c != caption[pos]:
                    out.append(caption[:pos] + c + caption[pos + 1:])
        for c in charset:
            out.append(caption[:pos] + c + caption[pos:])
        if pos < n:
            out.append(caption[:pos] + caption[pos + 1:])
    return out


def single_edit_losses(model, sample, charset, channel="multimodal"):
    """(candidates, true losses) over all single edits, in enumeration order."""
    cands = all_single_edits(sample.caption, charset)
    batch = make_batch(model, cands, [sample.image] * len(cands))
    return cands, sample_losses(model, batch, np.full(len(cands), sample.label), channel)


def exhaustive_best_edit(model, sample, charset, channel="multimodal", tol=0.0):
    """First caption (in enumeration order) whose true loss is within ``tol``
    of the maximum, and that maximum."""
    cands, losses = single_edit_losses(model, sample, charset, channel)
    top = losses.max()
    return cands[int(np.flatnonzero(losses >= top - tol)[0])], float(top)


def exhaustive_trigger(model, samples, vocab, length, target, channel="multimodal"):
    """Minimum mean target loss over all vocab^length triggers (prepended)."""
    best, best_loss = None, np.inf
    captions = [s.caption for s in samples]
    images = [s.image for s in samples]
    targets = np.full(len(samples), target)
    for toks in itertools.product(vocab, repeat=length):
        phrase = " ".join(toks)
        caps = [phrase + " " + c if c else phrase for c in captions] if toks else captions
        loss = float(sample_losses(model, make_batch(model, caps, images), targets, channel).mean())
        if loss < best_loss:
            best, best_loss = toks, loss
    return best, best_loss
