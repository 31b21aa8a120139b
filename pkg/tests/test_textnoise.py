import re
import string

import numpy as np
import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from memerobust.dataset import MemeSample
from memerobust.paraphrase import ParaphraseError, RemoteTranslator, RuleParaphraser, content_jaccard
from memerobust.synthetic import make_fixture
from memerobust.textnoise import (DEFAULT_CHARSET, TEXT_FAMILY_NAMES, TextFamily, Trigger, apply_trigger,
                                  backtranslate, hotflip_attack, hotflip_edits, perturb_typos, trigger_loss,
                                  typo_lexicon, universal_trigger_search)
from memerobust.toymodel import NotTrainedError, ToyModel
from oracles import exhaustive_best_edit, exhaustive_trigger, true_loss


def test_family_numbering():
    assert [int(f) for f in TextFamily] == [0, 1, 2, 3, 4]
    assert TEXT_FAMILY_NAMES[TextFamily(1)] == "Natural+Synthetic Typos"
    assert TEXT_FAMILY_NAMES[TextFamily(3)] == "Universal Triggers"


# ---------------------------------------------------------------- typos

def test_typos_rate_zero_is_identity():
    for s in make_fixture(30, seed=3):
        assert perturb_typos(s.caption, 0.0, seed=9) == s.caption


def test_typos_empty():
    assert perturb_typos("", 1.0) == ""


def test_trans_rights_swaps():
    trans, rights = set(), set()
    for seed in range(60):
        a, b = perturb_typos("trans rights", 1.0, seed=seed).split(" ")
        trans.add(a)
        rights.add(b)
    assert "trnas" in trans and "rihgts" in rights
    assert all(w[0] == "t" and w[-1] == "s" and sorted(w) == sorted("trans") for w in trans)
    assert all(w[0] == "r" and w[-1] == "s" for w in rights)
    assert "rights" not in rights


def test_typos_deterministic():
    cap = "everyone celebrate together because people believe"
    assert perturb_typos(cap, 0.5, seed=4) == perturb_typos(cap, 0.5, seed=4)
    assert len({perturb_typos(cap, 0.5, seed=k) for k in range(10)}) > 1


def test_lexicon_entries_keep_word_boundaries():
    for word, typos in typo_lexicon().items():
        for t in typos:
            assert t[0] == word[0] and t[-1] == word[-1], (word, t)


words = st.text(alphabet=string.ascii_letters, min_size=1, max_size=12)


@settings(max_examples=200)
@given(st.lists(words, min_size=0, max_size=10), st.floats(0, 1), st.integers(0, 2**63))
def test_typos_preserve_word_count_and_edges(ws, rate, seed):
    caption = " ".join(ws)
    out = perturb_typos(caption, rate, seed)
    out_words = out.split(" ")
    assert len(out_words) == len(caption.split(" "))
    for a, b in zip(caption.split(" "), out_words):
        if len(a) >= 4:
            assert (a[0], a[-1]) == (b[0], b[-1])
        else:
            assert a == b


# ---------------------------------------------------------------- HotFlip

def test_hotflip_budget_zero(model):
    s = make_fixture(1, seed=2)[0]
    assert hotflip_attack(model, s, 0) == s.caption


def test_hotflip_untrained():
    with pytest.raises(NotTrainedError):
        hotflip_attack(ToyModel.init(), make_fixture(1)[0], 1)


def test_hotflip_empty_caption(model):
    s = MemeSample("e", make_fixture(1)[0].image, "", 0)
    out, edits = hotflip_edits(model, s, 2, charset="")
    assert out == "" and edits == []
    # inserts are still possible from an empty caption
    assert len(hotflip_attack(model, s, 1)) == 1


def test_hotflip_budget_one_matches_exhaustive(linear_model):
    # loss is monotone in an affine map of the pooled byte embedding, so the
    # first-order ranking of edits is the true-loss ranking
    for s in make_fixture(50, seed=17):
        out, edits = hotflip_edits(linear_model, s, 1)
        best, best_loss = exhaustive_best_edit(linear_model, s, DEFAULT_CHARSET, tol=1e-12)
        assert out == best, (s.caption, out, best)
        assert true_loss(linear_model, out, s.image, s.label) == pytest.approx(best_loss, rel=1e-12, abs=1e-15)


def test_hotflip_raises_loss_and_accepts_only_positive_estimates(model):
    for s in make_fixture(20, seed=8):
        out, edits = hotflip_edits(model, s, 3)
        assert 1 <= len(edits) <= 3
        assert all(e.score > 0 for e in edits)
        assert true_loss(model, out, s.image, s.label) > true_loss(model, s.caption, s.image, s.label)


def test_hotflip_tda_and_channel(tda_model):
    s = make_fixture(3, seed=1)[2]
    assert hotflip_attack(tda_model, s, 2) != s.caption
    assert hotflip_attack(tda_model, s, 2, channel="text_only") != s.caption


# ---------------------------------------------------------------- triggers

def test_apply_trigger_examples():
    assert apply_trigger("abc", Trigger((), 0)) == "abc"
    assert apply_trigger("trans rights are human rights", Trigger(("owz", "azn", "kii"), 1)) \
        == "owz azn kii trans rights are human rights"
    assert apply_trigger("", Trigger(("x",), 0)) == "x"
    assert apply_trigger("abc", ["x", "y"], position="append") == "abc x y"
    with pytest.raises(ValueError):
        apply_trigger("abc", ["x"], position="middle")


@given(st.text(max_size=30).filter(bool), st.lists(st.text(alphabet="abc", min_size=1, max_size=3), max_size=3))
def test_apply_trigger_keeps_caption_as_suffix(caption, tokens):
    assert apply_trigger(caption, tokens).endswith(caption)


def test_trigger_length_zero(model, splits):
    t = universal_trigger_search(model, splits["val"], 0, 1)
    assert t.tokens == ()
    assert all(apply_trigger(s.caption, t) == s.caption for s in splits["val"])


def test_trigger_errors(model, splits):
    with pytest.raises(ValueError):
        universal_trigger_search(model, splits["val"], -1, 1)
    with pytest.raises(ValueError):
        universal_trigger_search(model, [], 2, 1)


@pytest.mark.parametrize("length", [1, 2])
@pytest.mark.parametrize("target", [0, 1])
def test_trigger_search_reaches_exhaustive_optimum(linear_model, splits, length, target):
    rng = np.random.default_rng(length * 10 + target)
    vocab = sorted({"".join(rng.choice(list(string.ascii_lowercase), 3)) for _ in range(20)})
    samples = [s for s in splits["val"] if s.label != target]
    trig = universal_trigger_search(linear_model, samples, length, target, iterations=20, vocab=vocab,
                                    batch_size=len(samples))
    _, best_loss = exhaustive_trigger(linear_model, samples, vocab, length, target)
    assert len(trig.tokens) == length
    assert trig.search_loss == pytest.approx(trigger_loss(linear_model, samples, trig.tokens, target), rel=1e-12)
    assert trig.search_loss <= best_loss * (1 + 1e-12)


def test_trigger_lowers_target_loss(model, splits):
    samples = [s for s in splits["val"] if s.label == 0]
    trig = universal_trigger_search(model, samples, 3, 1, iterations=5)
    assert len(trig.tokens) == 3 and all(re.fullmatch("[a-z]{3}", t) for t in trig.tokens)
    assert trig.search_loss < trigger_loss(model, samples, ("the",) * 3, 1)


# ---------------------------------------------------------------- back-translation

def test_backtranslate_empty():
    assert backtranslate("") == ""


def test_rule_paraphraser_deterministic_and_faithful():
    p = RuleParaphraser(seed=3)
    caps = [s.caption for s in make_fixture(50, seed=12)]
    overlaps = []
    for c in caps:
        out = backtranslate(c, p)
        assert out == backtranslate(c, RuleParaphraser(seed=3))
        overlaps.append(content_jaccard(c, out))
    # corpus-level: a short caption can lose every content word to synonyms
    assert np.mean(overlaps) >= 0.4
    assert sum(o < 1.0 for o in overlaps) >= 10


class _TablePair:
    def __init__(self, table):
        self.table = table

    def paraphrase(self, text):
        return self.table[text]


def test_provider_contract_on_reference_pair():
    src = "i am unsure of what it means but i will nonetheless fight for the freedom of any individual."
    ref = "I am not sure what it means but I will nevertheless fight for the freedom of everyone."
    assert backtranslate(src, _TablePair({src: ref})) == ref
    outs = {RuleParaphraser(seed=k).paraphrase(src) for k in range(20)}
    assert len(outs) > 1
    assert all(o.startswith("I ") and o.endswith(".") for o in outs)
    assert any("nevertheless" in o for o in outs)


class _Resp:
    def __init__(self, status, payload):
        self.status_code, self._payload = status, payload

    def json(self):
        if isinstance(self._payload, Exception):
            raise self._payload
        return self._payload


class _Session:
    def __init__(self, resp=None, exc=None):
        self.resp, self.exc, self.calls = resp, exc, []

    def post(self, url, json, headers, timeout):
        self.calls.append((url, json, headers, timeout))
        if self.exc:
            raise self.exc
        return self.resp


def test_remote_translator_success(monkeypatch):
    monkeypatch.setenv("MR_KEY", "secret")
    sess = _Session(_Resp(200, {"text": "hello there"}))
    t = RemoteTranslator("http://x/rt", pivot_language="fr", api_key_env="MR_KEY", timeout=2, session=sess)
    assert backtranslate("hi there", t) == "hello there"
    url, body, headers, timeout = sess.calls[0]
    assert body == {"text": "hi there", "pivot_language": "fr"}
    assert headers["Authorization"] == "Bearer secret" and timeout == 2


@pytest.mark.parametrize("session", [
    _Session(_Resp(401, {})),
    _Session(_Resp(503, {})),
    _Session(_Resp(200, ValueError("bad json"))),
    _Session(_Resp(200, {"nope": 1})),
    _Session(_Resp(200, {"text": 5})),
    _Session(exc=requests.ConnectionError("down")),
])
def test_remote_translator_failures_are_typed(session):
    with pytest.raises(ParaphraseError):
        backtranslate("some caption", RemoteTranslator("http://x", session=session))
