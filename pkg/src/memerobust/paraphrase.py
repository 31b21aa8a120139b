"""Paraphrase providers used for back-translation noise.

``RuleParaphraser`` runs offline: a phrase/synonym table plus a clause
reordering rule, seeded per (seed, caption). ``RemoteTranslator`` posts to a
pivot-translation service that returns the round trip.
"""
from __future__ import annotations

import os
import re
import zlib
from typing import Optional, Protocol

import numpy as np
import requests


class ParaphraseError(RuntimeError):
    """Remote paraphrasing failed; never swallowed into a passthrough."""


class ParaphraseProvider(Protocol):
    def paraphrase(self, text: str) -> str: ...


# multi-word phrases are tried before single words
PHRASES = {
    "any individual": ["everyone", "anyone", "every person"],
    "i am unsure of": ["i am not sure", "i do not know"],
    "i am unsure": ["i am not sure"],
    "i do not know": ["i am not sure", "i have no idea"],
    "a lot of": ["many", "much"],
    "right now": ["now", "at the moment"],
    "as well": ["too", "also"],
    "in order to": ["to"],
    "make sure": ["ensure"],
    "find out": ["discover", "learn"],
    "keep away from": ["stay away from", "avoid"],
    "stand up for": ["defend", "support"],
}

SYNONYMS = {
    "nonetheless": ["nevertheless", "still"],
    "nevertheless": ["nonetheless", "still"],
    "however": ["but", "yet"],
    "means": ["signifies", "implies"],
    "mean": ["signify", "imply"],
    "unsure": ["uncertain", "not sure"],
    "fight": ["struggle", "battle"],
    "freedom": ["liberty"],
    "individual": ["person"],
    "people": ["persons", "folks"],
    "happy": ["glad", "joyful"],
    "proud": ["pleased"],
    "love": ["affection", "adore"],
    "support": ["back", "endorse"],
    "celebrate": ["honour", "commemorate"],
    "together": ["jointly", "united"],
    "everyone": ["everybody", "all"],
    "today": ["this day"],
    "really": ["truly", "very"],
    "very": ["really", "highly"],
    "think": ["believe", "consider"],
    "want": ["wish", "desire"],
    "kids": ["children"],
    "children": ["kids"],
    "wrong": ["incorrect", "false"],
    "sick": ["ill", "unwell"],
    "disgusting": ["repulsive", "revolting"],
    "nonsense": ["rubbish", "absurdity"],
    "stop": ["halt", "end"],
    "ban": ["forbid", "prohibit"],
    "shame": ["disgrace", "dishonour"],
    "against": ["opposed to"],
    "never": ["not ever", "at no time"],
    "agenda": ["programme", "plan"],
    "big": ["large", "huge"],
    "small": ["little", "tiny"],
    "friend": ["companion", "pal"],
    "friends": ["companions", "pals"],
    "world": ["globe", "earth"],
    "city": ["town"],
    "month": ["moon cycle", "month long"],
    "parade": ["march", "procession"],
    "flag": ["banner"],
    "equal": ["same", "equivalent"],
    "kind": ["nice", "gentle"],
    "just": ["only", "simply"],
    "rights": ["entitlements"],
    "human": ["humane", "person"],
    "begin": ["start"],
    "start": ["begin"],
    "show": ["display", "demonstrate"],
    "help": ["assist", "aid"],
    "fear": ["dread"],
    "hate": ["detest", "loathe"],
    "great": ["wonderful", "excellent"],
    "bad": ["poor", "evil"],
    "good": ["fine", "nice"],
    "strong": ["powerful"],
    "weak": ["feeble"],
    "beautiful": ["lovely", "pretty"],
    "ugly": ["unattractive"],
    "stupid": ["foolish", "dumb"],
    "funny": ["amusing", "humorous"],
    "angry": ["furious", "mad"],
    "scared": ["afraid", "frightened"],
    "maybe": ["perhaps"],
    "always": ["forever", "constantly"],
    "often": ["frequently"],
    "quickly": ["fast", "rapidly"],
}

REORDER = re.compile(r"^(?P<a>[^,]+?)\s+(?P<conj>because|when|if|while)\s+(?P<b>[^,]+?)(?P<end>[.!?]*)$")


def _stable_seed(seed: int, text: str) -> list:
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(text.encode("utf-8"))]


class RuleParaphraser:
    """Offline stand-in for pivot translation.

    Each caption gets its own generator seeded from (seed, crc32(caption)), so
    output is a pure function of the two. Standalone ``i`` is capitalized, as
    machine translation into English does.
    """

    def __init__(self, seed: int = 0, synonym_rate: float = 0.5, reorder_rate: float = 0.5):
        self.seed = seed
        self.synonym_rate = synonym_rate
        self.reorder_rate = reorder_rate

    def paraphrase(self, text: str) -> str:
        if not text:
            return ""
        rng = np.random.default_rng(_stable_seed(self.seed, text))
        words = text.split()
        out = []
        i = 0
        while i < len(words):
            hit = False
            for span in (4, 3, 2):
                chunk = " ".join(words[i:i + span]).lower()
                if len(words[i:i + span]) == span and chunk in PHRASES:
                    if rng.random() < self.synonym_rate:
                        opts = PHRASES[chunk]
                        out.extend(opts[int(rng.integers(len(opts)))].split())
                        i += span
                        hit = True
                    break
            if hit:
                continue
            w = words[i]
            m = re.match(r"^(\W*)(.*?)(\W*)$", w, re.S)
            lead, core, trail = m.groups()
            opts = SYNONYMS.get(core.lower())
            if opts and rng.random() < self.synonym_rate:
                rep = opts[int(rng.integers(len(opts)))]
                if core[:1].isupper():
                    rep = rep[:1].upper() + rep[1:]
                w = lead + rep + trail
            out.append(w)
            i += 1
        out = ["I" if w == "i" else w for w in out]
        result = " ".join(out)
        m = REORDER.match(result)
        if m and rng.random() < self.reorder_rate:
            result = f"{m['conj']} {m['b']}, {m['a']}{m['end']}"
        return result


class RemoteTranslator:
    """Round-trip translation through a remote pivot service.

    Protocol: POST ``{"text", "pivot_language"}`` -> ``{"text"}``. The API key
    is read from the environment variable named by ``api_key_env``.
    """

    def __init__(self, url: str, pivot_language: str = "de", api_key_env: str = "MEMEROBUST_API_KEY",
                 timeout: float = 10.0, session: Optional[requests.Session] = None):
        self.url = url
        self.pivot_language = pivot_language
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def paraphrase(self, text: str) -> str:
        post = self.session.post if self.session is not None else requests.post
        try:
            resp = post(self.url, json={"text": text, "pivot_language": self.pivot_language},
                        headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise ParaphraseError(f"translation request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise ParaphraseError(f"translation service rejected credentials ({resp.status_code})")
        if resp.status_code != 200:
            raise ParaphraseError(f"translation service returned HTTP {resp.status_code}")
        try:
            out = resp.json()["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParaphraseError("malformed translation response") from exc
        if not isinstance(out, str):
            raise ParaphraseError("malformed translation response")
        return out


STOPWORDS = frozenset("""
a an the and or but if of to in on at by for with from as is are was were be been being am i you he
she it we they me him her us them my your his its our their this that these those not no do does did
so than too very can will would should could just all any every some what which who whom whose when
where why how there here into out up down over under again then once also
""".split())


def content_words(text: str) -> set:
    return {w for w in re.findall(r"[a-z]+", text.lower()) if w not in STOPWORDS}


def content_jaccard(a: str, b: str) -> float:
    wa, wb = content_words(a), content_words(b)
    if not wa and not wb:
        return 1.0
    return len(wa & wb) / len(wa | wb)
