"""Deterministic word pools and desk-scale text corpora.

The sandbox ships no text dumps, so corpora are synthesized: Arabic content
words come from a root-and-pattern generator over the Arabic consonant
inventory plus a function-word list, English from a common-word list plus
syllabic filler. Frequencies are Zipf-distributed so trained vocabularies
behave like ones trained on natural text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

ARABIC_FUNCTION_WORDS = [
    "في", "من", "على", "إلى", "عن", "أن", "إن", "لا", "ما", "هذا", "هذه",
    "ذلك", "التي", "الذي", "كان", "كانت", "قد", "لم", "لن", "هو", "هي",
    "ثم", "أو", "بل", "كل", "بعد", "قبل", "عند", "حتى", "إذا", "لكن",
    "بين", "فوق", "تحت", "مع", "منذ", "حيث", "كيف", "متى", "أين", "نعم",
    "ليس", "مثل", "حول", "دون", "خلال", "ضد", "عبر", "نحو", "لدى", "إلا",
    "أما", "كما", "لأن", "بعض", "أكثر", "جدا", "هنا", "هناك", "غير", "أي",
]

_ROOT_LETTERS = "بتثجحخدذرزسشصضطظعغفقكلمنهوي"

# templates over root consonants 1/2/3, in common morphological shapes
_PATTERNS = [
    "123", "1ا23", "م123", "12ا3", "م12و3", "ت12ي3", "م1ا23",
    "ا1ت2ا3", "است123", "12و3", "1ي23", "م1ت23", "1ا2و3", "ت123",
]
_PREFIXES = ["", "", "", "ال", "و", "وال", "ب", "لل", "ف"]
_SUFFIXES = ["", "", "", "ة", "ات", "ون", "ين", "ه", "ها", "هم", "ي"]

TASHKEEL = [chr(c) for c in range(0x064B, 0x0653)]

_ENGLISH_COMMON = (
    "the of and a to in is you that it he was for on are as with his they I at "
    "be this have from or one had by word but not what all were we when your can "
    "said there use an each which she do how their if will up other about out "
    "many then them these so some her would make like him into time has look two "
    "more write go see number no way could people my than first water been call "
    "who oil its now find long down day did get come made may part over new sound "
    "take only little work know place year live me back give most very after "
    "thing our just name good sentence man think say great where help through "
    "much before line right too mean old any same tell boy follow came want show "
    "also around form three small set put end does another well large must big "
    "even such because turn here why ask went men read need land different home "
    "us move try kind hand picture again change off play spell air away animal "
    "house point page letter mother answer found study still learn should "
    "america world high every near add food between own below country plant last "
    "school father keep tree never start city earth eye light thought head under "
    "story saw left don't few while along might close something seem next hard "
    "open example begin life always those both paper together got group often "
    "run important until children side feet car mile night walk white sea began "
    "grow took river four carry state once book hear stop without second later "
    "miss idea enough eat face watch far indian really almost let above girl "
    "sometimes mountain cut young talk soon list song being leave family it's"
).split()

_SYLLABLE_ONSETS = list("bcdfghjklmnprstvw") + ["st", "tr", "ch", "sh", "pl"]
_SYLLABLE_NUCLEI = list("aeiou") + ["ea", "ou"]
_SYLLABLE_CODAS = ["", "", "n", "r", "s", "t", "l", "nd", "ck"]


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def arabic_lexicon(n_words: int, seed: int = 0) -> list[str]:
    """Distinct Arabic word forms: function words first, then root+pattern forms."""
    if n_words < 1:
        raise ConfigurationError("lexicon needs at least one word")
    words: list[str] = []
    seen: set[str] = set()
    for w in ARABIC_FUNCTION_WORDS:
        if len(words) >= n_words:
            break
        if w not in seen:
            seen.add(w)
            words.append(w)
    rng = _rng(seed, stream=1)
    while len(words) < n_words:
        root = "".join(
            _ROOT_LETTERS[i] for i in rng.integers(0, len(_ROOT_LETTERS), size=3)
        )
        pattern = _PATTERNS[rng.integers(0, len(_PATTERNS))]
        stem = (
            pattern.replace("1", root[0]).replace("2", root[1]).replace("3", root[2])
        )
        word = (
            _PREFIXES[rng.integers(0, len(_PREFIXES))]
            + stem
            + _SUFFIXES[rng.integers(0, len(_SUFFIXES))]
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def english_lexicon(n_words: int, seed: int = 0) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    for w in _ENGLISH_COMMON:
        if len(words) >= n_words:
            break
        if w not in seen:
            seen.add(w)
            words.append(w)
    rng = _rng(seed, stream=2)
    while len(words) < n_words:
        n_syll = int(rng.integers(2, 4))
        word = "".join(
            _SYLLABLE_ONSETS[rng.integers(0, len(_SYLLABLE_ONSETS))]
            + _SYLLABLE_NUCLEI[rng.integers(0, len(_SYLLABLE_NUCLEI))]
            + _SYLLABLE_CODAS[rng.integers(0, len(_SYLLABLE_CODAS))]
            for _ in range(n_syll)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def zipf_weights(n: int, exponent: float = 1.07) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks**-exponent
    return w / w.sum()


@dataclass
class WordPool:
    """A lexicon with sampling weights; the unit the generators draw from."""

    words: list[str]
    weights: np.ndarray

    def __post_init__(self):
        if len(self.words) == 0:
            raise ConfigurationError("word pool is empty")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.words),):
            raise ConfigurationError("weights must match the lexicon length")
        self.weights = self.weights / self.weights.sum()

    @classmethod
    def arabic(cls, n_words: int = 4000, seed: int = 0) -> "WordPool":
        return cls(arabic_lexicon(n_words, seed), zipf_weights(n_words))

    @classmethod
    def english(cls, n_words: int = 4000, seed: int = 0) -> "WordPool":
        return cls(english_lexicon(n_words, seed), zipf_weights(n_words))

    @classmethod
    def from_text(cls, text: str) -> "WordPool":
        from collections import Counter

        counts = Counter(text.split())
        if not counts:
            raise ConfigurationError("corpus text contains no words")
        items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([w for w, _ in items], np.array([c for _, c in items], dtype=np.float64))


def generate_text(
    pool: WordPool,
    n_bytes: int,
    seed: int = 0,
    words_per_line: int = 12,
    diacritic_rate: float = 0.0,
) -> str:
    """Sample whitespace-joined text of at least n_bytes UTF-8 bytes."""
    rng = _rng(seed, stream=3)
    out: list[str] = []
    size = 0
    line: list[str] = []
    batch = max(1024, n_bytes // 8)
    while size < n_bytes:
        idxs = rng.choice(len(pool.words), size=batch, p=pool.weights)
        marks = (
            rng.random(batch) < diacritic_rate
            if diacritic_rate > 0
            else np.zeros(batch, dtype=bool)
        )
        for idx, mark in zip(idxs, marks):
            word = pool.words[idx]
            if mark and len(word) >= 2:
                pos = int(rng.integers(1, len(word)))
                tk = TASHKEEL[int(rng.integers(0, len(TASHKEEL)))]
                word = word[:pos] + tk + word[pos:]
            line.append(word)
            size += len(word.encode("utf-8")) + 1
            if len(line) >= words_per_line:
                out.append(" ".join(line))
                line = []
            if size >= n_bytes:
                break
    if line:
        out.append(" ".join(line))
    return "\n".join(out)
