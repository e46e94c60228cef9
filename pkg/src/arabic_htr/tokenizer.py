"""Byte-level BPE over UTF-8, lossless for arbitrary Unicode text.

The vocabulary starts from the 256 byte values; training greedily merges the
most frequent adjacent token pair (position counts, ties broken by the
lexicographically smallest id pair) until the vocab budget is spent or no
pair occurs at least twice. Pre-tokenization splits at whitespace boundaries
and attaches a single leading space to each word, so merges never cross word
boundaries and encoding stays reversible.
"""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import TrainingError, ValidationError

DICT_SCHEMA = "bbpe-dict-v1"
DEFAULT_SPECIALS = ("<s>", "</s>", "<pad>", "<unk>")

_PRETOKEN_RE = re.compile(r" ?\S+|\s+(?!\S)|\s+")


def pretokenize(text: str) -> list[str]:
    """Split into word pieces whose concatenation is exactly the input."""
    return _PRETOKEN_RE.findall(text)


@dataclass
class MergeTable:
    """Frozen BBPE vocabulary: byte tokens, specials, and ordered merges."""

    vocab: dict[int, bytes]
    merges: list[tuple[int, int]]
    specials: dict[str, int]
    vocab_size: int
    _ranks: dict[tuple[int, int], int] = field(init=False, repr=False)
    _merged_ids: dict[tuple[int, int], int] = field(init=False, repr=False)
    _word_cache: dict[bytes, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        for b in range(256):
            if self.vocab.get(b) != bytes([b]):
                raise ValidationError("token ids 0..255 must be the single bytes")
        if self.vocab_size != 256 + len(self.specials) + len(self.merges):
            raise ValidationError(
                "vocab_size must equal 256 + specials + merges "
                f"(got {self.vocab_size})"
            )
        base = 256 + len(self.specials)
        for k, (a, b) in enumerate(self.merges):
            child = self.vocab.get(base + k)
            if child is None or child != self.vocab[a] + self.vocab[b]:
                raise ValidationError(f"merge {k} does not concatenate its parents")
        self._ranks = {pair: k for k, pair in enumerate(self.merges)}
        self._merged_ids = {pair: base + k for k, pair in enumerate(self.merges)}
        self._word_cache = {}

    # -- encoding / decoding --------------------------------------------------

    def _encode_word(self, word: bytes) -> tuple[int, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        parts = list(word)
        ranks = self._ranks
        while len(parts) > 1:
            best_rank = None
            best_pair = None
            prev = parts[0]
            for nxt in parts[1:]:
                r = ranks.get((prev, nxt))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank = r
                    best_pair = (prev, nxt)
                prev = nxt
            if best_pair is None:
                break
            new_id = self._merged_ids[best_pair]
            a, b = best_pair
            out = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == a and parts[i + 1] == b:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            parts = out
        ids = tuple(parts)
        if len(self._word_cache) < 1 << 17:
            self._word_cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for piece in pretokenize(text):
            ids.extend(self._encode_word(piece.encode("utf-8")))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        special_ids = set(self.specials.values())
        chunks: list[bytes] = []
        for i in ids:
            if i in special_ids:
                continue  # framing tokens carry no text
            seq = self.vocab.get(i)
            if seq is None:
                raise ValidationError(f"token id {i} out of range (< {self.vocab_size})")
            chunks.append(seq)
        return b"".join(chunks).decode("utf-8", errors="replace")

    def special_id(self, name: str) -> int:
        if name not in self.specials:
            raise ValidationError(f"unknown special token {name!r}")
        return self.specials[name]

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "schema": DICT_SCHEMA,
            "vocab_size": self.vocab_size,
            "specials": dict(self.specials),
            "vocab": {self.vocab[i].hex(): i for i in sorted(self.vocab)},
            "merges": [list(p) for p in self.merges],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def from_json(cls, doc: dict) -> "MergeTable":
        if doc.get("schema") != DICT_SCHEMA:
            raise ValidationError(f"unknown dictionary schema {doc.get('schema')!r}")
        vocab = {int(i): bytes.fromhex(h) for h, i in doc["vocab"].items()}
        return cls(
            vocab=vocab,
            merges=[tuple(p) for p in doc["merges"]],
            specials={str(k): int(v) for k, v in doc["specials"].items()},
            vocab_size=int(doc["vocab_size"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "MergeTable":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train(
    corpus: Iterable[str] | str,
    vocab_size: int,
    specials: tuple[str, ...] = DEFAULT_SPECIALS,
) -> MergeTable:
    """Train a merge table on a text stream.

    ``corpus`` is a string or an iterable of independent text pieces (lines);
    pre-tokens never span pieces. The merge budget is
    vocab_size - 256 - len(specials).
    """
    if isinstance(corpus, str):
        corpus = [corpus]
    if vocab_size < 256 + len(specials):
        raise TrainingError(
            f"vocab_size {vocab_size} cannot hold 256 bytes + {len(specials)} specials"
        )

    word_counts: Counter[bytes] = Counter()
    for piece in corpus:
        for tok in pretokenize(piece):
            word_counts[tok.encode("utf-8")] += 1
    if not word_counts:
        raise TrainingError("corpus is empty")

    vocab: dict[int, bytes] = {b: bytes([b]) for b in range(256)}
    merge_base = 256 + len(specials)
    budget = vocab_size - merge_base
    merges: list[tuple[int, int]] = []

    words: list[list[int]] = []
    counts: list[int] = []
    for w, c in word_counts.items():
        words.append(list(w))
        counts.append(c)

    pair_counts: dict[tuple[int, int], int] = {}
    pair_words: dict[tuple[int, int], set[int]] = {}
    for idx, seq in enumerate(words):
        c = counts[idx]
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] = pair_counts.get(pair, 0) + c
            pair_words.setdefault(pair, set()).add(idx)

    heap = [(-c, pair) for pair, c in pair_counts.items()]
    heapq.heapify(heap)

    while len(merges) < budget:
        best = None
        while heap:
            neg, pair = heapq.heappop(heap)
            if pair_counts.get(pair, 0) == -neg:
                best = (-neg, pair)
                break
        if best is None or best[0] < 2:
            break
        _, pair = best
        a, b = pair
        new_id = merge_base + len(merges)
        vocab[new_id] = vocab[a] + vocab[b]
        merges.append(pair)

        touched: set[tuple[int, int]] = set()
        for idx in pair_words.pop(pair, ()):
            seq = words[idx]
            c = counts[idx]
            if pair not in zip(seq, seq[1:]):
                continue  # stale membership from an earlier rebuild
            for p in zip(seq, seq[1:]):
                pair_counts[p] -= c
                touched.add(p)
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            words[idx] = out
            for p in zip(out, out[1:]):
                pair_counts[p] = pair_counts.get(p, 0) + c
                pair_words.setdefault(p, set()).add(idx)
                touched.add(p)
        pair_counts.pop(pair, None)
        for p in touched:
            cnt = pair_counts.get(p, 0)
            if cnt <= 0:
                pair_counts.pop(p, None)
            elif p != pair:
                heapq.heappush(heap, (-cnt, p))

    special_map = {name: 256 + i for i, name in enumerate(specials)}
    return MergeTable(
        vocab=vocab,
        merges=merges,
        specials=special_map,
        vocab_size=merge_base + len(merges),
    )


def compactness_ratio(base: MergeTable, custom: MergeTable, corpus: str) -> float:
    """Token-count ratio |encode(base)| / |encode(custom)| on the same text."""
    if not corpus:
        raise ValidationError("compactness ratio needs a non-empty corpus")
    return len(base.encode(corpus)) / len(custom.encode(corpus))
