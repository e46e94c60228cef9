"""Beam search with length-penalized scoring.

score(y) = (sum of token log-probs) / |y|**alpha, |y| counting emitted tokens
including the end token. At each step all one-token extensions of the active
hypotheses compete for beam_width slots by cumulative log-probability
(hypotheses share a length, so penalized and raw ranking agree); end-token
extensions that win a slot retire as finished. Probability-zero extensions
are not hypotheses. Ties prefer the shorter, then lexicographically smaller
sequence. With beam_width=1 this is exactly greedy decoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .config import DecodeConfig
from .network import Recognizer


@dataclass
class BeamResult:
    tokens: list[int]  # emitted tokens, end token included when finished
    score: float       # length-penalized score
    finished: bool     # False when no hypothesis emitted the end token in time

    @property
    def text_tokens(self) -> list[int]:
        return self.tokens[:-1] if self.finished else self.tokens


def _penalized(logp: float, length: int, alpha: float) -> float:
    return logp / (length**alpha) if length > 0 else logp


def beam_search(
    model: Recognizer,
    memory: torch.Tensor,
    bos_id: int,
    eos_id: int,
    cfg: DecodeConfig,
) -> BeamResult:
    """Decode one sequence from a single encoder memory (1, S, d)."""
    max_len = min(cfg.max_len, model.cfg.max_decode_len - 1)
    alpha = cfg.length_penalty
    device = memory.device

    active: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[float, int, list[int]]] = []

    with torch.no_grad():
        for _ in range(max_len):
            prefixes = torch.tensor(
                [[bos_id] + seq for seq, _ in active], dtype=torch.long, device=device
            )
            mem = memory.expand(len(active), -1, -1)
            logits, _, _ = model.decode_logits(mem, prefixes)
            logp = torch.log_softmax(logits[:, -1, :], dim=-1)
            acc = torch.tensor([a for _, a in active], dtype=logp.dtype).unsqueeze(1)
            scores = (acc + logp.cpu()).view(-1)

            # exact ranking needs only the top slots; widen the top-k slice a
            # little so documented tie-breaks apply among equal scores
            m = min(scores.numel(), cfg.beam_width + 16)
            vals, idxs = torch.topk(scores, m)
            candidates = []
            n_vocab = logp.shape[-1]
            for v, i in zip(vals.tolist(), idxs.tolist()):
                if not math.isfinite(v):
                    continue  # probability-zero path
                hyp, tok = divmod(i, n_vocab)
                candidates.append((v, active[hyp][0] + [tok]))
            candidates.sort(key=lambda c: (-c[0], c[1]))

            next_active: list[tuple[list[int], float]] = []
            for score, seq in candidates[: cfg.beam_width]:
                if seq[-1] == eos_id:
                    finished.append((_penalized(score, len(seq), alpha), len(seq), seq))
                else:
                    next_active.append((seq, score))
            active = next_active
            if not active:
                break

    if finished:
        finished.sort(key=lambda f: (-f[0], f[1], f[2]))
        score, _, tokens = finished[0]
        return BeamResult(tokens=tokens, score=score, finished=True)
    ranked = sorted(
        active, key=lambda c: (-_penalized(c[1], len(c[0]), alpha), c[0])
    )
    best = ranked[0]
    return BeamResult(
        tokens=best[0],
        score=_penalized(best[1], len(best[0]), alpha),
        finished=False,
    )


def greedy_decode(
    model: Recognizer, memory: torch.Tensor, bos_id: int, eos_id: int, max_len: int
) -> BeamResult:
    return beam_search(
        model,
        memory,
        bos_id,
        eos_id,
        DecodeConfig(beam_width=1, length_penalty=0.0, max_len=max_len),
    )
