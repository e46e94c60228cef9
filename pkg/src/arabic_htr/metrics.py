"""Character error rate with alignment and tiered Arabic normalization.

CER = (S + D + I) / N over a minimal-cost Levenshtein alignment that
transforms the prediction into the reference. Normalization tiers compose in
a fixed order: collapse whitespace, remove diacritics, replace without
context, replace with context. A character is one Unicode scalar value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError

TASHKEEL_RANGE = (0x064B, 0x0652)

RECORD_SCHEMA = "eval-record-v1"


# --- edit distance ----------------------------------------------------------


@dataclass(frozen=True)
class AlignOp:
    """One alignment step. Indices refer to reference / prediction characters."""

    op: str  # match | substitute | delete | insert
    ref_index: int | None
    pred_index: int | None

    def to_json(self) -> dict:
        return {"op": self.op, "ref_index": self.ref_index, "pred_index": self.pred_index}

    @classmethod
    def from_json(cls, d: dict) -> "AlignOp":
        return cls(op=d["op"], ref_index=d["ref_index"], pred_index=d["pred_index"])


def levenshtein_distance(ref: str, pred: str) -> int:
    """Unit-cost edit distance; row-vectorized for long inputs."""
    n, m = len(ref), len(pred)
    if n == 0:
        return m
    if m == 0:
        return n
    if n * m <= 1024:
        prev = list(range(m + 1))
        for i in range(1, n + 1):
            cur = [i] + [0] * m
            ca = ref[i - 1]
            for j in range(1, m + 1):
                cur[j] = min(
                    prev[j - 1] + (ca != pred[j - 1]),
                    prev[j] + 1,
                    cur[j - 1] + 1,
                )
            prev = cur
        return prev[m]
    ref_codes = np.frombuffer(ref.encode("utf-32-le"), dtype=np.uint32)
    pred_codes = np.frombuffer(pred.encode("utf-32-le"), dtype=np.uint32)
    idx = np.arange(m + 1, dtype=np.int64)
    prev = idx.copy()
    base = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        base[0] = i
        np.minimum(prev[:-1] + (pred_codes != ref_codes[i - 1]), prev[1:] + 1, out=base[1:])
        # cur[j] = min(base[j], cur[j-1] + 1) == j + running-min of (base - j)
        prev = np.minimum.accumulate(base - idx) + idx
        base = np.empty(m + 1, dtype=np.int64)
    return int(prev[m])


def edit_distance_align(ref: str, pred: str) -> tuple[int, int, int, list[AlignOp]]:
    """Minimal-cost alignment of prediction onto reference.

    Returns (S, D, I, ops). Ties in the backtrace prefer match, then
    substitute, then delete, then insert, making the alignment deterministic.
    """
    if len(ref) == 0:
        raise ValidationError("CER is undefined for an empty reference")
    n, m = len(ref), len(pred)
    pred_codes = np.frombuffer(pred.encode("utf-32-le"), dtype=np.uint32)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    idx = np.arange(m + 1, dtype=np.int64)
    base = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        base[0] = i
        np.minimum(dp[i - 1, :-1] + (pred_codes != ord(ref[i - 1])), dp[i - 1, 1:] + 1, out=base[1:])
        dp[i] = np.minimum.accumulate(base - idx) + idx

    ops: list[AlignOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == pred[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            ops.append(AlignOp("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            ops.append(AlignOp("substitute", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            ops.append(AlignOp("delete", i - 1, None))
            i -= 1
        else:
            ops.append(AlignOp("insert", None, j - 1))
            j -= 1
    ops.reverse()
    s = sum(1 for o in ops if o.op == "substitute")
    d = sum(1 for o in ops if o.op == "delete")
    ins = sum(1 for o in ops if o.op == "insert")
    return s, d, ins, ops


def replay_alignment(pred: str, ops: Sequence[AlignOp], ref: str) -> str:
    """Apply alignment ops to the prediction, reconstructing the reference."""
    out: list[str] = []
    for op in ops:
        if op.op == "match":
            out.append(pred[op.pred_index])
        elif op.op == "substitute":
            out.append(ref[op.ref_index])
        elif op.op == "delete":
            out.append(ref[op.ref_index])
        elif op.op == "insert":
            pass  # extra prediction character, dropped
        else:
            raise ValidationError(f"unknown alignment op {op.op!r}")
    return "".join(out)


# --- normalization tiers ----------------------------------------------------


def collapse_whitespace(s: str) -> str:
    """Runs of whitespace become one space; leading/trailing are trimmed."""
    return " ".join(s.split())


def remove_diacritics(s: str, extra: Iterable[str] = ()) -> str:
    """Strip Arabic tashkeel (U+064B..U+0652) plus any configured extras."""
    extra_set = set(extra)
    lo, hi = TASHKEEL_RANGE
    return "".join(c for c in s if not (lo <= ord(c) <= hi or c in extra_set))


def replace_tier(s: str, table: dict[str, str]) -> str:
    """Pointwise codepoint substitution per one normalization tier."""
    for k, v in table.items():
        if len(k) != 1 or len(v) != 1:
            raise ConfigurationError(
                f"replace table must map single codepoints, got {k!r} -> {v!r}"
            )
    return s.translate({ord(k): v for k, v in table.items()})


def _load_tier_resource(name: str) -> dict[str, str]:
    raw = resources.files("arabic_htr.data").joinpath(name).read_text(encoding="utf-8")
    doc = json.loads(raw)
    if doc.get("schema") != "replace-tier-v1":
        raise ConfigurationError(f"unknown replace-tier schema in {name}")
    return dict(doc["map"])


def load_tier_table(path: str | Path) -> dict[str, str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != "replace-tier-v1":
        raise ConfigurationError(f"unknown replace-tier schema in {path}")
    return dict(doc["map"])


def default_without_context_table() -> dict[str, str]:
    return _load_tier_resource("replace_without_context.json")


def default_with_context_table() -> dict[str, str]:
    return _load_tier_resource("replace_with_context.json")


@dataclass
class NormalizationPolicy:
    """Which tiers are active. Tiers always compose in the fixed order
    collapse -> remove diacritics -> replace-without-context -> replace-with-context.
    """

    collapse_whitespace: bool = False
    remove_diacritics: bool = False
    replace_without_context: bool = False
    replace_with_context: bool = False
    without_context_table: dict[str, str] = field(default_factory=default_without_context_table)
    with_context_table: dict[str, str] = field(default_factory=default_with_context_table)
    diacritic_extras: tuple[str, ...] = ()

    def apply(self, s: str) -> str:
        if self.collapse_whitespace:
            s = collapse_whitespace(s)
        if self.remove_diacritics:
            s = remove_diacritics(s, self.diacritic_extras)
        if self.replace_without_context:
            s = replace_tier(s, self.without_context_table)
        if self.replace_with_context:
            s = replace_tier(s, self.with_context_table)
        if self.collapse_whitespace:
            # mark removal can expose whitespace runs; re-collapsing keeps the
            # composed policy idempotent without reordering the tiers
            s = collapse_whitespace(s)
        return s

    @property
    def is_identity(self) -> bool:
        return not (
            self.collapse_whitespace
            or self.remove_diacritics
            or self.replace_without_context
            or self.replace_with_context
        )

    def to_json(self) -> dict:
        return {
            "collapse_whitespace": self.collapse_whitespace,
            "remove_diacritics": self.remove_diacritics,
            "replace_without_context": self.replace_without_context,
            "replace_with_context": self.replace_with_context,
        }


# --- per-line records and corpus aggregation --------------------------------


@dataclass
class EvalRecord:
    """Scored (reference, prediction) pair for one line."""

    id: str
    reference: str
    prediction: str
    S: int
    D: int
    I: int
    N: int
    cer: float
    alignment: list[AlignOp]
    image: str | None = None
    error: str | None = None

    def to_json(self) -> dict:
        d = {
            "schema": RECORD_SCHEMA,
            "id": self.id,
            "reference": self.reference,
            "prediction": self.prediction,
            "S": self.S,
            "D": self.D,
            "I": self.I,
            "N": self.N,
            "cer": self.cer,
            "alignment": [op.to_json() for op in self.alignment],
        }
        if self.image is not None:
            d["image"] = self.image
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EvalRecord":
        if d.get("schema") != RECORD_SCHEMA:
            raise ValidationError(f"unknown eval record schema {d.get('schema')!r}")
        return cls(
            id=d["id"],
            reference=d["reference"],
            prediction=d["prediction"],
            S=d["S"],
            D=d["D"],
            I=d["I"],
            N=d["N"],
            cer=d["cer"],
            alignment=[AlignOp.from_json(o) for o in d["alignment"]],
            image=d.get("image"),
            error=d.get("error"),
        )


def score_pair(id: str, reference: str, prediction: str, image: str | None = None) -> EvalRecord:
    """Align one pair and package the counts; reference must be non-empty."""
    s, d, i, ops = edit_distance_align(reference, prediction)
    n = len(reference)
    return EvalRecord(
        id=id,
        reference=reference,
        prediction=prediction,
        S=s,
        D=d,
        I=i,
        N=n,
        cer=(s + d + i) / n,
        alignment=ops,
        image=image,
    )


def _policy_counts(reference: str, prediction: str, policy: NormalizationPolicy) -> tuple[int, int]:
    """(edit errors, normalized reference length) for one pair under a policy."""
    ref = policy.apply(reference)
    pred = policy.apply(prediction)
    if len(ref) == 0:
        # nothing left to match against: every prediction character is an insertion
        return len(pred), 0
    return levenshtein_distance(ref, pred), len(ref)


def cer_with_policy(
    records: Sequence[EvalRecord] | Sequence[tuple[str, str]],
    policy: NormalizationPolicy,
    per_line: bool = False,
) -> float:
    """Corpus CER after applying the policy to both sides and realigning.

    Default aggregation is corpus-level sum(S+D+I)/sum(N); ``per_line``
    averages per-record CERs instead (records emptied by normalization are
    excluded from the per-line mean).
    """
    if len(records) == 0:
        raise ValidationError("cannot score an empty record set")
    pairs = [
        (r.reference, r.prediction) if isinstance(r, EvalRecord) else (r[0], r[1])
        for r in records
    ]
    counts = [_policy_counts(ref, pred, policy) for ref, pred in pairs]
    total_n = sum(n for _, n in counts)
    if total_n == 0:
        raise ValidationError("all references are empty after normalization")
    if per_line:
        line_cers = [e / n for e, n in counts if n > 0]
        return float(np.mean(line_cers))
    return sum(e for e, _ in counts) / total_n


def policy_deltas(
    records: Sequence[EvalRecord], policy: NormalizationPolicy
) -> tuple[float, list[dict]]:
    """Corpus CER under a policy plus per-record before/after rows."""
    if len(records) == 0:
        raise ValidationError("cannot score an empty record set")
    rows = []
    total_err = 0
    total_n = 0
    for r in records:
        err, n = _policy_counts(r.reference, r.prediction, policy)
        total_err += err
        total_n += n
        rows.append(
            {
                "id": r.id,
                "cer_before": r.cer,
                "cer_after": (err / n) if n > 0 else None,
                "changed": (n == 0) or abs(err / n - r.cer) > 0,
            }
        )
    if total_n == 0:
        raise ValidationError("all references are empty after normalization")
    return total_err / total_n, rows


def corpus_cer(records: Sequence[EvalRecord], per_line: bool = False) -> float:
    """Aggregate stored records without re-normalizing."""
    if len(records) == 0:
        raise ValidationError("cannot score an empty record set")
    if per_line:
        return float(np.mean([r.cer for r in records]))
    total_n = sum(r.N for r in records)
    if total_n == 0:
        raise ValidationError("all references are empty")
    return sum(r.S + r.D + r.I for r in records) / total_n


def write_records_jsonl(records: Iterable[EvalRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


def read_records_jsonl(path: str | Path) -> list[EvalRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(EvalRecord.from_json(json.loads(line)))
    return records
