"""Two-stage training: synthetic pretraining then fine-tuning past the
validation-loss plateau.

Stage 1 stops when validation loss stalls; stage 2 keeps training while the
loss plateaus (or rises) and stops only when validation CER stalls, so the
returned snapshot is the best-CER one. The schedule is a linear warmup into
an inverse-square-root decay.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import metrics as metrics_mod
from .errors import ConfigurationError, TrainingError, ValidationError
from .imaging import LineImage, block_pack, load_line_image
from .metrics import EvalRecord, collapse_whitespace, score_pair
from .model import DecodeConfig, Recognizer, beam_search
from .synth import load_manifest
from .tokenizer import MergeTable


@dataclass
class StageConfig:
    stage: int
    batch_size: int = 8
    peak_lr: float = 5e-5
    warmup_steps: int = 20_000
    stop_metric: str = "val_loss"
    patience: int = 3
    max_steps: int = 100_000
    eval_every: int = 200
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    track_cer: bool = True
    eval_decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(beam_width=1))

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigurationError("stage must be 1 or 2")
        if self.stop_metric not in ("val_loss", "val_cer"):
            raise ConfigurationError("stop_metric must be val_loss or val_cer")
        if self.warmup_steps < 1 or self.max_steps < 1:
            raise ConfigurationError("warmup_steps and max_steps must be positive")

    @classmethod
    def stage1(cls, **overrides) -> "StageConfig":
        base = dict(stage=1, peak_lr=5e-5, warmup_steps=20_000, stop_metric="val_loss")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def stage2(cls, **overrides) -> "StageConfig":
        base = dict(stage=2, peak_lr=1e-4, warmup_steps=2_000, stop_metric="val_cer")
        base.update(overrides)
        return cls(**base)

    def to_json(self) -> dict:
        d = self.__dict__.copy()
        d["eval_decode"] = {
            "beam_width": self.eval_decode.beam_width,
            "length_penalty": self.eval_decode.length_penalty,
            "max_len": self.eval_decode.max_len,
        }
        return d


def lr_at(step: int, cfg: StageConfig) -> float:
    """Linear warmup to peak_lr, then inverse-square-root decay."""
    if step < 1:
        raise ValidationError("step counter starts at 1")
    w = cfg.warmup_steps
    return cfg.peak_lr * min(step / w, math.sqrt(w / step))


@dataclass
class TrainState:
    step: int = 0
    best_metric: float = math.inf
    best_step: int = 0
    best_state: dict | None = None
    last_finite_state: dict | None = None
    history: list[dict] = field(default_factory=list)
    stopped_early: bool = False

    def record(self, row: dict) -> None:
        self.history.append(row)

    def best_step_for(self, metric: str) -> int:
        best_val, best_step = math.inf, 0
        for row in self.history:
            v = row.get(metric)
            if v is not None and v < best_val:
                best_val, best_step = v, row["step"]
        return best_step


@dataclass
class LineDataset:
    """Preprocessed lines: blocked canvases plus tokenized ground truth."""

    canvases: torch.Tensor  # (N, 384, 384) float32
    texts: list[str]
    token_seqs: list[list[int]]
    ids: list[str]

    def __len__(self) -> int:
        return len(self.texts)

    @classmethod
    def from_items(
        cls,
        items: list[tuple[str, LineImage, str]],
        table: MergeTable,
        normalize_text: bool = False,
    ) -> "LineDataset":
        canvases, texts, seqs, ids = [], [], [], []
        for item_id, image, text in items:
            if normalize_text:
                text = collapse_whitespace(text)
            canvases.append(torch.from_numpy(block_pack(image).pixels))
            texts.append(text)
            seqs.append(table.encode(text))
            ids.append(item_id)
        if not canvases:
            raise ValidationError("dataset is empty")
        return cls(
            canvases=torch.stack(canvases), texts=texts, token_seqs=seqs, ids=ids
        )


def load_split(
    manifest_path: str | Path,
    split: str,
    table: MergeTable,
    normalize_text: bool = False,
) -> LineDataset:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    items = []
    for row in load_manifest(manifest_path):
        if row["split"] != split:
            continue
        items.append((row["image"], load_line_image(root / row["image"]), row["text"]))
    if not items:
        raise ValidationError(f"manifest has no items in split {split!r}")
    return LineDataset.from_items(items, table, normalize_text=normalize_text)


def make_batch(
    data: LineDataset, idxs: list[int], table: MergeTable, max_decode_len: int
):
    """Teacher-forcing batch: decoder inputs, shifted targets, pad-masked."""
    bos, eos, pad = (
        table.special_id("<s>"),
        table.special_id("</s>"),
        table.special_id("<pad>"),
    )
    seqs = []
    for i in idxs:
        ids = data.token_seqs[i][: max_decode_len - 2]
        seqs.append([bos] + ids + [eos])
    width = max(len(s) for s in seqs)
    inputs = torch.full((len(idxs), width - 1), pad, dtype=torch.long)
    targets = torch.full((len(idxs), width - 1), pad, dtype=torch.long)
    for r, s in enumerate(seqs):
        inputs[r, : len(s) - 1] = torch.tensor(s[:-1])
        targets[r, : len(s) - 1] = torch.tensor(s[1:])
    canvases = data.canvases[torch.tensor(idxs, dtype=torch.long)]
    return canvases, inputs, targets


def sequence_loss(logits: torch.Tensor, targets: torch.Tensor, pad_id: int) -> torch.Tensor:
    """Mean cross-entropy over non-pad positions; finite even when all-pad."""
    flat = logits.reshape(-1, logits.shape[-1])
    tgt = targets.reshape(-1)
    mask = tgt != pad_id
    n = int(mask.sum())
    if n == 0:
        return logits.sum() * 0.0
    losses = torch.nn.functional.cross_entropy(flat, tgt, reduction="none")
    return (losses * mask).sum() / n


def _validation_loss(
    model: Recognizer, data: LineDataset, table: MergeTable, batch_size: int
) -> float:
    pad = table.special_id("<pad>")
    total, count = 0.0, 0
    with torch.no_grad():
        for lo in range(0, len(data), batch_size):
            idxs = list(range(lo, min(lo + batch_size, len(data))))
            canvases, inputs, targets = make_batch(
                data, idxs, table, model.cfg.max_decode_len
            )
            logits = model(canvases, inputs)
            mask = targets != pad
            losses = torch.nn.functional.cross_entropy(
                logits.reshape(-1, logits.shape[-1]),
                targets.reshape(-1),
                reduction="none",
            )
            total += float((losses * mask.reshape(-1)).sum())
            count += int(mask.sum())
    return total / max(count, 1)


def evaluate(
    model: Recognizer,
    data: LineDataset,
    table: MergeTable,
    decode_cfg: DecodeConfig,
    collapse_ws: bool = True,
) -> tuple[float, list[EvalRecord]]:
    """Beam-decode every line and score it.

    Whitespace collapsing (when enabled) is applied to both sides before
    records are built, so stored texts/counts already reflect it and an
    identity-policy recomputation reproduces the stored CER exactly. A line
    whose decode raises is recorded with an empty prediction (CER 1.0).
    """
    bos, eos = table.special_id("<s>"), table.special_id("</s>")
    records = []
    model.eval()
    with torch.no_grad():
        for i in range(len(data)):
            reference = data.texts[i]
            error = None
            try:
                memory, _ = model.encode(data.canvases[i : i + 1])
                result = beam_search(model, memory, bos, eos, decode_cfg)
                prediction = table.decode(result.text_tokens)
            except Exception as e:  # worst-case CER, run continues
                prediction, error = "", f"{type(e).__name__}: {e}"
            if collapse_ws:
                reference = collapse_whitespace(reference)
                prediction = collapse_whitespace(prediction)
            record = score_pair(data.ids[i], reference, prediction, image=data.ids[i])
            record.error = error
            records.append(record)
    return metrics_mod.corpus_cer(records), records


def train_stage(
    data: tuple[LineDataset, LineDataset],
    model: Recognizer,
    cfg: StageConfig,
    table: MergeTable,
) -> TrainState:
    """Run one stage; the model is left holding the best snapshot's weights."""
    train_data, val_data = data
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (decay if p.dim() >= 2 else no_decay).append(p)
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.peak_lr,
    )
    pad = table.special_id("<pad>")
    state = TrainState()
    bad_evals = 0
    rng = torch.Generator().manual_seed(cfg.seed)
    order: list[int] = []

    model.train()
    for step in range(1, cfg.max_steps + 1):
        if len(order) < cfg.batch_size:
            order = torch.randperm(len(train_data), generator=rng).tolist() + order
        idxs = [order.pop() for _ in range(min(cfg.batch_size, len(order)))]
        canvases, inputs, targets = make_batch(
            train_data, idxs, table, model.cfg.max_decode_len
        )
        lr = lr_at(step, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.zero_grad()
        loss = sequence_loss(model(canvases, inputs), targets, pad)
        if not torch.isfinite(loss):
            state.step = step
            err = TrainingError(f"training loss diverged at step {step}")
            err.state = state  # carries the last finite eval snapshot
            raise err
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        state.step = step

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            model.eval()
            val_loss = _validation_loss(model, val_data, table, cfg.batch_size)
            val_cer = None
            if cfg.track_cer or cfg.stop_metric == "val_cer":
                val_cer, _ = evaluate(model, val_data, table, cfg.eval_decode)
            model.train()
            row = {
                "step": step,
                "train_loss": float(loss.detach()),
                "val_loss": val_loss,
                "val_cer": val_cer,
                "lr": lr,
            }
            state.record(row)
            state.last_finite_state = copy.deepcopy(model.state_dict())

            current = val_loss if cfg.stop_metric == "val_loss" else val_cer
            if current is None:
                raise TrainingError("stop metric was not computed")
            if current < state.best_metric:
                state.best_metric = current
                state.best_step = step
                state.best_state = copy.deepcopy(model.state_dict())
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals > cfg.patience:
                    state.stopped_early = True
                    break

    if state.best_state is not None:
        model.load_state_dict(state.best_state)
    model.eval()
    return state


def write_history_csv(state: TrainState, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f, fieldnames=["step", "train_loss", "val_loss", "val_cer", "lr"]
        )
        writer.writeheader()
        for row in state.history:
            writer.writerow(row)


def write_run_config(path: str | Path, **sections) -> None:
    doc = {}
    for key, value in sections.items():
        doc[key] = value if not hasattr(value, "to_json") else value.to_json()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
