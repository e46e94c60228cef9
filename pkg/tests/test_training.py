import math

import pytest
import torch

from arabic_htr import synth
from arabic_htr.errors import ConfigurationError, TrainingError, ValidationError
from arabic_htr.imaging import LineImage
from arabic_htr.model import DecodeConfig, ModelConfig, build_model
from arabic_htr.tokenizer import train as train_table
from arabic_htr.training import (
    LineDataset,
    StageConfig,
    evaluate,
    lr_at,
    make_batch,
    sequence_loss,
    train_stage,
)

torch.set_num_threads(2)


class TestLrSchedule:
    CFG = StageConfig.stage1(peak_lr=1e-3, warmup_steps=1000)

    def test_closed_form_points(self):
        cfg = self.CFG
        assert lr_at(1000, cfg) == pytest.approx(1e-3)
        assert lr_at(500, cfg) == pytest.approx(5e-4)
        assert lr_at(4000, cfg) == pytest.approx(5e-4)  # sqrt(1/4)
        assert lr_at(1, cfg) == pytest.approx(1e-6)
        assert lr_at(2000, cfg) == pytest.approx(1e-3 / math.sqrt(2))

    def test_continuous_at_warmup(self):
        cfg = self.CFG
        w = cfg.warmup_steps
        assert lr_at(w - 1, cfg) <= lr_at(w, cfg)
        assert abs(lr_at(w + 1, cfg) - lr_at(w, cfg)) < 1e-6

    def test_strictly_decreasing_after_warmup(self):
        cfg = self.CFG
        values = [lr_at(s, cfg) for s in range(1000, 1400, 7)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_step_zero_rejected(self):
        with pytest.raises(ValidationError):
            lr_at(0, self.CFG)


class TestStageConfig:
    def test_stage_defaults_match_schedule_contract(self):
        s1 = StageConfig.stage1()
        assert (s1.peak_lr, s1.warmup_steps, s1.stop_metric) == (5e-5, 20_000, "val_loss")
        s2 = StageConfig.stage2()
        assert (s2.peak_lr, s2.warmup_steps, s2.stop_metric) == (1e-4, 2_000, "val_cer")

    def test_bad_stage_rejected(self):
        with pytest.raises(ConfigurationError):
            StageConfig(stage=3)


def tiny_setup(n_lines=10, seed=0, corpus_words=60):
    pools = synth.default_pools(seed=seed, corpus_words=corpus_words)
    items = []
    texts = []
    for i in range(n_lines):
        spec = synth.sample_spec(seed, i, pools)
        spec.words = spec.words[:3]
        spec.word_count = len(spec.words)
        img, gt = synth.render(spec, pools)
        items.append((f"line{i}", img, gt))
        texts.append(gt)
    table = train_table("\n".join(texts), vocab_size=460)
    cfg = ModelConfig(
        vocab_size=table.vocab_size,
        d_model=32,
        n_heads=2,
        n_enc_layers=1,
        n_dec_layers=1,
        max_decode_len=48,
        mlp_ratio=2,
    )
    model = build_model(cfg, seed=seed)
    data = LineDataset.from_items(items, table)
    return model, data, table


class TestBatching:
    def test_batch_shapes_and_padding(self):
        _, data, table = tiny_setup(4)
        canvases, inputs, targets = make_batch(data, [0, 1, 2], table, 48)
        assert canvases.shape[0] == 3 and canvases.shape[1:] == (384, 384)
        assert inputs.shape == targets.shape
        bos, eos, pad = (
            table.special_id("<s>"),
            table.special_id("</s>"),
            table.special_id("<pad>"),
        )
        assert (inputs[:, 0] == bos).all()
        for r in range(3):
            row = targets[r].tolist()
            assert eos in row
            tail = row[row.index(eos) + 1 :]
            assert all(t == pad for t in tail)

    def test_all_pad_loss_is_finite_with_zero_grad(self):
        model, data, table = tiny_setup(2)
        pad = table.special_id("<pad>")
        canvases, inputs, _ = make_batch(data, [0], table, 48)
        targets = torch.full_like(inputs, pad)
        logits = model(canvases, inputs)
        loss = sequence_loss(logits, targets, pad)
        assert torch.isfinite(loss)
        loss.backward()
        for p in model.parameters():
            assert torch.all(p.grad == 0)

    @torch.no_grad()
    def test_pad_positions_excluded_from_loss(self):
        model, data, table = tiny_setup(2)
        pad = table.special_id("<pad>")
        canvases, inputs, targets = make_batch(data, [0, 1], table, 48)
        base = sequence_loss(model(canvases, inputs), targets, pad)
        # corrupting a padded target position must not change the loss
        corrupted = targets.clone()
        changed = False
        for r in range(corrupted.shape[0]):
            for c in range(corrupted.shape[1]):
                if corrupted[r, c] == pad:
                    corrupted[r, c] = 0
                    changed = True
                    break
            if changed:
                break
        assert changed
        after = sequence_loss(model(canvases, inputs), corrupted, pad)
        assert float(base) != float(after)  # position now counted
        restored = sequence_loss(model(canvases, inputs), targets, pad)
        assert float(base) == float(restored)


class TestEvaluate:
    def test_perfect_predictions_zero_cer(self):
        model, data, table = tiny_setup(3)
        # overfit-free shortcut: score the references against themselves via
        # a stub that decodes to ground truth is not available, so check the
        # aggregation path directly instead
        from arabic_htr.metrics import corpus_cer, score_pair

        records = [score_pair(i, t, t) for i, t in zip(data.ids, data.texts)]
        assert corpus_cer(records) == 0.0

    def test_decode_failure_records_worst_case(self):
        model, data, table = tiny_setup(2)
        with torch.no_grad():  # poison the encoder so every item raises
            model.enc_layers[0].attn.q_proj.weight.fill_(float("nan"))
        cer, records = evaluate(model, data, table, DecodeConfig(beam_width=1, max_len=4))
        assert cer == 1.0
        assert all(r.error is not None and r.prediction == "" for r in records)

    def test_mean_equals_length_weighted_aggregate(self):
        model, data, table = tiny_setup(3)
        cer, records = evaluate(model, data, table, DecodeConfig(beam_width=1, max_len=8))
        num = sum(r.S + r.D + r.I for r in records)
        den = sum(r.N for r in records)
        assert cer == num / den


class TestTrainStage:
    def test_patience_zero_stops_at_first_non_improvement(self):
        model, data, table = tiny_setup(4, seed=1)
        cfg = StageConfig.stage1(
            peak_lr=0.0,  # loss cannot improve
            warmup_steps=10,
            batch_size=2,
            eval_every=2,
            max_steps=40,
            patience=0,
            track_cer=False,
            seed=1,
        )
        state = train_stage((data, data), model, cfg, table)
        assert state.stopped_early
        assert state.step == 4  # best at first eval, stop at second

    def test_best_snapshot_never_worse_than_history(self):
        model, data, table = tiny_setup(6, seed=2)
        cfg = StageConfig.stage1(
            peak_lr=3e-4,
            warmup_steps=20,
            batch_size=3,
            eval_every=5,
            max_steps=60,
            patience=2,
            track_cer=False,
            seed=2,
        )
        state = train_stage((data, data), model, cfg, table)
        losses = [row["val_loss"] for row in state.history]
        assert state.best_metric == min(losses)
        assert state.best_step == state.best_step_for("val_loss")

    def test_divergence_aborts_with_error(self):
        model, data, table = tiny_setup(4, seed=3)
        with torch.no_grad():  # poison one weight to blow up the forward pass
            model.out_proj.weight.fill_(float("nan"))
        cfg = StageConfig.stage1(
            warmup_steps=5, batch_size=2, eval_every=50, max_steps=10, seed=3
        )
        with pytest.raises(TrainingError):
            train_stage((data, data), model, cfg, table)

    def test_stage2_tracks_both_metrics(self):
        model, data, table = tiny_setup(6, seed=4)
        cfg = StageConfig.stage2(
            peak_lr=3e-4,
            warmup_steps=20,
            batch_size=3,
            eval_every=10,
            max_steps=30,
            patience=5,
            seed=4,
            eval_decode=DecodeConfig(beam_width=1, max_len=24),
        )
        state = train_stage((data, data), model, cfg, table)
        for row in state.history:
            assert row["val_loss"] is not None
            assert row["val_cer"] is not None
