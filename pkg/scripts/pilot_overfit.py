"""Pilot run for the end-to-end overfit check: sizes, seeds, and runtime."""

import sys
import tempfile
import time

import torch

from arabic_htr import synth
from arabic_htr.model import DecodeConfig, ModelConfig, build_model
from arabic_htr.tokenizer import train as train_table
from arabic_htr.training import StageConfig, evaluate, load_split, train_stage

torch.set_num_threads(2)


def main(seed=42, corpus_words=60, d_model=48, dec_layers=1, batch=16,
         s2_lr=1.5e-3, s2_warmup=100, s2_steps=900):
    t0 = time.time()
    pools = synth.default_pools(seed=seed, corpus_words=corpus_words)
    with tempfile.TemporaryDirectory() as td:
        manifest = synth.generate_dataset(
            seed, 36, pools, td, split_ratios=(0.88, 0.12, 0.0)
        )
        items = synth.load_manifest(manifest)
        train_texts = [r["text"] for r in items if r["split"] == "train"]
        val_texts = [r["text"] for r in items if r["split"] == "val"]
        train_words = {w for t in train_texts for w in t.split()}
        val_words = {w for t in val_texts for w in t.split()}
        print(f"train={len(train_texts)} val={len(val_texts)} "
              f"val-word coverage={len(val_words & train_words)}/{len(val_words)}")
        table = train_table("\n".join(train_texts), vocab_size=512)

        cfg = ModelConfig(
            vocab_size=table.vocab_size, d_model=d_model, n_heads=4,
            n_enc_layers=2, n_dec_layers=dec_layers, max_decode_len=56, mlp_ratio=2,
        )
        model = build_model(cfg, seed=seed)
        train_data = load_split(manifest, "train", table)
        val_data = load_split(manifest, "val", table)

        s1 = StageConfig.stage1(
            batch_size=batch, peak_lr=1e-3, warmup_steps=60, eval_every=40,
            max_steps=200, patience=2, track_cer=False, seed=seed,
        )
        st1 = train_stage((train_data, val_data), model, s1, table)
        print(f"[{time.time()-t0:6.1f}s] stage1: steps={st1.step} best_loss={st1.best_metric:.4f} @ {st1.best_step}")

        s2 = StageConfig.stage2(
            batch_size=batch, peak_lr=s2_lr, warmup_steps=s2_warmup, eval_every=30,
            max_steps=s2_steps, patience=10, seed=seed + 1,
            eval_decode=DecodeConfig(beam_width=1, max_len=48),
        )
        st2 = train_stage((train_data, val_data), model, s2, table)
        best_loss_step = st2.best_step_for("val_loss")
        best_cer_step = st2.best_step_for("val_cer")
        print(f"[{time.time()-t0:6.1f}s] stage2: steps={st2.step} best_cer={st2.best_metric:.4f}")
        print(f"  best val_loss step={best_loss_step}  best val_cer step={best_cer_step}  ordered={best_cer_step > best_loss_step}")
        for row in st2.history:
            print(f"    step {row['step']:5d} train {row['train_loss']:.4f} val {row['val_loss']:.4f} cer {row['val_cer']:.4f}")

        train_cer, _ = evaluate(model, train_data, table, DecodeConfig(beam_width=3, max_len=48))
        print(f"[{time.time()-t0:6.1f}s] final train CER = {train_cer:.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 42)
