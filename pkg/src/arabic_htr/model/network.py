"""Pre-norm transformer encoder-decoder over blocked line images.

Attention is written out explicitly (projections, scaled dot product,
softmax) so per-layer attention tensors can be captured for diagnostics.
The grayscale canvas is replicated to three channels at the patch boundary;
everything upstream stays single-channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import NumericError, ValidationError
from ..imaging import BlockCanvas
from .config import ModelConfig


@dataclass
class AttentionTrace:
    """Per-layer attention tensors captured during one forward pass."""

    encoder_self: np.ndarray  # (layers, heads, S, S)
    decoder_self: np.ndarray  # (layers, heads, T, T)
    decoder_cross: np.ndarray  # (layers, heads, T, S)

    def assert_row_stochastic(self, tol: float = 1e-6) -> None:
        for name, t in (
            ("encoder_self", self.encoder_self),
            ("decoder_self", self.decoder_self),
            ("decoder_cross", self.decoder_cross),
        ):
            if t.size == 0:
                continue
            sums = t.sum(axis=-1)
            if np.abs(sums - 1.0).max() > tol or t.min() < 0:
                raise ValidationError(f"{name} rows are not stochastic")


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, query, memory, mask=None):
        """mask: boolean (Tq, Tk), True = blocked. Returns (out, attn)."""
        b, tq, _ = query.shape
        tk = memory.shape[1]
        q = self.q_proj(query).view(b, tq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k_proj(memory).view(b, tk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v_proj(memory).view(b, tk, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / self.d_head**0.5
        if mask is not None:
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, tq, -1)
        return self.out_proj(out), attn


class Mlp(nn.Module):
    def __init__(self, d_model: int, ratio: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_model * ratio)
        self.fc2 = nn.Linear(d_model * ratio, d_model)
        self.act = nn.GELU()

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.mlp = Mlp(cfg.d_model, cfg.mlp_ratio)

    def forward(self, x):
        h = self.norm1(x)
        attn_out, attn = self.attn(h, h)
        x = x + attn_out
        x = x + self.mlp(self.norm2(x))
        return x, attn


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.mlp = Mlp(cfg.d_model, cfg.mlp_ratio)

    def forward(self, x, memory, causal_mask):
        h = self.norm1(x)
        self_out, self_attn = self.self_attn(h, h, mask=causal_mask)
        x = x + self_out
        h = self.norm2(x)
        cross_out, cross_attn = self.cross_attn(h, memory)
        x = x + cross_out
        x = x + self.mlp(self.norm3(x))
        return x, self_attn, cross_attn


class Recognizer(nn.Module):
    """Patch-embedding encoder + masked text decoder + vocab projection."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        patch_dim = 3 * cfg.patch_size * cfg.patch_size
        self.patch_proj = nn.Linear(patch_dim, cfg.d_model)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.d_model))
        self.enc_pos = nn.Parameter(torch.zeros(1, cfg.seq_len, cfg.d_model))
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.enc_norm = nn.LayerNorm(cfg.d_model)

        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.dec_pos = nn.Parameter(torch.zeros(1, cfg.max_decode_len, cfg.d_model))
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.out_proj = nn.Linear(cfg.d_model, cfg.vocab_size)

    # -- image side ------------------------------------------------------------

    def patchify(self, canvases: torch.Tensor) -> torch.Tensor:
        """(B, H, W) grayscale -> (B, N, 3*P*P) with channel replication."""
        b, h, w = canvases.shape
        if h != self.cfg.image_size or w != self.cfg.image_size:
            raise ValidationError(
                f"canvas must be {self.cfg.image_size}x{self.cfg.image_size}, got {h}x{w}"
            )
        p = self.cfg.patch_size
        g = self.cfg.grid
        x = canvases.view(b, g, p, g, p).permute(0, 1, 3, 2, 4).reshape(b, g * g, p * p)
        return x.repeat(1, 1, 3)

    def patch_embed(self, canvases: torch.Tensor) -> torch.Tensor:
        """(B, H, W) -> (B, N+1, d): projected patches, class token, positions."""
        patches = self.patch_proj(self.patchify(canvases))
        b = patches.shape[0]
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, patches], dim=1)
        return x + self.enc_pos

    def encode(self, canvases: torch.Tensor, collect_attention: bool = False):
        """(B, H, W) -> memory (B, N+1, d) and optional per-layer attention."""
        x = self.patch_embed(canvases)
        attns = []
        for i, layer in enumerate(self.enc_layers):
            x, attn = layer(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activation in encoder layer {i}")
            if collect_attention:
                attns.append(attn)
        return self.enc_norm(x), attns

    # -- text side ---------------------------------------------------------------

    def decode_logits(
        self,
        memory: torch.Tensor,
        tokens: torch.Tensor,
        collect_attention: bool = False,
    ):
        """Teacher-forced logits at every position of ``tokens`` (B, T, vocab)."""
        b, t = tokens.shape
        if t > self.cfg.max_decode_len:
            raise ValidationError(
                f"sequence length {t} exceeds max_decode_len {self.cfg.max_decode_len}"
            )
        x = self.tok_emb(tokens) + self.dec_pos[:, :t]
        causal = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=tokens.device), diagonal=1
        )
        self_attns, cross_attns = [], []
        for i, layer in enumerate(self.dec_layers):
            x, sa, ca = layer(x, memory, causal)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activation in decoder layer {i}")
            if collect_attention:
                self_attns.append(sa)
                cross_attns.append(ca)
        logits = self.out_proj(self.dec_norm(x))
        return logits, self_attns, cross_attns

    def forward(self, canvases: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        memory, _ = self.encode(canvases)
        logits, _, _ = self.decode_logits(memory, tokens)
        return logits

    def decode_step(self, memory: torch.Tensor, prefix: torch.Tensor) -> torch.Tensor:
        """Next-token probability distribution after ``prefix`` (B, vocab)."""
        if prefix.shape[1] >= self.cfg.max_decode_len:
            raise ValidationError("prefix has reached max_decode_len")
        logits, _, _ = self.decode_logits(memory, prefix)
        return torch.softmax(logits[:, -1, :], dim=-1)

    # -- diagnostics ---------------------------------------------------------------

    def trace_attention(
        self, canvases: torch.Tensor, tokens: torch.Tensor
    ) -> AttentionTrace:
        """Single-item attention trace; inputs must have batch size 1."""
        if canvases.shape[0] != 1 or tokens.shape[0] != 1:
            raise ValidationError("attention tracing expects batch size 1")
        with torch.no_grad():
            memory, enc = self.encode(canvases, collect_attention=True)
            _, dec_self, dec_cross = self.decode_logits(
                memory, tokens, collect_attention=True
            )
        stack = lambda ts: np.stack([t[0].cpu().numpy() for t in ts]) if ts else np.empty((0,))
        return AttentionTrace(
            encoder_self=stack(enc),
            decoder_self=stack(dec_self),
            decoder_cross=stack(dec_cross),
        )


def build_model(cfg: ModelConfig, seed: int = 0) -> Recognizer:
    """Deterministically initialized model (trunc-normal weights, zero biases)."""
    gen = torch.Generator().manual_seed(seed)
    model = Recognizer(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() >= 2 or name.endswith(("cls_token", "enc_pos", "dec_pos")):
                p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
            elif "norm" in name and name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()
    return model


def canvases_to_tensor(canvases: list[BlockCanvas], dtype=torch.float32) -> torch.Tensor:
    return torch.stack([torch.from_numpy(c.pixels).to(dtype) for c in canvases])
