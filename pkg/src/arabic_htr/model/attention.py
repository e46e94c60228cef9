"""Attention attribution: rollout over encoder layers and cross-attention
maps unpacked to strip coordinates for overlay on the original line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..imaging import CANVAS_SIZE, PATCH_SIZE
from .network import AttentionTrace


def _mixed_layer(attn: np.ndarray) -> np.ndarray:
    """Head-average one layer, mix with identity for the residual path,
    and renormalize rows: 0.5*A + 0.5*I."""
    a = attn.mean(axis=0)
    a = 0.5 * a + 0.5 * np.eye(a.shape[0], dtype=a.dtype)
    return a / a.sum(axis=1, keepdims=True)


def rollout_matrix(trace: AttentionTrace) -> np.ndarray:
    """Cumulative product of residual-mixed encoder attention, layer 1 first."""
    if trace.encoder_self.size == 0:
        raise ValidationError("trace carries no encoder attention")
    s = trace.encoder_self.shape[-1]
    rollout = np.eye(s, dtype=np.float64)
    for layer in trace.encoder_self:
        rollout = _mixed_layer(layer.astype(np.float64)) @ rollout
    return rollout


def attention_rollout(trace: AttentionTrace, patch_index: int) -> np.ndarray:
    """Rollout heatmap for one patch as the (grid, grid) patch map.

    The full row (class token included) sums to 1; the returned grid drops
    the class-token column. Row 0 of ``rollout_matrix`` exposes the class
    token itself.
    """
    row = attention_rollout_row(trace, patch_index)
    grid = int(math.isqrt(row.shape[0] - 1))
    return row[1:].reshape(grid, grid)


def attention_rollout_row(trace: AttentionTrace, patch_index: int) -> np.ndarray:
    matrix = rollout_matrix(trace)
    n_patches = matrix.shape[0] - 1
    if not 0 <= patch_index < n_patches:
        raise ValidationError(f"patch index {patch_index} out of range [0, {n_patches})")
    return matrix[patch_index + 1]


def cross_attention_row(
    trace: AttentionTrace, token_position: int, layer: int | None = None
) -> np.ndarray:
    """Head-averaged cross-attention row for one decoder position.

    Averages over all layers by default; a single layer can be selected.
    """
    if trace.decoder_cross.size == 0:
        raise ValidationError("trace carries no cross-attention")
    n_layers, _, t, _ = trace.decoder_cross.shape
    if not 0 <= token_position < t:
        raise ValidationError(f"token position {token_position} out of range [0, {t})")
    if layer is None:
        per_layer = trace.decoder_cross.mean(axis=1)  # head average
        return per_layer[:, token_position, :].mean(axis=0)
    if not 0 <= layer < n_layers:
        raise ValidationError(f"layer {layer} out of range [0, {n_layers})")
    return trace.decoder_cross[layer].mean(axis=0)[token_position]


def cross_attention_map(
    trace: AttentionTrace, token_position: int, layer: int | None = None
) -> np.ndarray:
    """(grid, grid) patch map for one decoded token (class column dropped)."""
    row = cross_attention_row(trace, token_position, layer)
    grid = int(math.isqrt(row.shape[0] - 1))
    return row[1:].reshape(grid, grid)


# --- unpacking to strip coordinates ------------------------------------------


@dataclass
class StripHeatmap:
    """Patch-resolution heatmap in strip coordinates (original orientation).

    The rightmost packed patch column can be partial; after mirroring it sits
    at the left edge, so cell c covers pixels [x_offset_px + c*16, ...+16)
    clipped to the strip. ``x_offset_px`` is 0 or negative.
    """

    values: np.ndarray       # (rows of patches, strip patch columns), mirrored
    strip_width_px: int
    strip_height_px: int

    @property
    def pixel_shape(self) -> tuple[int, int]:
        return (self.strip_height_px, self.strip_width_px)

    @property
    def x_offset_px(self) -> int:
        return self.strip_width_px - PATCH_SIZE * self.values.shape[1]

    def to_pixels(self) -> np.ndarray:
        """Nearest-neighbor upsample to exact strip pixel dimensions."""
        packed = self.values[:, ::-1]  # restore packed orientation
        up = np.repeat(np.repeat(packed, PATCH_SIZE, axis=0), PATCH_SIZE, axis=1)
        up = up[: self.strip_height_px, : self.strip_width_px]
        return up[:, ::-1].copy()


def patch_map_to_strip(
    patch_map: np.ndarray,
    strip_width_px: int,
    rows_used: int,
    strip_height_px: int = 64,
) -> StripHeatmap:
    """Rearrange a canvas patch map into the flipped-back strip layout.

    Canvas block-row k holds strip columns [384k, 384k+384); the strip was
    horizontally flipped before packing, so columns are mirrored back.
    """
    grid = patch_map.shape[0]
    if patch_map.shape != (grid, grid) or grid * PATCH_SIZE != CANVAS_SIZE:
        raise ValidationError("patch map must cover the full canvas grid")
    patches_per_block = strip_height_px // PATCH_SIZE
    n_cols = math.ceil(strip_width_px / PATCH_SIZE)
    cols_per_row = CANVAS_SIZE // PATCH_SIZE
    out = np.zeros((patches_per_block, n_cols), dtype=patch_map.dtype)
    for k in range(rows_used):
        block_rows = patch_map[k * patches_per_block : (k + 1) * patches_per_block]
        lo = k * cols_per_row
        hi = min((k + 1) * cols_per_row, n_cols)
        out[:, lo:hi] = block_rows[:, : hi - lo]
    return StripHeatmap(
        values=out[:, ::-1].copy(),
        strip_width_px=strip_width_px,
        strip_height_px=strip_height_px,
    )
