from .attention import (
    StripHeatmap,
    attention_rollout,
    attention_rollout_row,
    cross_attention_map,
    cross_attention_row,
    patch_map_to_strip,
    rollout_matrix,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DecodeConfig, ModelConfig
from .decoding import BeamResult, beam_search, greedy_decode
from .network import AttentionTrace, Recognizer, build_model, canvases_to_tensor

__all__ = [
    "AttentionTrace",
    "BeamResult",
    "DecodeConfig",
    "ModelConfig",
    "Recognizer",
    "StripHeatmap",
    "attention_rollout",
    "attention_rollout_row",
    "beam_search",
    "build_model",
    "canvases_to_tensor",
    "cross_attention_map",
    "cross_attention_row",
    "greedy_decode",
    "load_checkpoint",
    "patch_map_to_strip",
    "rollout_matrix",
    "save_checkpoint",
]
