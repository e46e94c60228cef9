"""Model and decoding configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from ..errors import ConfigurationError


@dataclass
class ModelConfig:
    vocab_size: int
    image_size: int = 384
    patch_size: int = 16
    d_model: int = 128
    n_heads: int = 4
    n_enc_layers: int = 4
    n_dec_layers: int = 4
    max_decode_len: int = 128
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError("image_size must be divisible by patch_size")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if self.vocab_size < 1 or self.max_decode_len < 1:
            raise ConfigurationError("vocab_size and max_decode_len must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def seq_len(self) -> int:
        """Encoder sequence length: patches plus the class token."""
        return self.n_patches + 1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


@dataclass
class DecodeConfig:
    beam_width: int = 3
    length_penalty: float = 0.5
    max_len: int = 128

    def __post_init__(self):
        if self.beam_width < 1:
            raise ConfigurationError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ConfigurationError("max_len must be >= 1")
