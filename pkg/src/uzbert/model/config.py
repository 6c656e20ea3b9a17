from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Encoder hyperparameters. Defaults are BERT-base with a 30K vocabulary."""

    num_layers: int = 12
    hidden_size: int = 768
    num_heads: int = 12
    ffn_size: int | None = None
    vocab_size: int = 30_000
    max_positions: int = 512
    segment_types: int = 2
    dropout_rate: float = 0.1
    activation: str = "gelu"
    initializer_stddev: float = 0.02

    def __post_init__(self):
        if self.ffn_size is None:
            object.__setattr__(self, "ffn_size", 4 * self.hidden_size)
        for name in ("hidden_size", "num_heads", "ffn_size", "vocab_size", "max_positions", "segment_types"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.hidden_size % self.num_heads:
            raise ConfigError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.activation != "gelu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.initializer_stddev <= 0:
            raise ConfigError("initializer_stddev must be positive")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        return cls(**data)
