from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseConfig:
    batch_size: int
    sequence_length: int
    epochs: int

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise TrainConfigError(f"invalid phase {self}")
        if self.sequence_length < 5:
            raise TrainConfigError("sequence_length must be at least 5")


@dataclass(frozen=True)
class MaskingPolicy:
    select_rate: float = 0.15
    mask_fraction: float = 0.8
    random_fraction: float = 0.1
    keep_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.select_rate <= 1.0:
            raise TrainConfigError(f"select_rate must be in [0, 1], got {self.select_rate}")
        parts = (self.mask_fraction, self.random_fraction, self.keep_fraction)
        if min(parts) < 0 or abs(sum(parts) - 1.0) > 1e-9:
            raise TrainConfigError(f"mask/random/keep fractions must be >= 0 and sum to 1, got {parts}")


@dataclass(frozen=True)
class TrainConfig:
    """Two-phase pretraining schedule. Defaults follow the full-scale run."""

    phase1: PhaseConfig = PhaseConfig(batch_size=300, sequence_length=128, epochs=36)
    phase2: PhaseConfig = PhaseConfig(batch_size=50, sequence_length=512, epochs=4)
    learning_rate: float = 1e-4
    warmup_steps: int = 10_000
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-6
    max_grad_norm: float = 1.0
    rng_seed: int = 0
    checkpoint_every_n_steps: int = 0
    nsp_positive_rate: float = 0.5
    masking: MaskingPolicy = field(default_factory=MaskingPolicy)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainConfigError("learning_rate must be positive")
        if self.warmup_steps < 0 or self.checkpoint_every_n_steps < 0:
            raise TrainConfigError("warmup_steps and checkpoint_every_n_steps must be >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise TrainConfigError("adam betas must be in [0, 1)")
        if self.adam_epsilon <= 0 or self.weight_decay < 0 or self.max_grad_norm < 0:
            raise TrainConfigError("adam_epsilon must be positive; weight_decay, max_grad_norm >= 0")
        if not 0.0 <= self.nsp_positive_rate <= 1.0:
            raise TrainConfigError("nsp_positive_rate must be in [0, 1]")

    @property
    def phases(self) -> tuple[PhaseConfig, PhaseConfig]:
        return (self.phase1, self.phase2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        _reject_unknown(cls, data, "train")
        for key in ("phase1", "phase2"):
            if key in data:
                _reject_unknown(PhaseConfig, data[key], key)
                data[key] = PhaseConfig(**data[key])
        if "masking" in data:
            _reject_unknown(MaskingPolicy, data["masking"], "masking")
            data["masking"] = MaskingPolicy(**data["masking"])
        return cls(**data)


def _reject_unknown(cls, data: dict, where: str) -> None:
    if not isinstance(data, dict):
        raise TrainConfigError(f"{where}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise TrainConfigError(f"{where}: unknown keys {unknown}")
