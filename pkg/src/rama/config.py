"""Model and training configuration, loaded from a single JSON document."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

VALID_MODALITIES = ("DCE", "ADC")


def _from_dict(cls, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__}: expected a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    return cls(**d)


@dataclass
class ModelConfig:
    input_dims: tuple[int, int, int] = (32, 32, 16)  # (W, H, D)
    in_channels: int = 4
    widths: tuple[int, ...] = (16, 32, 64)
    norm_groups: int = 8
    d_dim: int = 64
    heads: int = 4
    layers: int = 4
    mlp_ratio: int = 4
    proj_dim: int = 64
    rad_hidden: int = 64
    n_radiomics: int = 25
    head: str = "cls_linear"
    use_transformer: bool = True
    use_guidance: bool = True
    modalities: tuple[str, ...] = ("DCE", "ADC")
    concat_radiomics: bool = False
    use_pos_embed: bool = True

    def __post_init__(self):
        self.input_dims = tuple(int(v) for v in self.input_dims)
        self.widths = tuple(int(v) for v in self.widths)
        self.modalities = tuple(self.modalities)
        self.validate()

    def validate(self):
        if len(self.input_dims) != 3 or any(v <= 0 or v % 8 for v in self.input_dims):
            raise ConfigError(f"input_dims must be three positive multiples of 8, got {self.input_dims}")
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ConfigError(f"widths must list three positive stage widths, got {self.widths}")
        if self.d_dim % self.heads:
            raise ConfigError(f"d_dim {self.d_dim} not divisible by heads {self.heads}")
        if not self.modalities or len(set(self.modalities)) != len(self.modalities) \
                or any(m not in VALID_MODALITIES for m in self.modalities):
            raise ConfigError(f"modalities must be a non-empty subset of {VALID_MODALITIES}")
        if self.head != "cls_linear":
            raise ConfigError(f"unknown head type {self.head!r}")
        if self.layers < 0 or self.norm_groups < 1:
            raise ConfigError("layers must be >= 0 and norm_groups >= 1")

    @property
    def encoder_width(self) -> int:
        return self.widths[-1]

    @property
    def grid(self) -> tuple[int, int, int]:
        """Feature grid as (d, h, w)."""
        w, h, d = self.input_dims
        return (d // 8, h // 8, w // 8)

    @property
    def n_patches(self) -> int:
        d, h, w = self.grid
        return d * h * w

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return _from_dict(cls, d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 30
    folds: int = 5
    seed: int = 0
    lam: float = 1.0
    temperature: float = 0.1
    guidance_schedule: str = "joint"  # or "pretrain"
    pretrain_epochs: int = 5
    n_levels: int = 32
    num_threads: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.validate()

    def validate(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.model.use_guidance and self.batch_size < 2:
            raise ConfigError("guidance needs batch_size >= 2 (the contrastive loss needs a negative)")
        if not self.temperature > 0 or self.lam < 0:
            raise ConfigError("temperature must be > 0 and lam >= 0")
        if self.guidance_schedule not in ("joint", "pretrain"):
            raise ConfigError(f"unknown guidance_schedule {self.guidance_schedule!r}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("betas must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return _from_dict(cls, d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"]["input_dims"] = list(self.model.input_dims)
        d["model"]["widths"] = list(self.model.widths)
        d["model"]["modalities"] = list(self.model.modalities)
        return d

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)
