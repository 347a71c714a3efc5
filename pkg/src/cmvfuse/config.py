"""Training configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping

from .contrastive import ContrastiveConfig
from .exceptions import ConfigurationError

# (l_a, l_d, l_c, l_s) layer depths per benchmark
DEPTH_PRESETS = {
    "restaurant14": (1, 5, 3, 7),
    "laptop14": (8, 2, 6, 8),
    "twitter": (6, 6, 3, 6),
}

ALL_VIEWS = ("amr", "dep", "con", "sem", "kg")
ALL_LOSSES = ("syn", "amr", "kg")


@dataclass
class TrainConfig:
    """Every knob of a training run.

    ``views`` lists the enabled encoders (``kg`` is the knowledge branch of
    level 3); ``losses`` lists the enabled contrastive terms, so an empty
    tuple trains on cross-entropy alone.
    """

    l_a: int = 1
    l_d: int = 5
    l_c: int = 3
    l_s: int = 7
    hidden_dim: int = 16
    head_count: int = 4
    kg_dim: int = 100
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    views: tuple[str, ...] = ALL_VIEWS
    losses: tuple[str, ...] = ALL_LOSSES
    cross_modal: bool = True
    pooling: str = "mean"
    sem_top_p: int | None = None
    max_length: int = 100

    def __post_init__(self):
        self.views = tuple(self.views)
        self.losses = tuple(self.losses)
        if isinstance(self.contrastive, Mapping):
            self.contrastive = ContrastiveConfig(**self.contrastive)
        self.validate()

    def validate(self) -> None:
        if min(self.l_a, self.l_d, self.l_c, self.l_s) < 1:
            raise ConfigurationError("layer depths must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ConfigurationError("hidden_dim must be a positive even number")
        if self.head_count < 1 or (self.hidden_dim // 2) % self.head_count:
            raise ConfigurationError(
                f"head_count {self.head_count} must divide hidden_dim/2 = {self.hidden_dim // 2}"
            )
        if self.kg_dim < 1:
            raise ConfigurationError("kg_dim must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.pooling not in ("mean", "first"):
            raise ConfigurationError(f"pooling must be 'mean' or 'first', got {self.pooling!r}")
        bad = set(self.views) - set(ALL_VIEWS)
        if bad:
            raise ConfigurationError(f"unknown views {sorted(bad)}")
        bad = set(self.losses) - set(ALL_LOSSES)
        if bad:
            raise ConfigurationError(f"unknown losses {sorted(bad)}")
        if "sem" not in self.views and "amr" not in self.views and not (
            {"dep", "con"} & set(self.views)
        ):
            raise ConfigurationError("at least one graph view must be enabled")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "TrainConfig":
        l_a, l_d, l_c, l_s = DEPTH_PRESETS[name]
        return cls(l_a=l_a, l_d=l_d, l_c=l_c, l_s=l_s, **overrides)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["views"] = list(self.views)
        out["losses"] = list(self.losses)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def architecture(self) -> dict[str, Any]:
        """Fields that determine parameter shapes."""
        return {k: getattr(self, k) for k in
                ("l_a", "l_d", "l_c", "l_s", "hidden_dim", "head_count", "kg_dim")}
