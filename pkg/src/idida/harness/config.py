"""Training configuration and ablation modes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..dyngraph import LINK, NODE

FULL = "full"
NO_ENV = "no-env"
NO_INTERV = "no-interv"
NO_DISEN = "no-disen"
ABLATIONS = (FULL, NO_ENV, NO_INTERV, NO_DISEN)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.01
    weight_decay: float = 5e-7
    patience: int = 50
    lambda_do: float = 1e-2
    lambda_e: float = 1e-2
    s_interv: int | None = None
    k_env: int = 3
    hidden: int | None = None
    heads: int = 1
    layers: int = 2
    window: int | None = None
    d_te: int | None = None
    model_seed: int = 0
    sampling_seed: int = 0
    cluster_seed: int = 0
    eval_negative_seed: int = 0
    ablation: str = FULL
    task: str | None = None
    split: tuple[int, int, int] | None = None
    include_mixed_loss: bool = False
    kmeans_max_iter: int = 100

    def __post_init__(self) -> None:
        if self.split is not None:
            self.split = tuple(int(x) for x in self.split)
        self.validate()

    def validate(self) -> None:
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {', '.join(ABLATIONS)}")
        if self.lambda_do < 0 or self.lambda_e < 0:
            raise ConfigError("lambda_do and lambda_e must be non-negative")
        if self.task not in (None, LINK, NODE):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be >= 1")
        if self.k_env < 1:
            raise ConfigError("k_env must be >= 1")
        if self.s_interv is not None and self.s_interv < 1:
            raise ConfigError("s_interv must be >= 1")
        if self.split is not None and (len(self.split) != 3 or min(self.split) < 1):
            raise ConfigError("split needs three positive lengths")

    def with_seed(self, seed: int) -> "TrainConfig":
        d = asdict(self)
        d.update(model_seed=seed, sampling_seed=seed, cluster_seed=seed)
        return TrainConfig(**d)

    def resolved(self, task: str) -> "TrainConfig":
        """Fill task-dependent defaults and apply the ablation's lambda overrides."""
        d = asdict(self)
        d["task"] = task
        if d["hidden"] is None:
            d["hidden"] = 16 if task == LINK else 32
        if d["s_interv"] is None:
            d["s_interv"] = 1000 if task == LINK else 100
        if self.ablation == NO_ENV:
            d["lambda_e"] = 0.0
        elif self.ablation in (NO_INTERV, NO_DISEN):
            d["lambda_e"] = 0.0
            d["lambda_do"] = 0.0
        return TrainConfig(**d)

    @property
    def disentangled(self) -> bool:
        return self.ablation != NO_DISEN

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["split"] is not None:
            d["split"] = list(d["split"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
