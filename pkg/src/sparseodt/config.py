"""Run configuration: one JSON document with optional sections.

Every section and field may be omitted.  Unknown keys at any level are
rejected before any work starts.

```json
{
  "phantom": {"depth": 64, "width": 64, "noise_sigma": 0.02},
  "model":   {"preset": "desk", "delta": 8},
  "train":   {"iterations": 2000, "batch_size": 4},
  "loss":    {"alpha": 0.5, "beta": 0.1, "lam": 0.5},
  "eval":    {"with_mip": true, "mask_threshold": 0.05, "avg_window": 1},
  "paths":   {"data": null, "out": null}
}
```
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

from .losses import LossParams
from .model import DESK_MODEL, FULL_MODEL, ModelConfig
from .phantom import PhantomTemplate
from .train import FULL_TRAIN, TrainConfig

PRESETS = {"desk": (DESK_MODEL, TrainConfig()), "full": (FULL_MODEL, FULL_TRAIN)}
SECTIONS = ("phantom", "model", "train", "loss", "eval", "paths")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalOptions:
    with_mip: bool = True
    mask_threshold: float = 0.05
    avg_window: int = 1

    def __post_init__(self):
        if not 0.0 <= self.mask_threshold < 1.0 or self.avg_window < 1:
            raise ConfigError("eval needs 0 <= mask_threshold < 1 and avg_window >= 1")


@dataclass(frozen=True)
class Paths:
    data: str | None = None
    out: str | None = None


@dataclass(frozen=True)
class RunConfig:
    phantom: PhantomTemplate = field(default_factory=PhantomTemplate)
    model: ModelConfig = DESK_MODEL
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossParams = field(default_factory=LossParams)
    eval: EvalOptions = field(default_factory=EvalOptions)
    paths: Paths = field(default_factory=Paths)

    def to_dict(self) -> dict:
        return {
            "phantom": self.phantom.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "loss": self.loss.to_dict(),
            "eval": asdict(self.eval),
            "paths": asdict(self.paths),
        }


def _strict(cls, d, section):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section}' must be an object")
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return d


def parse_config(doc: dict) -> RunConfig:
    """Validate a decoded JSON document; every error is a :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        model_doc = dict(doc.get("model", {}))
        preset = model_doc.pop("preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(f"unknown model preset {preset!r}; choose from {sorted(PRESETS)}")
        base_model, base_train = PRESETS[preset]
        model = replace(base_model, **_strict(ModelConfig, model_doc, "model"))
        train = replace(base_train, **_strict(TrainConfig, doc.get("train", {}), "train"))
        return RunConfig(
            phantom=PhantomTemplate.from_dict(_strict(PhantomTemplate, doc.get("phantom", {}), "phantom")),
            model=model,
            train=train,
            loss=LossParams(**_strict(LossParams, doc.get("loss", {}), "loss")),
            eval=EvalOptions(**_strict(EvalOptions, doc.get("eval", {}), "eval")),
            paths=Paths(**_strict(Paths, doc.get("paths", {}), "paths")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc)
