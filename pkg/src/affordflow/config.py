"""Plain-text ``key = value`` run configuration.

Keys are ``section.field``; sections map onto the dataclasses they
configure (``data``, ``model``, ``train``, ``loss``, ``task``, ``rollout``)
plus ``run`` for seeds and paths. Unknown keys are rejected. ``#`` starts a
comment. Tuples are comma-separated.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .model.config import ModelConfig
from .sim import RolloutConfig, TaskSpec
from .synth.dataset import DatasetConfig
from .synth.motion import AFFORDANCES
from .synth.scenes import HELDOUT_RANGES
from .training import LossWeights, TrainConfig

CONFIG_ENV = "AFFORDFLOW_CONFIG"
HELDOUT_SEED_OFFSET = 100_000  # held-out scenes use seed + offset so they never share a stream with training


class RunConfigError(ValueError):
    def __init__(self, msg: str, key: str | None = None):
        super().__init__(f"{key}: {msg}" if key else msg)
        self.key = key


@dataclass
class DataSection:
    kinds: tuple = AFFORDANCES
    samples_per_kind: int = 4
    heldout_per_kind: int = 2
    n_queries: int = 128
    sensor_sim: bool = False
    pixel_noise: float = 0.0
    depth_noise: float = 0.0


@dataclass
class RunSection:
    seeds: tuple = (0,)
    eval_seeds: tuple = tuple(range(10))
    data_dir: str = ""
    checkpoint: str = ""
    out: str = "runs"


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    train: dict = field(default_factory=dict)  # TrainConfig overrides (not weights)
    loss: dict = field(default_factory=dict)  # LossWeights overrides
    task: dict = field(default_factory=dict)  # TaskSpec threshold overrides
    rollout: dict = field(default_factory=dict)  # RolloutConfig overrides
    run: RunSection = field(default_factory=RunSection)
    source: str = ""

    def dataset_config(self, heldout: bool = False) -> DatasetConfig:
        """Training split, or the held-out split drawn from the excluded size band."""
        d = self.data
        n = d.heldout_per_kind if heldout else d.samples_per_kind
        cfg = DatasetConfig(samples_per_kind={k: n for k in d.kinds}, n_queries=d.n_queries,
                            sensor_sim=d.sensor_sim, pixel_noise=d.pixel_noise, depth_noise=d.depth_noise)
        if heldout:
            cfg.ranges = HELDOUT_RANGES
        return cfg

    def model_config(self, **extra) -> ModelConfig:
        return ModelConfig(**{**self.model, **extra})

    def loss_weights(self, **extra) -> LossWeights:
        return LossWeights(**{**self.loss, **extra})

    def train_config(self, **extra) -> TrainConfig:
        return TrainConfig(**{**self.train, "weights": self.loss_weights(), **extra})

    def task_spec(self, kind: str, goal: dict | None = None) -> TaskSpec:
        return TaskSpec(kind, goal=dict(goal or {}), **self.task)

    def rollout_config(self) -> RolloutConfig:
        return RolloutConfig(**self.rollout)

    def to_dict(self) -> dict:
        return {"data": dataclasses.asdict(self.data), "model": self.model, "train": self.train,
                "loss": self.loss, "task": self.task, "rollout": self.rollout,
                "run": dataclasses.asdict(self.run)}

    def hash(self) -> str:
        """SHA-256 over the canonical JSON of the resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


_SKIP = {"train": {"weights", "log_path", "checkpoint_dir"}, "rollout": {"clean"}, "task": {"kind", "goal"}}
_TARGETS = {"model": ModelConfig, "train": TrainConfig, "loss": LossWeights, "task": TaskSpec,
            "rollout": RolloutConfig}


def _fields(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], (int, float)):
                conv = type(default[0])
                out = []
                for it in items:
                    if conv is int and "-" in it[1:]:
                        lo, hi = it.split("-", 1) if it[0] != "-" else (it, it)
                        out.extend(range(int(lo), int(hi) + 1))
                    else:
                        out.append(float(it) if "." in it or "e" in it.lower() else conv(it))
                return tuple(out)
            return tuple(items)
        if default is None:
            if raw.lower() in ("none", ""):
                return None
            return int(raw) if raw.lstrip("-").isdigit() else float(raw)
        return raw
    except ValueError:
        raise RunConfigError(f"cannot parse {raw!r} as {type(default).__name__}", key) from None


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        return f.default_factory()  # type: ignore[misc]
    return ""


def parse_run_config(text: str, source: str = "") -> RunConfig:
    cfg = RunConfig(source=source)
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RunConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section in ("data", "run"):
            target = getattr(cfg, section)
            fl = _fields(type(target))
            if name not in fl:
                raise RunConfigError("unknown key", key)
            setattr(target, name, _convert(raw, _default_of(fl[name]), key))
        elif section in _TARGETS:
            fl = _fields(_TARGETS[section])
            if name not in fl or name in _SKIP.get(section, ()):
                raise RunConfigError("unknown key", key)
            getattr(cfg, section)[name] = _convert(raw, _default_of(fl[name]), key)
        else:
            raise RunConfigError("unknown section", key)
    for k in cfg.data.kinds:
        if k not in AFFORDANCES:
            raise RunConfigError(f"unknown affordance kind {k!r}", "data.kinds")
    try:
        cfg.model_config()
        cfg.train_config()
        cfg.task_spec("pickup")
        cfg.rollout_config()
    except (TypeError, ValueError) as exc:
        raise RunConfigError(str(exc)) from exc
    return cfg


def load_run_config(path=None) -> RunConfig:
    """Read the config at ``path``; the environment variable wins when set."""
    path = os.environ.get(CONFIG_ENV) or path
    if not path:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise RunConfigError(f"cannot read config: {exc}") from exc
    return parse_run_config(text, str(p))
