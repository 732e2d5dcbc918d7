"""Run configuration: TOML parsing, validation and a canonical dump.

A config file has five tables. ``[loss]`` must spell out every loss weight,
so a run never silently depends on a default for the quantities being
ablated. The other tables fall back to defaults::

    seed = 0
    out_dir = "runs/smoke"

    [data]            # source = "synthetic" (uses [data.synthetic]) or "csv"
    [model]           # hidden_g, hidden_d, d_z
    [training]        # epochs, batch_size, lr, ...
    [loss]            # lambda_cls, lambda_c, lambda_i, ... (all required)
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import SyntheticSpec
from .exceptions import ConfigError
from .losses import LossWeights
from .trainer import TrainerConfig

MODEL_KEYS = ("hidden_g", "hidden_d", "d_z", "leaky_slope", "g_output")
TRAINING_KEYS = ("epochs", "batch_size", "lr", "weight_decay", "dict_lr", "buffer_capacity",
                 "buffer_mode", "generative_per_class", "hallucination", "center_samples",
                 "track_gdb")
LOSS_KEYS = tuple(f.name for f in fields(LossWeights))
SYNTH_KEYS = tuple(f.name for f in fields(SyntheticSpec) if f.name not in ("seed", "n_tasks"))


@dataclass
class DataConfig:
    source: str = "synthetic"
    features: Optional[str] = None
    attributes: Optional[str] = None
    schedule: Optional[str] = None
    n_tasks: int = 5
    test_fraction: float = 0.2
    synthetic: Dict[str, Any] = field(default_factory=dict)

    def validate(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError("data.source must be 'synthetic' or 'csv'")
        if self.source == "csv":
            for key in ("features", "attributes"):
                if not getattr(self, key):
                    raise ConfigError(f"data.{key} is required when data.source = 'csv'")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must lie in (0, 1)")
        if int(self.n_tasks) < 1:
            raise ConfigError("data.n_tasks must be a positive integer")
        unknown = sorted(set(self.synthetic) - set(SYNTH_KEYS))
        if unknown:
            raise ConfigError(f"unknown key data.synthetic.{unknown[0]}")
        return self


@dataclass
class RunConfig:
    loss: LossWeights
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def validate(self):
        try:
            self.loss.validate()
            self.trainer.validate()
            self.data.validate()
            if self.data.source == "synthetic":
                self.synthetic_spec().validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return self

    def synthetic_spec(self, seed=None) -> SyntheticSpec:
        return SyntheticSpec(**self.data.synthetic, n_tasks=self.data.n_tasks,
                             seed=self.seed if seed is None else seed)

    def trainer_config(self, seed) -> TrainerConfig:
        cfg = TrainerConfig(**asdict(self.trainer))
        cfg.seed = int(seed)
        return cfg

    def to_dict(self) -> dict:
        tr = asdict(self.trainer)
        data = asdict(self.data)
        if self.data.source == "synthetic":
            # resolve defaults so an explicit dump and its source hash alike
            spec = asdict(self.synthetic_spec())
            data["synthetic"] = {k: spec[k] for k in SYNTH_KEYS}
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data": data,
            "model": {k: tr[k] for k in MODEL_KEYS},
            "training": {k: tr[k] for k in TRAINING_KEYS},
            "loss": self.loss.to_dict(),
        }

    def hash(self) -> str:
        """Digest of everything that shapes the result except the seed and paths."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _take(table: dict, allowed, section):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {section}.{unknown[0]}")
    return dict(table)


def _table(raw, name):
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a table")
    return value


def from_mapping(raw: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig` from parsed TOML."""
    top = {"seed", "out_dir", "data", "model", "training", "loss"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    if "loss" not in raw:
        raise ConfigError(f"missing [loss] table (needs {', '.join(LOSS_KEYS)})")
    loss = _take(_table(raw, "loss"), LOSS_KEYS, "loss")
    for key in LOSS_KEYS:
        if key not in loss:
            raise ConfigError(f"missing required key loss.{key}")
    model = _take(_table(raw, "model"), MODEL_KEYS, "model")
    training = _take(_table(raw, "training"), TRAINING_KEYS, "training")
    data_raw = _take(_table(raw, "data"), [f.name for f in fields(DataConfig)], "data")
    try:
        cfg = RunConfig(
            loss=LossWeights(**loss),
            trainer=TrainerConfig(**model, **training),
            data=DataConfig(**data_raw),
            seed=int(raw.get("seed", 0)),
            out_dir=str(raw.get("out_dir", "runs/default")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_mapping(raw)


def default_config() -> RunConfig:
    return RunConfig(loss=LossWeights())


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return json.dumps(str(v))


def dump_toml(cfg: RunConfig) -> str:
    """Resolved config as TOML; ``None`` entries are written as comments."""
    d = cfg.to_dict()
    lines = [f"seed = {_toml_value(d['seed'])}", f"out_dir = {_toml_value(d['out_dir'])}"]
    d["data"].pop("synthetic")
    spec = asdict(cfg.synthetic_spec())
    synthetic = {k: spec[k] for k in SYNTH_KEYS}
    for section in ("data", "model", "training", "loss"):
        lines += ["", f"[{section}]"]
        for k, v in d[section].items():
            lines.append(f"# {k} = (unset)" if v is None else f"{k} = {_toml_value(v)}")
    lines += ["", "[data.synthetic]"]
    for k, v in synthetic.items():
        lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"
