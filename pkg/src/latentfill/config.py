"""Configuration: model/training knobs plus key=value config files.

Config files are INI-style sections of key=value pairs; CLI flags override
file values on conflict.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

PHASES = ("pretrain-gan", "train-encoder")


@dataclass
class ModelConfig:
    resolution: int = 64
    num_labels: int = 1
    enc_widths: tuple = (64, 128, 256, 512, 512)
    dec_widths: tuple = (256, 128, 128, 64, 64)  # s/16, s/8, then 3 scales
    acb_layers: int = 8
    dilation_rates: tuple = (1, 2, 3, 4)
    bottleneck: str = "acb"  # acb | res | aot
    fusion: str = "gma_adn"  # gma_adn | add | concat | adain | spade
    guidance: str = "unbiased"  # unbiased | biased | gt
    patch_plan: tuple = (4, 4, 2)
    attn_heads: int = 4
    gen_base: int = 32
    gen_cmax: int = 512
    style_width_cap: int = 512
    noise: bool = True
    mapping_depth: int = 4
    disc_base: int = 64
    canny_low: float = 0.1
    canny_high: float = 0.2

    def __post_init__(self):
        s = self.resolution
        if s < 32 or (s & (s - 1)) != 0:
            raise ValueError(f"resolution must be a power of two >= 32, got {s}")
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")


@dataclass
class TrainConfig:
    phase: str = "train-encoder"
    lr: float = 1e-4
    batch: int = 8
    steps: int = 2000
    tau: float = 0.001
    lambda_msr: float = 0.5
    lambda_fid: float = 0.005
    seed: int = 0
    grad_clip: float = 10.0
    mean_latent_samples: int = 4096
    mask_kind: str = "brush"
    mask_buckets: tuple = ("low", "mid", "high")
    fixed_masks: bool = False  # one mask per image (toy overfit) vs per step
    freeze_generator: bool = True
    log_every: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")


_TUPLE_FIELDS = {
    "enc_widths": int,
    "dec_widths": int,
    "dilation_rates": int,
    "patch_plan": int,
    "mask_buckets": str,
}


_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str}


def _coerce(value: str, target_type, name: str):
    if name in _TUPLE_FIELDS:
        elem = _TUPLE_FIELDS[name]
        return tuple(elem(v.strip()) for v in value.split(",") if v.strip())
    if isinstance(target_type, str):  # annotations arrive as strings
        target_type = _TYPE_NAMES.get(target_type, str)
    if target_type is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def load_config(path: str | Path, overrides: dict | None = None) -> TrainConfig:
    """Read a config file ([train] and [model] sections) plus overrides."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    model_kwargs = {}
    train_kwargs = {}
    model_fields = {f.name: f for f in fields(ModelConfig)}
    train_fields = {f.name: f for f in fields(TrainConfig) if f.name != "model"}
    for section, sink, known in (
        ("model", model_kwargs, model_fields),
        ("train", train_kwargs, train_fields),
    ):
        if not parser.has_section(section):
            continue
        for key, value in parser.items(section):
            if key not in known:
                raise ValueError(f"unknown config key [{section}] {key}")
            sink[key] = _coerce(value, known[key].type, key)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in model_fields:
            model_kwargs[key] = value
        elif key in train_fields:
            train_kwargs[key] = value
        else:
            raise ValueError(f"unknown config override {key!r}")
    return TrainConfig(model=ModelConfig(**model_kwargs), **train_kwargs)


def default_config(**overrides) -> TrainConfig:
    model_keys = {f.name for f in fields(ModelConfig)}
    model_kwargs = {k: v for k, v in overrides.items() if k in model_keys}
    train_kwargs = {k: v for k, v in overrides.items() if k not in model_keys}
    return TrainConfig(model=ModelConfig(**model_kwargs), **train_kwargs)


def config_hash(cfg: TrainConfig) -> str:
    """Stable short hash identifying a configuration."""
    blob = json.dumps(asdict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def write_config(cfg: TrainConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser["train"] = {
        k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        for k, v in asdict(cfg).items()
        if k != "model"
    }
    parser["model"] = {
        k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        for k, v in asdict(cfg.model).items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
