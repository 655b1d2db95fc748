"""Hyperparameter records and their TOML-backed file format.

A config file has two flat tables, ``[model]`` and ``[train]``.  Any key left
out takes the default below (the desk-scale profile: 32x32 RGB images, K=4).
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """A config file is malformed or violates an invariant."""


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass(frozen=True)
class ModelConfig:
    # generative model
    K: int = 4
    alpha: float = 4.5
    sigma_x: float = 0.2
    E_view: int = 4
    E_bck: int = 8
    E_obj: int = 32
    # inference networks
    T: int = 3
    D_ft: int = 32
    D_vw: int = 8
    D_at: int = 64
    D_key: int = 32
    D_val: int | None = None
    enc_channels: int = 32
    mlp_hidden: int = 128
    # decoder networks
    bck_width: int = 32
    obj_width: int = 64
    bck_heads: int = 4
    obj_heads: int = 4
    dec_upsample: int = 3
    # image geometry
    image_height: int = 32
    image_width: int = 32
    C: int = 3

    def __post_init__(self):
        if self.D_val is None:
            object.__setattr__(self, "D_val", self.D_vw + self.D_at)
        self.validate()

    def validate(self) -> None:
        _check(self.K >= 1, "K must be >= 1")
        _check(self.T >= 1, "T must be >= 1")
        _check(self.sigma_x > 0, "sigma_x must be > 0")
        _check(self.alpha > 0, "alpha must be > 0")
        for name in ("E_view", "E_bck", "E_obj", "D_ft", "D_vw", "D_at", "D_key",
                     "D_val", "enc_channels", "mlp_hidden", "bck_width", "obj_width",
                     "bck_heads", "obj_heads", "image_height", "image_width", "C"):
            _check(getattr(self, name) >= 1, f"{name} must be >= 1")
        _check(self.D_val == self.D_vw + self.D_at,
               f"D_val must equal D_vw + D_at ({self.D_vw + self.D_at}), got {self.D_val}")
        _check(self.dec_upsample >= 0, "dec_upsample must be >= 0")
        _check(self.image_height % 2 == 0 and self.image_width % 2 == 0,
               "image_height and image_width must be even (stride-2 encoder)")
        scale = 2 ** self.dec_upsample
        _check(self.image_height % scale == 0 and self.image_width % scale == 0,
               f"image size must be divisible by 2**dec_upsample = {scale}")
        _check(self.bck_width % self.bck_heads == 0, "bck_width must be divisible by bck_heads")
        _check(self.obj_width % self.obj_heads == 0, "obj_width must be divisible by obj_heads")

    @property
    def N(self) -> int:
        return self.image_height * self.image_width

    @property
    def N_prime(self) -> int:
        """Number of encoder feature locations (first conv has stride 2)."""
        return (self.image_height // 2) * (self.image_width // 2)

    @property
    def grid_size(self) -> tuple[int, int]:
        scale = 2 ** self.dec_upsample
        return self.image_height // scale, self.image_width // scale


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    total_steps: int = 20000
    warmup_single_view_steps: int = 2000
    lr_init: float = 3e-4
    lr_decay_factor: float = 0.5
    lr_decay_steps: int = 10000
    gumbel_temperature_init: float = 2.0
    gumbel_temperature_final: float = 0.5
    temperature_anneal_steps: int = 10000
    kl_warmup_steps: int = 0
    rng_seed: int = 0
    M_train_range: tuple[int, int] = (1, 4)
    checkpoint_interval: int = 1000
    grad_clip: float = 5.0
    log_interval: int = 1

    def __post_init__(self):
        object.__setattr__(self, "M_train_range", tuple(int(v) for v in self.M_train_range))
        self.validate()

    def validate(self) -> None:
        _check(self.batch_size >= 1, "batch_size must be >= 1")
        _check(self.total_steps >= 0, "total_steps must be >= 0")
        _check(self.warmup_single_view_steps >= 0, "warmup_single_view_steps must be >= 0")
        _check(self.lr_init > 0, "lr_init must be > 0")
        _check(0 < self.lr_decay_factor <= 1, "lr_decay_factor must be in (0, 1]")
        _check(self.lr_decay_steps >= 1, "lr_decay_steps must be >= 1")
        _check(self.gumbel_temperature_init > 0, "gumbel_temperature_init must be > 0")
        _check(self.gumbel_temperature_final > 0, "gumbel_temperature_final must be > 0")
        _check(self.temperature_anneal_steps >= 0, "temperature_anneal_steps must be >= 0")
        _check(self.kl_warmup_steps >= 0, "kl_warmup_steps must be >= 0")
        _check(len(self.M_train_range) == 2, "M_train_range must have two entries")
        lo, hi = self.M_train_range
        _check(lo >= 1, "M_train_range lower bound must be >= 1")
        _check(hi >= lo, "M_train_range must be non-empty (lower <= upper)")
        _check(self.checkpoint_interval >= 1, "checkpoint_interval must be >= 1")
        _check(self.grad_clip > 0, "grad_clip must be > 0")
        _check(self.log_interval >= 1, "log_interval must be >= 1")


def _build(cls, table: dict[str, Any], section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> tuple[ModelConfig, TrainConfig]:
    extra = sorted(set(data) - {"model", "train"})
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    return (_build(ModelConfig, dict(data.get("model", {})), "model"),
            _build(TrainConfig, dict(data.get("train", {})), "train"))


def config_to_dict(model: ModelConfig, train: TrainConfig) -> dict[str, Any]:
    out = {"model": dataclasses.asdict(model), "train": dataclasses.asdict(train)}
    out["train"]["M_train_range"] = list(train.M_train_range)
    return out


def load_config(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """Read and validate a config file.

    Raises ConfigError for a malformed file or any violated invariant.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(path: str | Path, model: ModelConfig, train: TrainConfig) -> None:
    Path(path).write_text(tomli_w.dumps(config_to_dict(model, train)), encoding="utf-8")


def apply_overrides(model: ModelConfig, train: TrainConfig,
                    overrides: Iterable[str]) -> tuple[ModelConfig, TrainConfig]:
    """Apply ``section.key=value`` overrides; values use TOML literal syntax."""
    data = config_to_dict(model, train)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, rhs = item.split("=", 1)
        section, _, key = lhs.strip().partition(".")
        if section not in data or not key:
            raise ConfigError(f"override {item!r} must name model.<key> or train.<key>")
        try:
            value = tomllib.loads(f"v = {rhs.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = rhs.strip()
        data[section][key] = value
    if data["model"].get("D_val") is not None and not any(
            o.split("=", 1)[0].strip() == "model.D_val" for o in overrides):
        # keep D_val derived when D_vw / D_at are overridden
        data["model"]["D_val"] = None
    return config_from_dict(data)
