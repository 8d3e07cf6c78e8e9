"""Configuration dataclasses, desk/full presets, and YAML round-tripping."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

# Rate-distortion trade-off grid; the bitstream header stores an index into it.
LAMBDA_GRID = (4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
CUSTOM_LAMBDA_ID = 0xFFFF


def lambda_id(lam: float) -> int:
    """Index of `lam` in LAMBDA_GRID, or the custom sentinel when off-grid."""
    for i, v in enumerate(LAMBDA_GRID):
        if abs(v - lam) < 1e-9:
            return i
    return CUSTOM_LAMBDA_ID


@dataclass
class CamSpec:
    """Hyperparameters of one cross-attention alignment block."""

    embed_dim: int = 16
    attn_dim: int = 16
    heads: int = 2
    patch_h: int = 2
    patch_w: int = 2
    channel_div: int = 4

    def validate(self) -> None:
        if self.attn_dim % self.heads != 0:
            raise ValueError(
                f"attn_dim must be divisible by heads: {self.attn_dim} % {self.heads}"
            )
        for name in ("embed_dim", "attn_dim", "heads", "patch_h", "patch_w", "channel_div"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class EntropySpec:
    """Factorized-density and coder settings."""

    filters: tuple[int, ...] = (3, 3, 3)
    init_scale: float = 10.0
    precision: int = 16

    def validate(self) -> None:
        if not 12 <= self.precision <= 16:
            raise ValueError(f"precision must be in [12, 16], got {self.precision}")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")
        if any(f < 1 for f in self.filters):
            raise ValueError("filters must all be >= 1")


@dataclass
class ModelConfig:
    """Full codec description: transforms, entropy model, attention blocks, loss weights."""

    name: str = "desk"
    image_size: tuple[int, int] = (32, 64)
    enc_channels: tuple[int, ...] = (32, 32, 32)
    latent_channels: int = 48
    dec_channels: tuple[int, ...] = (32, 32, 32)
    w_channels: int = 16
    kernel_size: int = 5
    stride: int = 2
    cam_count: int = 3
    cam: CamSpec = field(default_factory=CamSpec)
    entropy: EntropySpec = field(default_factory=EntropySpec)
    lam: float = 32.0
    alpha: float = 1.0
    beta: float = 1e-3

    @property
    def num_layers(self) -> int:
        """Synthesis layer count (hidden layers plus the image-producing one)."""
        return len(self.dec_channels) + 1

    @property
    def total_stride(self) -> int:
        return self.stride ** (len(self.enc_channels) + 1)

    @property
    def lambda_id(self) -> int:
        return lambda_id(self.lam)

    def validate(self) -> None:
        self.cam.validate()
        self.entropy.validate()
        if self.cam_count < 0 or self.cam_count > self.num_layers - 1:
            raise ValueError(
                f"cam_count must be in [0, {self.num_layers - 1}], got {self.cam_count}"
            )
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        h, w = self.image_size
        s = self.total_stride
        if h % s or w % s:
            raise ValueError(f"image_size must be divisible by {s}, got {h}x{w}")
        for i, c in enumerate(self.dec_channels[: self.cam_count]):
            if c % self.cam.channel_div:
                raise ValueError(
                    f"dec_channels[{i}]={c} not divisible by cam.channel_div={self.cam.channel_div}"
                )
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")


@dataclass
class TrainSchedule:
    """Optimizer schedule: plateau-driven learning-rate decay with a floor."""

    max_iters: int = 2000
    lr: float = 1e-4
    patience: int = 5
    decay_factor: float = 10.0
    lr_floor: float = 1e-7
    batch_size: int = 1
    seed: int = 0
    val_interval: int = 500
    ckpt_interval: int = 1000
    improve_threshold: float = 1e-4
    max_val_pairs: int = 8

    def validate(self) -> None:
        if self.lr_floor > self.lr:
            raise ValueError("lr_floor must be <= lr")
        if self.decay_factor <= 1:
            raise ValueError("decay_factor must be > 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.batch_size < 1 or self.val_interval < 1 or self.ckpt_interval < 1:
            raise ValueError("batch_size and intervals must be >= 1")


@dataclass
class DataConfig:
    """Preprocessing applied to every loaded pair."""

    crop: Optional[tuple[int, int]] = None
    target: Optional[tuple[int, int]] = (32, 64)
    swap_augment: bool = False


@dataclass
class SynthConfig:
    """Parameters for writing a synthetic pair dataset to disk."""

    height: int = 32
    width: int = 64
    num_shapes: int = 6
    disparity_px: int = 4
    occlusion_fraction: float = 0.1
    noise_std: float = 0.01
    count: int = 32
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class RunConfig:
    """One structured config file driving the CLI; every field has a default."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


def desk_model() -> ModelConfig:
    return ModelConfig()


def full_model() -> ModelConfig:
    return ModelConfig(
        name="full",
        image_size=(128, 256),
        enc_channels=(128, 128, 128),
        latent_channels=192,
        dec_channels=(128, 128, 128),
        w_channels=64,
        cam=CamSpec(embed_dim=64, attn_dim=64, heads=4),
    )


def desk_run() -> RunConfig:
    return RunConfig()


def full_run() -> RunConfig:
    return RunConfig(
        model=full_model(),
        train=TrainSchedule(max_iters=500_000, val_interval=5000, ckpt_interval=25_000),
        data=DataConfig(crop=(370, 740), target=(128, 256)),
        synth=SynthConfig(height=128, width=256, disparity_px=16),
    )


PRESETS = {"desk": desk_run, "full": full_run}

# YAML keys that differ from the dataclass field name ("lambda" is reserved).
_KEY_ALIASES = {"lam": "lambda"}
_FIELD_ALIASES = {v: k for k, v in _KEY_ALIASES.items()}


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        out = {}
        for f in dataclasses.fields(obj):
            key = _KEY_ALIASES.get(f.name, f.name)
            out[key] = _to_plain(getattr(obj, f.name))
        return out
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _fill_dataclass(obj: Any, data: dict, context: str) -> Any:
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        name = _FIELD_ALIASES.get(key, key)
        if name not in fields:
            raise ValueError(f"unknown config key '{context}{key}'")
        current = getattr(obj, name)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"'{context}{key}' must be a mapping")
            _fill_dataclass(current, value, context=f"{context}{key}.")
        elif isinstance(current, tuple) or (current is None and isinstance(value, list)):
            setattr(obj, name, tuple(value) if value is not None else None)
        else:
            setattr(obj, name, value)
    return obj


def config_to_dict(cfg: Any) -> dict:
    return _to_plain(cfg)


def model_config_from_dict(data: dict) -> ModelConfig:
    cfg = _fill_dataclass(ModelConfig(), data, context="")
    cfg.validate()
    return cfg


def load_run_config(path: Optional[Path] = None, preset: str = "desk") -> RunConfig:
    """Build a RunConfig from preset defaults, overlaying the YAML file when given."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset '{preset}' (choose from {sorted(PRESETS)})")
    cfg = PRESETS[preset]()
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"config root must be a mapping: {path}")
        file_preset = raw.pop("preset", None)
        if file_preset is not None and file_preset != preset:
            cfg = load_run_config(None, preset=file_preset)
        _fill_dataclass(cfg, raw, context="")
    cfg.model.validate()
    cfg.train.validate()
    return cfg


def save_run_config(cfg: Any, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(_to_plain(cfg), sort_keys=False))
