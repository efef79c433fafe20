"""Flat ``key = value`` configuration shared by the CLI and trainer.

Lines are ``key = value`` with ``#`` comments; unknown keys are errors so
typos cannot silently fall back to defaults. Values are coerced to the
type of the default. All hyperparameters of the pipeline live here.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .augment import AugmentParams
from .cloud import SceneSpec
from .errors import UsageError


class ConfigError(UsageError):
    pass


@dataclass(frozen=True)
class Config:
    # photometric augmentation
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.025
    color_noise_sigma: float = 0.01
    color_noise_prob: float = 0.95
    # spatial augmentation
    rot_z_max: float = float(2.0 * np.pi)
    rot_xy_max: float = float(np.pi / 64.0)
    flip_prob: float = 0.5
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    # sampling augmentation
    voxel_size: float = 0.02
    crop_lo: float = 0.6
    crop_hi: float = 1.0
    sample_frame: str = "augmented"
    # masking
    mask_grid: float = 0.15
    mask_rate: float = 0.3
    # matching (epsilon <= 0 means: track voxel_size)
    epsilon: float = 0.0
    n_max: int = 4096
    # losses
    tau: float = 0.4
    lambda_color: float = 1.0
    lambda_normal: float = 1.0
    reduction: str = "mean"
    normal_loss_form: str = "one_minus_cos"  # or "raw_cos"
    # trainer
    lr: float = 0.05
    momentum: float = 0.9
    grad_clip: float = 1.0  # global gradient norm bound; 0 disables
    steps: int = 200
    batch: int = 8
    feat_dim: int = 32
    hidden_dim: int = 64
    agg_radius: float = 0.55
    surfel_k: int = 16
    # synthetic scenes (desk-scale benchmark rooms)
    extent_x: float = 0.6
    extent_y: float = 0.6
    extent_z: float = 1.0
    boxes: int = 0
    spheres: int = 0
    density: float = 14.0
    color_scheme: int = 0
    # global
    seed: int = 0

    def validate(self) -> "Config":
        self.augment_params()  # range checks live with the owning types
        self.scene_spec()
        if self.matching_epsilon() <= 0:
            raise ConfigError("epsilon must resolve to > 0")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if not 0.0 <= self.mask_rate <= 0.5:
            raise ConfigError("mask_rate must be in [0, 0.5]")
        if self.mask_grid <= 0:
            raise ConfigError("mask_grid must be > 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError("reduction must be mean or sum")
        if self.normal_loss_form not in ("one_minus_cos", "raw_cos"):
            raise ConfigError("normal_loss_form must be one_minus_cos or raw_cos")
        if min(self.steps, self.batch, self.feat_dim, self.hidden_dim) < 1:
            raise ConfigError("steps/batch/dims must be >= 1")
        if self.agg_radius <= 0:
            raise ConfigError("agg_radius must be > 0")
        if self.surfel_k < 3:
            raise ConfigError("surfel_k must be >= 3")
        if self.lr < 0 or not 0.0 <= self.momentum < 1.0 or self.grad_clip < 0:
            raise ConfigError("bad optimizer settings")
        return self

    def matching_epsilon(self) -> float:
        return self.epsilon if self.epsilon > 0 else self.voxel_size

    def augment_params(self) -> AugmentParams:
        try:
            return AugmentParams(
                brightness_jitter=self.brightness,
                contrast_jitter=self.contrast,
                saturation_jitter=self.saturation,
                hue_jitter=self.hue,
                color_noise_sigma=self.color_noise_sigma,
                color_noise_prob=self.color_noise_prob,
                rot_z_max=self.rot_z_max,
                rot_xy_max=self.rot_xy_max,
                flip_prob=self.flip_prob,
                scale_range=(self.scale_lo, self.scale_hi),
                voxel_size=self.voxel_size,
                crop_keep_range=(self.crop_lo, self.crop_hi),
                sample_frame=self.sample_frame,
            )
        except Exception as e:
            raise ConfigError(str(e))

    def scene_spec(self) -> SceneSpec:
        try:
            return SceneSpec(
                extent=(self.extent_x, self.extent_y, self.extent_z),
                boxes=self.boxes,
                spheres=self.spheres,
                density=self.density,
                color_scheme=self.color_scheme,
            )
        except Exception as e:
            raise ConfigError(str(e))


_FIELDS = {f.name: f.type for f in fields(Config)}


def parse_config_text(text: str, base: Config | None = None) -> Config:
    cfg = base or Config()
    overrides = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        default = getattr(Config(), key)
        try:
            if isinstance(default, bool):
                overrides[key] = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                overrides[key] = int(value)
            elif isinstance(default, float):
                overrides[key] = float(value)
            else:
                overrides[key] = value
        except ValueError:
            raise ConfigError(f"line {ln}: bad value for {key!r}: {value!r}")
    return replace(cfg, **overrides).validate()


def load_config(path, base: Config | None = None) -> Config:
    return parse_config_text(Path(path).read_text(), base=base)


def dump_config(cfg: Config) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(Config)]
    return "\n".join(lines) + "\n"
