"""Stochastic augmentation operators over point clouds.

Three families: photometric (brightness/contrast/saturation/hue/noise),
spatial (rotate/flip/scale), sampling (voxel grid sample, random crop).
Photometric operators never touch geometry or provenance; spatial operators
never touch colors; sampling operators only drop points.

Every operator draws its parameters from the supplied Rng even when the
configured strength makes it an identity, so RNG streams stay aligned
across configurations. Exact-identity draws (factor 1, shift 0) return the
input cloud unchanged, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .cloud import PointCloud
from .errors import DataError
from .rng import Rng

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentParams:
    """Knobs of the full view-generation recipe; all config-overridable."""

    brightness_jitter: float = 0.4
    contrast_jitter: float = 0.4
    saturation_jitter: float = 0.2
    hue_jitter: float = 0.025  # fraction of the full hue circle, in [0, 0.5]
    color_noise_sigma: float = 0.01
    color_noise_prob: float = 0.95
    rot_z_max: float = 2.0 * np.pi  # z angle drawn from [0, rot_z_max)
    rot_xy_max: float = np.pi / 64.0  # x/y tilt drawn from [-max, max]
    flip_prob: float = 0.5  # per axis (x and y)
    scale_range: tuple[float, float] = (0.9, 1.1)
    voxel_size: float = 0.02  # meters
    crop_keep_range: tuple[float, float] = (0.6, 1.0)
    sample_frame: str = "augmented"  # grid sampling lattice: augmented|original

    def __post_init__(self):
        if min(
            self.brightness_jitter, self.contrast_jitter,
            self.saturation_jitter, self.color_noise_sigma,
        ) < 0:
            raise DataError("jitter strengths must be >= 0")
        if not 0.0 <= self.hue_jitter <= 0.5:
            raise DataError("hue_jitter must be in [0, 0.5]")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise DataError("flip_prob must be in [0, 1]")
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise DataError("scale_range must satisfy 0 < lo <= hi")
        if self.voxel_size <= 0.0:
            raise DataError("voxel_size must be > 0")
        lo, hi = self.crop_keep_range
        if not 0.0 < lo <= hi <= 1.0:
            raise DataError("crop_keep_range must be within (0, 1]")
        if self.sample_frame not in ("augmented", "original"):
            raise DataError("sample_frame must be 'augmented' or 'original'")


# ------------------------------------------------------------ photometric

def _with_colors(cloud: PointCloud, colors: np.ndarray) -> PointCloud:
    return cloud.with_fields(colors=np.clip(colors, 0.0, 1.0))


def jitter_brightness(cloud: PointCloud, strength: float, rng: Rng) -> PointCloud:
    """colors <- clamp(colors * f), f ~ U[1-b, 1+b]."""
    f = rng.uniform(1.0 - strength, 1.0 + strength)
    if f == 1.0:
        return cloud
    return _with_colors(cloud, cloud.colors * f)


def jitter_contrast(cloud: PointCloud, strength: float, rng: Rng) -> PointCloud:
    """Blend toward the cloud-wide mean luminance, f ~ U[1-s, 1+s]."""
    f = rng.uniform(1.0 - strength, 1.0 + strength)
    if f == 1.0 or cloud.n == 0:
        return cloud
    gray = float(np.mean(cloud.colors @ LUMA))
    return _with_colors(cloud, gray + f * (cloud.colors - gray))


def jitter_saturation(cloud: PointCloud, strength: float, rng: Rng) -> PointCloud:
    """Blend each point toward its own luminance, f ~ U[1-s, 1+s]."""
    f = rng.uniform(1.0 - strength, 1.0 + strength)
    if f == 1.0 or cloud.n == 0:
        return cloud
    gray = (cloud.colors @ LUMA)[:, None]
    return _with_colors(cloud, gray + f * (cloud.colors - gray))


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV, all channels in [0, 1]."""
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    maxc = np.max(rgb, axis=1)
    minc = np.min(rgb, axis=1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    h = np.zeros_like(maxc)
    nz = delta > 0
    d = np.where(nz, delta, 1.0)
    rc = np.where(nz & (maxc == r), ((g - b) / d) % 6.0, 0.0)
    gc = np.where(nz & (maxc == g) & (maxc != r), (b - r) / d + 2.0, 0.0)
    bc = np.where(nz & (maxc == b) & (maxc != r) & (maxc != g), (r - g) / d + 4.0, 0.0)
    h = (rc + gc + bc) / 6.0
    return np.stack([h, s, v], axis=1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB, inverse of :func:`rgb_to_hsv` within 1e-6."""
    h, s, v = hsv[:, 0], hsv[:, 1], hsv[:, 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=1)


def jitter_hue(cloud: PointCloud, max_shift: float, rng: Rng) -> PointCloud:
    """Rotate hue by d ~ U[-h, h] (fraction of the circle); s and v kept."""
    if not 0.0 <= max_shift <= 0.5:
        raise DataError("hue shift bound must be in [0, 0.5]")
    delta = rng.uniform(-max_shift, max_shift)
    if delta == 0.0 or cloud.n == 0:
        return cloud
    hsv = rgb_to_hsv(cloud.colors)
    hsv[:, 0] = (hsv[:, 0] + delta) % 1.0
    return _with_colors(cloud, hsv_to_rgb(hsv))


def gaussian_color_noise(cloud: PointCloud, sigma: float, rng: Rng) -> PointCloud:
    """colors <- clamp(colors + eps), eps ~ N(0, sigma^2) iid per channel."""
    if sigma == 0.0:
        return cloud
    noise = rng.normal(0.0, sigma, (cloud.n, 3))
    return _with_colors(cloud, cloud.colors + noise)


# --------------------------------------------------------------- spatial

_AXES = {"x": 0, "y": 1, "z": 2}


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    raise DataError(f"unknown axis {axis!r}")


def rotate(
    cloud: PointCloud, axis: str, angle_range: tuple[float, float], rng: Rng
) -> PointCloud:
    """Rotate positions and normals by a drawn angle.

    z rotations pivot about the cloud centroid (scene orientation); x/y
    perturbations pivot about the world axes through the origin (ground
    slope simulation).
    """
    angle = rng.uniform(angle_range[0], angle_range[1])
    if angle == 0.0 or cloud.n == 0:
        return cloud
    rot = rotation_matrix(axis, angle)
    pivot = cloud.positions.mean(axis=0) if axis == "z" else np.zeros(3)
    pos = (cloud.positions - pivot) @ rot.T + pivot
    kw = {"positions": pos}
    if cloud.normals is not None:
        kw["normals"] = cloud.normals @ rot.T
    return cloud.with_fields(**kw)


def flip(cloud: PointCloud, axis: str, prob: float, rng: Rng) -> PointCloud:
    """With probability ``prob``, mirror the chosen coordinate about the
    centroid plane (normals mirror too)."""
    u = rng.random()
    if u >= prob or cloud.n == 0:
        return cloud
    a = _AXES[axis]
    center = cloud.positions[:, a].mean()
    pos = cloud.positions.copy()
    pos[:, a] = 2.0 * center - pos[:, a]
    kw = {"positions": pos}
    if cloud.normals is not None:
        nrm = cloud.normals.copy()
        nrm[:, a] = -nrm[:, a]
        kw["normals"] = nrm
    return cloud.with_fields(**kw)


def scale(cloud: PointCloud, scale_range: tuple[float, float], rng: Rng) -> PointCloud:
    """Isotropic scale about the centroid, s ~ U[lo, hi]; normals unchanged."""
    s = rng.uniform(scale_range[0], scale_range[1])
    if s == 1.0 or cloud.n == 0:
        return cloud
    c = cloud.positions.mean(axis=0)
    return cloud.with_fields(positions=c + s * (cloud.positions - c))


# -------------------------------------------------------------- sampling

def voxel_keys(coords: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer lattice cell of each coordinate: floor(coord / voxel)."""
    return np.floor(coords / voxel_size).astype(np.int64)


def grid_sample(
    cloud: PointCloud,
    voxel_size: float,
    rng: Rng,
    coords: np.ndarray | None = None,
) -> PointCloud:
    """Keep one uniformly chosen point per occupied voxel.

    ``coords`` selects the bucketing frame (defaults to the cloud's own,
    i.e. augmented, positions; pass saved original coordinates to sample on
    the pre-rotation lattice). Survivors keep all fields and provenance and
    stay in input order.
    """
    if voxel_size <= 0:
        raise DataError("voxel_size must be > 0")
    if cloud.n == 0:
        return cloud
    if coords is None:
        coords = cloud.positions
    keys = voxel_keys(coords, voxel_size)
    order, starts = kernels.cell_group_order(keys)
    sizes = np.diff(starts)
    # one uniform draw per occupied voxel, voxels in canonical key order
    picks = rng.integers(0, sizes)
    survivors = order[starts[:-1] + picks]
    survivors.sort()
    return cloud.take(survivors)


def random_crop(
    cloud: PointCloud, keep_range: tuple[float, float], rng: Rng
) -> PointCloud:
    """Keep ~rho of the points inside a cube centered on a random kept point.

    rho ~ U[lo, hi]. The cube half-extent is solved as an exact order
    statistic of Chebyshev distances to the seed (equivalent to bisecting
    the half-extent until the kept fraction lands within +/-2% of rho);
    when point multiplicity makes that band unreachable the whole cloud is
    kept.
    """
    rho = rng.uniform(keep_range[0], keep_range[1])
    seed = int(rng.integers(0, max(cloud.n, 1)))
    if cloud.n == 0 or rho >= 1.0:
        return cloud
    center = cloud.positions[seed]
    cheb = np.max(np.abs(cloud.positions - center), axis=1)
    k = min(cloud.n, max(1, int(round(rho * cloud.n))))
    half = np.partition(cheb, k - 1)[k - 1]
    keep = cheb <= half
    if abs(keep.sum() / cloud.n - rho) > 0.02:
        return cloud
    return cloud.take(np.flatnonzero(keep))
