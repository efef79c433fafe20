"""Two-view generation and query-view mixing.

A view is an independently augmented copy of a source scene. The source
("original") coordinates and normals of every surviving point are kept
alongside the augmented cloud: matching and patch partitioning run in that
original frame, and normals are reconstruction targets.

Mixing concatenates pairs of query views into hybrid inputs (no spatial
offset) while key views stay untouched; per-point scene ids let the caller
split features back out after encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import augment
from .augment import AugmentParams
from .cloud import PointCloud
from .errors import EmptyViewError
from .rng import Rng


@dataclass(frozen=True)
class View:
    cloud: PointCloud  # augmented positions/colors (+rotated normals)
    original_positions: np.ndarray  # (n, 3) pre-spatial-augmentation coords
    original_normals: np.ndarray | None  # (n, 3) pre-rotation normals
    role: str  # "query" | "key"

    @property
    def n(self) -> int:
        return self.cloud.n


@dataclass(frozen=True)
class ViewPair:
    query: View
    key: View
    source_scene_id: int = 0


@dataclass(frozen=True)
class MixedQuery:
    """Concatenation of one or two query views with per-point provenance."""

    cloud: PointCloud
    original_positions: np.ndarray
    original_normals: np.ndarray | None
    origin_index: np.ndarray  # (n,) per-scene provenance of each point
    scene_id: np.ndarray  # (n,) int64: source_scene_id per point
    members: tuple[int, ...]  # scene ids in concatenation order
    boundaries: tuple[int, ...]  # prefix offsets, len(members)+1

    def split(self, rows: np.ndarray) -> dict[int, np.ndarray]:
        """Slice per-point data (features, grads) back into per-scene blocks."""
        return {
            sid: rows[self.boundaries[k] : self.boundaries[k + 1]]
            for k, sid in enumerate(self.members)
        }


@dataclass(frozen=True)
class MixedBatch:
    mixed: list[MixedQuery]
    pairs: list[ViewPair]  # originals, key views untouched
    permutation: np.ndarray  # order the query views were paired in


def generate_view(
    source: PointCloud, params: AugmentParams, role: str, rng: Rng
) -> View:
    """Apply the photometric -> spatial -> sampling recipe to a source copy.

    Draw order is fixed (brightness, contrast, saturation, hue, noise gate,
    noise, rot z, rot x, rot y, flip x, flip y, scale, crop, grid picks) so
    a seed fully determines the view.
    """
    c = source
    c = augment.jitter_brightness(c, params.brightness_jitter, rng)
    c = augment.jitter_contrast(c, params.contrast_jitter, rng)
    c = augment.jitter_saturation(c, params.saturation_jitter, rng)
    c = augment.jitter_hue(c, params.hue_jitter, rng)
    gate = rng.random()
    if gate < params.color_noise_prob:
        c = augment.gaussian_color_noise(c, params.color_noise_sigma, rng)
    c = augment.rotate(c, "z", (0.0, params.rot_z_max), rng)
    c = augment.rotate(c, "x", (-params.rot_xy_max, params.rot_xy_max), rng)
    c = augment.rotate(c, "y", (-params.rot_xy_max, params.rot_xy_max), rng)
    c = augment.flip(c, "x", params.flip_prob, rng)
    c = augment.flip(c, "y", params.flip_prob, rng)
    c = augment.scale(c, params.scale_range, rng)
    c = augment.random_crop(c, params.crop_keep_range, rng)
    if params.sample_frame == "original":
        frame = source.positions[c.origin_index]
    else:
        frame = None
    c = augment.grid_sample(c, params.voxel_size, rng, coords=frame)
    if c.n == 0:
        raise EmptyViewError("empty view: every point was removed")
    return View(
        cloud=c,
        original_positions=source.positions[c.origin_index],
        original_normals=None if source.normals is None else source.normals[c.origin_index],
        role=role,
    )


def generate_pair(
    source: PointCloud, params: AugmentParams, rng: Rng, scene_id: int = 0
) -> ViewPair:
    """Two independent views of one scene (query + key)."""
    rq, rk = rng.split(2)
    return ViewPair(
        query=generate_view(source, params, "query", rq),
        key=generate_view(source, params, "key", rk),
        source_scene_id=scene_id,
    )


def _concat_queries(pairs: list[ViewPair]) -> MixedQuery:
    views = [p.query for p in pairs]
    sids = [p.source_scene_id for p in pairs]
    counts = [v.n for v in views]
    bounds = tuple(np.concatenate(([0], np.cumsum(counts))).astype(int).tolist())
    cloud = PointCloud(
        positions=np.concatenate([v.cloud.positions for v in views]),
        colors=np.concatenate([v.cloud.colors for v in views]),
        normals=None,
        origin_index=np.arange(bounds[-1], dtype=np.int64),
    )
    has_normals = all(v.original_normals is not None for v in views)
    return MixedQuery(
        cloud=cloud,
        original_positions=np.concatenate([v.original_positions for v in views]),
        original_normals=(
            np.concatenate([v.original_normals for v in views]) if has_normals else None
        ),
        origin_index=np.concatenate([v.cloud.origin_index for v in views]),
        scene_id=np.concatenate(
            [np.full(v.n, sid, dtype=np.int64) for v, sid in zip(views, sids)]
        ),
        members=tuple(sids),
        boundaries=bounds,
    )


def mix_queries(batch: list[ViewPair], rng: Rng) -> MixedBatch:
    """Randomly pair up query views into hybrid inputs; keys stay unmixed.

    Batches smaller than 2 mix nothing; an odd leftover stays solo. The
    multiset of (scene_id, origin_index) over mixed queries always equals
    the one over the original queries.
    """
    perm = rng.permutation(len(batch))
    if len(batch) < 2:
        mixed = [_concat_queries([p]) for p in batch]
        return MixedBatch(mixed=mixed, pairs=list(batch), permutation=perm)
    mixed = []
    k = 0
    while k + 1 < len(perm):
        mixed.append(_concat_queries([batch[perm[k]], batch[perm[k + 1]]]))
        k += 2
    if k < len(perm):
        mixed.append(_concat_queries([batch[perm[k]]]))
    return MixedBatch(mixed=mixed, pairs=list(batch), permutation=perm)
