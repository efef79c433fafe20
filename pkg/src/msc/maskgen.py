"""Cross masks over a shared grid partition of the two views.

Both views are partitioned by flooring their *original* coordinates on one
patch lattice; a mask pair draws disjoint patch sets for query and key
(floor(r*K) patches each, r <= 0.5), so no surface patch is hidden in both
views at once. Masked points have their input features replaced by a
learnable token before encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import voxel_keys
from .errors import DataError
from .rng import Rng
from .viewgen import View


@dataclass(frozen=True)
class PatchPartition:
    """Per-point patch keys for both views on the shared lattice."""

    query_patch: np.ndarray  # (n_q,) int64, index into `patches`
    key_patch: np.ndarray  # (n_k,) int64
    patches: np.ndarray  # (K, 3) unique patch cells, lexicographically sorted
    grid_size: float

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]


@dataclass(frozen=True)
class CrossMaskPair:
    """Disjoint per-view patch masks expanded to per-point booleans."""

    masked_patches_query: np.ndarray  # patch ids, sorted
    masked_patches_key: np.ndarray
    mask_query: np.ndarray  # (n_q,) bool
    mask_key: np.ndarray  # (n_k,) bool
    rate: float


def partition_patches(query: View, key: View, grid_size: float) -> PatchPartition:
    """Assign every point of both views a patch on the original-frame lattice."""
    if grid_size <= 0:
        raise DataError("patch grid size must be > 0")
    kq = voxel_keys(query.original_positions, grid_size)
    kk = voxel_keys(key.original_positions, grid_size)
    both = np.concatenate([kq, kk])
    patches, inverse = np.unique(both, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    return PatchPartition(
        query_patch=inverse[: kq.shape[0]].astype(np.int64),
        key_patch=inverse[kq.shape[0] :].astype(np.int64),
        patches=patches,
        grid_size=grid_size,
    )


def sample_cross_masks(partition: PatchPartition, rate: float, rng: Rng) -> CrossMaskPair:
    """Draw floor(rate*K) masked patches per view, disjoint across views.

    A patch empty in one view may still be drawn for it (a no-op); the draw
    is without replacement over the union lattice, so disjointness is
    structural.
    """
    if not 0.0 <= rate <= 0.5:
        raise DataError("mask rate must be in [0, 0.5]")
    k_total = partition.n_patches
    m = int(np.floor(rate * k_total))
    drawn = rng.permutation(k_total)[: 2 * m]
    mq = np.sort(drawn[:m])
    mk = np.sort(drawn[m:])
    return CrossMaskPair(
        masked_patches_query=mq.astype(np.int64),
        masked_patches_key=mk.astype(np.int64),
        mask_query=np.isin(partition.query_patch, mq),
        mask_key=np.isin(partition.key_patch, mk),
        rate=rate,
    )


def apply_mask_token(features: np.ndarray, mask: np.ndarray, token: np.ndarray) -> np.ndarray:
    """Replace masked feature rows with the token; other rows bit-identical."""
    features = np.asarray(features, dtype=np.float64)
    token = np.asarray(token, dtype=np.float64).reshape(-1)
    if features.ndim != 2 or token.shape[0] != features.shape[1]:
        raise DataError(
            f"token dim {token.shape[0]} != feature dim {features.shape[-1]}"
        )
    if mask.shape[0] != features.shape[0]:
        raise DataError("mask length != feature rows")
    out = features.copy()
    out[np.asarray(mask, dtype=bool)] = token
    return out
