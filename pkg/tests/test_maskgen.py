import numpy as np
import pytest

import util
from msc.cloud import SceneSpec, synth_scene
from msc.errors import DataError
from msc.maskgen import apply_mask_token, partition_patches, sample_cross_masks
from msc.rng import Rng
from msc.viewgen import generate_pair
from msc.augment import AugmentParams

from test_viewgen import IDENTITY


@pytest.fixture(scope="module")
def pair():
    scene = synth_scene(SceneSpec(density=40.0), Rng(0))
    return generate_pair(scene, AugmentParams(), Rng(1))


def test_single_patch_when_grid_huge(pair):
    part = partition_patches(pair.query, pair.key, 1000.0)
    assert part.n_patches == 1
    assert np.all(part.query_patch == 0)
    assert np.all(part.key_patch == 0)


def test_matched_points_share_patch():
    scene = synth_scene(SceneSpec(density=40.0), Rng(2))
    ipair = generate_pair(scene, IDENTITY, Rng(3))
    part = partition_patches(ipair.query, ipair.key, 0.15)
    # identity views: point i in both views has identical original position
    assert np.array_equal(part.query_patch, part.key_patch)


def test_patch_count_matches_bucketing_oracle(pair):
    g = 0.15
    part = partition_patches(pair.query, pair.key, g)
    both = np.concatenate([pair.query.original_positions, pair.key.original_positions])
    assert part.n_patches == util.brute_voxel_count(both, g)
    # per-point key depends only on original position and g
    keys_q = np.floor(pair.query.original_positions / g).astype(np.int64)
    assert np.array_equal(part.patches[part.query_patch], keys_q)


def test_cross_mask_counts_and_disjointness(pair):
    part = partition_patches(pair.query, pair.key, 0.15)
    k = part.n_patches
    for rate in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
        masks = sample_cross_masks(part, rate, Rng(int(rate * 10)))
        m = int(np.floor(rate * k))
        assert masks.masked_patches_query.size == m
        assert masks.masked_patches_key.size == m
        assert not set(masks.masked_patches_query) & set(masks.masked_patches_key)
        # per-point expansion matches patch membership
        assert np.array_equal(masks.mask_query,
                              np.isin(part.query_patch, masks.masked_patches_query))
        assert np.array_equal(masks.mask_key,
                              np.isin(part.key_patch, masks.masked_patches_key))


def test_rate_zero_all_false(pair):
    part = partition_patches(pair.query, pair.key, 0.15)
    masks = sample_cross_masks(part, 0.0, Rng(0))
    assert not masks.mask_query.any()
    assert not masks.mask_key.any()


def test_rate_half_even_k_covers_everything():
    # K=10 patches, r=0.5 -> every patch masked in exactly one view
    from msc.cloud import PointCloud
    from msc.viewgen import View

    pos = np.stack([np.arange(10) * 1.0, np.zeros(10), np.zeros(10)], axis=1) + 0.5
    cloud = PointCloud(positions=pos, colors=np.zeros((10, 3)))
    v = View(cloud=cloud, original_positions=pos, original_normals=None, role="query")
    part = partition_patches(v, v, 1.0)
    assert part.n_patches == 10
    masks = sample_cross_masks(part, 0.5, Rng(4))
    union = set(masks.masked_patches_query) | set(masks.masked_patches_key)
    assert len(union) == 10
    masks3 = sample_cross_masks(part, 0.3, Rng(4))
    assert masks3.masked_patches_query.size == 3 == masks3.masked_patches_key.size


def test_invalid_rate_rejected(pair):
    part = partition_patches(pair.query, pair.key, 0.15)
    with pytest.raises(DataError):
        sample_cross_masks(part, 0.6, Rng(0))
    with pytest.raises(DataError):
        partition_patches(pair.query, pair.key, 0.0)


def test_masked_point_fraction_tracks_rate():
    # statistical: fraction of masked points within +/-0.1 of the rate
    for seed in range(5):
        scene = synth_scene(SceneSpec(density=60.0), Rng.for_stream(7, 0, seed))
        p = generate_pair(scene, AugmentParams(), Rng.for_stream(7, 1, seed))
        part = partition_patches(p.query, p.key, 0.15)
        masks = sample_cross_masks(part, 0.3, Rng.for_stream(7, 2, seed))
        frac = masks.mask_query.mean()
        assert abs(frac - 0.3) <= 0.1


def test_apply_mask_token_identities():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(20, 5))
    token = rng.normal(size=5)
    none = apply_mask_token(feats, np.zeros(20, dtype=bool), token)
    assert np.array_equal(none, feats)
    all_true = apply_mask_token(feats, np.ones(20, dtype=bool), token)
    assert np.array_equal(all_true, np.tile(token, (20, 1)))
    mask = rng.random(20) < 0.4
    once = apply_mask_token(feats, mask, token)
    twice = apply_mask_token(once, mask, token)
    assert np.array_equal(once, twice)  # idempotent
    assert np.array_equal(once[~mask], feats[~mask])  # untouched rows bit-identical


def test_apply_mask_token_dim_mismatch():
    with pytest.raises(DataError):
        apply_mask_token(np.zeros((3, 4)), np.zeros(3, dtype=bool), np.zeros(5))


def test_mask_token_gradient_is_sum_of_masked_row_grads():
    # downstream loss L = sum(W * masked_feats); dL/dtoken = sum over masked rows of dL/drow
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(15, 4))
    token = rng.normal(size=4)
    w = rng.normal(size=(15, 4))
    mask = rng.random(15) < 0.5

    def loss():
        return float(np.sum(w * apply_mask_token(feats, mask, token)))

    analytic = w[mask].sum(axis=0)
    fd = util.finite_difference(loss, token)
    assert util.rel_err(analytic, fd) < 1e-8
