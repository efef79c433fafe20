import math

import numpy as np
import pytest

import util
from msc.rng import Rng
from msc.errors import DataError, NoPositivePairsError, NumericalError
from msc.objective import (
    ReconHeads,
    color_loss,
    combined_loss,
    head_backward,
    head_forward,
    info_nce,
    negative_cosine_mean,
    normal_loss,
    scene_losses,
    similarity_matrix,
    similarity_backward,
)


# ------------------------------------------------------------- similarity

def test_similarity_identical_unit_rows_all_ones():
    f = np.tile([1.0, 0.0, 0.0], (4, 1))
    s, _ = similarity_matrix(f, f)
    assert np.allclose(s, 1.0)


def test_similarity_orthonormal_rows_identity():
    f = np.eye(4)
    s, _ = similarity_matrix(f, f)
    assert np.allclose(s, np.eye(4))


def test_similarity_scale_invariance():
    rng = np.random.default_rng(0)
    fq = rng.normal(size=(6, 5))
    fk = rng.normal(size=(6, 5))
    s1, _ = similarity_matrix(fq, fk)
    s2, _ = similarity_matrix(fq * 7.3, fk)
    s3, _ = similarity_matrix(fq, fk * np.abs(rng.normal(size=(6, 1))))
    assert np.allclose(s1, s2, atol=1e-12)
    assert np.allclose(s1, s3, atol=1e-12)


def test_similarity_zero_norm_row_raises():
    f = np.ones((3, 4))
    f0 = f.copy()
    f0[1] = 0.0
    with pytest.raises(NumericalError):
        similarity_matrix(f0, f)


def test_similarity_backward_matches_fd():
    rng = np.random.default_rng(1)
    for trial in range(10):
        fq = rng.normal(size=(5, 4)) + 0.1
        fk = rng.normal(size=(5, 4)) + 0.1
        w = rng.normal(size=(5, 5))  # random linear functional of S

        def loss():
            s, _ = similarity_matrix(fq, fk)
            return float(np.sum(w * s))

        s, cache = similarity_matrix(fq, fk)
        dfq, dfk = similarity_backward(cache, w)
        assert util.rel_err(dfq.ravel(), util.finite_difference(loss, fq)) < 1e-7
        assert util.rel_err(dfk.ravel(), util.finite_difference(loss, fk)) < 1e-7


# --------------------------------------------------------------- info_nce

def test_info_nce_single_pair_zero():
    s = np.array([[0.37]])
    loss, ds = info_nce(s, 0.4)
    assert loss == 0.0
    assert np.allclose(ds, 0.0)


def test_info_nce_orthonormal_two_pairs_hand_value():
    # direct softmax hand evaluation: -log(e^{1/tau} / (e^{1/tau} + e^0))
    s = np.eye(2)
    loss, _ = info_nce(s, 0.4)
    expected = math.log(1.0 + math.exp(-2.5))
    assert abs(loss - expected) < 1e-12
    loss_sum, _ = info_nce(s, 0.4, reduction="sum")
    assert abs(loss_sum - 2 * expected) < 1e-12


def test_info_nce_empty_raises():
    with pytest.raises(NoPositivePairsError):
        info_nce(np.empty((0, 0)), 0.4)


def test_info_nce_nonnegative_and_reduction():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(1, 9))
        s = rng.uniform(-1, 1, (n, n))
        loss, _ = info_nce(s, 0.4)
        assert loss >= -1e-15


def test_info_nce_gradient_matches_fd():
    rng = np.random.default_rng(3)
    for reduction in ("mean", "sum"):
        s = rng.uniform(-1, 1, (6, 6))
        _, ds = info_nce(s, 0.4, reduction)

        def loss():
            return info_nce(s, 0.4, reduction)[0]

        fd = util.finite_difference(loss, s)
        assert util.rel_err(ds.ravel(), fd) < 1e-7


def test_info_nce_invariant_to_feature_rescaling():
    rng = np.random.default_rng(4)
    fq = rng.normal(size=(8, 6))
    fk = rng.normal(size=(8, 6))
    s1, _ = similarity_matrix(fq, fk)
    s2, _ = similarity_matrix(fq * rng.uniform(0.1, 10.0, (8, 1)), fk)
    l1, _ = info_nce(s1, 0.4)
    l2, _ = info_nce(s2, 0.4)
    assert abs(l1 - l2) < 1e-9


def test_info_nce_bad_tau():
    with pytest.raises(DataError):
        info_nce(np.eye(2), 0.0)


# ------------------------------------------------------------------ color

def test_color_loss_perfect_zero():
    pred = np.full((4, 3), 0.25)
    mask = np.array([True, True, False, False])
    loss, grads = color_loss([pred], [pred.copy()], [mask])
    assert loss == 0.0
    assert np.allclose(grads[0], 0.0)


def test_color_loss_single_point_hand_value():
    # error vector (0.3, 0, 0.4) -> squared norm 0.25
    pred = np.array([[0.5, 0.5, 0.5]])
    target = np.array([[0.2, 0.5, 0.1]])
    mask = np.array([True])
    loss, _ = color_loss([pred], [target], [mask])
    assert abs(loss - 0.25) < 1e-12


def test_color_loss_two_points_hand_value():
    # errors (0.1,0.2,0.2) and zero -> (0.09 + 0) / 2 = 0.045
    pred = np.array([[0.1, 0.2, 0.2], [0.5, 0.5, 0.5]])
    target = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]])
    mask = np.array([True, True])
    loss, _ = color_loss([pred], [target], [mask])
    assert abs(loss - 0.045) < 1e-12


def test_color_loss_two_views_denominator():
    pq = np.array([[1.0, 0.0, 0.0]])
    pk = np.array([[0.0, 0.0, 0.0], [0.3, 0.3, 0.3]])
    tq = np.zeros((1, 3))
    tk = np.zeros((2, 3))
    loss, _ = color_loss([pq, pk], [tq, tk], [np.array([True]), np.array([True, True])])
    assert abs(loss - (1.0 + 0.0 + 0.27) / 3.0) < 1e-12


def test_color_loss_zero_masked_warns_and_zero():
    pred = np.zeros((3, 3))
    loss, grads = color_loss([pred], [pred], [np.zeros(3, dtype=bool)])
    assert loss == 0.0


def test_color_loss_gradient_fd():
    rng = np.random.default_rng(5)
    pred = rng.uniform(0, 1, (6, 3))
    target = rng.uniform(0, 1, (6, 3))
    mask = rng.random(6) < 0.5

    def loss():
        return color_loss([pred], [target], [mask])[0]

    _, grads = color_loss([pred], [target], [mask])
    assert util.rel_err(grads[0].ravel(), util.finite_difference(loss, pred)) < 1e-7


# ----------------------------------------------------------------- normal

def unit_rows(a):
    return a / np.linalg.norm(a, axis=1)[:, None]


def test_normal_loss_perfect_zero_and_orthogonal_one():
    rng = np.random.default_rng(6)
    t = unit_rows(rng.normal(size=(5, 3)))
    mask = np.ones(5, dtype=bool)
    loss, _ = normal_loss([t * 3.0], [t], [mask])  # prediction scale is irrelevant
    assert abs(loss) < 1e-7
    # orthogonal predictions -> cos 0 -> loss 1
    perp = unit_rows(np.cross(t, np.tile([0.0, 0.0, 1.0], (5, 1))) + 1e-9)
    loss_p, _ = normal_loss([perp], [t], [mask])
    assert abs(loss_p - 1.0) < 1e-6


def test_normal_loss_invalid_targets_excluded():
    t = np.tile([0.0, 0.0, 1.0], (4, 1))
    pred = np.tile([0.0, 0.0, 1.0], (4, 1))
    pred[2] = [1.0, 0.0, 0.0]  # wrong but invalid -> excluded
    mask = np.ones(4, dtype=bool)
    valid = np.array([True, True, False, True])
    loss, grads = normal_loss([pred], [t], [mask], [valid])
    assert abs(loss) < 1e-7
    assert np.allclose(grads[0][2], 0.0)


def test_normal_loss_all_invalid_zero():
    t = np.tile([0.0, 0.0, 1.0], (3, 1))
    loss, _ = normal_loss([t], [t], [np.ones(3, bool)], [np.zeros(3, bool)])
    assert loss == 0.0


def test_normal_loss_gradient_fd():
    rng = np.random.default_rng(7)
    for _ in range(10):
        pred = rng.normal(size=(5, 3))
        target = unit_rows(rng.normal(size=(5, 3)))
        mask = rng.random(5) < 0.7

        def loss():
            return normal_loss([pred], [target], [mask])[0]

        _, grads = normal_loss([pred], [target], [mask])
        fd = util.finite_difference(loss, pred)
        assert util.rel_err(grads[0].ravel(), fd) < 1e-6


# ----------------------------------------------------------- combined/misc

def test_combined_loss_identities():
    assert combined_loss(0.5, 0.2, 0.3) == 1.0
    assert combined_loss(0.5, 0.2, 0.3, 0.0, 0.0) == 0.5
    # linearity in each weight
    base = combined_loss(1.0, 2.0, 3.0, 0.0, 0.0)
    assert combined_loss(1.0, 2.0, 3.0, 2.0, 0.0) - base == pytest.approx(4.0, abs=1e-12)
    l = combined_loss(0.11, 0.22, 0.33, 0.5, 0.25)
    assert abs(l - (0.11 + 0.5 * 0.22 + 0.25 * 0.33)) < 1e-12


def test_head_forward_backward_fd():
    rng = np.random.default_rng(8)
    f = rng.normal(size=(7, 5))
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=3)
    up = rng.normal(size=(7, 3))

    def loss():
        return float(np.sum(up * head_forward(f, w, b)))

    df, dw, db = head_backward(f, w, up)
    assert util.rel_err(dw.ravel(), util.finite_difference(loss, w)) < 1e-7
    assert util.rel_err(db.ravel(), util.finite_difference(loss, b)) < 1e-7
    assert util.rel_err(df.ravel(), util.finite_difference(loss, f)) < 1e-7


def test_negative_cosine_mean_cases():
    assert negative_cosine_mean(np.array([[1.0]])) == 0.0
    s = np.array([[1.0, 0.25], [0.75, 1.0]])
    assert negative_cosine_mean(s) == pytest.approx(0.5)
    assert negative_cosine_mean(np.eye(5)) == 0.0


def test_scene_losses_total_is_weighted_sum_and_masked_pairs_dropped():
    rng = np.random.default_rng(9)
    n = 12
    fq = rng.normal(size=(n, 6)) + 0.2
    fk = rng.normal(size=(n, 6)) + 0.2
    pairs = np.stack([np.arange(n), np.arange(n)], axis=1)
    mask_q = rng.random(n) < 0.3
    mask_k = (rng.random(n) < 0.3) & ~mask_q
    heads = ReconHeads.init(6, Rng(0))
    br = scene_losses(
        fq, fk, pairs, mask_q, mask_k,
        rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, (n, 3)),
        unit_rows(rng.normal(size=(n, 3))), unit_rows(rng.normal(size=(n, 3))),
        heads, tau=0.4, lambda_c=0.7, lambda_n=1.3,
    )
    assert br.l_total == pytest.approx(br.l_nce + 0.7 * br.l_color + 1.3 * br.l_normal,
                                       abs=1e-12)
    assert br.n_pairs == int((~mask_q & ~mask_k).sum())


def test_scene_losses_full_gradient_fd():
    rng = np.random.default_rng(10)
    n = 10
    fq = rng.normal(size=(n, 5)) + 0.3
    fk = rng.normal(size=(n, 5)) + 0.3
    pairs = np.stack([np.arange(n), rng.permutation(n)], axis=1)
    mask_q = rng.random(n) < 0.4
    mask_k = (rng.random(n) < 0.4) & ~mask_q
    ctq, ctk = rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, (n, 3))
    ntq, ntk = unit_rows(rng.normal(size=(n, 3))), unit_rows(rng.normal(size=(n, 3)))
    heads = ReconHeads.init(5, Rng(1))

    def total():
        return scene_losses(fq, fk, pairs, mask_q, mask_k, ctq, ctk, ntq, ntk,
                            heads, tau=0.4, require_pairs=False).l_total

    br = scene_losses(fq, fk, pairs, mask_q, mask_k, ctq, ctk, ntq, ntk,
                      heads, tau=0.4, require_pairs=False)
    assert util.rel_err(br.d_features[0].ravel(), util.finite_difference(total, fq)) < 1e-6
    assert util.rel_err(br.d_features[1].ravel(), util.finite_difference(total, fk)) < 1e-6
    assert util.rel_err(br.d_heads.color_w.ravel(),
                        util.finite_difference(total, heads.color_w)) < 1e-6
    assert util.rel_err(br.d_heads.normal_w.ravel(),
                        util.finite_difference(total, heads.normal_w)) < 1e-6
    assert util.rel_err(br.d_heads.color_b.ravel(),
                        util.finite_difference(total, heads.color_b)) < 1e-6
    assert util.rel_err(br.d_heads.normal_b.ravel(),
                        util.finite_difference(total, heads.normal_b)) < 1e-6
