"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. Criteria and tolerances
are pinned here; the heavyweight end-to-end runs go through the real CLI.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import util
from msc import io, kernels, objective
from msc.cloud import PointCloud, SceneSpec, synth_scene
from msc.config import Config
from msc.correspond import match_views, match_views_bruteforce
from msc.errors import NumericalError
from msc.maskgen import partition_patches, sample_cross_masks
from msc.objective import ReconHeads
from msc.rng import Rng
from msc.surfel import estimate_normals
from msc.toytrain import C_IN, EncoderParams, encoder_backward, encoder_forward
from msc.viewgen import View, generate_pair
from msc import augment

SEED = 0


def report(name: str, ok: bool, detail: str = ""):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------- 1

def test_infonce_exactness():
    t0 = time.perf_counter()
    s = np.eye(2)
    loss, _ = objective.info_nce(s, 0.4)
    expected = math.log(1.0 + math.exp(-2.5))
    err = abs(loss - expected)
    single, _ = objective.info_nce(np.array([[0.123]]), 0.4)
    elapsed = time.perf_counter() - t0
    ok = err < 1e-9 and single == 0.0 and elapsed < 1.0
    report("infonce-exactness", ok,
           f"|loss-log(1+e^-2.5)|={err:.2e}, n'=1 loss={single}, {elapsed:.3f}s")


# ---------------------------------------------------------------------- 2

def _fd_rel_err_blocks(seed: int) -> float:
    """Max rel. err across all gradient blocks for one random instance."""
    from msc.gradcheck import usable_instance, _composite_grads, _composite_loss

    cfg = Config()
    inst = usable_instance(seed, cfg, n=24)
    params = inst.params
    analytic = _composite_grads(inst, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for block, g in analytic.items():
        arr = params.as_dict()[block]
        take = min(12, arr.size)
        coords = np.sort(rng.choice(arr.size, take, replace=False))
        fd = util.finite_difference(lambda: _composite_loss(inst, params), arr, coords)
        worst = max(worst, util.rel_err(g.ravel()[coords], fd))
    return worst


def test_gradient_suite_100_seeds():
    t0 = time.perf_counter()
    worst = 0.0
    # isolated ops at full dimension: Eq-level gradients
    rng = np.random.default_rng(1)
    for seed in range(100):
        s = rng.uniform(-1, 1, (5, 5))
        _, ds = objective.info_nce(s, 0.4)
        fd = util.finite_difference(lambda: objective.info_nce(s, 0.4)[0], s)
        worst = max(worst, util.rel_err(ds.ravel(), fd))

        pred = rng.uniform(0, 1, (5, 3))
        target = rng.uniform(0, 1, (5, 3))
        mask = np.ones(5, dtype=bool)
        _, g = objective.color_loss([pred], [target], [mask])
        fd = util.finite_difference(
            lambda: objective.color_loss([pred], [target], [mask])[0], pred)
        worst = max(worst, util.rel_err(g[0].ravel(), fd))

        npred = rng.normal(size=(5, 3))
        ntarget = rng.normal(size=(5, 3))
        ntarget /= np.linalg.norm(ntarget, axis=1)[:, None]
        _, g = objective.normal_loss([npred], [ntarget], [mask])
        fd = util.finite_difference(
            lambda: objective.normal_loss([npred], [ntarget], [mask])[0], npred)
        worst = max(worst, util.rel_err(g[0].ravel(), fd))

    # composite encoder+heads+token path on sampled coordinates
    for seed in range(100):
        worst = max(worst, _fd_rel_err_blocks(seed))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 120.0
    report("gradient-suite", ok, f"max_rel_err={worst:.3e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------- 3

def _random_view(rng, n):
    pos = rng.uniform(0, 1, (n, 3))
    return View(cloud=PointCloud(positions=pos, colors=np.zeros((n, 3))),
                original_positions=pos, original_normals=None, role="query")


def test_oracle_equivalence():
    t0 = time.perf_counter()
    for seed in range(100):
        rng = np.random.default_rng(seed)
        q = _random_view(rng, 500)
        k = _random_view(rng, 500)
        eps = float(rng.uniform(0.01, 0.12))
        fast = match_views(q, k, eps, n_max=None)
        slow = match_views_bruteforce(q, k, eps)
        assert np.array_equal(fast.pairs, slow.pairs), f"seed {seed}"
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(50, 600))
        pos = rng.uniform(-1, 2, (n, 3))
        voxel = float(rng.uniform(0.05, 0.5))
        cloud = PointCloud(positions=pos, colors=np.zeros((n, 3)))
        out = augment.grid_sample(cloud, voxel, Rng(seed))
        assert out.n == util.brute_voxel_count(pos, voxel), f"seed {seed}"
    elapsed = time.perf_counter() - t0
    report("oracle-equivalence", elapsed < 60.0,
           f"100 match pairs + 100 voxel counts, {elapsed:.1f}s")


# ---------------------------------------------------------------------- 4

def test_cross_mask_invariants():
    rng = np.random.default_rng(7)
    checked = 0
    rates = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    while checked < 1000:
        k_total = int(rng.integers(2, 501))
        n_pts = int(rng.integers(k_total, 4 * k_total + 1))
        # synthesize a partition directly over K patches
        cells = np.arange(k_total)
        assign_q = rng.integers(0, k_total, n_pts)
        assign_k = rng.integers(0, k_total, n_pts)
        part = __import__("msc.maskgen", fromlist=["PatchPartition"]).PatchPartition(
            query_patch=assign_q.astype(np.int64),
            key_patch=assign_k.astype(np.int64),
            patches=np.stack([cells, cells, cells], axis=1),
            grid_size=0.15,
        )
        rate = rates[checked % len(rates)]
        masks = sample_cross_masks(part, rate, Rng(checked))
        m = int(np.floor(rate * k_total))
        assert masks.masked_patches_query.size == m
        assert masks.masked_patches_key.size == m
        assert not set(masks.masked_patches_query) & set(masks.masked_patches_key)
        checked += 1
    report("cross-mask-invariants", True, f"{checked} partitions, K in [2,500]")


# ---------------------------------------------------------------------- 5

def test_augmentation_invariants():
    rng = np.random.default_rng(3)
    rgb = rng.uniform(0, 1, (20000, 3))
    round_trip = np.max(np.abs(augment.hsv_to_rgb(augment.rgb_to_hsv(rgb)) - rgb))
    scene = synth_scene(SceneSpec(density=40.0), Rng(5))
    sub = scene.take(np.arange(0, scene.n, 5))
    before = util.pairwise_distances(sub.positions)
    worst_iso = 0.0
    for axis in ("x", "y", "z"):
        rot = augment.rotate(sub, axis, (0.2, 1.5), Rng(11))
        worst_iso = max(worst_iso, float(np.max(np.abs(
            util.pairwise_distances(rot.positions) - before))))
    flipped = augment.flip(sub, "x", 1.0, Rng(0))
    worst_iso = max(worst_iso, float(np.max(np.abs(
        util.pairwise_distances(flipped.positions) - before))))

    geometry_touched = False
    r = Rng(9)
    for op in (lambda c: augment.jitter_brightness(c, 0.4, r),
               lambda c: augment.jitter_contrast(c, 0.4, r),
               lambda c: augment.jitter_saturation(c, 0.2, r),
               lambda c: augment.jitter_hue(c, 0.4, r),
               lambda c: augment.gaussian_color_noise(c, 0.05, r)):
        out = op(scene)
        if not (np.array_equal(out.positions, scene.positions)
                and np.array_equal(out.normals, scene.normals)
                and np.array_equal(out.origin_index, scene.origin_index)):
            geometry_touched = True
    ok = round_trip < 1e-6 and worst_iso < 1e-9 and not geometry_touched
    report("augmentation-invariants", ok,
           f"hsv_rt={round_trip:.2e}, iso={worst_iso:.2e}, photometric_geometry_bitsame={not geometry_touched}")


# ---------------------------------------------------------------------- 6

def test_surfel_oracle():
    rng = np.random.default_rng(0)
    pos = np.zeros((500, 3))
    pos[:, :2] = rng.uniform(0, 2, (500, 2))
    plane = PointCloud(positions=pos, colors=np.zeros((500, 3)))
    est = estimate_normals(plane, k=16)
    plane_err = float(np.max(np.arccos(np.clip(est.normals @ [0, 0, 1.0], -1, 1))))

    radius = 0.5
    n = int(4 * np.pi * radius**2 * 450)  # density >= 400 pts/m^2
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    center = np.array([1.0, 1.0, 1.0])
    sphere = PointCloud(positions=center + radius * d, colors=np.zeros((n, 3)))
    est_s = estimate_normals(sphere, k=16, reference=center)
    cos = np.abs(np.sum(est_s.normals * d, axis=1))
    sphere_err = float(np.degrees(np.arccos(np.clip(cos, -1, 1))).mean())
    ok = plane_err < 1e-3 and sphere_err < 5.0
    report("surfel-oracle", ok,
           f"plane_max={plane_err:.2e} rad, sphere_mean={sphere_err:.2f} deg")


# ------------------------------------------------------------------- 7+8

def run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "msc.cli", *args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr[-800:]
    return proc


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Two full default pretrain runs (64 scenes, batch 8, 200 steps, seed 0)."""
    root = tmp_path_factory.mktemp("desk")
    data = root / "scenes"
    run_cli("synth", "--count", "64", "--out", str(data), "--seed", str(SEED))
    out = {}
    for tag in ("a", "b"):
        t0 = time.perf_counter()
        run_cli("pretrain", "--data", str(data), "--seed", str(SEED),
                "--metrics", str(root / f"metrics_{tag}.csv"),
                "--checkpoint", str(root / f"ck_{tag}.ckpt"))
        out[tag] = time.perf_counter() - t0
    return root, out


def test_end_to_end_desk_run(desk_runs):
    root, times = desk_runs
    rows = [l.split(",") for l in
            (root / "metrics_a.csv").read_text().strip().splitlines()[1:]]
    assert len(rows) == 200
    total = np.array([float(r[4]) for r in rows])
    neg = np.array([float(r[5]) for r in rows])
    std = np.array([float(r[6]) for r in rows])
    ma20 = total[:20].mean()
    ma200 = total[180:].mean()
    ratio = ma200 / ma20
    cfg = Config()
    ok = (times["a"] < 600.0 and ratio <= 0.5 and std[-1] >= 0.05 and neg[-1] < 0.9
          and cfg.mask_rate == 0.3 and cfg.mask_grid == 0.15
          and cfg.tau == 0.4 and cfg.lambda_color == 1.0 and cfg.lambda_normal == 1.0)
    report("end-to-end-desk-run", ok,
           f"{times['a']:.0f}s, MA20={ma20:.3f}, MA200={ma200:.3f}, ratio={ratio:.4f}, "
           f"std_min={std[-1]:.3f}, neg_cos={neg[-1]:.3f}")


def test_pretrain_determinism(desk_runs):
    root, _ = desk_runs
    same_csv = (root / "metrics_a.csv").read_bytes() == (root / "metrics_b.csv").read_bytes()
    same_ckpt = (root / "ck_a.ckpt").read_bytes() == (root / "ck_b.ckpt").read_bytes()
    report("pretrain-determinism", same_csv and same_ckpt,
           f"csv_identical={same_csv}, checkpoint_identical={same_ckpt}")


# ---------------------------------------------------------------------- 9

def test_viewgen_scaling(tmp_path):
    out = tmp_path / "bench.csv"
    run_cli("bench", "--sizes", "10000,1000000", "--out", str(out), "--repeats", "3")
    rows = [l.split(",") for l in out.read_text().strip().splitlines()[1:]]
    per_point = {}
    for backend, size, req, stage, secs, nspp in rows:
        if stage == "total_viewgen":
            per_point[int(req)] = float(nspp)
    lo, hi = per_point[10000], per_point[1000000]
    variation = max(lo, hi) / min(lo, hi) - 1.0
    report("viewgen-scaling", variation < 0.25,
           f"ns/pt at 1e4={lo:.0f}, 1e6={hi:.0f}, variation={variation:.1%}")


# ------------------------------------------------- module-example checks

def test_moving_average_strictly_decreases(desk_runs):
    # training-run check: the 20-step-smoothed l_total, sampled at 20-step
    # checkpoints, strictly decreases over the 200-step default run
    root, _ = desk_runs
    rows = [l.split(",") for l in
            (root / "metrics_a.csv").read_text().strip().splitlines()[1:]]
    total = np.array([float(r[4]) for r in rows])
    ma = np.convolve(total, np.ones(20) / 20, mode="valid")
    checkpoints = ma[::20]
    ok = bool(np.all(np.diff(checkpoints) < 0))
    report("ma-strictly-decreasing", ok, f"checkpoints={np.round(checkpoints, 3)}")
