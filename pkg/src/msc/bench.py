"""Throughput benchmark: per-stage ns/point over a range of cloud sizes.

Stages: photometric (brightness/contrast/saturation/hue/noise), spatial
(rotations/flips/scale), sampling (crop + grid sample), and match (grid
nearest-neighbor matching of two full views). ``total_viewgen`` sums the
first three — that is the per-point cost whose scaling the acceptance
suite checks. Each measurement is the best of ``repeats`` runs.
"""

from __future__ import annotations

import time

import numpy as np

from . import augment, kernels
from .cloud import SceneSpec, synth_scene
from .config import Config
from .correspond import match_views
from .rng import Rng
from .viewgen import generate_view


def _scene_of_size(n: int, cfg: Config, rng: Rng):
    """Shell-only scene with density chosen to land near n points."""
    ex, ey, ez = cfg.extent_x, cfg.extent_y, cfg.extent_z
    area = ex * ey + 2.0 * ez * (ex + ey)
    spec = SceneSpec(extent=(ex, ey, ez), boxes=0, spheres=0,
                     density=max(1.0, n / area), color_scheme=cfg.color_scheme)
    return synth_scene(spec, rng)


def _time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(sizes: list[int], cfg: Config, seed: int,
              backends: list[str], repeats: int = 3) -> list[dict]:
    """Returns rows: backend, size, stage, seconds, ns_per_point."""
    rows = []
    params = cfg.augment_params()
    for size_i, size in enumerate(sizes):
        scene = _scene_of_size(size, cfg, Rng.for_stream(seed, 100, size_i))
        n = scene.n
        for backend in backends:
            kernels.set_backend(backend)
            stage_secs = {}

            def photo():
                r = Rng.for_stream(seed, 101, size_i)
                c = augment.jitter_brightness(scene, params.brightness_jitter, r)
                c = augment.jitter_contrast(c, params.contrast_jitter, r)
                c = augment.jitter_saturation(c, params.saturation_jitter, r)
                c = augment.jitter_hue(c, params.hue_jitter, r)
                return augment.gaussian_color_noise(c, params.color_noise_sigma, r)

            def spatial():
                r = Rng.for_stream(seed, 102, size_i)
                c = augment.rotate(scene, "z", (0.0, params.rot_z_max), r)
                c = augment.rotate(c, "x", (-params.rot_xy_max, params.rot_xy_max), r)
                c = augment.rotate(c, "y", (-params.rot_xy_max, params.rot_xy_max), r)
                c = augment.flip(c, "x", params.flip_prob, r)
                c = augment.flip(c, "y", params.flip_prob, r)
                return augment.scale(c, params.scale_range, r)

            def sampling():
                r = Rng.for_stream(seed, 103, size_i)
                c = augment.random_crop(scene, params.crop_keep_range, r)
                return augment.grid_sample(c, params.voxel_size, r)

            stage_secs["photometric"] = _time(photo, repeats)
            stage_secs["spatial"] = _time(spatial, repeats)
            stage_secs["sampling"] = _time(sampling, repeats)
            stage_secs["total_viewgen"] = sum(stage_secs.values())

            vq = generate_view(scene, params, "query", Rng.for_stream(seed, 104, size_i))
            vk = generate_view(scene, params, "key", Rng.for_stream(seed, 105, size_i))
            eps = cfg.matching_epsilon()

            def match():
                return match_views(vq, vk, eps, n_max=None)

            stage_secs["match"] = _time(match, repeats)

            for stage, secs in stage_secs.items():
                rows.append({
                    "backend": backend,
                    "size": n,
                    "requested_size": size,
                    "stage": stage,
                    "seconds": secs,
                    "ns_per_point": 1e9 * secs / max(n, 1),
                })
    kernels.set_backend("auto")
    return rows


BENCH_CSV_HEADER = "backend,size,requested_size,stage,seconds,ns_per_point"


def rows_to_csv(rows: list[dict]) -> str:
    lines = [BENCH_CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r['backend']},{r['size']},{r['requested_size']},{r['stage']},"
            f"{r['seconds']!r},{r['ns_per_point']!r}"
        )
    return "\n".join(lines) + "\n"
