"""Flat-array service surface for foreign callers.

Requests and responses are named-array containers (see msc.io); callers
talk to it through ``msc ffi ...`` subcommands over files or stdin/stdout.
Nothing is computed here: every result comes from the same core functions
the CLI uses, with the same seed-addressed RNG streams, so outputs are
byte-identical to the native paths.

Stream addressing (shared with the CLI): scene i of a run with seed s uses
``Rng.for_stream(s, DOMAIN_*, i)`` per purpose, so a single-scene ffi call
reproduces scene 0 of the equivalent CLI run exactly.
"""

from __future__ import annotations

import numpy as np

from . import io, objective
from .cloud import PointCloud
from .config import Config, parse_config_text
from .correspond import match_views
from .errors import DataError
from .maskgen import partition_patches, sample_cross_masks
from .objective import ReconHeads
from .rng import DOMAIN_MASK, DOMAIN_MATCH, DOMAIN_VIEWGEN, Rng
from .viewgen import ViewPair, generate_pair


def abi_version() -> int:
    return io.ABI_VERSION


def scene_pipeline(source: PointCloud, cfg: Config, seed: int, scene_index: int):
    """Views, masks, and correspondences for one scene, seed-addressed.

    This is the single implementation behind both ``msc viewgen`` outputs
    and ``ffi generate-pair`` responses.
    """
    pair = generate_pair(
        source, cfg.augment_params(),
        Rng.for_stream(seed, DOMAIN_VIEWGEN, scene_index), scene_id=scene_index,
    )
    part = partition_patches(pair.query, pair.key, cfg.mask_grid)
    masks = sample_cross_masks(part, cfg.mask_rate,
                               Rng.for_stream(seed, DOMAIN_MASK, scene_index))
    corr = match_views(
        pair.query, pair.key, cfg.matching_epsilon(), cfg.n_max,
        Rng.for_stream(seed, DOMAIN_MATCH, scene_index),
        query_subset=np.flatnonzero(~masks.mask_query),
        key_subset=np.flatnonzero(~masks.mask_key),
    )
    return pair, masks, corr


def pair_descriptors(pair: ViewPair, masks, corr) -> dict[str, np.ndarray]:
    """The flat-array view of one scene pipeline result."""
    return {
        "q_pos": pair.query.cloud.positions,
        "q_col": pair.query.cloud.colors,
        "q_orig": pair.query.original_positions,
        "q_index": pair.query.cloud.origin_index,
        "k_pos": pair.key.cloud.positions,
        "k_col": pair.key.cloud.colors,
        "k_orig": pair.key.original_positions,
        "k_index": pair.key.cloud.origin_index,
        "pairs": corr.pairs,
        "mask_q": masks.mask_query.astype(np.uint8),
        "mask_k": masks.mask_key.astype(np.uint8),
    }


def _require(req: dict, *names: str):
    for name in names:
        if name not in req:
            raise DataError(f"request missing array {name!r}")


def handle_generate_pair(req: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    _require(req, "positions", "colors", "seed")
    positions = np.asarray(req["positions"], dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(req["colors"], dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(positions)) or not np.all(np.isfinite(colors)):
        raise DataError("non-finite inputs")
    cfg = Config()
    if "config" in req:
        cfg = parse_config_text(bytes(req["config"].tobytes()).decode("utf-8"))
    seed = int(np.asarray(req["seed"]).reshape(-1)[0])
    normals = None
    if "normals" in req:
        normals = np.asarray(req["normals"], dtype=np.float64).reshape(-1, 3)
    source = PointCloud(positions=positions, colors=colors, normals=normals).validate()
    pair, masks, corr = scene_pipeline(source, cfg, seed, 0)
    return pair_descriptors(pair, masks, corr)


def handle_losses(req: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    _require(req, "fq", "fk", "pairs", "mask_q", "mask_k",
             "color_t_q", "color_t_k", "normal_t_q", "normal_t_k",
             "color_w", "color_b", "normal_w", "normal_b")
    fq = np.asarray(req["fq"], dtype=np.float64)
    fk = np.asarray(req["fk"], dtype=np.float64)
    heads = ReconHeads(
        color_w=np.asarray(req["color_w"], dtype=np.float64),
        color_b=np.asarray(req["color_b"], dtype=np.float64).reshape(-1),
        normal_w=np.asarray(req["normal_w"], dtype=np.float64),
        normal_b=np.asarray(req["normal_b"], dtype=np.float64).reshape(-1),
    )

    def scalar(name, default):
        if name not in req:
            return default
        return float(np.asarray(req[name]).reshape(-1)[0])

    reduction = "sum" if int(scalar("reduction_sum", 0.0)) else "mean"
    form = "raw_cos" if int(scalar("normal_raw_cos", 0.0)) else "one_minus_cos"
    br = objective.scene_losses(
        fq, fk,
        np.asarray(req["pairs"], dtype=np.int64).reshape(-1, 2),
        np.asarray(req["mask_q"]).astype(bool),
        np.asarray(req["mask_k"]).astype(bool),
        np.asarray(req["color_t_q"], dtype=np.float64),
        np.asarray(req["color_t_k"], dtype=np.float64),
        np.asarray(req["normal_t_q"], dtype=np.float64),
        np.asarray(req["normal_t_k"], dtype=np.float64),
        heads,
        tau=scalar("tau", 0.4),
        lambda_c=scalar("lambda_c", 1.0),
        lambda_n=scalar("lambda_n", 1.0),
        reduction=reduction,
        valid_q=None if "valid_q" not in req else np.asarray(req["valid_q"]).astype(bool),
        valid_k=None if "valid_k" not in req else np.asarray(req["valid_k"]).astype(bool),
        normal_loss_form=form,
        require_pairs=False,
    )
    return {
        "l_nce": np.array([br.l_nce]),
        "l_color": np.array([br.l_color]),
        "l_normal": np.array([br.l_normal]),
        "l_total": np.array([br.l_total]),
        "n_pairs": np.array([br.n_pairs], dtype=np.int64),
        "d_fq": br.d_features[0],
        "d_fk": br.d_features[1],
        "d_color_w": br.d_heads.color_w,
        "d_color_b": br.d_heads.color_b,
        "d_normal_w": br.d_heads.normal_w,
        "d_normal_b": br.d_heads.normal_b,
    }
