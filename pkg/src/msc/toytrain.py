"""Desk-scale trainable encoder and training loop.

The encoder is a hand-differentiated point MLP: pointwise MLP1 over input
features (color + height above floor), one mean aggregation over an
Euclidean neighborhood restricted to the same scene id (so mixed scenes
never exchange information), then pointwise MLP2 down to the embedding.
Masked points have their input features replaced by the learnable token
before MLP1, exactly the substitution the reconstruction objective needs.

Everything is float64 numpy with exact reverse-mode gradients; the test
suite checks them against central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels, objective
from .config import Config
from .correspond import match_views
from .errors import DataError
from .maskgen import apply_mask_token, partition_patches, sample_cross_masks
from .objective import ReconHeads
from .rng import Rng
from .viewgen import MixedQuery, ViewPair, mix_queries

log = logging.getLogger(__name__)

C_IN = 4  # rgb + height above scene floor


def input_features(positions: np.ndarray, colors: np.ndarray,
                   scene_id: np.ndarray | None = None) -> np.ndarray:
    """Per-point inputs: color channels plus height above the scene floor."""
    height = np.empty(positions.shape[0])
    if scene_id is None:
        height[:] = positions[:, 2] - positions[:, 2].min()
    else:
        for sid in np.unique(scene_id):
            rows = scene_id == sid
            z = positions[rows, 2]
            height[rows] = z - z.min()
    return np.concatenate([colors, height[:, None]], axis=1)


@dataclass
class EncoderParams:
    """MLP1 (c_in->h->h, ReLU) + neighborhood mean + MLP2 (2h->h->d)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    token: np.ndarray  # (c_in,) mask token
    heads: ReconHeads
    agg_radius: float = 0.25

    @classmethod
    def init(cls, hidden: int, dim: int, rng: Rng, agg_radius: float = 0.5) -> "EncoderParams":
        # color head starts at zero (large random-head MSE gradients feed
        # back into the encoder and destabilize SGD+momentum); the normal
        # head must NOT be zero, its cosine loss is singular at pred = 0
        def he(shape):
            return rng.normal(0.0, np.sqrt(2.0 / shape[0]), shape)

        heads = ReconHeads.zeros(dim)
        heads.normal_w = rng.normal(0.0, 0.05 / np.sqrt(dim), (dim, 3))
        return cls(
            w1=he((C_IN, hidden)),
            b1=np.full(hidden, 0.01),
            w2=he((hidden, hidden)),
            b2=np.full(hidden, 0.01),
            w3=he((2 * hidden, hidden)),
            b3=np.full(hidden, 0.01),
            w4=he((hidden, dim)),
            b4=np.zeros(dim),
            token=rng.normal(0.0, 0.1, C_IN),
            heads=heads,
            agg_radius=agg_radius,
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "w3": self.w3, "b3": self.b3, "w4": self.w4, "b4": self.b4,
            "token": self.token,
            "color_w": self.heads.color_w, "color_b": self.heads.color_b,
            "normal_w": self.heads.normal_w, "normal_b": self.heads.normal_b,
        }

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray], agg_radius: float) -> "EncoderParams":
        heads = ReconHeads(
            color_w=np.array(d["color_w"]), color_b=np.array(d["color_b"]),
            normal_w=np.array(d["normal_w"]), normal_b=np.array(d["normal_b"]),
        )
        return cls(
            w1=np.array(d["w1"]), b1=np.array(d["b1"]),
            w2=np.array(d["w2"]), b2=np.array(d["b2"]),
            w3=np.array(d["w3"]), b3=np.array(d["b3"]),
            w4=np.array(d["w4"]), b4=np.array(d["b4"]),
            token=np.array(d["token"]), heads=heads, agg_radius=agg_radius,
        )


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.as_dict().items()}




def encoder_forward(
    positions: np.ndarray,
    feats: np.ndarray,
    scene_id: np.ndarray,
    params: EncoderParams,
    mask: np.ndarray | None = None,
):
    """Returns (features (n, d), cache for the backward pass)."""
    if feats.shape[1] != params.w1.shape[0]:
        raise DataError(f"input feature dim {feats.shape[1]} != {params.w1.shape[0]}")
    x = feats if mask is None else apply_mask_token(feats, mask, params.token)
    a1 = x @ params.w1 + params.b1
    r1 = np.maximum(a1, 0.0)
    a2 = r1 @ params.w2 + params.b2
    r2 = np.maximum(a2, 0.0)
    counts, flat = kernels.radius_neighbors(positions, scene_id.astype(np.int64),
                                            params.agg_radius)
    m = kernels.csr_row_sum(r2, flat, counts) / counts[:, None]
    u = np.concatenate([r2, m], axis=1)
    a3 = u @ params.w3 + params.b3
    r3 = np.maximum(a3, 0.0)
    out = r3 @ params.w4 + params.b4
    cache = (x, mask, a1 > 0, r1, a2 > 0, r2, counts, flat, u, a3 > 0, r3)
    return out, cache


def encoder_backward(cache, dout: np.ndarray, params: EncoderParams) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every encoder parameter."""
    x, mask, pos1, r1, pos2, r2, counts, flat, u, pos3, r3 = cache
    g = {}
    g["w4"] = r3.T @ dout
    g["b4"] = dout.sum(axis=0)
    dr3 = dout @ params.w4.T
    da3 = dr3 * pos3
    g["w3"] = u.T @ da3
    g["b3"] = da3.sum(axis=0)
    du = da3 @ params.w3.T
    h = r2.shape[1]
    dr2 = du[:, :h].copy()
    dm = du[:, h:]
    # aggregation transpose: the neighbor relation is symmetric, so the
    # scatter of dm/count over members is a gather over the same CSR
    dmc = dm / counts[:, None]
    dr2 += kernels.csr_row_sum(dmc, flat, counts)
    da2 = dr2 * pos2
    g["w2"] = r1.T @ da2
    g["b2"] = da2.sum(axis=0)
    dr1 = da2 @ params.w2.T
    da1 = dr1 * pos1
    g["w1"] = x.T @ da1
    g["b1"] = da1.sum(axis=0)
    dx = da1 @ params.w1.T
    if mask is not None and mask.any():
        g["token"] = dx[np.asarray(mask, bool)].sum(axis=0)
    else:
        g["token"] = np.zeros_like(params.token)
    for k in ("color_w", "color_b", "normal_w", "normal_b"):
        g[k] = np.zeros_like(params.as_dict()[k])
    return g


@dataclass
class OptState:
    """SGD momentum buffers mirroring the parameter dict."""

    velocity: dict[str, np.ndarray]
    lr: float
    momentum: float

    @classmethod
    def init(cls, params: EncoderParams, lr: float, momentum: float) -> "OptState":
        return cls(velocity=zero_grads(params), lr=lr, momentum=momentum)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale the whole gradient down to ``max_norm``; 0 disables clipping."""
    if max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: v * scale for k, v in grads.items()}


def sgd_step(params: EncoderParams, grads: dict[str, np.ndarray], opt: OptState) -> EncoderParams:
    new = {}
    for k, v in params.as_dict().items():
        vel = opt.momentum * opt.velocity[k] + grads[k]
        opt.velocity[k] = vel
        new[k] = v - opt.lr * vel
    return EncoderParams.from_dict(new, params.agg_radius)


@dataclass
class Metrics:
    step: int
    l_nce: float
    l_color: float
    l_normal: float
    l_total: float
    neg_cos: float
    feat_std_min: float
    n_pairs: int = 0

    CSV_HEADER = "step,l_nce,l_color,l_normal,l_total,neg_cos,feat_std_min"

    def csv_row(self) -> str:
        return (
            f"{self.step},{self.l_nce!r},{self.l_color!r},{self.l_normal!r},"
            f"{self.l_total!r},{self.neg_cos!r},{self.feat_std_min!r}"
        )


def collapse_metrics(fq: np.ndarray, fk: np.ndarray, pairs: np.ndarray):
    """(mean negative-pair cosine, per-dimension std of the joint features)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    s, _ = objective.similarity_matrix(fq[pairs[:, 0]], fk[pairs[:, 1]])
    neg = objective.negative_cosine_mean(s)
    std = np.concatenate([fq, fk]).std(axis=0)
    return neg, std


@dataclass
class SceneInputs:
    """Per-scene tensors the step needs besides the views themselves."""

    pair: ViewPair
    mask_q: np.ndarray
    mask_k: np.ndarray
    feats_q: np.ndarray
    feats_k: np.ndarray
    valid_q: np.ndarray | None
    valid_k: np.ndarray | None


def _prepare_scene(pair: ViewPair, cfg: Config, rng: Rng,
                   normal_valid: np.ndarray | None) -> SceneInputs:
    part = partition_patches(pair.query, pair.key, cfg.mask_grid)
    masks = sample_cross_masks(part, cfg.mask_rate, rng)
    fq = input_features(pair.query.cloud.positions, pair.query.cloud.colors)
    fk = input_features(pair.key.cloud.positions, pair.key.cloud.colors)
    vq = vk = None
    if normal_valid is not None:
        vq = normal_valid[pair.query.cloud.origin_index]
        vk = normal_valid[pair.key.cloud.origin_index]
    return SceneInputs(
        pair=pair, mask_q=masks.mask_query, mask_k=masks.mask_key,
        feats_q=fq, feats_k=fk, valid_q=vq, valid_k=vk,
    )


def train_step(
    batch: list[ViewPair],
    params: EncoderParams,
    opt: OptState,
    cfg: Config,
    rng: Rng,
    normal_valid: dict[int, np.ndarray] | None = None,
    step: int = 0,
) -> tuple[EncoderParams, Metrics | None]:
    """One full pipeline step: mix -> mask -> encode -> match -> losses -> SGD.

    Returns updated params and metrics; if every scene pair in the batch
    has an empty correspondence the step is skipped (params returned
    unchanged, metrics None).
    """
    if len({p.source_scene_id for p in batch}) != len(batch):
        raise DataError("batch scene ids must be distinct")
    mixed = mix_queries(batch, rng)
    scenes: dict[int, SceneInputs] = {}
    for pair in batch:
        nv = None if normal_valid is None else normal_valid.get(pair.source_scene_id)
        scenes[pair.source_scene_id] = _prepare_scene(pair, cfg, rng, nv)

    # forward mixed query groups (mask/token applied per member scene)
    group_caches = []
    group_feats = []
    for group in mixed.mixed:
        gmask = np.concatenate([scenes[sid].mask_q for sid in group.members])
        gfeat = np.concatenate([scenes[sid].feats_q for sid in group.members])
        f, cache = encoder_forward(group.cloud.positions, gfeat, group.scene_id,
                                   params, mask=gmask)
        group_feats.append(f)
        group_caches.append(cache)

    # forward key views (never mixed)
    key_feats = {}
    key_caches = {}
    for pair in batch:
        sc = scenes[pair.source_scene_id]
        zeros = np.zeros(pair.key.n, dtype=np.int64)
        f, cache = encoder_forward(pair.key.cloud.positions, sc.feats_k, zeros,
                                   params, mask=sc.mask_k)
        key_feats[pair.source_scene_id] = f
        key_caches[pair.source_scene_id] = cache

    # split mixed features back to scenes
    q_feats = {}
    for group, f in zip(mixed.mixed, group_feats):
        q_feats.update(group.split(f))

    # per-scene matching (unmasked universe) and losses
    n_scenes = len(batch)
    eps = cfg.matching_epsilon()
    sums = {"l_nce": 0.0, "l_color": 0.0, "l_normal": 0.0}
    neg_cos_vals = []
    total_pairs = 0
    d_q = {}
    d_k = {}
    head_grads = ReconHeads.zeros(cfg.feat_dim)
    for pair in batch:
        sid = pair.source_scene_id
        sc = scenes[sid]
        corr = match_views(
            pair.query, pair.key, eps, cfg.n_max, rng,
            query_subset=np.flatnonzero(~sc.mask_q),
            key_subset=np.flatnonzero(~sc.mask_k),
        )
        br = objective.scene_losses(
            q_feats[sid], key_feats[sid], corr.pairs, sc.mask_q, sc.mask_k,
            pair.query.cloud.colors, pair.key.cloud.colors,
            pair.query.original_normals, pair.key.original_normals,
            params.heads, tau=cfg.tau, lambda_c=cfg.lambda_color,
            lambda_n=cfg.lambda_normal, reduction=cfg.reduction,
            valid_q=sc.valid_q, valid_k=sc.valid_k,
            normal_loss_form=cfg.normal_loss_form, require_pairs=False,
        )
        sums["l_nce"] += br.l_nce
        sums["l_color"] += br.l_color
        sums["l_normal"] += br.l_normal
        if br.n_pairs:
            neg_cos_vals.append(br.neg_cos_mean)
        total_pairs += br.n_pairs
        d_q[sid] = br.d_features[0] / n_scenes
        d_k[sid] = br.d_features[1] / n_scenes
        hg = br.d_heads
        head_grads.color_w += hg.color_w / n_scenes
        head_grads.color_b += hg.color_b / n_scenes
        head_grads.normal_w += hg.normal_w / n_scenes
        head_grads.normal_b += hg.normal_b / n_scenes

    if total_pairs == 0:
        log.warning("step %d: empty correspondence for every pair; skipped", step)
        return params, None

    # backward through every forward, accumulating parameter grads
    grads = zero_grads(params)
    for group, cache in zip(mixed.mixed, group_caches):
        dfull = np.concatenate([d_q[sid] for sid in group.members])
        g = encoder_backward(cache, dfull, params)
        for k, v in g.items():
            grads[k] += v
    for pair in batch:
        sid = pair.source_scene_id
        g = encoder_backward(key_caches[sid], d_k[sid], params)
        for k, v in g.items():
            grads[k] += v
    grads["color_w"] += head_grads.color_w
    grads["color_b"] += head_grads.color_b
    grads["normal_w"] += head_grads.normal_w
    grads["normal_b"] += head_grads.normal_b

    new_params = sgd_step(params, clip_global_norm(grads, cfg.grad_clip), opt)

    all_feats = np.concatenate(group_feats + [key_feats[p.source_scene_id] for p in batch])
    stds = all_feats.std(axis=0)
    l_nce = sums["l_nce"] / n_scenes
    l_color = sums["l_color"] / n_scenes
    l_normal = sums["l_normal"] / n_scenes
    metrics = Metrics(
        step=step,
        l_nce=l_nce,
        l_color=l_color,
        l_normal=l_normal,
        l_total=objective.combined_loss(l_nce, l_color, l_normal,
                                        cfg.lambda_color, cfg.lambda_normal),
        neg_cos=float(np.mean(neg_cos_vals)) if neg_cos_vals else 0.0,
        feat_std_min=float(stds.min()),
        n_pairs=total_pairs,
    )
    return new_params, metrics
