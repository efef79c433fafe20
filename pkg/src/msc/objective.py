"""Loss functions with analytic gradients.

Contrastive term: cosine similarity matrix over matched feature rows and a
temperature-scaled softmax cross-entropy on its diagonal (mean reduction by
default; ``reduction="sum"`` gives the plain summed form). Reconstruction
terms: masked color MSE and masked normal cosine loss through per-channel
linear heads. The combined loss is the weighted sum with unit weights by
default.

Everything is plain float64 numpy; every gradient here is exercised
against central finite differences in the test suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NoPositivePairsError, NumericalError

log = logging.getLogger(__name__)

NORM_GUARD = 1e-8


def similarity_matrix(fq: np.ndarray, fk: np.ndarray):
    """Pairwise cosine similarity of matched feature rows.

    Returns ``(S, cache)`` where rows of ``fq``/``fk`` are ordered by the
    correspondence map, so ``S[i, i]`` is the i-th positive pair. Zero-norm
    rows are a collapse signature and raise NumericalError.
    """
    fq = np.asarray(fq, dtype=np.float64)
    fk = np.asarray(fk, dtype=np.float64)
    if fq.ndim != 2 or fk.ndim != 2 or fq.shape != fk.shape:
        raise DataError(f"matched feature shapes disagree: {fq.shape} vs {fk.shape}")
    qn = np.sqrt(np.sum(fq * fq, axis=1))
    kn = np.sqrt(np.sum(fk * fk, axis=1))
    if fq.shape[0] and (qn.min() == 0.0 or kn.min() == 0.0):
        raise NumericalError("zero-norm feature row in similarity matrix")
    qh = fq / qn[:, None]
    kh = fk / kn[:, None]
    s = qh @ kh.T
    return s, (qh, kh, qn, kn, s)


def similarity_backward(cache, ds: np.ndarray):
    """Chain dLoss/dS back to the matched feature rows."""
    qh, kh, qn, kn, s = cache
    row = np.sum(ds * s, axis=1)
    col = np.sum(ds * s, axis=0)
    dfq = (ds @ kh - row[:, None] * qh) / qn[:, None]
    dfk = (ds.T @ qh - col[:, None] * kh) / kn[:, None]
    return dfq, dfk


def info_nce(s: np.ndarray, tau: float, reduction: str = "mean"):
    """Temperature-scaled softmax cross-entropy on the matched diagonal.

    Returns ``(loss, dLoss/dS)``. Uses the log-sum-exp max shift; n'=1 is
    a single-class softmax with loss exactly 0.
    """
    if tau <= 0:
        raise DataError("temperature must be > 0")
    if reduction not in ("mean", "sum"):
        raise DataError(f"unknown reduction {reduction!r}")
    n = s.shape[0]
    if n == 0:
        raise NoPositivePairsError("no positive pairs")
    logits = s / tau
    shift = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - shift)
    denom = z.sum(axis=1, keepdims=True)
    log_softmax_diag = (logits - shift - np.log(denom))[np.arange(n), np.arange(n)]
    loss = float(-log_softmax_diag.sum()) + 0.0  # normalize IEEE -0.0
    p = z / denom
    dlogits = p.copy()
    dlogits[np.arange(n), np.arange(n)] -= 1.0
    if reduction == "mean":
        loss /= n
        dlogits /= n
    return loss, dlogits / tau


def head_forward(features: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Linear projection d -> 3 used by both reconstruction heads."""
    return features @ weight + bias


def head_backward(features: np.ndarray, weight: np.ndarray, dpred: np.ndarray):
    """Returns (dFeatures, dWeight, dBias)."""
    return dpred @ weight.T, features.T @ dpred, dpred.sum(axis=0)


@dataclass
class ReconHeads:
    """Color and normal linear heads (d -> 3 each)."""

    color_w: np.ndarray
    color_b: np.ndarray
    normal_w: np.ndarray
    normal_b: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "ReconHeads":
        return cls(
            color_w=np.zeros((dim, 3)),
            color_b=np.zeros(3),
            normal_w=np.zeros((dim, 3)),
            normal_b=np.zeros(3),
        )

    @classmethod
    def init(cls, dim: int, rng) -> "ReconHeads":
        sc = 1.0 / np.sqrt(dim)
        return cls(
            color_w=rng.normal(0.0, sc, (dim, 3)),
            color_b=np.zeros(3),
            normal_w=rng.normal(0.0, sc, (dim, 3)),
            normal_b=np.zeros(3),
        )


def color_loss(preds: list[np.ndarray], targets: list[np.ndarray], masks: list[np.ndarray]):
    """Masked color MSE over both views.

    Sum of squared color errors at masked points of all views divided by
    the total masked count. Returns ``(loss, dpred_list)``; zero masked
    points contribute 0 with a warning.
    """
    total = int(sum(int(m.sum()) for m in masks))
    grads = [np.zeros_like(p) for p in preds]
    if total == 0:
        log.warning("color loss: zero masked points, contribution 0")
        return 0.0, grads
    loss = 0.0
    for g, p, t, m in zip(grads, preds, targets, masks):
        e = p[m] - t[m]
        loss += float(np.sum(e * e))
        g[m] = 2.0 * e / total
    return loss / total, grads


def normal_loss(
    preds: list[np.ndarray],
    targets: list[np.ndarray],
    masks: list[np.ndarray],
    valids: list[np.ndarray] | None = None,
):
    """Masked normal cosine loss: 1 - mean cos(pred, target).

    Predictions are L2-normalized with a +1e-8 guard; targets must be unit.
    Points with invalid targets are excluded from both the sum and the
    count. ``literal_form=False`` everywhere: minimizing aligns normals.
    Returns ``(loss, dpred_list)``.
    """
    if valids is None:
        valids = [np.ones(p.shape[0], dtype=bool) for p in preds]
    eff = [m & v for m, v in zip(masks, valids)]
    total = int(sum(int(m.sum()) for m in eff))
    grads = [np.zeros_like(p) for p in preds]
    if total == 0:
        log.warning("normal loss: no valid masked points, contribution 0")
        return 0.0, grads
    cos_sum = 0.0
    for g, p, t, m in zip(grads, preds, targets, eff):
        pm = p[m]
        tm = t[m]
        r = np.sqrt(np.sum(pm * pm, axis=1))
        denom = r + NORM_GUARD
        cos = np.sum(pm * tm, axis=1) / denom
        cos_sum += float(cos.sum())
        # d cos / d p = t/(r+eps) - (p.t) p / (r (r+eps)^2); p=0 edge: second term -> 0
        safe_r = np.where(r > 0, r, 1.0)
        dcos = tm / denom[:, None] - (
            (np.sum(pm * tm, axis=1) / (safe_r * denom * denom))[:, None] * pm
        )
        g[m] = -dcos / total
    return 1.0 - cos_sum / total, grads


def raw_cosine_normal_loss(preds, targets, masks, valids=None):
    """Literal mean-cosine form (decreases when normals anti-align)."""
    loss, grads = normal_loss(preds, targets, masks, valids)
    return 1.0 - loss, [-g for g in grads]


@dataclass
class LossBreakdown:
    """Loss values plus gradients w.r.t. features and head parameters."""

    l_nce: float
    l_color: float
    l_normal: float
    l_total: float
    d_features: list[np.ndarray] = field(default_factory=list)
    d_heads: ReconHeads | None = None
    n_pairs: int = 0
    neg_cos_mean: float = 0.0


def combined_loss(l_nce: float, l_color: float, l_normal: float,
                  lambda_c: float = 1.0, lambda_n: float = 1.0) -> float:
    """Weighted sum of the three objectives."""
    return l_nce + lambda_c * l_color + lambda_n * l_normal


def negative_cosine_mean(s: np.ndarray) -> float:
    """Mean off-diagonal entry of a matched similarity matrix (0 if n'<2)."""
    n = s.shape[0]
    if n < 2:
        return 0.0
    return float((s.sum() - np.trace(s)) / (n * (n - 1)))


def scene_losses(
    fq: np.ndarray,
    fk: np.ndarray,
    pairs: np.ndarray,
    mask_q: np.ndarray,
    mask_k: np.ndarray,
    color_t_q: np.ndarray,
    color_t_k: np.ndarray,
    normal_t_q: np.ndarray,
    normal_t_k: np.ndarray,
    heads: ReconHeads,
    tau: float = 0.4,
    lambda_c: float = 1.0,
    lambda_n: float = 1.0,
    reduction: str = "mean",
    valid_q: np.ndarray | None = None,
    valid_k: np.ndarray | None = None,
    normal_loss_form: str = "one_minus_cos",
    require_pairs: bool = True,
) -> LossBreakdown:
    """Full combined objective for one scene pair, with all gradients.

    ``pairs`` rows index (query, key) feature rows; pairs touching a masked
    point carry no instance identity and are dropped before the contrastive
    term. Reconstruction runs on masked rows through the linear heads.
    With ``require_pairs=False`` an empty (post-filter) pair set yields a
    reconstruction-only breakdown instead of raising.
    """
    fq = np.asarray(fq, dtype=np.float64)
    fk = np.asarray(fk, dtype=np.float64)
    mask_q = np.asarray(mask_q, dtype=bool)
    mask_k = np.asarray(mask_k, dtype=bool)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    keep = ~mask_q[pairs[:, 0]] & ~mask_k[pairs[:, 1]]
    pairs = pairs[keep]
    dfq = np.zeros_like(fq)
    dfk = np.zeros_like(fk)

    if pairs.shape[0] == 0:
        if require_pairs:
            raise NoPositivePairsError("no positive pairs")
        l_nce, neg_cos, n_pairs = 0.0, 0.0, 0
    else:
        s, cache = similarity_matrix(fq[pairs[:, 0]], fk[pairs[:, 1]])
        l_nce, ds = info_nce(s, tau, reduction)
        g_q, g_k = similarity_backward(cache, ds)
        np.add.at(dfq, pairs[:, 0], g_q)
        np.add.at(dfk, pairs[:, 1], g_k)
        neg_cos = negative_cosine_mean(s)
        n_pairs = pairs.shape[0]

    pred_c = [head_forward(fq, heads.color_w, heads.color_b),
              head_forward(fk, heads.color_w, heads.color_b)]
    l_color, d_pred_c = color_loss(pred_c, [color_t_q, color_t_k], [mask_q, mask_k])

    pred_n = [head_forward(fq, heads.normal_w, heads.normal_b),
              head_forward(fk, heads.normal_w, heads.normal_b)]
    valids = None
    if valid_q is not None or valid_k is not None:
        valids = [
            np.ones(fq.shape[0], dtype=bool) if valid_q is None else np.asarray(valid_q, bool),
            np.ones(fk.shape[0], dtype=bool) if valid_k is None else np.asarray(valid_k, bool),
        ]
    if normal_loss_form == "one_minus_cos":
        l_normal, d_pred_n = normal_loss(pred_n, [normal_t_q, normal_t_k],
                                         [mask_q, mask_k], valids)
    elif normal_loss_form == "raw_cos":
        l_normal, d_pred_n = raw_cosine_normal_loss(pred_n, [normal_t_q, normal_t_k],
                                                    [mask_q, mask_k], valids)
    else:
        raise DataError(f"unknown normal_loss_form {normal_loss_form!r}")

    d_heads = ReconHeads.zeros(fq.shape[1])
    for f, dcp, dnp_, df in ((fq, d_pred_c[0], d_pred_n[0], dfq),
                             (fk, d_pred_c[1], d_pred_n[1], dfk)):
        dfc, dwc, dbc = head_backward(f, heads.color_w, dcp)
        dfn, dwn, dbn = head_backward(f, heads.normal_w, dnp_)
        df += lambda_c * dfc + lambda_n * dfn
        d_heads.color_w += lambda_c * dwc
        d_heads.color_b += lambda_c * dbc
        d_heads.normal_w += lambda_n * dwn
        d_heads.normal_b += lambda_n * dbn

    return LossBreakdown(
        l_nce=l_nce,
        l_color=l_color,
        l_normal=l_normal,
        l_total=combined_loss(l_nce, l_color, l_normal, lambda_c, lambda_n),
        d_features=[dfq, dfk],
        d_heads=d_heads,
        n_pairs=n_pairs,
        neg_cos_mean=neg_cos,
    )
