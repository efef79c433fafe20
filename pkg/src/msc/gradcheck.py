"""Finite-difference verification of every analytic gradient.

Backs ``msc gradcheck``: builds a small random scene instance, runs the
full composite objective through the encoder, and compares analytic
gradients against central finite differences (f64, h=1e-5) on a sampled
subset of coordinates per parameter block. ReLU kinks make finite
differences invalid near zero pre-activations, so instances are redrawn
until all pre-activation magnitudes clear a safety margin.

``perturb`` deliberately corrupts one gradient block so the check itself
can be shown to catch errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objective
from .config import Config
from .errors import NumericalError
from .maskgen import apply_mask_token
from .rng import DOMAIN_GRADCHECK, Rng
from .toytrain import C_IN, EncoderParams, encoder_backward, encoder_forward

FD_H = 1e-5
TOL_COMPOSITE = 1e-4
TOL_NCE = 1e-6
# an FD step moves any pre-activation by at most ~|input row| * h ~ 1e-4,
# so this margin keeps every ReLU's side stable during differencing
KINK_MARGIN = 2e-4
COORDS_PER_BLOCK = 24


@dataclass
class GradReport:
    max_rel_err: dict[str, float]
    tolerance: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(self.max_rel_err[k] <= self.tolerance[k] for k in self.max_rel_err)

    def lines(self) -> list[str]:
        out = []
        for k in sorted(self.max_rel_err):
            ok = "pass" if self.max_rel_err[k] <= self.tolerance[k] else "FAIL"
            out.append(f"{k:24s} max_rel_err={self.max_rel_err[k]:.3e} "
                       f"tol={self.tolerance[k]:.0e} {ok}")
        return out


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    fd = np.asarray(fd, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)), 1e-12)
    return float(np.linalg.norm(analytic - fd)) / denom


@dataclass
class _Instance:
    positions_q: np.ndarray
    positions_k: np.ndarray
    feats_q: np.ndarray
    feats_k: np.ndarray
    mask_q: np.ndarray
    mask_k: np.ndarray
    pairs: np.ndarray
    color_t_q: np.ndarray
    color_t_k: np.ndarray
    normal_t_q: np.ndarray
    normal_t_k: np.ndarray
    params: EncoderParams
    cfg: Config


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.sqrt(np.sum(a * a, axis=1))[:, None]


def _build_instance(seed: int, attempt: int, cfg: Config, n: int = 30) -> _Instance:
    rng = Rng.for_stream(seed, DOMAIN_GRADCHECK, attempt)
    positions_q = rng.uniform(0.0, 1.0, (n, 3))
    positions_k = rng.uniform(0.0, 1.0, (n, 3))
    feats_q = rng.uniform(0.05, 0.95, (n, C_IN))
    feats_k = rng.uniform(0.05, 0.95, (n, C_IN))
    mask_q = rng.random(n) < 0.3
    mask_k = (rng.random(n) < 0.3) & ~mask_q
    perm = rng.permutation(n)
    n_pairs = max(2, n // 2)
    pairs = np.stack([np.arange(n_pairs, dtype=np.int64),
                      perm[:n_pairs].astype(np.int64)], axis=1)
    params = EncoderParams.init(hidden=16, dim=8, rng=rng, agg_radius=0.4)
    return _Instance(
        positions_q=positions_q,
        positions_k=positions_k,
        feats_q=feats_q,
        feats_k=feats_k,
        mask_q=mask_q,
        mask_k=mask_k,
        pairs=pairs,
        color_t_q=rng.uniform(0.0, 1.0, (n, 3)),
        color_t_k=rng.uniform(0.0, 1.0, (n, 3)),
        normal_t_q=_unit_rows(rng.normal(0.0, 1.0, (n, 3))),
        normal_t_k=_unit_rows(rng.normal(0.0, 1.0, (n, 3))),
        params=params,
        cfg=cfg,
    )


def _composite_loss(inst: _Instance, params: EncoderParams) -> float:
    sq = np.zeros(inst.feats_q.shape[0], dtype=np.int64)
    fq, _ = encoder_forward(inst.positions_q, inst.feats_q, sq, params, inst.mask_q)
    fk, _ = encoder_forward(inst.positions_k, inst.feats_k, sq, params, inst.mask_k)
    br = objective.scene_losses(
        fq, fk, inst.pairs, inst.mask_q, inst.mask_k,
        inst.color_t_q, inst.color_t_k, inst.normal_t_q, inst.normal_t_k,
        params.heads, tau=inst.cfg.tau, lambda_c=inst.cfg.lambda_color,
        lambda_n=inst.cfg.lambda_normal, reduction=inst.cfg.reduction,
        normal_loss_form=inst.cfg.normal_loss_form, require_pairs=False,
    )
    return br.l_total


def _composite_grads(inst: _Instance, params: EncoderParams) -> dict[str, np.ndarray]:
    sq = np.zeros(inst.feats_q.shape[0], dtype=np.int64)
    fq, cq = encoder_forward(inst.positions_q, inst.feats_q, sq, params, inst.mask_q)
    fk, ck = encoder_forward(inst.positions_k, inst.feats_k, sq, params, inst.mask_k)
    br = objective.scene_losses(
        fq, fk, inst.pairs, inst.mask_q, inst.mask_k,
        inst.color_t_q, inst.color_t_k, inst.normal_t_q, inst.normal_t_k,
        params.heads, tau=inst.cfg.tau, lambda_c=inst.cfg.lambda_color,
        lambda_n=inst.cfg.lambda_normal, reduction=inst.cfg.reduction,
        normal_loss_form=inst.cfg.normal_loss_form, require_pairs=False,
    )
    grads = encoder_backward(cq, br.d_features[0], params)
    gk = encoder_backward(ck, br.d_features[1], params)
    for k, v in gk.items():
        grads[k] = grads[k] + v
    grads["color_w"] += br.d_heads.color_w
    grads["color_b"] += br.d_heads.color_b
    grads["normal_w"] += br.d_heads.normal_w
    grads["normal_b"] += br.d_heads.normal_b
    return grads


def _kink_margin(inst: _Instance, params: EncoderParams) -> float:
    """Smallest distance to any non-smooth point along the FD path.

    Covers ReLU pre-activations and the normal head's prediction norms
    (the cosine loss is singular where a masked prediction row vanishes);
    the normal-pred norms are down-weighted so one margin threshold works
    for both.
    """
    from . import kernels

    margin = np.inf
    sq = np.zeros(inst.feats_q.shape[0], dtype=np.int64)
    for pos, feats, mask in ((inst.positions_q, inst.feats_q, inst.mask_q),
                             (inst.positions_k, inst.feats_k, inst.mask_k)):
        x = apply_mask_token(feats, mask, params.token)
        a1 = x @ params.w1 + params.b1
        r1 = np.maximum(a1, 0.0)
        a2 = r1 @ params.w2 + params.b2
        r2 = np.maximum(a2, 0.0)
        counts, flat = kernels.radius_neighbors(pos, sq, params.agg_radius)
        m = kernels.csr_row_sum(r2, flat, counts) / counts[:, None]
        u = np.concatenate([r2, m], axis=1)
        a3 = u @ params.w3 + params.b3
        r3 = np.maximum(a3, 0.0)
        f = r3 @ params.w4 + params.b4
        for a in (a1, a2, a3):
            if a.size:
                margin = min(margin, float(np.min(np.abs(a))))
        if mask.any():
            pred_n = f[mask] @ params.heads.normal_w + params.heads.normal_b
            norms = np.sqrt(np.sum(pred_n * pred_n, axis=1))
            margin = min(margin, float(norms.min()) / 100.0)
    return margin


def usable_instance(seed: int, cfg: Config, n: int = 30, attempts: int = 64) -> _Instance:
    """Draw instances until ReLU pre-activations clear the FD safety margin."""
    for attempt in range(attempts):
        inst = _build_instance(seed, attempt, cfg, n)
        if _kink_margin(inst, inst.params) > KINK_MARGIN:
            return inst
    raise NumericalError("could not draw a kink-free gradcheck instance")


def _fd_block(loss_at, params: EncoderParams, block: str, coords: np.ndarray,
              h: float = FD_H) -> np.ndarray:
    base = params.as_dict()
    out = np.empty(len(coords))
    flat = base[block].ravel()
    for t, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + h
        lp = loss_at(params)
        flat[c] = orig - h
        lm = loss_at(params)
        flat[c] = orig
        out[t] = (lp - lm) / (2.0 * h)
    return out


def check_composite(seed: int, cfg: Config, n: int = 30,
                    perturb: str | None = None) -> GradReport:
    """FD-check the full loss gradient w.r.t. every parameter block."""
    inst = usable_instance(seed, cfg, n)
    params = inst.params
    analytic = _composite_grads(inst, params)
    if perturb is not None:
        analytic[perturb] = analytic[perturb] + 1e-2

    rng = Rng.for_stream(seed, DOMAIN_GRADCHECK, 9999)
    errs = {}
    tols = {}
    for block, g in analytic.items():
        size = g.size
        take = min(COORDS_PER_BLOCK, size)
        coords = np.sort(rng.choice(size, take, replace=False))
        fd = _fd_block(lambda p: _composite_loss(inst, p), params, block, coords)
        errs[f"composite/{block}"] = rel_err(g.ravel()[coords], fd)
        tols[f"composite/{block}"] = TOL_COMPOSITE
    return GradReport(max_rel_err=errs, tolerance=tols)


def check_info_nce(seed: int) -> GradReport:
    """FD-check dLoss/dS of the contrastive term alone (tight tolerance)."""
    rng = Rng.for_stream(seed, DOMAIN_GRADCHECK, 777)
    n = 6
    s = np.clip(rng.normal(0.0, 0.5, (n, n)), -0.99, 0.99)
    errs = {}
    tols = {}
    for reduction in ("mean", "sum"):
        _, ds = objective.info_nce(s, 0.4, reduction)
        fd = np.empty_like(s)
        for i in range(n):
            for j in range(n):
                sp = s.copy(); sp[i, j] += FD_H
                sm = s.copy(); sm[i, j] -= FD_H
                lp, _ = objective.info_nce(sp, 0.4, reduction)
                lm, _ = objective.info_nce(sm, 0.4, reduction)
                fd[i, j] = (lp - lm) / (2.0 * FD_H)
        errs[f"info_nce/{reduction}"] = rel_err(ds, fd)
        tols[f"info_nce/{reduction}"] = TOL_NCE
    return GradReport(max_rel_err=errs, tolerance=tols)


def full_report(seed: int, cfg: Config, perturb: str | None = None) -> GradReport:
    a = check_info_nce(seed)
    b = check_composite(seed, cfg, perturb=perturb)
    return GradReport(
        max_rel_err={**a.max_rel_err, **b.max_rel_err},
        tolerance={**a.tolerance, **b.tolerance},
    )
