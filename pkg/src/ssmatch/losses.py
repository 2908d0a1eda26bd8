"""Binary cross-entropy losses over prototype matching, plus the analytic
gradient of the matching loss w.r.t. query features for verification
against finite differences.

All loss math runs in float64 end to end (inputs are float32 storage);
the probability is the two-way softmax of the fg/bg cosine pair, BCE is
taken on the fg channel against the binary target.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimMismatchError
from .pipeline import (
    ABLATION_NO_ASBP,
    ABLATION_NO_SSL,
    ABLATION_NO_SSM,
    MatchResult,
    SspConfig,
    adaptive_bg_prototype,
    blend_prototypes,
    broadcast_prototype,
    masked_average_pooling,
)
from .tensor_core import (
    COSINE_EPS,
    MASK_BINARY,
    ROLE_BACKGROUND,
    ROLE_FOREGROUND,
    FeatureMap,
    Mask,
    Prototype,
    PrototypeField,
)

BgPrototype = Union[Prototype, PrototypeField]


def _bg_field_values(bg: BgPrototype, spatial: tuple[int, int]) -> np.ndarray:
    if isinstance(bg, Prototype):
        h, w = spatial
        return np.ascontiguousarray(
            np.broadcast_to(bg.values[:, None, None], (bg.channels, h, w)))
    if bg.spatial != spatial:
        raise DimMismatchError(f"bg field {bg.spatial} vs feature {spatial}")
    return bg.values


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _pair_logits(fg_proto: Prototype, bg: BgPrototype, feat: FeatureMap,
                 temperature: float) -> np.ndarray:
    """t * (cos_fg - cos_bg) per pixel, float64, clamped cosines."""
    if fg_proto.channels != feat.channels:
        raise DimMismatchError("prototype/feature channel mismatch")
    # prototype sides unit-normalized before the eps guard, matching the
    # cosine kernel in tensor_core
    x = feat.data.astype(np.float64)
    a = fg_proto.values.astype(np.float64)
    b = _bg_field_values(bg, feat.spatial).astype(np.float64)
    an = float(np.sqrt(a @ a))
    a = a / (an if an > 0.0 else 1.0)
    bn = np.sqrt(np.einsum("chw,chw->hw", b, b))
    b = b / np.where(bn == 0.0, 1.0, bn)
    d = np.sqrt(np.einsum("chw,chw->hw", x, x)) + COSINE_EPS
    u = np.clip(np.einsum("c,chw->hw", a, x) / d, -1.0, 1.0)
    v = np.clip(np.einsum("chw,chw->hw", b, x) / d, -1.0, 1.0)
    return temperature * (u - v)


def _bce_mean(z: np.ndarray, target: np.ndarray) -> float:
    # -[g log sigma(z) + (1-g) log sigma(-z)] in softplus form
    per_pixel = target * _softplus(-z) + (1.0 - target) * _softplus(z)
    return float(per_pixel.mean())


def loss_matching(fg_proto: Prototype, bg: BgPrototype, query: FeatureMap,
                  gq: Mask, temperature: float = 1.0) -> float:
    """Mean BCE between the softmaxed matching prediction and the target."""
    if gq.kind != MASK_BINARY:
        raise ValueError("loss target must be a binary mask")
    if gq.spatial != query.spatial:
        raise DimMismatchError("target/query dims disagree")
    z = _pair_logits(fg_proto, bg, query, temperature)
    return _bce_mean(z, gq.data.astype(np.float64))


def loss_self(fg_proto: Prototype, bg: BgPrototype, feature: FeatureMap,
              gt: Mask, temperature: float = 1.0) -> float:
    """Self-matching BCE: a feature map scored against prototypes pooled
    from itself, supervised by its own mask. Same math as loss_matching."""
    return loss_matching(fg_proto, bg, feature, gt, temperature)


def loss_total(lm: float, lq: float, ls: float, cfg: SspConfig) -> float:
    return cfg.lambda1 * lm + cfg.lambda2 * lq + cfg.lambda3 * ls


def loss_grad_query(fg_proto: Prototype, bg: BgPrototype, query: FeatureMap,
                    gq: Mask, temperature: float = 1.0) -> np.ndarray:
    """Analytic d(loss_matching)/d(query), C x H x W float64.

    Prototypes are constants. Per pixel x against a unit prototype ahat
    (writing D = |x| + eps):
        cos = (ahat . x) / D
        d cos / dx = (ahat - cos * xhat) / D
    zeroed where the forward clamp is active; xhat = 0 at |x| = 0.
    """
    if gq.kind != MASK_BINARY:
        raise ValueError("loss target must be a binary mask")
    c, h, w = query.data.shape
    n = h * w
    x = query.data.reshape(c, n).astype(np.float64)
    a = fg_proto.values.astype(np.float64)
    b = _bg_field_values(bg, query.spatial).reshape(c, n).astype(np.float64)
    g = gq.data.reshape(n).astype(np.float64)

    an = float(np.sqrt(a @ a))
    a = a / (an if an > 0.0 else 1.0)
    bn = np.sqrt(np.einsum("cn,cn->n", b, b))
    b = b / np.where(bn == 0.0, 1.0, bn)
    xn = np.sqrt(np.einsum("cn,cn->n", x, x))
    xhat = np.divide(x, xn[None, :], out=np.zeros_like(x), where=xn[None, :] > 0.0)

    d = xn + COSINE_EPS
    u_raw = np.einsum("c,cn->n", a, x) / d
    v_raw = np.einsum("cn,cn->n", b, x) / d
    u = np.clip(u_raw, -1.0, 1.0)
    v = np.clip(v_raw, -1.0, 1.0)

    du = (a[:, None] - u_raw[None, :] * xhat) / d[None, :]
    dv = (b - v_raw[None, :] * xhat) / d[None, :]
    du[:, np.abs(u_raw) > 1.0] = 0.0
    dv[:, np.abs(v_raw) > 1.0] = 0.0

    z = temperature * (u - v)
    p = _sigmoid64(z)
    dz = (p - g) / n
    grad = (temperature * dz)[None, :] * (du - dv)
    return grad.reshape(c, h, w)


def _sigmoid64(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def numerical_grad_query(fg_proto: Prototype, bg: BgPrototype, query: FeatureMap,
                         gq: Mask, temperature: float = 1.0,
                         step: float = 1e-3) -> np.ndarray:
    """Central finite differences of loss_matching over every query
    component. Verification oracle; O(C*H*W) forward passes."""
    base = query.data.astype(np.float64)
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        plus[idx] += step
        minus = base.copy()
        minus[idx] -= step
        lp = loss_matching(fg_proto, bg, FeatureMap(plus.astype(np.float32)), gq, temperature)
        lm = loss_matching(fg_proto, bg, FeatureMap(minus.astype(np.float32)), gq, temperature)
        grad[idx] = (lp - lm) / (2.0 * step)
    return grad


def gradient_check(cases: int = 20, shape: tuple[int, int, int] = (3, 4, 4),
                   seed: int = 0, step: float = 1e-3, rel_tol: float = 1e-3,
                   exclude_below: float = 1e-6, temperature: float = 1.0) -> dict:
    """Run analytic-vs-finite-difference agreement on random cases.

    Components where both gradients are below ``exclude_below`` in magnitude
    are skipped (relative error is meaningless at the noise floor).
    """
    c, h, w = shape
    worst = 0.0
    checked = 0
    excluded = 0
    for case in range(cases):
        rng = np.random.default_rng(np.random.SeedSequence([seed, case]))
        query = FeatureMap(rng.standard_normal((c, h, w)).astype(np.float32))
        fg = Prototype(rng.standard_normal(c).astype(np.float32), ROLE_FOREGROUND)
        bg = PrototypeField(rng.standard_normal((c, h, w)).astype(np.float32),
                            ROLE_BACKGROUND)
        gq = Mask((rng.random((h, w)) < 0.5).astype(np.float32), MASK_BINARY)
        analytic = loss_grad_query(fg, bg, query, gq, temperature)
        numeric = numerical_grad_query(fg, bg, query, gq, temperature, step)
        mags = np.maximum(np.abs(analytic), np.abs(numeric))
        keep = mags >= exclude_below
        excluded += int((~keep).sum())
        checked += int(keep.sum())
        if np.any(keep):
            rel = np.abs(analytic - numeric)[keep] / mags[keep]
            worst = max(worst, float(rel.max()))
    return {
        "cases": cases,
        "shape": list(shape),
        "step": step,
        "rel_tol": rel_tol,
        "components_checked": checked,
        "components_excluded": excluded,
        "max_rel_error": worst,
        "passed": worst < rel_tol,
    }


# ---------------------------------------------------------------------------
# per-episode loss reporting


def episode_losses(supports: Sequence[tuple[FeatureMap, Mask]], query: FeatureMap,
                   query_gt: Mask, result: MatchResult, cfg: SspConfig,
                   ablation: str = "full") -> dict:
    """Loss block for one evaluated episode.

    matching: BCE of the blended-prototype prediction vs ground truth.
    query_self: BCE of the query scored against its own self prototypes
      (None when a fallback dropped them).
    support_self: mean over shots of each support scored against prototypes
      pooled from its own ground truth (None when no shot qualifies).
    total: weighted sum over the defined members. Under no_ssl_metrics the
    self losses are not reported and total covers the matching loss only.
    """
    ps = result.prototypes
    t = cfg.temperature
    if ablation == ABLATION_NO_SSM:
        lm = loss_matching(ps.fg_support, ps.bg_support, query, query_gt, t)
    else:
        blended_fg, blended_bg = blend_prototypes(ps, cfg, query.spatial)
        lm = loss_matching(blended_fg, blended_bg, query, query_gt, t)

    lq: Optional[float] = None
    ls: Optional[float] = None
    if ablation not in (ABLATION_NO_SSL, ABLATION_NO_SSM):
        if ps.fg_self is not None and ps.bg_self is not None:
            lq = loss_self(ps.fg_self, ps.bg_self, query, query_gt, t)
        ls = _support_self_loss(supports, cfg, adaptive=ablation != ABLATION_NO_ASBP)

    total = cfg.lambda1 * lm
    if lq is not None:
        total += cfg.lambda2 * lq
    if ls is not None:
        total += cfg.lambda3 * ls
    return {"matching": lm, "query_self": lq, "support_self": ls, "total": total}


def _support_self_loss(supports, cfg: SspConfig, adaptive: bool) -> Optional[float]:
    vals = []
    for feat, mask in supports:
        inv = mask.inverted()
        if mask.active_pixels() == 0 or inv.active_pixels() == 0:
            continue
        fg = masked_average_pooling(feat, mask, ROLE_FOREGROUND)
        if adaptive:
            bg: BgPrototype = adaptive_bg_prototype(feat, inv)
        else:
            bg = broadcast_prototype(
                masked_average_pooling(feat, inv, ROLE_BACKGROUND), feat.spatial)
        vals.append(loss_self(fg, bg, feat, mask, cfg.temperature))
    if not vals:
        return None
    return float(np.mean(vals))
