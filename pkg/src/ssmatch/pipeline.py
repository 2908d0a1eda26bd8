"""Self-support prototype matching.

Stages, in order:

  1. initial match: support prototypes (masked average pooling, averaged
     over shots) scored against the query by cosine + pairwise softmax
  2. threshold the initial prediction into confident fg/bg estimates
  3. self prototypes from the query's own features: pooled fg vector,
     affinity-aggregated per-pixel bg field
  4. blend support and self prototypes, rematch
  5. optional refinement pass: re-threshold, rebuild, reblend, rematch,
     then combine the two predictions

Empty thresholded estimates never raise: the configured fallback either
drops the self prototype (weights renormalize to the support one, making
the stage collapse to the initial match bit-for-bit) or pools the top-k
most confident pixels instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimMismatchError, EmptyMaskError
from .tensor_core import (
    MASK_BINARY,
    MASK_PROBABILITY,
    ROLE_BACKGROUND,
    ROLE_FOREGROUND,
    AffinityMatrix,
    FeatureMap,
    Mask,
    Prototype,
    PrototypeField,
    column_softmax,
    cosine_field_map,
    cosine_map,
    masked_average_pooling,
    matmul,
    pairwise_softmax,
)

FALLBACK_SUPPORT_ONLY = "support_only"
FALLBACK_TOPK = "topk"

ABLATION_FULL = "full"
ABLATION_NO_SSM = "no_ssm"
ABLATION_NO_SSL = "no_ssl_metrics"
ABLATION_NO_ASBP = "no_asbp"
ABLATIONS = (ABLATION_FULL, ABLATION_NO_SSM, ABLATION_NO_SSL, ABLATION_NO_ASBP)

_WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SspConfig:
    """Pipeline knobs. Defaults are the recommended operating point."""

    tau_fg: float = 0.7
    tau_bg: float = 0.6
    alpha1: float = 0.5
    alpha2: float = 0.5
    refine_alpha1: float = 0.5
    refine_alpha2: float = 0.2
    refine_alpha3: float = 0.3
    beta1: float = 0.3
    beta2: float = 0.7
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.2
    temperature: float = 1.0
    empty_mask_fallback: str = FALLBACK_SUPPORT_ONLY
    fallback_topk: int = 16
    enable_refine: bool = True

    def __post_init__(self):
        if not (0.0 < self.tau_fg < 1.0 and 0.0 < self.tau_bg < 1.0):
            raise ConfigError("tau_fg and tau_bg must lie strictly in (0, 1)")
        for name in ("alpha1", "alpha2", "refine_alpha1", "refine_alpha2",
                     "refine_alpha3", "beta1", "beta2",
                     "lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.alpha1 + self.alpha2 <= 0.0:
            raise ConfigError("alpha1 + alpha2 must be positive")
        if abs(self.beta1 + self.beta2 - 1.0) > _WEIGHT_SUM_TOL:
            raise ConfigError("beta1 + beta2 must equal 1")
        refine_sum = self.refine_alpha1 + self.refine_alpha2 + self.refine_alpha3
        if abs(refine_sum - 1.0) > _WEIGHT_SUM_TOL:
            raise ConfigError("refine_alpha1 + refine_alpha2 + refine_alpha3 must equal 1")
        if not self.temperature > 0.0:
            raise ConfigError("temperature must be positive")
        if self.empty_mask_fallback not in (FALLBACK_SUPPORT_ONLY, FALLBACK_TOPK):
            raise ConfigError(
                f"empty_mask_fallback must be '{FALLBACK_SUPPORT_ONLY}' or "
                f"'{FALLBACK_TOPK}', got {self.empty_mask_fallback!r}")
        if self.fallback_topk < 1:
            raise ConfigError("fallback_topk must be >= 1")
        if not isinstance(self.enable_refine, bool):
            raise ConfigError("enable_refine must be a boolean")

    @classmethod
    def from_dict(cls, d: dict) -> "SspConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        coerced = {}
        for key, value in d.items():
            if key == "empty_mask_fallback":
                coerced[key] = str(value)
            elif key == "fallback_topk":
                coerced[key] = _as_int(key, value)
            elif key == "enable_refine":
                coerced[key] = _as_bool(key, value)
            else:
                coerced[key] = _as_float(key, value)
        return cls(**coerced)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_overrides(self, overrides: dict) -> "SspConfig":
        merged = self.to_dict()
        merged.update(overrides)
        return SspConfig.from_dict(merged)


def _as_float(key, value):
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be a number, got boolean")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number, got {value!r}") from None


def _as_int(key, value):
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be an integer, got boolean")
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    if isinstance(value, float) and value != out:
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return out


def _as_bool(key, value):
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    if value in (0, 1):
        return bool(value)
    raise ConfigError(f"{key} must be a boolean, got {value!r}")


@dataclass(frozen=True)
class PrototypeSet:
    """All prototypes produced for one query, self/refined members optional."""

    fg_support: Prototype
    bg_support: Prototype
    fg_self: Optional[Prototype] = None
    bg_self: Optional[PrototypeField] = None
    fg_refined: Optional[Prototype] = None
    bg_refined: Optional[PrototypeField] = None

    def __post_init__(self):
        c = self.fg_support.channels
        for name in ("bg_support", "fg_self", "bg_self", "fg_refined", "bg_refined"):
            member = getattr(self, name)
            if member is not None and member.channels != c:
                raise DimMismatchError(f"{name} has C={member.channels}, expected {c}")


@dataclass(frozen=True)
class PredictionPair:
    """Per-pixel two-way prediction: probability maps plus the raw cosine
    score maps they were softmaxed from (absent for blended combinations)."""

    fg: Mask
    bg: Mask
    fg_score: Optional[Mask] = None
    bg_score: Optional[Mask] = None

    def __post_init__(self):
        if self.fg.kind != MASK_PROBABILITY or self.bg.kind != MASK_PROBABILITY:
            raise ValueError("prediction channels must be probability masks")
        if self.fg.spatial != self.bg.spatial:
            raise DimMismatchError("fg/bg prediction dims disagree")


@dataclass(frozen=True)
class MatchDiagnostics:
    fg_selected: int = 0
    bg_selected: int = 0
    fg_fallback: str = "none"
    bg_fallback: str = "none"
    refine_fg_selected: Optional[int] = None
    refine_bg_selected: Optional[int] = None
    refine_fg_fallback: Optional[str] = None
    refine_bg_fallback: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "fg_selected": self.fg_selected,
            "bg_selected": self.bg_selected,
            "fg_fallback": self.fg_fallback,
            "bg_fallback": self.bg_fallback,
            "refine_fg_selected": self.refine_fg_selected,
            "refine_bg_selected": self.refine_bg_selected,
            "refine_fg_fallback": self.refine_fg_fallback,
            "refine_bg_fallback": self.refine_bg_fallback,
        }


@dataclass(frozen=True)
class MatchResult:
    """Predictions from every stage that ran.

    ``initial`` is the support-only match; ``self_support`` rematches with
    blended prototypes; ``refined`` is the second self-support pass; ``final``
    is what callers should consume (the beta-weighted combination when
    refinement ran, otherwise the last stage produced).
    """

    initial: PredictionPair
    final: PredictionPair
    prototypes: PrototypeSet
    diagnostics: MatchDiagnostics
    self_support: Optional[PredictionPair] = None
    refined: Optional[PredictionPair] = None


# ---------------------------------------------------------------------------
# stage 1: support-only matching


def _check_episode_dims(supports, query: FeatureMap):
    if len(supports) < 1:
        raise EmptyMaskError("need at least one support")
    c = query.channels
    for i, (feat, mask) in enumerate(supports):
        if feat.channels != c:
            raise DimMismatchError(f"support {i} has C={feat.channels}, query has C={c}")
        if feat.spatial != mask.spatial:
            raise DimMismatchError(f"support {i} feature/mask dims disagree")
        if mask.kind != MASK_BINARY:
            raise ValueError(f"support {i} mask must be binary")


def support_prototypes(supports: Sequence[tuple[FeatureMap, Mask]]) -> tuple[Prototype, Prototype]:
    """Pool each support separately, then average uniformly across shots.

    Shots whose fg (resp. bg) region is empty are skipped in that average;
    EmptyMask only if no shot contributes at all.
    """
    fg_vecs, bg_vecs = [], []
    if len(supports) < 1:
        raise EmptyMaskError("need at least one support")
    c = supports[0][0].channels
    for i, (feat, mask) in enumerate(supports):
        if feat.channels != c:
            raise DimMismatchError(
                f"support {i} has C={feat.channels}, support 0 has C={c}")
        if feat.spatial != mask.spatial:
            raise DimMismatchError(f"support {i} feature/mask dims disagree")
    for feat, mask in supports:
        if mask.active_pixels() > 0:
            fg_vecs.append(masked_average_pooling(feat, mask, ROLE_FOREGROUND).values)
        inv = mask.inverted()
        if inv.active_pixels() > 0:
            bg_vecs.append(masked_average_pooling(feat, inv, ROLE_BACKGROUND).values)
    if not fg_vecs:
        raise EmptyMaskError("every support fg mask is empty")
    if not bg_vecs:
        raise EmptyMaskError("every support bg region is empty")
    fg = np.mean(np.stack(fg_vecs).astype(np.float64), axis=0)
    bg = np.mean(np.stack(bg_vecs).astype(np.float64), axis=0)
    return (Prototype(fg.astype(np.float32), ROLE_FOREGROUND),
            Prototype(bg.astype(np.float32), ROLE_BACKGROUND))


def match_with_prototypes(fg_proto: Prototype, bg_proto: Prototype,
                          query: FeatureMap, cfg: SspConfig) -> PredictionPair:
    fg_score = cosine_map(fg_proto, query)
    bg_score = cosine_map(bg_proto, query)
    fg_prob, bg_prob = pairwise_softmax(fg_score, bg_score, cfg.temperature)
    return PredictionPair(fg_prob, bg_prob, fg_score, bg_score)


def baseline_match(supports: Sequence[tuple[FeatureMap, Mask]], query: FeatureMap,
                   cfg: SspConfig) -> tuple[PredictionPair, Prototype, Prototype]:
    """Support-prototype matching only: pool, score, softmax."""
    _check_episode_dims(supports, query)
    fg_proto, bg_proto = support_prototypes(supports)
    return match_with_prototypes(fg_proto, bg_proto, query, cfg), fg_proto, bg_proto


# ---------------------------------------------------------------------------
# stage 2: confident-pixel selection


def threshold_select(fg_prob: Mask, cfg: SspConfig) -> tuple[Mask, Mask]:
    """Split a fg probability map into confident fg/bg binary estimates.

    bg confidence is taken as 1 - fg, so the two estimates are provably
    disjoint whenever tau_fg + tau_bg >= 1. Empty estimates are legal.
    """
    if fg_prob.kind != MASK_PROBABILITY:
        raise ValueError("threshold_select needs a probability mask")
    p = fg_prob.data.astype(np.float64)
    fg_est = (p > cfg.tau_fg).astype(np.float32)
    bg_est = ((1.0 - p) > cfg.tau_bg).astype(np.float32)
    return Mask(fg_est, MASK_BINARY), Mask(bg_est, MASK_BINARY)


def _topk_mask(prob: Mask, k: int) -> Mask:
    """Binary mask selecting the k most confident pixels (row-major
    tie-break, stable)."""
    flat = prob.data.ravel()
    k = min(k, flat.size)
    order = np.argsort(-flat, kind="stable")[:k]
    out = np.zeros(flat.size, dtype=np.float32)
    out[order] = 1.0
    return Mask(out.reshape(prob.spatial), MASK_BINARY)


# ---------------------------------------------------------------------------
# stage 3: self prototypes


def self_support_fg(query: FeatureMap, fg_estimate: Mask, cfg: SspConfig,
                    fg_prob: Optional[Mask] = None) -> Optional[Prototype]:
    """Pool a fg prototype from the query's own confident pixels.

    Empty estimate: returns None under support_only (caller's blend then
    renormalizes onto the support prototype), or pools the top-k most
    confident pixels when the topk fallback is configured.
    """
    if fg_estimate.active_pixels() == 0:
        if cfg.empty_mask_fallback == FALLBACK_SUPPORT_ONLY:
            return None
        if fg_prob is None:
            raise ValueError("topk fallback needs the probability map")
        fg_estimate = _topk_mask(fg_prob, cfg.fallback_topk)
    return masked_average_pooling(query, fg_estimate, ROLE_FOREGROUND)


def adaptive_bg_prototype(query: FeatureMap, bg_estimate: Mask) -> PrototypeField:
    """Per-pixel bg prototype: each query position gets an affinity-softmax
    weighted aggregate of the confident bg features."""
    if query.spatial != bg_estimate.spatial:
        raise DimMismatchError("query/bg_estimate dims disagree")
    if bg_estimate.kind != MASK_BINARY:
        raise ValueError("adaptive_bg_prototype needs a binary estimate")
    if bg_estimate.active_pixels() == 0:
        raise EmptyMaskError("bg estimate selects no pixels")
    c, h, w = query.data.shape
    flat = query.data.reshape(c, h * w).astype(np.float64)
    selected = bg_estimate.data.ravel() == 1.0
    gathered = flat[:, selected]                      # C x M
    affinity = AffinityMatrix(matmul(gathered.T, flat))
    weights = AffinityMatrix(column_softmax(affinity.data), normalized=True)
    aggregated = matmul(gathered, weights.data)       # C x HW
    return PrototypeField(aggregated.reshape(c, h, w).astype(np.float32), ROLE_BACKGROUND)


def self_support_bg(query: FeatureMap, bg_estimate: Mask, cfg: SspConfig,
                    bg_prob: Optional[Mask] = None,
                    adaptive: bool = True) -> Optional[PrototypeField]:
    """Adaptive bg field with fallback handling; ``adaptive=False`` swaps in
    a single globally pooled bg prototype broadcast over all positions."""
    if bg_estimate.active_pixels() == 0:
        if cfg.empty_mask_fallback == FALLBACK_SUPPORT_ONLY:
            return None
        if bg_prob is None:
            raise ValueError("topk fallback needs the probability map")
        bg_estimate = _topk_mask(bg_prob, cfg.fallback_topk)
    if adaptive:
        return adaptive_bg_prototype(query, bg_estimate)
    pooled = masked_average_pooling(query, bg_estimate, ROLE_BACKGROUND)
    return broadcast_prototype(pooled, query.spatial)


def broadcast_prototype(p: Prototype, spatial: tuple[int, int]) -> PrototypeField:
    h, w = spatial
    values = np.broadcast_to(p.values[:, None, None], (p.channels, h, w))
    return PrototypeField(np.ascontiguousarray(values), p.role)


# ---------------------------------------------------------------------------
# stage 4: blending + rematch


def _blend_weighted(weights: Sequence[float], members: Sequence[Optional[np.ndarray]]):
    """Weighted sum over present members. All present: raw weighted sum.
    Any absent: present weights renormalized to sum 1, so a lone member
    passes through exactly (multiply by 1.0 is an identity in floats)."""
    present = [(w, m) for w, m in zip(weights, members) if m is not None]
    if not present:
        return None
    if len(present) < len(members):
        total = sum(w for w, _ in present)
        if total <= 0.0:
            # degenerate: all weight sat on absent members; fall back to uniform
            present = [(1.0 / len(present), m) for _, m in present]
        else:
            present = [(w / total, m) for w, m in present]
    acc = None
    for w, m in present:
        term = np.float64(w) * m.astype(np.float64)
        acc = term if acc is None else acc + term
    return acc.astype(np.float32)


def blend_prototypes(ps: PrototypeSet, cfg: SspConfig,
                     spatial: tuple[int, int]) -> tuple[Prototype, PrototypeField]:
    """Combine support and self prototypes into the matching pair: a blended
    fg vector and a blended bg field (support bg broadcast across positions)."""
    fg_vals = _blend_weighted(
        (cfg.alpha1, cfg.alpha2),
        (ps.fg_support.values, None if ps.fg_self is None else ps.fg_self.values))
    support_field = broadcast_prototype(ps.bg_support, spatial)
    bg_vals = _blend_weighted(
        (cfg.alpha1, cfg.alpha2),
        (support_field.values, None if ps.bg_self is None else ps.bg_self.values))
    return (Prototype(fg_vals, ROLE_FOREGROUND),
            PrototypeField(bg_vals, ROLE_BACKGROUND))


def final_match(query: FeatureMap, blended_fg: Prototype,
                blended_bg: PrototypeField, cfg: SspConfig) -> PredictionPair:
    fg_score = cosine_map(blended_fg, query)
    bg_score = cosine_field_map(blended_bg, query)
    fg_prob, bg_prob = pairwise_softmax(fg_score, bg_score, cfg.temperature)
    return PredictionPair(fg_prob, bg_prob, fg_score, bg_score)


# ---------------------------------------------------------------------------
# stage 5: refinement


def combine_predictions(first: PredictionPair, second: PredictionPair,
                        second_weight: float) -> PredictionPair:
    """Convex combination of two probability pairs, arranged as
    first + w*(second - first) so that identical stages combine to the
    first one bit-for-bit."""
    w = np.float64(second_weight)
    fg1 = first.fg.data.astype(np.float64)
    bg1 = first.bg.data.astype(np.float64)
    fg = fg1 + w * (second.fg.data.astype(np.float64) - fg1)
    bg = bg1 + w * (second.bg.data.astype(np.float64) - bg1)
    return PredictionPair(
        Mask(np.clip(fg, 0.0, 1.0).astype(np.float32), MASK_PROBABILITY),
        Mask(np.clip(bg, 0.0, 1.0).astype(np.float32), MASK_PROBABILITY))


def refine(query: FeatureMap, current: PredictionPair, ps: PrototypeSet,
           cfg: SspConfig, adaptive_bg: bool = True,
           ) -> tuple[PredictionPair, PredictionPair, PrototypeSet, dict]:
    """Second self-support pass from the improved prediction.

    Re-thresholds ``current`` with the same taus, rebuilds self prototypes,
    blends them with the refine weights, rematches, and combines the two
    stages with the beta weights. Returns (rematched, combined, updated
    prototype set, diagnostics fields).
    """
    fg_est, bg_est = threshold_select(current.fg, cfg)
    fg_refined = self_support_fg(query, fg_est, cfg, current.fg)
    bg_refined = self_support_bg(query, bg_est, cfg, current.bg, adaptive=adaptive_bg)
    diag = {
        "refine_fg_selected": fg_est.active_pixels(),
        "refine_bg_selected": bg_est.active_pixels(),
        "refine_fg_fallback": cfg.empty_mask_fallback if fg_est.active_pixels() == 0 else "none",
        "refine_bg_fallback": cfg.empty_mask_fallback if bg_est.active_pixels() == 0 else "none",
    }
    ps = replace(ps, fg_refined=fg_refined, bg_refined=bg_refined)

    weights = (cfg.refine_alpha1, cfg.refine_alpha2, cfg.refine_alpha3)
    fg_vals = _blend_weighted(
        weights,
        (ps.fg_support.values,
         None if ps.fg_self is None else ps.fg_self.values,
         None if fg_refined is None else fg_refined.values))
    support_field = broadcast_prototype(ps.bg_support, query.spatial)
    bg_vals = _blend_weighted(
        weights,
        (support_field.values,
         None if ps.bg_self is None else ps.bg_self.values,
         None if bg_refined is None else bg_refined.values))
    rematched = final_match(query, Prototype(fg_vals, ROLE_FOREGROUND),
                            PrototypeField(bg_vals, ROLE_BACKGROUND), cfg)
    combined = combine_predictions(current, rematched, cfg.beta2)
    return rematched, combined, ps, diag


# ---------------------------------------------------------------------------
# orchestration


def match_episode(supports: Sequence[tuple[FeatureMap, Mask]], query: FeatureMap,
                  cfg: SspConfig, ablation: str = ABLATION_FULL) -> MatchResult:
    """Run the full pipeline on one episode under an ablation switch.

    no_ssm stops after the initial match; no_asbp replaces the adaptive bg
    field with a single pooled bg prototype; no_ssl_metrics matches like
    full (it only changes which losses get reported downstream).
    """
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    initial, fg_support, bg_support = baseline_match(supports, query, cfg)
    ps = PrototypeSet(fg_support, bg_support)

    if ablation == ABLATION_NO_SSM:
        return MatchResult(initial=initial, final=initial, prototypes=ps,
                           diagnostics=MatchDiagnostics())

    adaptive = ablation != ABLATION_NO_ASBP
    fg_est, bg_est = threshold_select(initial.fg, cfg)
    fg_self = self_support_fg(query, fg_est, cfg, initial.fg)
    bg_self = self_support_bg(query, bg_est, cfg, initial.bg, adaptive=adaptive)
    ps = replace(ps, fg_self=fg_self, bg_self=bg_self)
    diag = {
        "fg_selected": fg_est.active_pixels(),
        "bg_selected": bg_est.active_pixels(),
        "fg_fallback": cfg.empty_mask_fallback if fg_est.active_pixels() == 0 else "none",
        "bg_fallback": cfg.empty_mask_fallback if bg_est.active_pixels() == 0 else "none",
    }

    blended_fg, blended_bg = blend_prototypes(ps, cfg, query.spatial)
    rematched = final_match(query, blended_fg, blended_bg, cfg)

    if not cfg.enable_refine:
        return MatchResult(initial=initial, self_support=rematched, final=rematched,
                           prototypes=ps, diagnostics=MatchDiagnostics(**diag))

    refined, combined, ps, refine_diag = refine(query, rematched, ps, cfg,
                                                adaptive_bg=adaptive)
    diag.update(refine_diag)
    return MatchResult(initial=initial, self_support=rematched, refined=refined,
                       final=combined, prototypes=ps,
                       diagnostics=MatchDiagnostics(**diag))
