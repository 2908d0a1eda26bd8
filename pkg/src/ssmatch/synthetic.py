"""Seeded synthetic episode generator.

Feature geometry: every pixel is a vector of magnitude feature_norm in
R^C drawn around a cluster centroid and renormalized. Cosine-based
matching is invariant to feature_norm, but the adaptive background
affinity runs a softmax over raw dot products, so the magnitude
controls how selective that aggregation is; backbone activations are
well above unit norm, and the default reflects that. Per episode, an
orthonormal frame
holds one object direction plus bg_cluster_count background theme
directions. Background themes get a deterministic correlation ladder
with the object direction (the most correlated theme plays the role of
object-like clutter), which is what makes support-only matching
imperfect and leaves room for self-support correction. Per-image
centroid offsets (cross_object_spread) and a query-only displacement
(fg_centroid_distance) model appearance variation across images, so
intra-image similarity exceeds cross-image similarity by construction.

Spatial layout: one axis-aligned rectangle object per image; background
columns are split into vertical bands, one per theme.

Determinism: everything derives from default_rng(SeedSequence([seed,
episode_id])) with a fixed draw order, so episodes are reproducible
independently of how many are generated or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .episode import Episode
from .errors import ConfigError
from .tensor_core import MASK_BINARY, FeatureMap, Mask

# Most-correlated background theme: cos 0.3 against the object direction.
# Kept below the worst-case cosine between any theme and the pooled bg
# prototype (~0.36, when the object rectangle eats most of that theme's
# band) so noiseless episodes are always perfectly separable.
MAX_BG_CORRELATION = 0.3


@dataclass(frozen=True)
class SyntheticSpec:
    channels: int = 8
    height: int = 16
    width: int = 16
    fg_centroid_distance: float = 0.4
    intra_object_spread: float = 0.3
    cross_object_spread: float = 0.25
    bg_cluster_count: int = 3
    noise_sigma: float = 0.4
    feature_norm: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if min(self.channels, self.height, self.width) < 1:
            raise ConfigError("channels/height/width must be positive")
        for name in ("fg_centroid_distance", "intra_object_spread",
                     "cross_object_spread", "noise_sigma"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.feature_norm <= 0.0:
            raise ConfigError("feature_norm must be positive")
        if self.bg_cluster_count < 1:
            raise ConfigError("bg_cluster_count must be >= 1")
        if self.bg_cluster_count > self.channels - 1:
            raise ConfigError(
                "bg_cluster_count must be <= channels - 1 (themes live in an "
                "orthonormal frame alongside the object direction)")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {', '.join(unknown)}")
        coerced = dict(d)
        for name in ("channels", "height", "width", "bg_cluster_count", "seed"):
            if name in coerced:
                coerced[name] = _as_int(name, coerced[name])
        for name in ("fg_centroid_distance", "intra_object_spread",
                     "cross_object_spread", "noise_sigma", "feature_norm"):
            if name in coerced:
                coerced[name] = _as_float(name, coerced[name])
        return cls(**coerced)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _as_int(key, value):
    if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def _as_float(key, value):
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be a number, got boolean")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number, got {value!r}") from None


def _unit(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), 1e-12)


def _orthonormal_frame(rng: np.random.Generator, c: int, count: int) -> np.ndarray:
    """count orthonormal columns in R^c with deterministic signs."""
    q, r = np.linalg.qr(rng.standard_normal((c, count)))
    return q * np.sign(np.where(np.diag(r) == 0.0, 1.0, np.diag(r)))


def _theme_correlations(count: int) -> np.ndarray:
    if count == 1:
        return np.zeros(1)
    return MAX_BG_CORRELATION * np.arange(count) / (count - 1)


def _rect_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    lo_h, hi_h = max(1, h // 4), max(2, h // 2 + 1)
    lo_w, hi_w = max(1, w // 4), max(2, w // 2 + 1)
    rect_h = int(rng.integers(lo_h, hi_h))
    rect_w = int(rng.integers(lo_w, hi_w))
    top = int(rng.integers(0, h - rect_h + 1))
    left = int(rng.integers(0, w - rect_w + 1))
    mask = np.zeros((h, w), dtype=np.float32)
    mask[top:top + rect_h, left:left + rect_w] = 1.0
    return mask


def _render_image(rng: np.random.Generator, spec: SyntheticSpec,
                  object_dir: np.ndarray, themes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One image: per-image centroid offsets, a rectangle mask, per-pixel
    jitter + white noise, normalization to feature_norm. Returns
    (features, mask)."""
    c, h, w = spec.channels, spec.height, spec.width
    root_c = np.sqrt(c)

    obj_centroid = _unit(object_dir + spec.cross_object_spread
                         * rng.standard_normal(c) / root_c)
    image_themes = np.stack([
        _unit(themes[j] + spec.cross_object_spread * rng.standard_normal(c) / root_c)
        for j in range(spec.bg_cluster_count)])
    mask = _rect_mask(rng, h, w)

    cols = np.arange(w)
    band = (cols * spec.bg_cluster_count) // w          # theme per column
    centroids = np.transpose(image_themes[band][None, :, :], (2, 0, 1))
    centroids = np.broadcast_to(centroids, (c, h, w)).copy()
    centroids[:, mask == 1.0] = obj_centroid[:, None]

    jitter = spec.intra_object_spread * rng.standard_normal((c, h, w)) / root_c
    noise = spec.noise_sigma * rng.standard_normal((c, h, w)) / root_c
    feats = centroids + jitter + noise
    norms = np.maximum(np.sqrt(np.einsum("chw,chw->hw", feats, feats)), 1e-12)
    return (spec.feature_norm * feats / norms).astype(np.float32), mask


def generate_episode(spec: SyntheticSpec, shots: int = 1, episode_id: int = 0) -> Episode:
    """Deterministic episode: `shots` supports plus one query with ground
    truth, all drawn from SeedSequence([spec.seed, episode_id])."""
    if shots < 1:
        raise ConfigError("shots must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, episode_id]))
    c = spec.channels

    frame = _orthonormal_frame(rng, c, spec.bg_cluster_count + 1)
    object_dir = frame[:, 0]
    axes = frame[:, 1:].T                               # bg_cluster_count x C
    rho = _theme_correlations(spec.bg_cluster_count)
    themes = (rho[:, None] * object_dir[None, :]
              + np.sqrt(1.0 - rho ** 2)[:, None] * axes)
    query_shift = _unit(rng.standard_normal(c))

    supports = []
    for _ in range(shots):
        feats, mask = _render_image(rng, spec, object_dir, themes)
        supports.append((FeatureMap(feats), Mask(mask, MASK_BINARY)))

    query_dir = _unit(object_dir + spec.fg_centroid_distance * query_shift)
    qfeats, qmask = _render_image(rng, spec, query_dir, themes)
    return Episode(supports=tuple(supports), query=FeatureMap(qfeats),
                   query_gt=Mask(qmask, MASK_BINARY), class_id=episode_id,
                   episode_id=episode_id)


def generate_suite(spec: SyntheticSpec, count: int, shots: int = 1) -> list[Episode]:
    if count < 1:
        raise ConfigError("episode count must be >= 1")
    return [generate_episode(spec, shots, episode_id=i) for i in range(count)]
