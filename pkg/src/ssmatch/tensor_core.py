"""Dense-tensor substrate for prototype matching.

Typed containers (feature maps, masks, prototypes) plus the handful of
numeric operations the matching pipeline is assembled from: masked average
pooling, cosine maps, pairwise softmax, matrix multiply, column softmax.

Conventions:
  * storage is float32, reductions accumulate in float64
  * all functions are pure; array payloads are marked read-only on
    construction, so values are safe to share across threads
  * cosine similarity uses ``dot / (|a| * |b| + 1e-8)`` and clamps the
    result to [-1, 1] to absorb rounding
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatchError, EmptyMaskError, ZeroPrototypeError

COSINE_EPS = 1e-8

MASK_BINARY = "binary"
MASK_PROBABILITY = "probability"
MASK_SCORE = "score"  # raw similarity scores in [-1, 1]

ROLE_FOREGROUND = "foreground"
ROLE_BACKGROUND = "background"


def _freeze(data, dtype, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """C x H x W feature tensor, row-major float32, finite everywhere."""

    data: np.ndarray

    def __post_init__(self):
        arr = _freeze(self.data, np.float32, "FeatureMap")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DimMismatchError(f"FeatureMap needs a CxHxW array, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class Mask:
    """H x W map. ``binary`` holds {0,1}, ``probability`` holds [0,1],
    ``score`` holds raw similarity values in [-1,1]."""

    data: np.ndarray
    kind: str = MASK_BINARY

    def __post_init__(self):
        arr = _freeze(self.data, np.float32, "Mask")
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise DimMismatchError(f"Mask needs an HxW array, got shape {arr.shape}")
        if self.kind == MASK_BINARY:
            if not np.all((arr == 0.0) | (arr == 1.0)):
                raise ValueError("binary mask must contain only 0 and 1")
        elif self.kind == MASK_PROBABILITY:
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError("probability mask must lie in [0, 1]")
        elif self.kind == MASK_SCORE:
            if arr.min() < -1.0 or arr.max() > 1.0:
                raise ValueError("score mask must lie in [-1, 1]")
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape

    def active_pixels(self) -> int:
        return int(np.count_nonzero(self.data))

    def inverted(self) -> "Mask":
        if self.kind != MASK_BINARY:
            raise ValueError("inverted() is only defined for binary masks")
        return Mask(1.0 - self.data, MASK_BINARY)


@dataclass(frozen=True)
class Prototype:
    """C-vector prototype for one region role."""

    values: np.ndarray
    role: str = ROLE_FOREGROUND

    def __post_init__(self):
        arr = _freeze(self.values, np.float32, "Prototype")
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise DimMismatchError(f"Prototype needs a C-vector, got shape {arr.shape}")
        if self.role not in (ROLE_FOREGROUND, ROLE_BACKGROUND):
            raise ValueError(f"unknown prototype role {self.role!r}")
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PrototypeField:
    """C x H x W field: one prototype per spatial position."""

    values: np.ndarray
    role: str = ROLE_BACKGROUND

    def __post_init__(self):
        arr = _freeze(self.values, np.float32, "PrototypeField")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DimMismatchError(f"PrototypeField needs CxHxW values, got shape {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


@dataclass(frozen=True)
class AffinityMatrix:
    """M x (H*W) affinity between selected pixels and all positions.

    When ``normalized`` is set, every column is a softmax distribution over
    the M selected pixels (sums to 1 within 1e-5).
    """

    data: np.ndarray = field(repr=False)
    normalized: bool = False

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise DimMismatchError(f"AffinityMatrix needs an MxN array, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# operations


def masked_average_pooling(f: FeatureMap, m: Mask, role: str = ROLE_FOREGROUND) -> Prototype:
    """Mean feature column over the active pixels of a binary mask."""
    if m.kind != MASK_BINARY:
        raise ValueError("masked_average_pooling needs a binary mask")
    if f.spatial != m.spatial:
        raise DimMismatchError(f"feature {f.spatial} vs mask {m.spatial}")
    weights = m.data.astype(np.float64)
    total = weights.sum()
    if total == 0.0:
        raise EmptyMaskError("mask selects no pixels")
    vec = np.einsum("chw,hw->c", f.data.astype(np.float64), weights) / total
    return Prototype(vec.astype(np.float32), role)


def _cosine_values(field_vals: np.ndarray, feat_vals: np.ndarray) -> np.ndarray:
    # Shared kernel for vector and field cosine so both agree bit-for-bit.
    # The prototype side is unit-normalized before the eps guard so the
    # result is invariant to prototype scale (the guard would otherwise
    # leak scale back in); zero columns normalize to zero, yielding 0.
    a = field_vals.astype(np.float64)
    b = feat_vals.astype(np.float64)
    norm_a = np.sqrt(np.einsum("chw,chw->hw", a, a))
    a = a / np.where(norm_a == 0.0, 1.0, norm_a)
    dots = np.einsum("chw,chw->hw", a, b)
    norm_b = np.sqrt(np.einsum("chw,chw->hw", b, b))
    return np.clip(dots / (norm_b + COSINE_EPS), -1.0, 1.0)


def cosine_map(p: Prototype, f: FeatureMap) -> Mask:
    """Cosine similarity between one prototype and every feature column."""
    if p.channels != f.channels:
        raise DimMismatchError(f"prototype C={p.channels} vs feature C={f.channels}")
    if not np.any(p.values):
        raise ZeroPrototypeError("prototype has zero norm")
    # contiguous copy, not a stride-0 view: keeps this bit-identical to
    # cosine_field_map on a broadcast field
    tiled = np.ascontiguousarray(np.broadcast_to(p.values[:, None, None], f.data.shape))
    return Mask(_cosine_values(tiled, f.data).astype(np.float32), MASK_SCORE)


def cosine_field_map(p: PrototypeField, f: FeatureMap) -> Mask:
    """Per-position cosine between a prototype field and a feature map."""
    if p.values.shape != f.data.shape:
        raise DimMismatchError(f"field {p.values.shape} vs feature {f.data.shape}")
    field_zero = ~np.any(p.values, axis=0)
    feat_nonzero = np.any(f.data, axis=0)
    bad = field_zero & feat_nonzero
    if np.any(bad):
        h, w = np.argwhere(bad)[0]
        raise ZeroPrototypeError(f"zero-norm field column at position ({h}, {w})")
    return Mask(_cosine_values(p.values, f.data).astype(np.float32), MASK_SCORE)


def pairwise_softmax(fg: Mask, bg: Mask, temperature: float = 1.0) -> tuple[Mask, Mask]:
    """Two-way softmax over (fg, bg) score maps; returns probability masks
    that sum to 1 per pixel."""
    if fg.spatial != bg.spatial:
        raise DimMismatchError(f"fg {fg.spatial} vs bg {bg.spatial}")
    if not temperature > 0.0:
        raise ValueError("temperature must be positive")
    z = temperature * (fg.data.astype(np.float64) - bg.data.astype(np.float64))
    p_fg = _sigmoid(z)
    p_bg = _sigmoid(-z)
    return (
        Mask(p_fg.astype(np.float32), MASK_PROBABILITY),
        Mask(p_bg.astype(np.float32), MASK_PROBABILITY),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain matrix product with float64 accumulation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimMismatchError("matmul needs 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimMismatchError(f"inner dims disagree: {a.shape} x {b.shape}")
    return a.astype(np.float64) @ b.astype(np.float64)


def column_softmax(a: np.ndarray) -> np.ndarray:
    """Softmax over axis 0 (each column becomes a distribution)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimMismatchError("column_softmax needs a 2-D array")
    shifted = a - a.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)
