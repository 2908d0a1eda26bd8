"""Episodic evaluation harness.

Runs the matching pipeline over episode suites and produces canonical,
byte-reproducible reports: per-episode IoU and MAE (all pixels / true
positives), stage-wise metrics, loss values, plus the analysis
procedures (cross/intra similarity statistics, partial and noisy
prototype experiments, bounding-box weak labels, threshold sweeps,
ablation tables).

Episodes are evaluated independently, so the worker pool never changes
results: rows are computed per episode, sorted by episode_id, and
aggregated in that order.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .episode import Episode
from .errors import ConfigError, EmptyMaskError, InvalidRatioError
from .losses import episode_losses
from .metrics import iou, mae_all, mae_tp
from .pipeline import (
    ABLATION_FULL,
    ABLATIONS,
    MatchResult,
    SspConfig,
    match_episode,
    match_with_prototypes,
    support_prototypes,
)
from .tensor_core import (
    COSINE_EPS,
    MASK_BINARY,
    ROLE_BACKGROUND,
    ROLE_FOREGROUND,
    FeatureMap,
    Mask,
    Prototype,
    masked_average_pooling,
)

MODE_SUPPORT = "support"
MODE_SELF = "self"

# fixed stream tags so stats / experiment sampling never collide with the
# generator's draws for the same (seed, episode_id)
_TAG_STATS = 1
_TAG_PARTIAL = 2

STAGE_NAMES = ("initial", "self_support", "refined", "final")


# ---------------------------------------------------------------------------
# per-episode evaluation


def _stage_metrics(pair, gt: Mask) -> dict:
    return {
        "iou": iou(pair.fg, gt),
        "mae_all": mae_all(pair.fg, gt),
        "mae_tp": mae_tp(pair.fg, gt),
    }


def evaluate_episode(ep: Episode, cfg: SspConfig, ablation: str = ABLATION_FULL) -> dict:
    if ep.query_gt is None:
        raise ConfigError(f"episode {ep.episode_id} has no query ground truth")
    result: MatchResult = match_episode(ep.supports, ep.query, cfg, ablation)
    stages = {}
    for name in STAGE_NAMES:
        pair = getattr(result, name)
        stages[name] = None if pair is None else _stage_metrics(pair, ep.query_gt)
    losses = episode_losses(ep.supports, ep.query, ep.query_gt, result, cfg, ablation)
    row = {
        "episode_id": ep.episode_id,
        "class_id": ep.class_id,
        "iou": stages["final"]["iou"],
        "mae_all": stages["final"]["mae_all"],
        "mae_tp": stages["final"]["mae_tp"],
        "stages": stages,
        "losses": losses,
        "diagnostics": result.diagnostics.to_dict(),
    }
    return row


def _episode_row(args) -> dict:
    ep, cfg, ablation = args
    return evaluate_episode(ep, cfg, ablation)


def _mean_defined(values) -> tuple[Optional[float], int]:
    kept = [v for v in values if v is not None]
    if not kept:
        return None, 0
    return float(np.mean(np.asarray(kept, dtype=np.float64))), len(kept)


def evaluate(episodes: Sequence[Episode], cfg: SspConfig,
             ablation: str = ABLATION_FULL, jobs: int = 1,
             seed: Optional[int] = None) -> dict:
    """Evaluate a suite and return the canonical report dict."""
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    if not episodes:
        raise ConfigError("no episodes to evaluate")
    work = [(ep, cfg, ablation) for ep in episodes]
    if jobs > 1 and len(work) > 1:
        chunk = max(1, len(work) // (jobs * 4))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_episode_row, work, chunksize=chunk))
    else:
        rows = [_episode_row(item) for item in work]
    rows.sort(key=lambda r: r["episode_id"])

    summary = {
        "miou": float(np.mean([r["iou"] for r in rows])),
        "mae_all": float(np.mean([r["mae_all"] for r in rows])),
    }
    tp_mean, tp_count = _mean_defined(r["mae_tp"] for r in rows)
    summary["mae_tp"] = tp_mean
    summary["mae_tp_defined"] = tp_count
    summary["stages"] = {}
    for name in STAGE_NAMES:
        per = [r["stages"][name] for r in rows]
        if all(p is None for p in per):
            summary["stages"][name] = None
            continue
        s_iou, n = _mean_defined(p["iou"] if p else None for p in per)
        s_mae, _ = _mean_defined(p["mae_all"] if p else None for p in per)
        summary["stages"][name] = {"miou": s_iou, "mae_all": s_mae, "defined": n}
    summary["losses"] = {}
    for key in ("matching", "query_self", "support_self", "total"):
        mean, n = _mean_defined(r["losses"][key] for r in rows)
        summary["losses"][key] = {"mean": mean, "defined": n}

    return {
        "ablation": ablation,
        "config": cfg.to_dict(),
        "seed": seed,
        "episode_count": len(rows),
        "episodes": rows,
        "summary": summary,
    }


def report_to_json(report: dict) -> str:
    """Canonical serialization: sorted keys, two-space indent, trailing
    newline, NaN rejected. Byte-identical across runs and worker counts."""
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# similarity statistics


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("nc,nc->n", mat, mat))
    return mat / (norms[:, None] + COSINE_EPS)


def _mean_cross_cosine(rng, a: np.ndarray, b: np.ndarray, budget: int) -> Optional[float]:
    """Mean cosine over sampled (row of a, row of b) pairs."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return None
    i = rng.integers(0, a.shape[0], size=budget)
    j = rng.integers(0, b.shape[0], size=budget)
    ua, ub = _unit_rows(a), _unit_rows(b)
    return float(np.einsum("nc,nc->n", ua[i], ub[j]).mean())


def _mean_intra_cosine(rng, a: np.ndarray, budget: int) -> Optional[float]:
    """Mean cosine over sampled distinct (i, j) pairs within one set."""
    n = a.shape[0]
    if n < 2:
        return None
    i = rng.integers(0, n, size=budget)
    j = rng.integers(0, n - 1, size=budget)
    j = np.where(j >= i, j + 1, j)
    ua = _unit_rows(a)
    return float(np.einsum("nc,nc->n", ua[i], ua[j]).mean())


def _pixel_rows(feat: FeatureMap, mask: Mask, fg: bool) -> np.ndarray:
    sel = mask.data.ravel() == (1.0 if fg else 0.0)
    flat = feat.data.reshape(feat.channels, -1).astype(np.float64)
    return flat[:, sel].T


def similarity_stats(episodes: Sequence[Episode], seed: int = 0,
                     max_pairs_per_episode: int = 10_000) -> dict:
    """Cross-image vs intra-image mean cosine similarity for object and
    background pixels.

    fg_cross pairs a support object pixel with a query object pixel;
    fg_intra pairs two distinct query object pixels; bg statistics are the
    analogues on background pixels. Pair sampling is seeded and bounded per
    episode. Episode ground truth is required.
    """
    budget = max(1, max_pairs_per_episode // 4)
    per_episode = []
    for ep in episodes:
        if ep.query_gt is None:
            raise ConfigError(f"episode {ep.episode_id} has no query ground truth")
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, ep.episode_id, _TAG_STATS]))
        sup_fg = np.concatenate([_pixel_rows(f, m, True) for f, m in ep.supports])
        sup_bg = np.concatenate([_pixel_rows(f, m, False) for f, m in ep.supports])
        q_fg = _pixel_rows(ep.query, ep.query_gt, True)
        q_bg = _pixel_rows(ep.query, ep.query_gt, False)
        row = {
            "episode_id": ep.episode_id,
            "fg_cross": _mean_cross_cosine(rng, sup_fg, q_fg, budget),
            "fg_intra": _mean_intra_cosine(rng, q_fg, budget),
            "bg_cross": _mean_cross_cosine(rng, sup_bg, q_bg, budget),
            "bg_intra": _mean_intra_cosine(rng, q_bg, budget),
        }
        row["fg_margin"] = (None if row["fg_intra"] is None or row["fg_cross"] is None
                            else row["fg_intra"] - row["fg_cross"])
        row["bg_margin"] = (None if row["bg_intra"] is None or row["bg_cross"] is None
                            else row["bg_intra"] - row["bg_cross"])
        per_episode.append(row)

    out = {"pairs_per_statistic": budget, "per_episode": per_episode}
    for key in ("fg_cross", "fg_intra", "bg_cross", "bg_intra", "fg_margin", "bg_margin"):
        mean, n = _mean_defined(r[key] for r in per_episode)
        out[key] = mean
        out[f"{key}_defined"] = n
    return out


def bootstrap_lower_bound(values: Sequence[float], resamples: int = 2000,
                          seed: int = 0, alpha: float = 0.05) -> float:
    """Lower end of the (1 - alpha) bootstrap CI of the mean."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("no values to bootstrap")
    rng = np.random.default_rng(np.random.SeedSequence([seed, arr.size]))
    idx = rng.integers(0, arr.size, size=(resamples, arr.size))
    means = arr[idx].mean(axis=1)
    return float(np.quantile(means, alpha / 2.0))


# ---------------------------------------------------------------------------
# partial / noisy prototype experiment


def _gather_columns(feats_masks, fg: bool) -> np.ndarray:
    return np.concatenate([_pixel_rows(f, m, fg) for f, m in feats_masks])


def partial_prototype_experiment(episodes: Sequence[Episode], object_ratio: float,
                                 noise_ratio: float, mode: str,
                                 cfg: Optional[SspConfig] = None,
                                 seed: int = 0) -> dict:
    """Match queries against a fg prototype pooled from a random subset of
    object pixels, optionally corrupted by features from non-object regions.

    mode=support draws the subset from the support images; mode=self draws
    it from the query itself. Each selected pixel is independently replaced
    with probability noise_ratio by a random non-object feature from the
    same image set. The bg prototype is pooled from the full non-object
    region of the same source. Reports mean IoU of the resulting match.
    """
    if not (0.0 < object_ratio <= 1.0):
        raise InvalidRatioError(f"object_ratio must lie in (0, 1], got {object_ratio}")
    if not (0.0 <= noise_ratio < 1.0):
        raise InvalidRatioError(f"noise_ratio must lie in [0, 1), got {noise_ratio}")
    if mode not in (MODE_SUPPORT, MODE_SELF):
        raise ConfigError(f"mode must be '{MODE_SUPPORT}' or '{MODE_SELF}'")
    cfg = cfg or SspConfig()
    per_episode = []
    for ep in episodes:
        if ep.query_gt is None:
            raise ConfigError(f"episode {ep.episode_id} has no query ground truth")
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, ep.episode_id, _TAG_PARTIAL]))
        source = (list(ep.supports) if mode == MODE_SUPPORT
                  else [(ep.query, ep.query_gt)])
        obj = _gather_columns(source, True)
        bg = _gather_columns(source, False)
        if obj.shape[0] == 0:
            raise EmptyMaskError(f"episode {ep.episode_id}: no object pixels in {mode} source")
        if bg.shape[0] == 0:
            raise EmptyMaskError(f"episode {ep.episode_id}: no background pixels in {mode} source")

        k = max(1, int(np.ceil(object_ratio * obj.shape[0])))
        chosen = obj[rng.choice(obj.shape[0], size=k, replace=False)]
        swap = rng.random(k) < noise_ratio
        if swap.any():
            repl = rng.integers(0, bg.shape[0], size=int(swap.sum()))
            chosen = chosen.copy()
            chosen[swap] = bg[repl]

        fg_proto = Prototype(chosen.mean(axis=0).astype(np.float32), ROLE_FOREGROUND)
        bg_proto = Prototype(bg.mean(axis=0).astype(np.float32), ROLE_BACKGROUND)
        pair = match_with_prototypes(fg_proto, bg_proto, ep.query, cfg)
        per_episode.append({
            "episode_id": ep.episode_id,
            "iou": iou(pair.fg, ep.query_gt),
            "selected": k,
            "noised": int(swap.sum()),
        })
    return {
        "mode": mode,
        "object_ratio": object_ratio,
        "noise_ratio": noise_ratio,
        "mean_iou": float(np.mean([r["iou"] for r in per_episode])),
        "per_episode": per_episode,
    }


# ---------------------------------------------------------------------------
# weak labels


def weak_label_bbox(mask: Mask) -> Mask:
    """Tight filled bounding box of a binary mask's foreground."""
    if mask.kind != MASK_BINARY:
        raise ValueError("weak_label_bbox needs a binary mask")
    rows = np.nonzero(np.any(mask.data == 1.0, axis=1))[0]
    cols = np.nonzero(np.any(mask.data == 1.0, axis=0))[0]
    if rows.size == 0:
        raise EmptyMaskError("mask has no foreground to box")
    out = np.zeros_like(mask.data)
    out[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] = 1.0
    return Mask(out, MASK_BINARY)


def weaken_episode_labels(ep: Episode) -> Episode:
    """Replace every support mask by its filled bounding box."""
    supports = tuple((f, weak_label_bbox(m)) for f, m in ep.supports)
    return Episode(supports=supports, query=ep.query, query_gt=ep.query_gt,
                   class_id=ep.class_id, episode_id=ep.episode_id)


# ---------------------------------------------------------------------------
# sweeps and ablation tables


def sweep_thresholds(episodes: Sequence[Episode], cfg: SspConfig,
                     fg_values: Sequence[float], bg_values: Sequence[float],
                     jobs: int = 1, seed: Optional[int] = None) -> list[dict]:
    """mIoU/MAE over a tau_fg x tau_bg grid, row-major over (fg, bg)."""
    if not fg_values or not bg_values:
        raise ConfigError("threshold sweep needs a nonempty grid")
    rows = []
    for tf in fg_values:
        for tb in bg_values:
            point_cfg = cfg.with_overrides({"tau_fg": tf, "tau_bg": tb})
            report = evaluate(episodes, point_cfg, jobs=jobs, seed=seed)
            rows.append({
                "tau_fg": float(tf),
                "tau_bg": float(tb),
                "miou": report["summary"]["miou"],
                "mae_all": report["summary"]["mae_all"],
            })
    return rows


# Table rows for the component ablation: which pipeline switch realizes
# each row. ssm+asbp and full match identically; the last row additionally
# reports the self losses.
ABLATION_TABLE_ROWS = (
    ("baseline", "no_ssm"),
    ("ssm", "no_asbp"),
    ("ssm+asbp", "no_ssl_metrics"),
    ("full", "full"),
)


def ablation_table(episodes: Sequence[Episode], cfg: SspConfig, jobs: int = 1,
                   seed: Optional[int] = None) -> list[dict]:
    rows = []
    for label, ablation in ABLATION_TABLE_ROWS:
        report = evaluate(episodes, cfg, ablation=ablation, jobs=jobs, seed=seed)
        summary = report["summary"]
        rows.append({
            "row": label,
            "ablation": ablation,
            "miou": summary["miou"],
            "mae_all": summary["mae_all"],
            "mae_tp": summary["mae_tp"],
            "mean_total_loss": summary["losses"]["total"]["mean"],
        })
    return rows
