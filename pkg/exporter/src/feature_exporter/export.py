"""Export jobs: images + masks in, SSPT episode directory out."""

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .backbone import FeatureBackbone, WEIGHTS_RANDOM
from .errors import JobError
from .imaging import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    check_pair,
    downsample_mask,
    load_image,
    load_mask,
)
from .sspt_writer import write_binary_mask, write_feature

MASK_DOWNSAMPLING = "nearest_center"


@dataclass(frozen=True)
class EpisodeJob:
    """One episode's worth of source files; paths are already absolute."""

    supports: tuple  # of (image_path, mask_path)
    query_image: str
    query_mask: Optional[str] = None
    class_id: int = 0


@dataclass(frozen=True)
class ExportJob:
    episodes: tuple
    out_dir: str
    backbone: str = "resnet50"
    weights: str = WEIGHTS_RANDOM
    seed: int = 0
    image_size: Optional[int] = None

    def __post_init__(self):
        if not self.episodes:
            raise JobError("job has no episodes")
        for n, ep in enumerate(self.episodes):
            if not ep.supports:
                raise JobError(f"episode {n} has no supports")
        if self.image_size is not None and self.image_size < 32:
            raise JobError(f"image_size must be >= 32, got {self.image_size}")


def _resolve(base: str, path) -> str:
    if not isinstance(path, str) or not path:
        raise JobError(f"expected a file path string, got {path!r}")
    return os.path.join(base, path)


def job_from_file(path, out_dir: str, **overrides) -> ExportJob:
    """Parse a job description JSON; file paths resolve relative to it.

    {"backbone": "resnet50",
     "episodes": [{"class_id": 3,
                   "supports": [{"image": "a.png", "mask": "a_m.png"}],
                   "query": {"image": "q.png", "mask": "q_m.png"}}]}
    """
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, "rb") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise JobError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("episodes"), list):
        raise JobError(f"{path}: job must be an object with an 'episodes' list")
    episodes = []
    for n, entry in enumerate(doc["episodes"]):
        if not isinstance(entry, dict):
            raise JobError(f"{path}: episodes[{n}] is not an object")
        raw_supports = entry.get("supports")
        if not isinstance(raw_supports, list) or not raw_supports:
            raise JobError(f"{path}: episodes[{n}] needs a nonempty 'supports' list")
        supports = []
        for k, sup in enumerate(raw_supports):
            if not isinstance(sup, dict) or "image" not in sup or "mask" not in sup:
                raise JobError(f"{path}: episodes[{n}].supports[{k}] needs "
                               f"'image' and 'mask'")
            supports.append((_resolve(base, sup["image"]),
                             _resolve(base, sup["mask"])))
        query = entry.get("query")
        if not isinstance(query, dict) or "image" not in query:
            raise JobError(f"{path}: episodes[{n}] needs a 'query' object "
                           f"with an 'image'")
        episodes.append(EpisodeJob(
            supports=tuple(supports),
            query_image=_resolve(base, query["image"]),
            query_mask=(_resolve(base, query["mask"])
                        if query.get("mask") is not None else None),
            class_id=int(entry.get("class_id", 0))))
    params = {"backbone": doc.get("backbone", "resnet50")}
    params.update({k: v for k, v in overrides.items() if v is not None})
    return ExportJob(episodes=tuple(episodes), out_dir=out_dir, **params)


def self_episode_job(pairs, out_dir: str, **overrides) -> ExportJob:
    """One self-matching episode per image/mask pair: the pair is both the
    single support and the query, with the mask doubling as ground truth."""
    episodes = tuple(EpisodeJob(supports=((img, mask),), query_image=img,
                                query_mask=mask, class_id=n)
                     for n, (img, mask) in enumerate(pairs))
    params = {k: v for k, v in overrides.items() if v is not None}
    return ExportJob(episodes=episodes, out_dir=out_dir, **params)


def _export_pair(backbone, job, image_path, mask_path, require_fg):
    image = load_image(image_path, job.image_size)
    feat = backbone.extract(image)
    mask = load_mask(mask_path)
    if job.image_size is None:
        check_pair(image_path, image.shape[1:], mask_path, mask.shape)
    small = downsample_mask(mask, feat.shape[1:])
    if require_fg and not small.any():
        raise JobError(f"{mask_path}: no foreground survives at feature "
                       f"resolution {feat.shape[1:]}")
    return feat, small


def export(job: ExportJob) -> str:
    """Run the job; returns the path of the written manifest."""
    backbone = FeatureBackbone(job.backbone, job.weights, job.seed)
    os.makedirs(job.out_dir, exist_ok=True)
    entries = []
    for n, ep in enumerate(job.episodes):
        prefix = f"ep{n:05d}"
        supports = []
        for k, (image_path, mask_path) in enumerate(ep.supports):
            feat, small = _export_pair(backbone, job, image_path, mask_path,
                                       require_fg=True)
            fname = f"{prefix}_s{k}_feature.sspt"
            mname = f"{prefix}_s{k}_mask.sspt"
            write_feature(os.path.join(job.out_dir, fname), feat)
            write_binary_mask(os.path.join(job.out_dir, mname), small)
            supports.append({"feature": fname, "mask": mname})
        entry = {"episode_id": n, "class_id": ep.class_id,
                 "supports": supports}
        qname = f"{prefix}_query.sspt"
        if ep.query_mask is not None:
            feat, small = _export_pair(backbone, job, ep.query_image,
                                       ep.query_mask, require_fg=False)
            gname = f"{prefix}_query_gt.sspt"
            write_binary_mask(os.path.join(job.out_dir, gname), small)
            entry["query_gt"] = gname
        else:
            image = load_image(ep.query_image, job.image_size)
            feat = backbone.extract(image)
        write_feature(os.path.join(job.out_dir, qname), feat)
        entry["query"] = qname
        entries.append(entry)

    manifest = {
        "episodes": entries,
        "exporter": {
            **backbone.describe(),
            "image_size": job.image_size,
            "preprocessing": {"mean": list(IMAGENET_MEAN),
                              "std": list(IMAGENET_STD)},
            "mask_downsampling": MASK_DOWNSAMPLING,
        },
    }
    manifest_path = os.path.join(job.out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path
