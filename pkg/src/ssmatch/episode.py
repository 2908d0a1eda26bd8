"""Episode data model and the JSON manifest tying SSPT files together.

A manifest is UTF-8 JSON:

    {"episodes": [
        {"episode_id": 0, "class_id": 7,
         "supports": [{"feature": "ep0_s0_f.sspt", "mask": "ep0_s0_m.sspt"}],
         "query": "ep0_q.sspt",
         "query_gt": "ep0_gt.sspt"},
        ...]}

File paths resolve relative to the manifest's directory. query_gt may be
omitted for match-only runs; evaluation requires it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

from .errors import DimMismatchError, EmptyMaskError, TensorFormatError
from .sspt import read_tensor_file, write_tensor_file
from .tensor_core import MASK_BINARY, FeatureMap, Mask


@dataclass(frozen=True)
class Episode:
    """One few-shot task: K labeled supports plus a query."""

    supports: tuple  # of (FeatureMap, Mask binary)
    query: FeatureMap
    query_gt: Optional[Mask]
    class_id: int = 0
    episode_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "supports", tuple(self.supports))
        if len(self.supports) < 1:
            raise EmptyMaskError("episode needs at least one support")
        c = self.query.channels
        for i, (feat, mask) in enumerate(self.supports):
            if feat.channels != c:
                raise DimMismatchError(f"support {i} channel count differs from query")
            if feat.spatial != mask.spatial:
                raise DimMismatchError(f"support {i} feature/mask dims disagree")
            if mask.kind != MASK_BINARY:
                raise ValueError(f"support {i} mask must be binary")
            if mask.active_pixels() == 0:
                raise EmptyMaskError(f"support {i} mask is empty")
        if self.query_gt is not None:
            if self.query_gt.kind != MASK_BINARY:
                raise ValueError("query ground truth must be binary")
            if self.query_gt.spatial != self.query.spatial:
                raise DimMismatchError("query ground truth dims disagree with query")

    @property
    def shots(self) -> int:
        return len(self.supports)


def _need(obj: dict, key: str, where: str):
    if key not in obj:
        raise TensorFormatError(f"manifest: missing {key!r} in {where}")
    return obj[key]


def _load_feature(path) -> FeatureMap:
    item = read_tensor_file(path)
    if not isinstance(item, FeatureMap):
        raise TensorFormatError(f"{path}: expected a feature tensor")
    return item


def _load_binary_mask(path) -> Mask:
    item = read_tensor_file(path)
    if not isinstance(item, Mask) or item.kind != MASK_BINARY:
        raise TensorFormatError(f"{path}: expected a binary mask")
    return item


def load_manifest(path) -> list[Episode]:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "rb") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TensorFormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("episodes"), list):
        raise TensorFormatError(f"{path}: manifest must be an object with an 'episodes' list")
    episodes = []
    for n, entry in enumerate(doc["episodes"]):
        where = f"episodes[{n}]"
        if not isinstance(entry, dict):
            raise TensorFormatError(f"manifest: {where} is not an object")
        supports = []
        raw_supports = _need(entry, "supports", where)
        if not isinstance(raw_supports, list) or not raw_supports:
            raise TensorFormatError(f"manifest: {where} needs a nonempty 'supports' list")
        for k, sup in enumerate(raw_supports):
            sw = f"{where}.supports[{k}]"
            if not isinstance(sup, dict):
                raise TensorFormatError(f"manifest: {sw} is not an object")
            feat = _load_feature(os.path.join(base, _need(sup, "feature", sw)))
            mask = _load_binary_mask(os.path.join(base, _need(sup, "mask", sw)))
            supports.append((feat, mask))
        query = _load_feature(os.path.join(base, _need(entry, "query", where)))
        gt = None
        if entry.get("query_gt") is not None:
            gt = _load_binary_mask(os.path.join(base, entry["query_gt"]))
        try:
            episodes.append(Episode(
                supports=tuple(supports), query=query, query_gt=gt,
                class_id=int(_need(entry, "class_id", where)),
                episode_id=int(_need(entry, "episode_id", where))))
        except (DimMismatchError, EmptyMaskError, ValueError) as exc:
            raise TensorFormatError(f"manifest: {where}: {exc}") from None
    return episodes


def save_episodes(out_dir, episodes: list[Episode], manifest_name: str = "manifest.json") -> str:
    """Write every tensor as an SSPT file plus the manifest; returns the
    manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for ep in episodes:
        prefix = f"ep{ep.episode_id:05d}"
        supports = []
        for k, (feat, mask) in enumerate(ep.supports):
            fpath = f"{prefix}_s{k}_feature.sspt"
            mpath = f"{prefix}_s{k}_mask.sspt"
            write_tensor_file(os.path.join(out_dir, fpath), feat)
            write_tensor_file(os.path.join(out_dir, mpath), mask)
            supports.append({"feature": fpath, "mask": mpath})
        qpath = f"{prefix}_query.sspt"
        write_tensor_file(os.path.join(out_dir, qpath), ep.query)
        entry = {
            "episode_id": ep.episode_id,
            "class_id": ep.class_id,
            "supports": supports,
            "query": qpath,
        }
        if ep.query_gt is not None:
            gpath = f"{prefix}_query_gt.sspt"
            write_tensor_file(os.path.join(out_dir, gpath), ep.query_gt)
            entry["query_gt"] = gpath
        entries.append(entry)
    manifest_path = os.path.join(out_dir, manifest_name)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"episodes": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path
