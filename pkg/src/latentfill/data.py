"""Corpus ingestion: manifests, edge extraction, label merging, sample prep.

A corpus is described by a UTF-8 line-delimited manifest (one JSON object
per line) with fields ``id``, ``image_path``, ``seg_path`` (optional) and
``split``. Images are PNG or JPEG; segmentation maps are single-channel
PNGs of integer labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

VALID_SPLITS = ("train", "val", "test")

# Canny thresholds on [0,1] grayscale; the 8-bit scaling happens internally.
DEFAULT_CANNY = (0.1, 0.2)


class IngestError(ValueError):
    """Raised for malformed manifests, undecodable images, or bad labels."""


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image_path: str
    seg_path: Optional[str]
    split: str


@dataclass(frozen=True)
class Sample:
    """One normalized multi-modal training sample.

    image: float32 (3, s, s) in [-1, 1]
    seg:   int64 (s, s), values in [0, K-1]
    edge:  uint8 (s, s), values in {0, 1}; exactly the Canny response of
           the grayscale of ``image`` under the thresholds used to build it.
    """

    id: str
    image: np.ndarray
    seg: np.ndarray
    edge: np.ndarray


class LabelMergeMap:
    """Maps raw segmentation labels onto a compact range [0, K-1].

    Every source label appears exactly once as a key, and the merged labels
    must cover [0, K-1] without holes.
    """

    def __init__(self, mapping: dict[int, int]):
        if not mapping:
            raise IngestError("label merge map is empty")
        merged = set(mapping.values())
        k = max(merged) + 1
        if min(merged) < 0 or merged != set(range(k)):
            raise IngestError(
                f"merged labels must cover 0..K-1 without holes, got {sorted(merged)}"
            )
        self.mapping = dict(mapping)
        self.num_labels = k

    @classmethod
    def identity(cls, k: int) -> "LabelMergeMap":
        return cls({i: i for i in range(k)})

    @classmethod
    def from_json(cls, path: str | Path) -> "LabelMergeMap":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls({int(k): int(v) for k, v in raw.items()})


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Parse a line-delimited manifest, preserving file order.

    Fails on a missing file, a malformed line (named by line number), an
    unknown split, or a duplicate id (named in the error).
    """
    p = Path(path)
    if not p.is_file():
        raise IngestError(f"manifest not found: {p}")
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
                image_path = obj["image_path"]
                split = obj["split"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestError(f"malformed manifest line {lineno}: {exc}") from exc
            if split not in VALID_SPLITS:
                raise IngestError(
                    f"malformed manifest line {lineno}: unknown split {split!r}"
                )
            if rid in seen:
                raise IngestError(f"duplicate manifest id: {rid!r} (line {lineno})")
            seen.add(rid)
            records.append(
                ManifestRecord(
                    id=str(rid),
                    image_path=str(image_path),
                    seg_path=str(obj["seg_path"]) if obj.get("seg_path") else None,
                    split=str(split),
                )
            )
    return records


def extract_edges(
    image: np.ndarray, low: float = DEFAULT_CANNY[0], high: float = DEFAULT_CANNY[1]
) -> np.ndarray:
    """Canny edges of the grayscale of a (3, H, W) image in [-1, 1].

    Thresholds are on the [0,1] grayscale scale. Output is uint8 {0, 1} and
    is deterministic for fixed input and thresholds.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise IngestError(f"expected (3,H,W) image, got {image.shape}")
    if not (0.0 <= low <= high):
        raise IngestError(f"invalid canny thresholds low={low} high={high}")
    if not np.all(np.isfinite(image)):
        raise IngestError("non-finite pixel values in image")
    hwc = np.transpose(image, (1, 2, 0))
    u8 = np.clip((hwc + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    gray = cv2.cvtColor(u8, cv2.COLOR_RGB2GRAY)
    edges = cv2.Canny(gray, low * 255.0, high * 255.0)
    return (edges > 0).astype(np.uint8)


def merge_labels(seg: np.ndarray, merge: LabelMergeMap) -> np.ndarray:
    """Substitute every label through the merge map; shape is preserved."""
    unknown = set(np.unique(seg).tolist()) - set(merge.mapping)
    if unknown:
        raise IngestError(f"unknown segmentation label(s): {sorted(unknown)}")
    lut = np.zeros(max(merge.mapping) + 1, dtype=np.int64)
    for src, dst in merge.mapping.items():
        lut[src] = dst
    return lut[seg.astype(np.int64)]


def _decode_image(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise IngestError(f"undecodable image: {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def prepare_sample(
    record: ManifestRecord,
    s: int,
    merge: Optional[LabelMergeMap] = None,
    canny_thresholds: tuple[float, float] = DEFAULT_CANNY,
) -> Sample:
    """Load, resize and normalize one record into a Sample.

    The image is bilinearly resized to (s, s) and scaled to [-1, 1]; the
    segmentation map is resized with nearest-neighbor (no new labels);
    edges are derived from the resized image. Records without a seg_path
    get a single background label 0.
    """
    if s < 16 or (s & (s - 1)) != 0:
        raise IngestError(f"resolution must be a power of two >= 16, got {s}")
    rgb = _decode_image(record.image_path)
    if record.seg_path is not None:
        seg = cv2.imread(record.seg_path, cv2.IMREAD_UNCHANGED)
        if seg is None:
            raise IngestError(f"undecodable segmentation: {record.seg_path}")
        if seg.ndim != 2:
            raise IngestError(f"segmentation must be single-channel: {record.seg_path}")
        if seg.shape != rgb.shape[:2]:
            raise IngestError(
                f"seg/image shape mismatch for id {record.id!r}: "
                f"{seg.shape} vs {rgb.shape[:2]}"
            )
        seg = cv2.resize(seg, (s, s), interpolation=cv2.INTER_NEAREST).astype(np.int64)
        if merge is not None:
            seg = merge_labels(seg, merge)
    else:
        seg = np.zeros((s, s), dtype=np.int64)

    rgb = cv2.resize(rgb, (s, s), interpolation=cv2.INTER_LINEAR)
    image = np.transpose(rgb, (2, 0, 1)).astype(np.float32) / 127.5 - 1.0
    edge = extract_edges(image, *canny_thresholds)
    return Sample(id=record.id, image=image, seg=seg, edge=edge)
