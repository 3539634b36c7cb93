"""Corruption masks: brush strokes, rectangles, and outpainting frames.

Convention: a mask is a {0,1} array of shape (1, H, W) where 1 marks a
missing pixel, so the degenerated image is ``Y * (1 - M)``. Serialized
masks are 8-bit PNGs with 255 = missing, 0 = known.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

BUCKETS: dict[str, tuple[float, float]] = {
    "low": (0.10, 0.30),
    "mid": (0.40, 0.60),
    "high": (0.70, 0.90),
}

MASK_KINDS = ("brush", "rect", "outpaint")

_MAX_ROUNDS = 100


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    kind: str
    bucket: str
    seed: int

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise MaskError(f"unknown mask kind {self.kind!r}")
        if self.bucket not in BUCKETS:
            raise MaskError(f"unknown bucket {self.bucket!r}")


def coverage(mask: np.ndarray) -> float:
    return float(np.mean(mask))


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out the missing region: ``Y * (1 - M)``."""
    if image.shape[-2:] != mask.shape[-2:]:
        raise MaskError(f"shape mismatch: image {image.shape} vs mask {mask.shape}")
    return image * (1.0 - mask.astype(image.dtype))


def composite(generated: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Paste the generated content into the hole: ``O*M + Y*(1-M)``.

    Implemented as a selection so unmasked pixels equal the truth bitwise
    for any dtype.
    """
    if generated.shape != truth.shape or generated.shape[-2:] != mask.shape[-2:]:
        raise MaskError(
            f"shape mismatch: generated {generated.shape}, truth {truth.shape}, "
            f"mask {mask.shape}"
        )
    m = np.broadcast_to(mask.astype(bool), generated.shape)
    return np.where(m, generated, truth)


def _rng(seed: int, round_idx: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed & 0xFFFFFFFF, round_idx]))


def _brush_proposal(rng: np.random.Generator, H: int, W: int, lo: float, hi: float):
    mask = np.zeros((H, W), dtype=np.uint8)
    target = rng.uniform(lo + 0.02, hi - 0.02)
    scale = max(H, W)
    guard = 0
    while mask.mean() < target and guard < 400:
        guard += 1
        # one stroke: a short random walk of thick segments
        x = rng.integers(0, W)
        y = rng.integers(0, H)
        angle = rng.uniform(0, 2 * np.pi)
        remaining = target - mask.mean()
        # thinner strokes as we close in on the target to limit overshoot
        max_frac = 0.25 if remaining > 0.08 else 0.08
        width = int(np.clip(rng.uniform(0.02, max_frac) * scale, 2, None))
        for _ in range(rng.integers(2, 7)):
            angle += rng.uniform(-0.8, 0.8)
            length = rng.uniform(0.1, 0.35) * scale
            nx = int(np.clip(x + length * np.cos(angle), 0, W - 1))
            ny = int(np.clip(y + length * np.sin(angle), 0, H - 1))
            cv2.line(mask, (int(x), int(y)), (nx, ny), 1, width)
            cv2.circle(mask, (nx, ny), width // 2, 1, -1)
            x, y = nx, ny
        if mask.mean() > hi:
            break
    return mask


def _rect_proposal(rng: np.random.Generator, H: int, W: int, lo: float, hi: float):
    area = rng.uniform(lo, hi) * H * W
    aspect = rng.uniform(0.5, 2.0)
    w = int(np.clip(round(np.sqrt(area * aspect)), 1, W))
    h = int(np.clip(round(area / w), 1, H))
    mask = np.zeros((H, W), dtype=np.uint8)
    x0 = int(rng.integers(0, W - w + 1))
    y0 = int(rng.integers(0, H - h + 1))
    mask[y0 : y0 + h, x0 : x0 + w] = 1
    return mask


def _outpaint_proposal(rng: np.random.Generator, H: int, W: int, lo: float, hi: float):
    cov = rng.uniform(lo, hi)
    frac = np.sqrt(1.0 - cov)
    h = int(np.clip(round(frac * H), 1, H))
    w = int(np.clip(round(frac * W), 1, W))
    mask = np.ones((H, W), dtype=np.uint8)
    y0 = (H - h) // 2
    x0 = (W - w) // 2
    mask[y0 : y0 + h, x0 : x0 + w] = 0
    return mask


_PROPOSALS = {
    "brush": _brush_proposal,
    "rect": _rect_proposal,
    "outpaint": _outpaint_proposal,
}


def generate_mask(spec: MaskSpec, H: int, W: int) -> np.ndarray:
    """Draw a mask whose coverage lands in the spec's bucket.

    Proposals are re-sampled (up to 100 rounds) until the coverage fits;
    deterministic given the seed.
    """
    if H < 16 or W < 16:
        raise MaskError(f"mask size too small: {H}x{W}")
    lo, hi = BUCKETS[spec.bucket]
    propose = _PROPOSALS[spec.kind]
    for round_idx in range(_MAX_ROUNDS):
        mask = propose(_rng(spec.seed, round_idx), H, W, lo, hi)
        cov = mask.mean()
        if lo <= cov <= hi:
            return mask[None].astype(np.float32)
    raise MaskError(
        f"could not hit bucket {spec.bucket!r} with kind {spec.kind!r} "
        f"on a {H}x{W} canvas after {_MAX_ROUNDS} rounds"
    )


def mask_to_png(mask: np.ndarray) -> np.ndarray:
    """(1,H,W) {0,1} float mask -> uint8 image, 255 = missing."""
    return (mask[0] > 0.5).astype(np.uint8) * 255


def png_to_mask(img: np.ndarray) -> np.ndarray:
    """uint8 image (any channel layout) -> (1,H,W) {0,1} float32 mask."""
    if img.ndim == 3:
        img = img[..., 0]
    return (img > 127).astype(np.float32)[None]


def save_mask(path: str, mask: np.ndarray) -> None:
    if not cv2.imwrite(path, mask_to_png(mask)):
        raise MaskError(f"failed to write mask: {path}")


def load_mask(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise MaskError(f"unreadable mask: {path}")
    return png_to_mask(img)
