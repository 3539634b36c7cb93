"""Evaluation metrics and the bucketed evaluation harness.

Distribution metrics (FID, the SVM separability scores) run on feature
matrices from a pluggable extractor; pixel metrics (SSIM, the LPIPS-style
distance) run on image pairs. `evaluate_corpus` fixes one mask per
(image, bucket, seed) triple so different model variants see bitwise
identical corruptions.
"""

from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch
from skimage.metrics import structural_similarity
from sklearn.svm import LinearSVC

from latentfill import masking
from latentfill.masking import MaskSpec, generate_mask


class MetricError(ValueError):
    pass


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma=1.5).

    Inputs are (C,H,W) or (H,W) arrays on [0,1]; channels are averaged.
    """
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    kwargs = dict(
        data_range=1.0,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
    )
    if x.ndim == 3:
        kwargs["channel_axis"] = 0
    return float(structural_similarity(x, y, **kwargs))


def _cov(feats: np.ndarray) -> np.ndarray:
    return np.cov(feats, rowvar=False)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < -1e-5:
        warnings.warn(f"clipping negative eigenvalue {vals.min():.3e} in matrix sqrt")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

        ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})

    The cross term's trace is computed from the eigenvalues of the
    symmetrized product sqrt(S_a) S_b sqrt(S_a), clipping negatives at 0.
    """
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    if feats_a.ndim != 2 or feats_b.ndim != 2 or feats_a.shape[1] != feats_b.shape[1]:
        raise MetricError("feature sets must be (n, d) with matching d")
    if feats_a.shape[0] < 2 or feats_b.shape[0] < 2:
        raise MetricError("need at least 2 samples per set")
    if not (np.isfinite(feats_a).all() and np.isfinite(feats_b).all()):
        raise MetricError("non-finite features")
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    cov_a, cov_b = np.atleast_2d(_cov(feats_a)), np.atleast_2d(_cov(feats_b))
    root_a = _sqrtm_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -1e-5:
        warnings.warn(f"clipping negative eigenvalue {vals.min():.3e} in FID cross term")
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    return float(
        np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross
    )


def lpips_proxy(x: np.ndarray, y: np.ndarray, extractor) -> float:
    """Mean over taps of the mean squared difference of channel-unit-normalized
    activations (a desk-scale stand-in for a learned perceptual distance)."""
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    tx = torch.from_numpy(np.asarray(x, dtype=np.float32))[None]
    ty = torch.from_numpy(np.asarray(y, dtype=np.float32))[None]
    with torch.no_grad():
        taps_x = extractor.taps(tx)
        taps_y = extractor.taps(ty)
    total = 0.0
    for ax, ay in zip(taps_x, taps_y):
        nx = ax / ax.pow(2).sum(dim=1, keepdim=True).sqrt().clamp_min(1e-10)
        ny = ay / ay.pow(2).sum(dim=1, keepdim=True).sqrt().clamp_min(1e-10)
        total += (nx - ny).pow(2).mean().item()
    return total / len(taps_x)


def pids_uids(
    real_feats: np.ndarray, fake_feats: np.ndarray, paired: bool = True
) -> tuple[float, float]:
    """Linear-SVM separability scores (paired, unpaired).

    A soft-margin linear SVM (C=1) is fit on variance-standardized features
    with real=+1, fake=-1, then evaluated on the same samples. U-IDS is the
    fraction misclassified; P-IDS is the fraction of pairs whose fake scores
    strictly above its real counterpart.
    """
    real_feats = np.asarray(real_feats, dtype=np.float64)
    fake_feats = np.asarray(fake_feats, dtype=np.float64)
    if real_feats.shape != fake_feats.shape:
        raise MetricError("real/fake feature sets must have matching shapes")
    if len(real_feats) < 2:
        raise MetricError("need at least 2 samples")
    stacked = np.vstack([real_feats, fake_feats])
    std = stacked.std(axis=0)
    if (std == 0).all():
        raise MetricError("degenerate features: zero variance everywhere")
    scale = np.where(std > 0, std, 1.0)
    mean = stacked.mean(axis=0)
    xs = (stacked - mean) / scale
    ys = np.concatenate([np.ones(len(real_feats)), -np.ones(len(fake_feats))])
    svm = LinearSVC(C=1.0, dual=False)
    svm.fit(xs, ys)
    pred = svm.predict(xs)
    u_ids = float(np.mean(pred != ys))
    scores = svm.decision_function(xs)
    real_scores, fake_scores = scores[: len(real_feats)], scores[len(real_feats) :]
    p_ids = float(np.mean(fake_scores > real_scores)) if paired else float("nan")
    return p_ids, u_ids


def miou(pred_seg: np.ndarray, gt_seg: np.ndarray, num_labels: int) -> float:
    """Mean over gt-present classes of intersection-over-union."""
    if pred_seg.shape != gt_seg.shape:
        raise MetricError("segmentation shape mismatch")
    if pred_seg.max() >= num_labels or gt_seg.max() >= num_labels:
        raise MetricError("labels exceed num_labels")
    ious = []
    for k in np.unique(gt_seg):
        inter = np.logical_and(pred_seg == k, gt_seg == k).sum()
        union = np.logical_or(pred_seg == k, gt_seg == k).sum()
        ious.append(inter / union if union else 1.0)
    return float(np.mean(ious))


def mask_seed_for(seed: int, sample_id: str, bucket: str) -> int:
    """Process-independent mask seed shared across model variants."""
    return zlib.crc32(f"{seed}:{sample_id}:{bucket}".encode()) & 0x7FFFFFFF


@dataclass
class BucketReport:
    buckets: dict = field(default_factory=dict)  # bucket -> {metric: value}

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"bucket": b, **{k: v for k, v in sorted(vals.items())}})
            for b, vals in self.buckets.items()
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "BucketReport":
        rep = cls()
        for line in text.strip().splitlines():
            obj = json.loads(line)
            bucket = obj.pop("bucket")
            rep.buckets[bucket] = obj
        return rep

    def to_text_table(self) -> str:
        buckets = list(self.buckets)
        metrics = sorted({m for vals in self.buckets.values() for m in vals})
        header = ["metric"] + [f"{b} ({masking.BUCKETS[b][0]:.0%}-{masking.BUCKETS[b][1]:.0%})"
                               if b in masking.BUCKETS else b for b in buckets]
        rows = [header]
        for m in metrics:
            rows.append(
                [m] + [
                    f"{self.buckets[b][m]:.4f}" if m in self.buckets[b] else "-"
                    for b in buckets
                ]
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
            if i == 0:
                lines.append("-" * len(lines[0]))
        return "\n".join(lines) + "\n"


def evaluate_corpus(
    inpaint_fn,
    samples,
    extractor,
    buckets=("low", "mid", "high"),
    seed: int = 0,
    mask_kind: str = "brush",
    num_labels: int = 1,
) -> BucketReport:
    """Run the fixed-mask evaluation protocol over a corpus.

    inpaint_fn(sample, mask) must return (composited image in [-1,1],
    predicted segmentation labels or None). Masks depend only on
    (seed, sample id, bucket), so two model variants evaluated with the
    same seed consume bitwise identical masks.
    """
    report = BucketReport()
    for bucket in buckets:
        if not samples:
            raise MetricError(f"empty bucket {bucket!r}: no samples")
        ssims, lpipss, mious = [], [], []
        real_feats, fake_feats = [], []
        for sample in samples:
            h, w = sample.image.shape[-2:]
            mask = generate_mask(
                MaskSpec(mask_kind, bucket, mask_seed_for(seed, sample.id, bucket)),
                h,
                w,
            )
            out_img, pred_seg = inpaint_fn(sample, mask)
            gt01 = (sample.image + 1.0) / 2.0
            out01 = (np.asarray(out_img) + 1.0) / 2.0
            ssims.append(ssim(out01, gt01))
            lpipss.append(lpips_proxy(out_img, sample.image, extractor))
            if pred_seg is not None and num_labels > 1:
                mious.append(miou(pred_seg, sample.seg, num_labels))
            with torch.no_grad():
                fm = extractor.feature_matrix(
                    torch.from_numpy(
                        np.stack([sample.image, np.asarray(out_img)]).astype(np.float32)
                    )
                ).numpy()
            real_feats.append(fm[0])
            fake_feats.append(fm[1])
        real_arr, fake_arr = np.array(real_feats), np.array(fake_feats)
        p_ids, u_ids = pids_uids(real_arr, fake_arr, paired=True)
        vals = {
            "fid": fid(real_arr, fake_arr),
            "ssim": float(np.mean(ssims)),
            "lpips_proxy": float(np.mean(lpipss)),
            "p_ids": p_ids,
            "u_ids": u_ids,
        }
        if mious:
            vals["miou"] = float(np.mean(mious))
        report.buckets[bucket] = vals
    return report
