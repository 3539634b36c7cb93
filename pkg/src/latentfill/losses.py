"""Training objectives and the spectral-normalized discriminator.

Total objective:

    L = L_ipt + lambda_msr * L_msr + lambda_fid * L_fid

where L_ipt = perceptual + adversarial on the synthesized image, L_msr
sums per-scale reconstruction/perceptual/edge/segmentation terms over the
three decoder scales, and L_fid pulls the predicted style rows toward the
online mean latent code.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

PROB_EPS = 1e-7


class LossError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_msr: float = 0.5
    lambda_fid: float = 0.005

    def __post_init__(self):
        if self.lambda_msr < 0 or self.lambda_fid < 0:
            raise ValueError("loss weights must be non-negative")


def perceptual_loss(a, b, extractor):
    """Sum over taps of ||psi_p(a) - psi_p(b)||_2 / numel(psi_p)."""
    total = 0.0
    for ta, tb in zip(extractor.taps(a), extractor.taps(b)):
        total = total + torch.linalg.vector_norm(ta - tb) / ta.numel()
    return total


def adversarial_g_loss(scores):
    """Generator side: -E[D(fake)]."""
    return -scores.mean()


def discriminator_hinge_loss(real_scores, fake_scores):
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def bce_prob(pred, target):
    """Binary cross-entropy on probability maps, clamped to [eps, 1-eps]."""
    p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def ce_prob(pred_probs, target):
    """Cross-entropy on probability maps (B,K,H,W) vs integer labels (B,H,W)."""
    p = pred_probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    picked = p.gather(1, target.unsqueeze(1))
    return -torch.log(picked).mean()


def downscale_ground_truth(image, edge, seg, scales):
    """Per-scale (image, edge, seg) targets, coarse to fine.

    Images are area-downsampled, edges max-pooled (stays binary), labels
    nearest-downsampled.
    """
    out = []
    for s in scales:
        factor = image.shape[-1] // s
        if factor == 1:
            out.append((image, edge, seg))
            continue
        img_s = F.avg_pool2d(image, factor)
        edge_s = F.max_pool2d(edge, factor)
        seg_s = seg[:, ::factor, ::factor]
        out.append((img_s, edge_s, seg_s))
    return out


def msr_loss(preds, gt_scales, extractor):
    """Multi-scale restoration loss: sum_r (L1 + perceptual + BCE + CE)."""
    total = 0.0
    for r, (img_gt, edge_gt, seg_gt) in enumerate(gt_scales):
        total = total + F.l1_loss(preds["image"][r], img_gt)
        total = total + perceptual_loss(preds["image"][r], img_gt, extractor)
        total = total + bce_prob(preds["edge"][r], edge_gt)
        total = total + ce_prob(preds["seg"][r], seg_gt)
    return total


def fidelity_loss(w_star, w_bar):
    """Euclidean norm of the difference between style rows and mean latent."""
    if w_star.shape != w_bar.shape:
        raise LossError(f"shape mismatch {tuple(w_star.shape)} vs {tuple(w_bar.shape)}")
    return torch.linalg.vector_norm(w_star - w_bar)


def total_loss(parts, weights: LossWeights):
    """Weighted sum L_ipt + lambda_msr*L_msr + lambda_fid*L_fid.

    Raises naming the offending term if any part is non-finite.
    """
    for name, value in parts.items():
        v = value.detach() if torch.is_tensor(value) else torch.as_tensor(value)
        if not torch.isfinite(v).all():
            raise LossError(f"non-finite loss term: {name}")
    return (
        parts["ipt"]
        + weights.lambda_msr * parts["msr"]
        + weights.lambda_fid * parts["fid"]
    )


class SNConv2d(nn.Module):
    """Conv2d whose weight is divided by its top singular value.

    The singular value is tracked by one power-iteration step per forward
    (persistent u/v vectors); `normalized_weight` exposes the estimate for
    inspection.
    """

    WARMUP_ITERS = 100

    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding=0):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, stride, padding)
        w = self.conv.weight
        self.register_buffer("u", F.normalize(torch.randn(w.shape[0]), dim=0))
        self.register_buffer("v", F.normalize(torch.randn(w[0].numel()), dim=0))
        # converge the persistent vectors once so the per-step single
        # iteration only has to track slow weight drift
        for _ in range(self.WARMUP_ITERS):
            self.normalized_weight(update=True)

    def normalized_weight(self, update=True):
        w = self.conv.weight
        mat = w.reshape(w.shape[0], -1)
        if update:
            with torch.no_grad():
                self.v = F.normalize(mat.t() @ self.u, dim=0, eps=1e-12)
                self.u = F.normalize(mat @ self.v, dim=0, eps=1e-12)
        sigma = torch.dot(self.u, mat @ self.v)
        return w / sigma.clamp_min(1e-12)

    def forward(self, x):
        w = self.normalized_weight(update=self.training)
        return F.conv2d(x, w, self.conv.bias, self.conv.stride, self.conv.padding)


def spectral_normalize(weight, u=None, steps=1):
    """Functional power-iteration normalization of a 2D-reshaped weight.

    Returns (normalized weight, u) so callers can persist the vector.
    """
    mat = weight.reshape(weight.shape[0], -1)
    if u is None:
        u = F.normalize(torch.randn(mat.shape[0], dtype=mat.dtype), dim=0)
    with torch.no_grad():
        for _ in range(steps):
            v = F.normalize(mat.t() @ u, dim=0, eps=1e-12)
            u = F.normalize(mat @ v, dim=0, eps=1e-12)
    sigma = torch.dot(u, mat @ v)
    return weight / sigma.clamp_min(1e-12), u


class Discriminator(nn.Module):
    """Five spectral-normalized conv layers scoring [image ; edge] stacks."""

    def __init__(self, in_ch=4, base=64):
        super().__init__()
        widths = [base, base * 2, base * 4, base * 4]
        layers = []
        ch = in_ch
        for w in widths:
            layers.append(SNConv2d(ch, w, 4, stride=2, padding=1))
            ch = w
        layers.append(SNConv2d(ch, 1, 3, stride=1, padding=1))
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = F.leaky_relu(layer(x), 0.2)
        return self.layers[-1](x).mean(dim=(1, 2, 3))
