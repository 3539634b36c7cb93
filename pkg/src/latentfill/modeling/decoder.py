"""Tri-branch mutual decoder with gate-aware patch attention fusion.

Three branches (image, edge, segmentation) are upsampled in lockstep over
three scales. At each scale the image branch absorbs context from the
auxiliary branches through a fusion block: auxiliary denormalization
(layer-norm the image features, then apply an affine field predicted from
the auxiliary features), patch self-attention whose rows are scaled by a
learned per-patch gate, and a gated feed-forward. Per-scale heads emit the
image/edge/segmentation predictions; the image branch's post-fusion
features double as the spatial taps consumed by the generator.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from latentfill.modeling.layers import channel_layer_norm, instance_norm

FUSION_MODES = ("gma_adn", "add", "concat", "adain", "spade")
GUIDANCE_MODES = ("unbiased", "biased", "gt")


class AuxDenorm(nn.Module):
    """gamma * LN(x) + beta with (gamma, beta) predicted from context maps."""

    def __init__(self, channels, ctx_channels):
        super().__init__()
        self.conv_h = nn.Conv2d(ctx_channels, channels, 3, padding=1)
        self.conv_gamma = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv_beta = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x, ctx):
        h = F.elu(self.conv_h(ctx))
        return self.conv_gamma(h) * channel_layer_norm(x) + self.conv_beta(h)


class AdaINFusion(nn.Module):
    """Per-channel affine from globally pooled context (ablation)."""

    def __init__(self, channels, ctx_channels):
        super().__init__()
        self.fc1 = nn.Linear(ctx_channels, channels)
        self.fc2 = nn.Linear(channels, 2 * channels)

    def forward(self, x, ctx):
        h = F.elu(self.fc1(ctx.mean(dim=(2, 3))))
        gamma, beta = self.fc2(h).chunk(2, dim=1)
        return gamma[:, :, None, None] * instance_norm(x) + beta[:, :, None, None]


class SpadeFusion(nn.Module):
    """Instance-normalized variant of AuxDenorm (ablation)."""

    def __init__(self, channels, ctx_channels):
        super().__init__()
        self.conv_h = nn.Conv2d(ctx_channels, channels, 3, padding=1)
        self.conv_gamma = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv_beta = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x, ctx):
        h = F.elu(self.conv_h(ctx))
        return self.conv_gamma(h) * instance_norm(x) + self.conv_beta(h)


class GatedPatchAttention(nn.Module):
    """Patch self-attention with per-key gating.

    The feature map splits into N = (H/p)*(W/p) patches. Scores between
    patch embeddings are softmax-normalized and then scaled by the key
    patch's gate in [0,1], so fully gated-off patches contribute nothing:

        alpha[i, j] = softmax_j(Q_i . K_j / sqrt(p*p*c_head)) * gate_j
        out_i = sum_j alpha[i, j] V_j
    """

    def __init__(self, channels, patch, heads=1):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by {heads} heads")
        self.patch = patch
        self.heads = heads
        self.to_q = nn.Conv2d(channels, channels, 1, bias=False)
        self.to_k = nn.Conv2d(channels, channels, 1, bias=False)
        self.to_v = nn.Conv2d(channels, channels, 1, bias=False)

    def _patchify(self, x):
        # (B,C,H,W) -> (B, heads, N, p*p*c_head)
        b, c, h, w = x.shape
        p = self.patch
        ch = c // self.heads
        x = x.reshape(b, self.heads, ch, h // p, p, w // p, p)
        x = x.permute(0, 1, 3, 5, 2, 4, 6)  # b, heads, hp, wp, ch, p, p
        return x.reshape(b, self.heads, (h // p) * (w // p), ch * p * p)

    def _unpatchify(self, x, shape):
        b, c, h, w = shape
        p = self.patch
        ch = c // self.heads
        x = x.reshape(b, self.heads, h // p, w // p, ch, p, p)
        x = x.permute(0, 1, 4, 2, 5, 3, 6)
        return x.reshape(b, c, h, w)

    def forward(self, x, gate):
        """gate: (B, 1, H/p, W/p) per-patch values in [0, 1]."""
        b, c, h, w = x.shape
        p = self.patch
        if h % p or w % p:
            raise ValueError(f"patch {p} does not divide spatial dims {(h, w)}")
        q = self._patchify(self.to_q(x))
        k = self._patchify(self.to_k(x))
        v = self._patchify(self.to_v(x))
        scores = q @ k.transpose(-1, -2) / (q.shape[-1] ** 0.5)
        alpha = torch.softmax(scores, dim=-1)
        alpha = alpha * gate.reshape(b, 1, 1, -1)
        return self._unpatchify(alpha @ v, x.shape)


class GatedFeedForward(nn.Module):
    """Pointwise feed-forward whose value path is multiplied by a sigmoid gate."""

    def __init__(self, channels, expand=2):
        super().__init__()
        inner = channels * expand
        self.conv_in = nn.Conv2d(channels, 2 * inner, 1)
        self.conv_out = nn.Conv2d(inner, channels, 1, bias=False)

    def forward(self, x):
        v, g = self.conv_in(x).chunk(2, dim=1)
        return self.conv_out(F.elu(v) * torch.sigmoid(g))


class FusionBlock(nn.Module):
    """Per-scale fusion of the image branch with the auxiliary branches.

    mode 'gma_adn' (default) runs denormalize -> gated attention -> gated
    feed-forward with residuals. 'adain'/'spade' swap the normalization;
    'add'/'concat' merge branches directly and bypass the attention path
    entirely.
    """

    def __init__(self, channels, ctx_channels, patch, heads=1, mode="gma_adn"):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.mode = mode
        self.patch = patch
        if mode == "concat":
            self.merge = nn.Conv2d(3 * channels, channels, 3, padding=1)
        elif mode != "add":
            norm_cls = {"gma_adn": AuxDenorm, "adain": AdaINFusion, "spade": SpadeFusion}
            self.norm = norm_cls[mode](channels, ctx_channels)
            self.attn = GatedPatchAttention(channels, patch, heads)
            self.gate_conv = nn.Conv2d(1, 1, 1)
        self.ff = GatedFeedForward(channels)

    def patch_gate(self, mask_gate, h, w):
        """Per-patch gate from the running validity mask."""
        pooled = F.adaptive_avg_pool2d(mask_gate, (h // self.patch, w // self.patch))
        return torch.sigmoid(self.gate_conv(pooled))

    def forward(self, f_img, f_edge, f_seg, ctx, mask_gate):
        if self.mode == "add":
            merged = f_img + f_edge + f_seg
            return merged + self.ff(merged)
        if self.mode == "concat":
            merged = self.merge(torch.cat([f_img, f_edge, f_seg], dim=1))
            return merged + self.ff(merged)
        merged = self.norm(f_img, ctx)
        gate = self.patch_gate(mask_gate, *f_img.shape[-2:])
        x = f_img + self.attn(merged, gate)
        return x + self.ff(x)


class _Head(nn.Module):
    def __init__(self, channels, num_labels):
        super().__init__()
        self.to_img = nn.Conv2d(channels, 3, 3, padding=1)
        self.to_edge = nn.Conv2d(channels, 1, 3, padding=1)
        self.to_seg = nn.Conv2d(channels, num_labels, 3, padding=1)

    def image(self, f):
        return torch.tanh(self.to_img(f))

    def edge(self, f):
        return torch.sigmoid(self.to_edge(f))

    def seg(self, f):
        return torch.softmax(self.to_seg(f), dim=1)


class _UpStage(nn.Module):
    """Nearest-neighbor upsample, then conv over [x ; skip]."""

    def __init__(self, in_ch, skip_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch + skip_ch, out_ch, 3, padding=1)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        if skip.shape[-2:] != x.shape[-2:]:
            raise ValueError(
                f"skip {tuple(skip.shape[-2:])} does not align with {tuple(x.shape[-2:])}"
            )
        return F.elu(self.conv(torch.cat([x, skip], dim=1)))


class MutualDecoder(nn.Module):
    """Decode enhanced bottleneck features into three-scale predictions.

    Returns a dict with per-scale prediction triples and the image-branch
    feature taps. Scales run coarse to fine: s/4, s/2, s.
    """

    def __init__(
        self,
        enc_widths,
        in_ch,
        num_labels,
        stage_widths=(256, 128, 64, 64),
        patch_plan=(4, 4, 2),
        heads=1,
        fusion="gma_adn",
        guidance="unbiased",
    ):
        super().__init__()
        if guidance not in GUIDANCE_MODES:
            raise ValueError(f"unknown guidance mode {guidance!r}")
        self.num_labels = num_labels
        self.guidance = guidance
        self.fusion_mode = fusion
        w16, w8, *branch_w = stage_widths  # widths at s/16, s/8 and the 3 scales
        c_bottleneck = enc_widths[4]
        # trunk: two shared skip-fused upsampling stages (s/32 -> s/8)
        self.trunk1 = _UpStage(c_bottleneck, enc_widths[3], w16)
        self.trunk2 = _UpStage(w16, enc_widths[2], w8)
        # per-branch upsampling stages at the three prediction scales
        skip_chs = [enc_widths[1], enc_widths[0], in_ch]
        stage_in = [w8, branch_w[0], branch_w[1]]
        self.branches = nn.ModuleDict()
        for name in ("img", "edge", "seg"):
            self.branches[name] = nn.ModuleList(
                _UpStage(stage_in[r], skip_chs[r], branch_w[r]) for r in range(3)
            )
        ctx_ch = (
            num_labels + 1 if guidance in ("biased", "gt") else None
        )
        self.fusions = nn.ModuleList(
            FusionBlock(
                branch_w[r],
                ctx_ch if ctx_ch is not None else 2 * branch_w[r],
                patch_plan[r],
                heads,
                fusion,
            )
            for r in range(3)
        )
        self.heads = nn.ModuleList(_Head(branch_w[r], num_labels) for r in range(3))

    def forward(self, f, g, skips, enc_input, gt_maps=None):
        """gt_maps: optional per-scale [onehot_seg ; edge] stacks for
        guidance='gt' (coarse to fine)."""
        x = self.trunk1(f, skips[3])
        x = self.trunk2(x, skips[2])
        b = {"img": x, "edge": x, "seg": x}
        branch_skips = [skips[1], skips[0], enc_input]
        preds = {"image": [], "edge": [], "seg": []}
        taps = []
        for r in range(3):
            for name in ("img", "edge", "seg"):
                b[name] = self.branches[name][r](b[name], branch_skips[r])
            head = self.heads[r]
            edge_pred = head.edge(b["edge"])
            seg_pred = head.seg(b["seg"])
            if self.guidance == "biased":
                ctx = torch.cat([seg_pred, edge_pred], dim=1)
            elif self.guidance == "gt":
                if gt_maps is None:
                    raise ValueError("guidance='gt' requires gt_maps")
                ctx = gt_maps[r]
            else:
                ctx = torch.cat([b["edge"], b["seg"]], dim=1)
            gate = F.interpolate(g, size=b["img"].shape[-2:], mode="nearest")
            b["img"] = self.fusions[r](b["img"], b["edge"], b["seg"], ctx, gate)
            preds["image"].append(head.image(b["img"]))
            preds["edge"].append(edge_pred)
            preds["seg"].append(seg_pred)
            taps.append(b["img"])
        return preds, taps


def prediction_stack(preds, r):
    """Concatenated [seg ; edge ; image] restoration at scale r."""
    return torch.cat([preds["seg"][r], preds["edge"][r], preds["image"][r]], dim=1)
