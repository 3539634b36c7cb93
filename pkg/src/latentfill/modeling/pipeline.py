"""Full model assembly: encoder -> bottleneck -> decoder -> inversion ->
synthesis, plus the input stacking and inference conveniences.

The encoder input is the channel stack [masked image (3) ; masked edge (1) ;
masked one-hot segmentation (K) ; mask (1)]. Absent modalities enter as
zero matrices, which is the hint-free standard-inpainting case.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from latentfill.config import ModelConfig
from latentfill.modeling.decoder import MutualDecoder, prediction_stack
from latentfill.modeling.encoder import Backbone, build_bottleneck
from latentfill.modeling.generator import FusionProjector, Generator
from latentfill.modeling.inversion import InversionHead


def one_hot_seg(seg, num_labels):
    """(B,H,W) int labels -> (B,K,H,W) float one-hot."""
    return F.one_hot(seg.long(), num_labels).permute(0, 3, 1, 2).float()


def assemble_input(image, mask, edge=None, seg=None, num_labels=1):
    """Stack masked modalities into the (B, 5+K, H, W) encoder input.

    edge/seg may be None (zero matrices). Mask convention: 1 = missing.
    """
    known = 1.0 - mask
    parts = [image * known]
    parts.append(edge * known if edge is not None else torch.zeros_like(mask))
    if seg is not None:
        parts.append(one_hot_seg(seg, num_labels) * known)
    else:
        b, _, h, w = mask.shape
        parts.append(torch.zeros(b, num_labels, h, w, dtype=mask.dtype, device=mask.device))
    parts.append(mask)
    return torch.cat(parts, dim=1)


class InpaintingModel(nn.Module):
    """Everything trainable plus the (conventionally frozen) generator."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        s = cfg.resolution
        in_ch = 5 + cfg.num_labels
        ew = cfg.enc_widths
        self.backbone = Backbone(in_ch, ew)
        self.bottleneck = build_bottleneck(
            cfg.bottleneck, ew[4], cfg.acb_layers, cfg.dilation_rates
        )
        self.decoder = MutualDecoder(
            ew,
            in_ch,
            cfg.num_labels,
            stage_widths=cfg.dec_widths[:2] + cfg.dec_widths[2:5],
            patch_plan=cfg.patch_plan,
            heads=cfg.attn_heads,
            fusion=cfg.fusion,
            guidance=cfg.guidance,
        )
        stack_ch = cfg.num_labels + 4
        self.inversion = InversionHead(
            s,
            tap_channels=(ew[4], ew[3], ew[2]),
            tap_spatials=(s // 32, s // 16, s // 8),
            stack_channels=(stack_ch,) * 3,
            stack_spatials=(s // 4, s // 2, s),
            width_cap=cfg.style_width_cap,
        )
        self.generator = Generator(
            s, cfg.gen_base, cfg.gen_cmax, cfg.noise, cfg.mapping_depth
        )
        self.projector = FusionProjector(cfg.dec_widths[2:5], self.generator.synthesis)

    @property
    def num_style_layers(self):
        return self.generator.synthesis.num_layers

    def encoder_parameters(self):
        """Everything trained during the encoder phase (generator excluded)."""
        mods = [self.backbone, self.bottleneck, self.decoder, self.inversion, self.projector]
        for m in mods:
            yield from m.parameters()

    def generator_parameters(self):
        """The frozen set: mapping + synthesis core."""
        yield from self.generator.parameters()

    def forward(self, enc_input, gt_maps=None, noise_seed=None):
        (f0, g0), skips = self.backbone(enc_input)
        f, g = self.bottleneck(f0, g0)
        preds, taps = self.decoder(f, g, skips, enc_input, gt_maps)
        stacks = [prediction_stack(preds, r) for r in range(3)]
        w_star, w_prime, structures = self.inversion((f, skips[3], skips[2]), stacks)
        image = self.generator.synthesis(w_star, self.projector(taps), noise_seed)
        return {
            "image": image,
            "preds": preds,
            "taps": taps,
            "w_star": w_star,
            "w_prime": w_prime,
            "structures": structures,
        }

    @torch.no_grad()
    def infer(self, image, mask, edge_hint=None, seg_hint=None, seed=None):
        """Single-sample numpy inference; returns the raw synthesis in [-1,1].

        image (3,s,s) in [-1,1]; mask (1,s,s) {0,1}; optional hints.
        """
        self.eval()
        dev = next(self.parameters()).device
        to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).float()[None].to(dev)
        img = to_t(image)
        m = to_t(mask)
        edge = to_t(edge_hint) if edge_hint is not None else None
        seg = (
            torch.from_numpy(np.ascontiguousarray(seg_hint)).long()[None].to(dev)
            if seg_hint is not None
            else None
        )
        enc_in = assemble_input(img, m, edge, seg, self.cfg.num_labels)
        out = self.forward(enc_in, noise_seed=seed)
        return out["image"][0].cpu().numpy(), out


def build_model(cfg: ModelConfig) -> InpaintingModel:
    return InpaintingModel(cfg)
