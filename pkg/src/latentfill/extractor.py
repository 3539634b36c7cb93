"""Frozen random convolutional pyramid used as the desk-scale feature
extractor for perceptual losses and distribution metrics.

The weights are drawn once from a fixed seed so every process sees the
same extractor. Level 0 of the pyramid is the image itself, so the
perceptual distance retains a direct pixel-fidelity component; deeper
levels are dilated strided convolutions with growing receptive fields.
Each level is scaled by sqrt(per-sample element count)/4, which keeps the
norm-over-element-count perceptual distance at a useful O(rms) magnitude
independent of resolution.

Any module exposing ``taps(images) -> list[Tensor]`` and
``feature_matrix(images) -> (n, d)`` can be plugged in instead (e.g. a
pretrained backbone) for comparable numbers across machines.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

DEFAULT_SEED = 0x5EED


class FrozenPyramidExtractor(nn.Module):
    def __init__(
        self,
        widths=(16, 24, 32, 48),
        dilations=(1, 1, 2, 4),
        seed=DEFAULT_SEED,
        include_identity=True,
    ):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        ch = 3
        for w, d in zip(widths, dilations):
            conv = nn.Conv2d(ch, w, 3, stride=2, padding=d, dilation=d)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen)
                    * (2.0 / (ch * 9)) ** 0.5
                )
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            convs.append(conv)
            ch = w
        self.convs = nn.ModuleList(convs)
        self.include_identity = include_identity
        for p in self.parameters():
            p.requires_grad_(False)
        self.feature_dim = sum(widths)

    @staticmethod
    def _gain(t):
        # per-sample element count, so the scale is batch-size independent
        return (t[0].numel() ** 0.5) / 4.0

    def taps(self, x):
        """Activation maps per pyramid level (inputs in [-1, 1])."""
        out = [x * self._gain(x)] if self.include_identity else []
        for conv in self.convs:
            x = F.elu(conv(x))
            out.append(x * self._gain(x))
        return out

    def feature_matrix(self, x):
        """Global-average-pooled conv taps concatenated to an (n, d) matrix."""
        with torch.no_grad():
            feats = []
            for conv in self.convs:
                x = F.elu(conv(x))
                feats.append(x.mean(dim=(2, 3)))
        return torch.cat(feats, dim=1)
