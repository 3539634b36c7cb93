"""Downsampling backbone and the stack of adaptive contextual bottlenecks.

The backbone reduces the multi-modal input by five stride-2 convolutions
(with one self-attention block after the fourth) and ends in a gated
convolution that yields the base features f0 and the initial gate g0. The
bottleneck then refines (f, g) through T adaptive layers whose parallel
dilated paths are softly weighted per spatial location by gate-derived
attention.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from latentfill.modeling.layers import GatedConv2d, SelfAttention2d


class ConfigurationError(ValueError):
    pass


class Backbone(nn.Module):
    """Five stride-2 conv layers + self-attention + tail gated conv.

    Input is the masked multi-modal stack (3 image + 1 edge + K seg + 1 mask
    channels); output spatial size is s / 32.
    """

    def __init__(self, in_ch, widths=(64, 128, 256, 512, 512)):
        super().__init__()
        if len(widths) != 5:
            raise ConfigurationError("backbone expects 5 layer widths")
        chans = [in_ch, *widths]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1)
            for i in range(5)
        )
        self.attn = SelfAttention2d(widths[3])
        self.tail = GatedConv2d(widths[4], widths[4])
        self.widths = tuple(widths)

    def forward(self, x):
        if x.shape[-1] < 32 or x.shape[-2] < 32:
            raise ConfigurationError(
                f"input {tuple(x.shape[-2:])} too small for 5 stride-2 layers"
            )
        skips = []
        for i, conv in enumerate(self.convs):
            x = F.elu(conv(x))
            if i == 3:
                x = self.attn(x)
            skips.append(x)
        f0, g0 = self.tail(x)
        return (f0, g0), skips


class ACBLayer(nn.Module):
    """One adaptive contextual bottleneck layer.

    Parallel dilated conv paths f_r are combined by a per-location softmax
    over gate-derived logits a_r, plus a residual:

        f_out = sum_r softmax_r(a_r) * f_r + f_in

    a_r comes from sigmoid(fc(avg_c(g_r)) + fc(max_c(g_r))) where
    g_r = conv([f_r; g; g_prev]) and fc is a shared two-layer 1x1
    bottleneck applied to the channel-pooled maps. The layer emits a fresh
    gate g_out = sigmoid(conv(f_out)).
    """

    def __init__(self, channels, rates=(1, 2, 3, 4), gate_ch=None, fc_hidden=8):
        super().__init__()
        if len(set(rates)) != len(rates) or any(r <= 0 for r in rates):
            raise ConfigurationError(f"dilation rates must be positive, distinct: {rates}")
        self.rates = tuple(rates)
        gate_ch = gate_ch or max(2, channels // 16)
        self.path_convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=r, dilation=r) for r in rates
        )
        self.gate_convs = nn.ModuleList(
            nn.Conv2d(channels + 2, gate_ch, 3, padding=1) for _ in rates
        )
        self.fc1 = nn.Conv2d(1, fc_hidden, 1)
        self.fc2 = nn.Conv2d(fc_hidden, 1, 1)
        self.out_gate = nn.Conv2d(channels, 1, 3, padding=1)

    def _path_logit(self, g_r):
        avg = g_r.mean(dim=1, keepdim=True)
        mx = g_r.max(dim=1, keepdim=True).values
        return torch.sigmoid(
            self.fc2(F.elu(self.fc1(avg))) + self.fc2(F.elu(self.fc1(mx)))
        )

    def forward(self, f, g, g_prev):
        feats, logits = [], []
        for conv_f, conv_g in zip(self.path_convs, self.gate_convs):
            f_r = F.elu(conv_f(f))
            g_r = conv_g(torch.cat([f_r, g, g_prev], dim=1))
            feats.append(f_r)
            logits.append(self._path_logit(g_r))
        weights = torch.softmax(torch.stack(logits, dim=0), dim=0)
        f_out = f + sum(w * f_r for w, f_r in zip(weights, feats))
        g_out = torch.sigmoid(self.out_gate(f_out))
        return f_out, g_out


class ACBStack(nn.Module):
    """T sequential bottleneck layers threading (g_t, g_{t-1}).

    The first layer's predecessor gate is a copy of the initial gate.
    """

    def __init__(self, channels, num_layers=8, rates=(1, 2, 3, 4)):
        super().__init__()
        if num_layers < 1:
            raise ConfigurationError("bottleneck needs at least one layer")
        self.layers = nn.ModuleList(
            ACBLayer(channels, rates) for _ in range(num_layers)
        )

    def forward(self, f, g):
        g_prev = g
        for layer in self.layers:
            f, g_new = layer(f, g, g_prev)
            g_prev, g = g, g_new
        return f, g


class ResBottleneckStack(nn.Module):
    """Plain residual blocks; the gate passes through unchanged (ablation)."""

    def __init__(self, channels, num_layers=8):
        super().__init__()
        self.blocks = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(channels, channels, 3, padding=1),
                nn.ELU(),
                nn.Conv2d(channels, channels, 3, padding=1),
            )
            for _ in range(num_layers)
        )

    def forward(self, f, g):
        for block in self.blocks:
            f = f + block(f)
        return f, g


class AotBottleneckStack(nn.Module):
    """Split-dilate-concat blocks with a learned residual gate (ablation)."""

    def __init__(self, channels, num_layers=8, rates=(1, 2, 3, 4)):
        super().__init__()
        if channels % len(rates) != 0:
            raise ConfigurationError(
                f"channels {channels} not divisible by {len(rates)} paths"
            )
        part = channels // len(rates)
        self.paths = nn.ModuleList()
        self.fuse = nn.ModuleList()
        self.gate = nn.ModuleList()
        for _ in range(num_layers):
            self.paths.append(
                nn.ModuleList(
                    nn.Conv2d(channels, part, 3, padding=r, dilation=r) for r in rates
                )
            )
            self.fuse.append(nn.Conv2d(channels, channels, 3, padding=1))
            self.gate.append(nn.Conv2d(channels, 1, 3, padding=1))

    def forward(self, f, g):
        for paths, fuse, gate in zip(self.paths, self.fuse, self.gate):
            mixed = fuse(torch.cat([F.elu(p(f)) for p in paths], dim=1))
            a = torch.sigmoid(gate(f))
            f = f * (1 - a) + mixed * a
        return f, g


def build_bottleneck(kind, channels, num_layers, rates=(1, 2, 3, 4)):
    if kind == "acb":
        return ACBStack(channels, num_layers, rates)
    if kind == "res":
        return ResBottleneckStack(channels, num_layers)
    if kind == "aot":
        return AotBottleneckStack(channels, num_layers, rates)
    raise ConfigurationError(f"unknown bottleneck kind {kind!r}")
