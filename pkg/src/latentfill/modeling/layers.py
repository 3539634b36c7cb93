"""Shared building blocks: gated convolution, self-attention, normalization."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class GatedConv2d(nn.Module):
    """Convolution with a learned soft validity gate.

    Returns (f, g) where g = sigmoid(conv_g(x)) is a single-channel gate in
    (0,1) and f = elu(conv_f(x)) * g.
    """

    def __init__(self, in_ch, out_ch, kernel_size=3, stride=1, dilation=1):
        super().__init__()
        pad = dilation * (kernel_size - 1) // 2
        self.conv_f = nn.Conv2d(in_ch, out_ch, kernel_size, stride, pad, dilation)
        self.conv_g = nn.Conv2d(in_ch, 1, kernel_size, stride, pad, dilation)

    def forward(self, x):
        g = torch.sigmoid(self.conv_g(x))
        f = F.elu(self.conv_f(x)) * g
        return f, g


class SelfAttention2d(nn.Module):
    """Non-local block with a zero-initialized residual scale."""

    def __init__(self, channels):
        super().__init__()
        inner = max(1, channels // 8)
        self.to_q = nn.Conv2d(channels, inner, 1)
        self.to_k = nn.Conv2d(channels, inner, 1)
        self.to_v = nn.Conv2d(channels, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        b, c, h, w = x.shape
        q = self.to_q(x).flatten(2).transpose(1, 2)  # (b, hw, inner)
        k = self.to_k(x).flatten(2)  # (b, inner, hw)
        v = self.to_v(x).flatten(2)  # (b, c, hw)
        attn = torch.softmax(q @ k / (k.shape[1] ** 0.5), dim=-1)  # (b, hw, hw)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.gamma * out


def channel_layer_norm(x, eps=1e-5):
    """Normalize each spatial location across channels (no learned affine)."""
    mean = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def instance_norm(x, eps=1e-5):
    """Normalize each (sample, channel) plane across space (no affine)."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)
