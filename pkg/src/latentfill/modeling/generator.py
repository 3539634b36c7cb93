"""Style-modulated synthesis network with skip-RGB topology and spatial taps.

Each layer's convolution weights are scaled per input channel by an affine
of the layer's style row and demodulated back to unit norm. The network
additionally accepts per-scale spatial feature taps (already projected to
the layer widths) that are added element-wise at the three finest scales,
which is what lets the synthesis reproduce unmasked content exactly after
compositing.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from latentfill.modeling.inversion import STYLE_DIM, num_style_layers


class ModulatedConv2d(nn.Module):
    """Modulate-demodulate convolution (no bias inside the conv)."""

    EPS = 1e-8

    def __init__(self, in_ch, out_ch, kernel_size, demodulate=True):
        super().__init__()
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, kernel_size
        self.demodulate = demodulate
        self.weight = nn.Parameter(
            torch.randn(out_ch, in_ch, kernel_size, kernel_size)
            / math.sqrt(in_ch * kernel_size**2)
        )
        self.affine = nn.Linear(STYLE_DIM, in_ch)
        nn.init.normal_(self.affine.weight, std=0.01)
        nn.init.ones_(self.affine.bias)

    def forward(self, x, style):
        b, c, h, w = x.shape
        s = self.affine(style)  # (B, in_ch)
        weight = self.weight[None] * s[:, None, :, None, None]
        if self.demodulate:
            norm = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + self.EPS)
            weight = weight * norm[:, :, None, None, None]
        weight = weight.reshape(b * self.out_ch, c, self.k, self.k)
        out = F.conv2d(
            x.reshape(1, b * c, h, w), weight, padding=self.k // 2, groups=b
        )
        return out.reshape(b, self.out_ch, h, w)


class SynthesisLayer(nn.Module):
    """Modulated conv + optional noise (learned zero-init amplitude) + bias."""

    def __init__(self, in_ch, out_ch, kernel_size=3):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, kernel_size)
        self.noise_scale = nn.Parameter(torch.zeros(1))
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, style, noise=None):
        x = self.conv(x, style)
        if noise is not None:
            x = x + self.noise_scale * noise
        return F.leaky_relu(x + self.bias[None, :, None, None], 0.2)


class MappingNetwork(nn.Module):
    """z -> w mapper: pixel norm then a small fully-connected stack."""

    def __init__(self, depth=4):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.Linear(STYLE_DIM, STYLE_DIM) for _ in range(depth)
        )

    def forward(self, z):
        x = z * torch.rsqrt(z.pow(2).mean(dim=-1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return x


def channel_plan(s, base=32, cmax=512):
    """Channel width per resolution 4..s, halving as resolution doubles."""
    n_levels = int(math.log2(s)) - 1
    return {4 * 2**k: min(cmax, base * 2 ** (n_levels - 1 - k)) for k in range(n_levels)}


class SynthesisNetwork(nn.Module):
    """Skip-RGB synthesis consuming one style row per modulated conv.

    Style rows are laid out [conv4, torgb4, (up-conv, conv) per octave],
    with each octave's RGB skip reusing its last conv's row; the total is
    2*log2(s) - 2 rows. Taps (a dict resolution -> tensor) are added after
    the up-conv at whichever scales they are provided.
    """

    def __init__(self, s, base=32, cmax=512, use_noise=True):
        super().__init__()
        self.s = s
        self.num_layers = num_style_layers(s)
        self.use_noise = use_noise
        self.plan = channel_plan(s, base, cmax)
        self.resolutions = sorted(self.plan)
        ch4 = self.plan[4]
        self.const = nn.Parameter(torch.randn(1, ch4, 4, 4))
        self.conv4 = SynthesisLayer(ch4, ch4)
        self.torgb = nn.ModuleDict()
        self.torgb["4"] = ModulatedConv2d(ch4, 3, 1, demodulate=False)
        self.rgb_bias = nn.ParameterDict({"4": nn.Parameter(torch.zeros(3))})
        self.ups = nn.ModuleDict()
        self.convs = nn.ModuleDict()
        prev = ch4
        for res in self.resolutions[1:]:
            ch = self.plan[res]
            self.ups[str(res)] = SynthesisLayer(prev, ch)
            self.convs[str(res)] = SynthesisLayer(ch, ch)
            self.torgb[str(res)] = ModulatedConv2d(ch, 3, 1, demodulate=False)
            self.rgb_bias[str(res)] = nn.Parameter(torch.zeros(3))
            prev = ch

    def tap_resolutions(self):
        """The three finest scales accept decoder taps."""
        return self.resolutions[-3:]

    def _noise(self, shape, seed, idx, device, dtype):
        if not self.use_noise or seed is None:
            return None
        gen = torch.Generator().manual_seed((int(seed) * 1009 + idx) & 0x7FFFFFFF)
        return torch.randn(*shape, generator=gen).to(device=device, dtype=dtype)

    def forward(self, w, taps=None, noise_seed=None):
        """w: (B, L, 512); taps: dict {resolution: (B, ch, res, res)}."""
        if w.shape[1] != self.num_layers:
            raise ValueError(
                f"expected {self.num_layers} style rows, got {w.shape[1]}"
            )
        taps = taps or {}
        for res, tap in taps.items():
            if res not in self.plan or tap.shape[1] != self.plan[res]:
                raise ValueError(f"tap at {res} does not match channel plan")
        b = w.shape[0]
        dev, dt = w.device, w.dtype
        x = self.const.to(dt).expand(b, -1, -1, -1)
        nidx = 0
        x = self.conv4(x, w[:, 0], self._noise(x.shape, noise_seed, nidx, dev, dt))
        rgb = self.torgb["4"](x, w[:, 1]) + self.rgb_bias["4"][None, :, None, None]
        row = 2
        for res in self.resolutions[1:]:
            key = str(res)
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            nidx += 1
            shape = (b, self.plan[res], res, res)
            x = self.ups[key](x, w[:, row], self._noise(shape, noise_seed, nidx, dev, dt))
            if res in taps:
                x = x + taps[res]
            nidx += 1
            x = self.convs[key](
                x, w[:, row + 1], self._noise(shape, noise_seed, nidx, dev, dt)
            )
            rgb = F.interpolate(rgb, scale_factor=2, mode="nearest")
            rgb = rgb + self.torgb[key](x, w[:, row + 1])
            rgb = rgb + self.rgb_bias[key][None, :, None, None]
            row += 2
        return torch.tanh(rgb)


class Generator(nn.Module):
    """Mapping + synthesis pair used for pretraining and mean-latent sampling."""

    def __init__(self, s, base=32, cmax=512, use_noise=True, mapping_depth=4):
        super().__init__()
        self.mapping = MappingNetwork(mapping_depth)
        self.synthesis = SynthesisNetwork(s, base, cmax, use_noise)

    def forward(self, z, noise_seed=None):
        w = self.mapping(z)
        w_rows = w[:, None, :].expand(-1, self.synthesis.num_layers, -1)
        return self.synthesis(w_rows, noise_seed=noise_seed)


class FusionProjector(nn.Module):
    """1x1 projections aligning decoder tap channels with synthesis widths.

    Lives outside the frozen generator core: it is part of the inversion
    interface and trains with the encoder.
    """

    def __init__(self, tap_channels, synthesis: SynthesisNetwork):
        super().__init__()
        self.resolutions = synthesis.tap_resolutions()
        if len(tap_channels) != len(self.resolutions):
            raise ValueError(
                f"need {len(self.resolutions)} taps, got {len(tap_channels)}"
            )
        self.projs = nn.ModuleList(
            nn.Conv2d(c, synthesis.plan[res], 1)
            for c, res in zip(tap_channels, self.resolutions)
        )

    def forward(self, taps):
        if len(taps) != len(self.projs):
            raise ValueError(f"expected {len(self.projs)} taps, got {len(taps)}")
        out = {}
        for proj, res, tap in zip(self.projs, self.resolutions, taps):
            if tap.shape[-1] != res:
                raise ValueError(f"tap spatial {tap.shape[-1]} != resolution {res}")
            out[res] = proj(tap)
        return out
