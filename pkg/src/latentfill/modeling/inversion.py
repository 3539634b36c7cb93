"""Projection into the generator's extended style space.

Three pyramid taps map to the intermediate 3x512 latent; the three-scale
prediction stacks map to 3x512 structure vectors; per style layer, a
pre-modulation network instance-normalizes the matching latent row and
re-scales it with an affine learned from the matching structure vector.
The soft-update mean latent keeps an online code drifting geometrically
toward a periodically resampled target code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

STYLE_DIM = 512

RESAMPLE_TOL = 1e-6


def num_style_layers(s: int) -> int:
    """Number of style-modulation layers for output resolution s."""
    if s < 8 or (s & (s - 1)) != 0:
        raise ValueError(f"resolution must be a power of two >= 8, got {s}")
    return 2 * int(math.log2(s)) - 2


def level_of_layer(layer: int, num_layers: int) -> int:
    """Coarse/middle/fine level (0..2) owning style layer `layer` (0-based).

    The first ceil(L/3) layers are coarse, the next ceil(L/3) middle, the
    rest fine.
    """
    third = math.ceil(num_layers / 3)
    return min(layer // third, 2)


class Map2Style(nn.Module):
    """Strided conv chain collapsing a feature map to one 512-vector."""

    def __init__(self, in_ch, spatial, width_cap=512):
        super().__init__()
        if spatial < 1 or (spatial & (spatial - 1)) != 0:
            raise ValueError(f"spatial size must be a power of two, got {spatial}")
        steps = int(math.log2(spatial))
        convs = []
        ch = in_ch
        for i in range(steps):
            nxt = STYLE_DIM if i == steps - 1 else min(width_cap, max(64, ch * 2))
            convs.append(nn.Conv2d(ch, nxt, 3, stride=2, padding=1))
            ch = nxt
        self.convs = nn.ModuleList(convs)
        self.final = (
            nn.Linear(ch, STYLE_DIM) if steps == 0 or ch != STYLE_DIM else None
        )

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        x = x.flatten(1)
        if self.final is not None:
            x = self.final(x)
        return x


class PreModulation(nn.Module):
    """Per-layer affine of the instance-normalized latent row.

        w_star[l] = sigma_l (.) IN(w_prime[level(l)]) + mu_l

    with (sigma_l, mu_l) predicted from the matching structure vector by a
    two-layer mapper.
    """

    IN_EPS = 1e-8

    def __init__(self, num_layers):
        super().__init__()
        self.num_layers = num_layers
        self.fc1 = nn.ModuleList(
            nn.Linear(STYLE_DIM, STYLE_DIM) for _ in range(num_layers)
        )
        self.fc2 = nn.ModuleList(
            nn.Linear(STYLE_DIM, 2 * STYLE_DIM) for _ in range(num_layers)
        )

    @staticmethod
    def _normalize(row, eps=IN_EPS):
        mean = row.mean(dim=-1, keepdim=True)
        var = row.var(dim=-1, keepdim=True, unbiased=False)
        return (row - mean) / torch.sqrt(var + eps)

    def forward(self, w_prime, structures):
        """w_prime, structures: (B, 3, 512) -> (B, L, 512)."""
        rows = []
        for layer in range(self.num_layers):
            r = level_of_layer(layer, self.num_layers)
            h = F.elu(self.fc1[layer](structures[:, r]))
            sigma, mu = self.fc2[layer](h).chunk(2, dim=-1)
            rows.append(sigma * self._normalize(w_prime[:, r]) + mu)
        return torch.stack(rows, dim=1)


class InversionHead(nn.Module):
    """Bundles the three style mappers, three structure mappers, and the
    pre-modulation networks for a given resolution."""

    def __init__(
        self, s, tap_channels, tap_spatials, stack_channels, stack_spatials,
        width_cap=512,
    ):
        super().__init__()
        self.num_layers = num_style_layers(s)
        self.map2style = nn.ModuleList(
            Map2Style(c, sp, width_cap) for c, sp in zip(tap_channels, tap_spatials)
        )
        self.map2structure = nn.ModuleList(
            Map2Style(c, sp, width_cap) for c, sp in zip(stack_channels, stack_spatials)
        )
        self.premod = PreModulation(self.num_layers)

    def styles(self, taps):
        return torch.stack([m(t) for m, t in zip(self.map2style, taps)], dim=1)

    def structures(self, stacks):
        return torch.stack(
            [m(t) for m, t in zip(self.map2structure, stacks)], dim=1
        )

    def forward(self, taps, stacks):
        w_prime = self.styles(taps)
        s_vecs = self.structures(stacks)
        return self.premod(w_prime, s_vecs), w_prime, s_vecs


def sample_mean_latent(mapper, n, num_layers, seed=0, batch=512):
    """Average of n mapped standard-normal latents, broadcast to all layers.

    Returns a float64 numpy array (L, 512); deterministic given the seed.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    gen = torch.Generator().manual_seed(seed)
    device = next(mapper.parameters()).device if any(
        True for _ in mapper.parameters()
    ) else "cpu"
    total = torch.zeros(STYLE_DIM, dtype=torch.float64)
    done = 0
    with torch.no_grad():
        while done < n:
            take = min(batch, n - done)
            z = torch.randn(take, STYLE_DIM, generator=gen)
            w = mapper(z.to(device))
            total += w.double().sum(dim=0).cpu()
            done += take
    mean = (total / n).numpy()
    return np.tile(mean, (num_layers, 1))


@dataclass(frozen=True)
class MeanLatentState:
    """Online and target mean latent codes plus the update factor tau."""

    online: np.ndarray  # (L, 512) float64
    target: np.ndarray  # (L, 512) float64
    tau: float
    resamples: int = 0

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError(f"tau must lie in [0,1], got {self.tau}")
        if not (np.isfinite(self.online).all() and np.isfinite(self.target).all()):
            raise ValueError("mean latent codes must be finite")


def soft_update(state: MeanLatentState, resampler=None) -> MeanLatentState:
    """Move the online code toward the fixed target; resample on arrival.

        online <- (1 - tau) * online + tau * target

    When the codes agree within 1e-6 (inf-norm), the online code snaps to
    the old target and the target is resampled via `resampler(resamples)`.
    With no resampler the state simply stops updating once converged.
    """
    online = (1.0 - state.tau) * state.online + state.tau * state.target
    if np.max(np.abs(online - state.target)) < RESAMPLE_TOL and resampler is not None:
        new_target = np.asarray(resampler(state.resamples + 1), dtype=np.float64)
        return replace(
            state,
            online=state.target.copy(),
            target=new_target,
            resamples=state.resamples + 1,
        )
    return replace(state, online=online)
