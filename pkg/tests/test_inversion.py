import numpy as np
import pytest
import torch
import torch.nn as nn

from latentfill.modeling.inversion import (
    Map2Style,
    MeanLatentState,
    PreModulation,
    level_of_layer,
    num_style_layers,
    sample_mean_latent,
    soft_update,
)

from gradcheck import check_module
from oracles import oracle_map2style, oracle_premodulate


def test_num_style_layers_paper_values():
    assert num_style_layers(256) == 14
    assert num_style_layers(1024) == 18
    assert num_style_layers(8) == 4


def test_num_style_layers_rejects_non_power():
    with pytest.raises(ValueError):
        num_style_layers(96)
    with pytest.raises(ValueError):
        num_style_layers(4)


def test_level_assignment_total_and_ordered():
    import math

    for L in (4, 10, 14, 18):
        levels = [level_of_layer(l, L) for l in range(L)]
        assert set(levels) <= {0, 1, 2}
        assert levels == sorted(levels)
        assert levels[0] == 0
        third = math.ceil(L / 3)
        if L > 2 * third:  # fine level exists only when layers remain
            assert levels[-1] == 2
        # every layer mapped exactly once by construction
        assert len(levels) == L
    # the spec sizes all have a populated fine level
    assert [level_of_layer(l, 10) for l in range(10)] == [0] * 4 + [1] * 4 + [2] * 2
    assert [level_of_layer(l, 18) for l in range(18)] == [0] * 6 + [1] * 6 + [2] * 6


def test_map2style_zero_weights_zero_output():
    m = Map2Style(4, 8)
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    out = m(torch.randn(2, 4, 8, 8))
    assert torch.equal(out, torch.zeros(2, 512))


def test_map2style_deterministic_and_shape():
    torch.manual_seed(0)
    m = Map2Style(4, 8, width_cap=32)
    x = torch.randn(2, 4, 8, 8)
    assert m(x).shape == (2, 512)
    assert torch.equal(m(x), m(x))


def test_map2style_matches_loop_oracle():
    torch.manual_seed(1)
    m = Map2Style(2, 4, width_cap=8).double()
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64)
    out = m(x)
    out_o = oracle_map2style(m, x.detach().numpy())
    assert np.abs(out.detach().numpy() - out_o).max() < 1e-6


def test_premodulate_identity_affine_is_instance_norm():
    torch.manual_seed(2)
    pm = PreModulation(4).double()
    with torch.no_grad():
        for lin in pm.fc2:
            lin.weight.zero_()
            lin.bias[:512] = 1.0  # sigma = 1
            lin.bias[512:] = 0.0  # mu = 0
    w_prime = torch.randn(2, 3, 512, dtype=torch.float64)
    s = torch.randn(2, 3, 512, dtype=torch.float64)
    out = pm(w_prime, s)
    assert out.shape == (2, 4, 512)
    assert out.mean(dim=-1).abs().max() < 1e-6
    assert (out.var(dim=-1, unbiased=False) - 1).abs().max() < 1e-6


def test_premodulate_constant_row_gives_mu():
    torch.manual_seed(3)
    pm = PreModulation(3).double()
    with torch.no_grad():
        for lin in pm.fc2:
            lin.weight.zero_()
            lin.bias[:512] = 2.0
            lin.bias[512:] = 0.125
    w_prime = torch.full((1, 3, 512), 7.0, dtype=torch.float64)
    out = pm(w_prime, torch.randn(1, 3, 512, dtype=torch.float64))
    # IN of a constant row is 0 (eps-regularized), so output = mu
    assert (out - 0.125).abs().max() < 1e-6


def test_premodulate_matches_loop_oracle():
    torch.manual_seed(4)
    pm = PreModulation(5).double()
    w_prime = torch.randn(1, 3, 512, dtype=torch.float64)
    s = torch.randn(1, 3, 512, dtype=torch.float64)
    out = pm(w_prime, s)
    out_o = oracle_premodulate(pm, w_prime.numpy(), s.numpy())
    assert np.abs(out.detach().numpy() - out_o).max() < 1e-6


def test_premodulate_gradcheck():
    torch.manual_seed(5)
    pm = PreModulation(3).double()
    # shrink: only check a slice of parameters via small vectors
    w_prime = torch.randn(1, 3, 4, dtype=torch.float64, requires_grad=True)

    class TinyPM(torch.nn.Module):
        """4-dim version of the same computation for a tractable check."""

        def __init__(self):
            super().__init__()
            self.fc1 = nn.ModuleList(nn.Linear(4, 4) for _ in range(3))
            self.fc2 = nn.ModuleList(nn.Linear(4, 8) for _ in range(3))
            self.num_layers = 3

        def forward(self, w_prime, structures):
            rows = []
            for layer in range(3):
                r = level_of_layer(layer, 3)
                h = torch.nn.functional.elu(self.fc1[layer](structures[:, r]))
                sigma, mu = self.fc2[layer](h).chunk(2, dim=-1)
                row = w_prime[:, r]
                normed = (row - row.mean(-1, keepdim=True)) / torch.sqrt(
                    row.var(-1, keepdim=True, unbiased=False) + 1e-8
                )
                rows.append(sigma * normed + mu)
            return torch.stack(rows, dim=1)

    tiny = TinyPM().double()
    s = torch.randn(1, 3, 4, dtype=torch.float64, requires_grad=True)
    rel = check_module(tiny, [w_prime, s], lambda: tiny(w_prime, s))
    assert rel < 1e-4, rel


class _IdentityMapper(nn.Module):
    def forward(self, z):
        return z


def test_sample_mean_latent_law_of_large_numbers():
    mean = sample_mean_latent(_IdentityMapper(), 100_000, 4, seed=0)
    assert mean.shape == (4, 512)
    assert np.linalg.norm(mean[0]) < 0.02 * np.sqrt(512)
    # all rows identical broadcast
    assert np.array_equal(mean[0], mean[3])


def test_sample_mean_latent_single_sample_and_determinism():
    gen = torch.Generator().manual_seed(7)
    z = torch.randn(1, 512, generator=gen)
    mean = sample_mean_latent(_IdentityMapper(), 1, 2, seed=7)
    assert np.allclose(mean[0], z[0].numpy(), atol=1e-7)
    again = sample_mean_latent(_IdentityMapper(), 1, 2, seed=7)
    assert np.array_equal(mean, again)


def _state(online, target, tau):
    return MeanLatentState(
        online=np.full((2, 512), float(online)),
        target=np.full((2, 512), float(target)),
        tau=tau,
    )


def test_soft_update_tau_zero_noop():
    st = _state(0.3, 1.0, 0.0)
    out = soft_update(st)
    assert np.array_equal(out.online, st.online)


def test_soft_update_halfway():
    out = soft_update(_state(0.0, 1.0, 0.5))
    assert np.allclose(out.online, 0.5)


def test_soft_update_closed_form_k_steps():
    st = _state(0.0, 1.0, 0.001)
    for _ in range(3):
        st = soft_update(st)
    expected = 1 - (1 - 0.001) ** 3  # 0.002997001
    assert abs(st.online[0, 0] - expected) < 1e-15


@pytest.mark.parametrize("tau", [0.5, 0.1, 0.001])
def test_soft_update_geometric_convergence(tau):
    st = _state(0.0, 1.0, tau)
    d0 = np.linalg.norm(st.online - st.target)
    steps = 20 if tau > 0.01 else 200
    for k in range(1, steps + 1):
        st = soft_update(st)
        d = np.linalg.norm(st.online - st.target)
        assert abs(d - (1 - tau) ** k * d0) <= 1e-8 * max(d, 1e-300)


def test_soft_update_resample_trigger_exact_threshold():
    tau = 0.5
    st = _state(0.0, 1.0, tau)
    fresh = np.full((2, 512), 5.0)
    fired_at = None
    for k in range(1, 100):
        dist_next = abs((1 - tau) ** k * 1.0)
        st = soft_update(st, resampler=lambda i: fresh)
        if st.resamples:
            fired_at = k
            assert dist_next < 1e-6  # fired exactly when the blend dips below
            break
        assert dist_next >= 1e-6
    assert fired_at is not None
    assert np.allclose(st.online, 1.0)  # snapped to the old target
    assert np.array_equal(st.target, fresh)


def test_mean_latent_state_validation():
    with pytest.raises(ValueError):
        _state(0, 1, tau=1.5)
    with pytest.raises(ValueError):
        MeanLatentState(np.full((1, 2), np.nan), np.zeros((1, 2)), 0.5)
