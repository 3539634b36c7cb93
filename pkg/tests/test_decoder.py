import numpy as np
import pytest
import torch
import torch.nn.functional as F

from latentfill.config import ModelConfig
from latentfill.modeling.decoder import (
    AuxDenorm,
    FusionBlock,
    GatedFeedForward,
    GatedPatchAttention,
    MutualDecoder,
    prediction_stack,
)
from latentfill.modeling.pipeline import assemble_input, build_model

from gradcheck import check_module
from oracles import oracle_adn, oracle_gated_ff, oracle_gma_attention


def _np64(t):
    return t.detach().numpy().astype(np.float64)


def _force_affine(adn, gamma, beta):
    with torch.no_grad():
        adn.conv_gamma.weight.zero_()
        adn.conv_gamma.bias.fill_(gamma)
        adn.conv_beta.weight.zero_()
        adn.conv_beta.bias.fill_(beta)


def test_adn_identity_affine_is_layer_norm():
    torch.manual_seed(0)
    adn = AuxDenorm(4, 8).double()
    _force_affine(adn, 1.0, 0.0)
    x = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    ctx = torch.randn(1, 8, 3, 3, dtype=torch.float64)
    out = adn(x, ctx)
    mu = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, keepdim=True, unbiased=False)
    expected = (x - mu) / torch.sqrt(var + 1e-5)
    assert (out - expected).abs().max() < 1e-12
    assert out.mean(dim=1).abs().max() < 1e-6


def test_adn_constant_channels_gives_beta():
    torch.manual_seed(1)
    adn = AuxDenorm(4, 8).double()
    _force_affine(adn, 3.0, 0.75)
    x = torch.full((1, 4, 2, 2), 2.5, dtype=torch.float64)  # constant across channels
    ctx = torch.randn(1, 8, 2, 2, dtype=torch.float64)
    out = adn(x, ctx)
    assert (out - 0.75).abs().max() < 1e-6


def test_adn_matches_loop_oracle():
    torch.manual_seed(2)
    adn = AuxDenorm(3, 6).double()
    x = torch.randn(1, 3, 2, 2, dtype=torch.float64)
    ctx = torch.randn(1, 6, 2, 2, dtype=torch.float64)
    out = adn(x, ctx)
    out_o = oracle_adn(adn, _np64(x), _np64(ctx))
    assert np.abs(out.detach().numpy() - out_o).max() < 1e-6


def test_gma_single_patch_is_gated_value():
    torch.manual_seed(3)
    attn = GatedPatchAttention(2, patch=4, heads=1).double()
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64)
    gate = torch.full((1, 1, 1, 1), 0.7, dtype=torch.float64)
    out = attn(x, gate)
    v = attn.to_v(x)
    assert (out - 0.7 * v).abs().max() < 1e-9  # softmax over one key = 1


def test_gma_zero_gate_zero_output():
    torch.manual_seed(4)
    attn = GatedPatchAttention(4, patch=2, heads=2).double()
    x = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    out = attn(x, torch.zeros(1, 1, 4, 4, dtype=torch.float64))
    assert out.abs().max() == 0


def test_gma_two_patch_hand_computed():
    attn = GatedPatchAttention(1, patch=1, heads=1).double()
    with torch.no_grad():
        attn.to_q.weight.fill_(1.0)
        attn.to_k.weight.fill_(2.0)
        attn.to_v.weight.fill_(1.0)
    x = torch.tensor([[[[1.0, 2.0]]]], dtype=torch.float64)  # patches: 1, 2
    gate = torch.ones(1, 1, 1, 2, dtype=torch.float64)
    out = attn(x, gate)
    # q=[1,2], k=[2,4], v=[1,2]; scores_i = [qi*2, qi*4]
    for i, qi in enumerate([1.0, 2.0]):
        s = np.array([qi * 2.0, qi * 4.0])
        a = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
        expect = a @ np.array([1.0, 2.0])
        assert abs(out[0, 0, 0, i].item() - expect) < 1e-12


def test_gma_matches_loop_oracle_and_order_invariance():
    torch.manual_seed(5)
    attn = GatedPatchAttention(4, patch=2, heads=2).double()
    x = torch.randn(1, 4, 4, 4, dtype=torch.float64)
    gate = torch.rand(1, 1, 2, 2, dtype=torch.float64)
    out = attn(x, gate)
    # oracle iterates patches in reversed order -> also checks order invariance
    out_o = oracle_gma_attention(attn, _np64(x), _np64(gate))
    assert np.abs(out.detach().numpy() - out_o).max() < 1e-6


def test_gma_rows_bounded_by_gate():
    torch.manual_seed(6)
    attn = GatedPatchAttention(2, patch=2, heads=1).double()
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64)
    gate = torch.rand(1, 1, 2, 2, dtype=torch.float64)
    q = attn._patchify(attn.to_q(x))
    k = attn._patchify(attn.to_k(x))
    alpha = torch.softmax(q @ k.transpose(-1, -2) / (q.shape[-1] ** 0.5), dim=-1)
    alpha = alpha * gate.reshape(1, 1, 1, -1)
    sums = alpha.sum(dim=-1)
    assert alpha.min() >= 0
    assert (sums <= 1 + 1e-12).all()
    ones = attn(x, torch.ones_like(gate))
    v = attn._patchify(attn.to_v(x))
    # with unit gates rows sum to exactly 1
    a1 = torch.softmax(q @ k.transpose(-1, -2) / (q.shape[-1] ** 0.5), dim=-1)
    assert (a1.sum(dim=-1) - 1).abs().max() < 1e-12
    assert torch.isfinite(ones).all()


def test_gma_patch_mismatch_raises():
    attn = GatedPatchAttention(2, patch=3, heads=1)
    with pytest.raises(ValueError, match="divide"):
        attn(torch.randn(1, 2, 4, 4), torch.ones(1, 1, 1, 1))


def test_gated_ff_saturation_and_identity():
    torch.manual_seed(7)
    ff = GatedFeedForward(3).double()
    x = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    inner = ff.conv_in.out_channels // 2
    with torch.no_grad():
        ff.conv_in.bias[inner:].fill_(-60.0)  # gate ~ 0
    assert ff(x).abs().max() < 1e-20
    with torch.no_grad():
        ff.conv_in.bias[inner:].fill_(60.0)  # gate ~ 1
        ff.conv_in.weight[inner:].zero_()
    v = F.elu(
        F.conv2d(x, ff.conv_in.weight[:inner], ff.conv_in.bias[:inner])
    )
    plain = F.conv2d(v, ff.conv_out.weight)
    assert (ff(x) - plain).abs().max() < 1e-12


def test_gated_ff_matches_loop_oracle():
    torch.manual_seed(8)
    ff = GatedFeedForward(2).double()
    x = torch.randn(1, 2, 3, 3, dtype=torch.float64)
    out_o = oracle_gated_ff(ff, _np64(x))
    assert np.abs(ff(x).detach().numpy() - out_o).max() < 1e-6


def test_fusion_add_concat_bypass_attention():
    torch.manual_seed(9)
    for mode in ("add", "concat"):
        fb = FusionBlock(4, 8, patch=2, heads=1, mode=mode).double()
        fi = torch.randn(1, 4, 4, 4, dtype=torch.float64)
        fe = torch.randn(1, 4, 4, 4, dtype=torch.float64)
        fs = torch.randn(1, 4, 4, 4, dtype=torch.float64)
        gate = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        out = fb(fi, fe, fs, None, gate)
        if mode == "add":
            merged = fi + fe + fs
        else:
            merged = fb.merge(torch.cat([fi, fe, fs], dim=1))
        assert torch.equal(out, merged + fb.ff(merged))
        assert not hasattr(fb, "attn")


@pytest.mark.parametrize("block,builder", [
    ("adn", lambda: AuxDenorm(2, 4).double()),
    ("gff", lambda: GatedFeedForward(2).double()),
    ("gma", lambda: GatedPatchAttention(2, patch=2, heads=1).double()),
])
def test_gradchecks(block, builder):
    torch.manual_seed(10)
    mod = builder()
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    if block == "adn":
        ctx = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        rel = check_module(mod, [x, ctx], lambda: mod(x, ctx))
    elif block == "gff":
        rel = check_module(mod, [x], lambda: mod(x))
    else:
        gate = torch.rand(1, 1, 2, 2, dtype=torch.float64, requires_grad=True)
        rel = check_module(mod, [x, gate], lambda: mod(x, gate))
    assert rel < 1e-4, (block, rel)


def _tiny_cfg(**kw):
    base = dict(
        resolution=64,
        num_labels=3,
        enc_widths=(8, 12, 16, 24, 24),
        dec_widths=(24, 16, 16, 12, 12),
        acb_layers=2,
        gen_base=8,
        gen_cmax=64,
        attn_heads=2,
        style_width_cap=64,
    )
    base.update(kw)
    return ModelConfig(**base)


def test_decoder_forward_scales_and_softmax():
    torch.manual_seed(11)
    model = build_model(_tiny_cfg())
    img = torch.rand(1, 3, 64, 64) * 2 - 1
    mask = (torch.rand(1, 1, 64, 64) > 0.5).float()
    seg = torch.randint(0, 3, (1, 64, 64))
    edge = (torch.rand(1, 1, 64, 64) > 0.8).float()
    x = assemble_input(img, mask, edge, seg, 3)
    out = model(x, noise_seed=0)
    assert [p.shape[-1] for p in out["preds"]["image"]] == [16, 32, 64]
    for r in range(3):
        seg_p = out["preds"]["seg"][r]
        assert (seg_p.sum(dim=1) - 1).abs().max() < 1e-6
        edge_p = out["preds"]["edge"][r]
        assert edge_p.min() > 0 and edge_p.max() < 1
        stack = prediction_stack(out["preds"], r)
        assert stack.shape[1] == 3 + 1 + 3
    out2 = model(x, noise_seed=0)
    assert torch.equal(out["image"], out2["image"])


@pytest.mark.parametrize("guidance", ["biased", "gt"])
def test_decoder_guidance_modes(guidance):
    torch.manual_seed(12)
    model = build_model(_tiny_cfg(guidance=guidance))
    img = torch.rand(1, 3, 64, 64) * 2 - 1
    mask = (torch.rand(1, 1, 64, 64) > 0.5).float()
    seg = torch.randint(0, 3, (1, 64, 64))
    x = assemble_input(img, mask, None, seg, 3)
    gt_maps = None
    if guidance == "gt":
        from latentfill.modeling.pipeline import one_hot_seg

        gt_maps = []
        for s in (16, 32, 64):
            seg_s = seg[:, :: 64 // s, :: 64 // s]
            e = torch.zeros(1, 1, s, s)
            gt_maps.append(torch.cat([one_hot_seg(seg_s, 3), e], dim=1))
    out = model(x, gt_maps=gt_maps, noise_seed=0)
    assert torch.isfinite(out["image"]).all()


def test_decoder_gt_guidance_requires_maps():
    model = build_model(_tiny_cfg(guidance="gt"))
    img = torch.rand(1, 3, 64, 64)
    mask = torch.zeros(1, 1, 64, 64)
    x = assemble_input(img, mask, None, None, 3)
    with pytest.raises(ValueError, match="gt_maps"):
        model(x)
