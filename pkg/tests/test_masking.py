import numpy as np
import pytest

from latentfill.masking import (
    BUCKETS,
    MaskError,
    MaskSpec,
    apply_mask,
    composite,
    coverage,
    generate_mask,
    load_mask,
    mask_to_png,
    png_to_mask,
    save_mask,
)


def test_coverage_trivial():
    assert coverage(np.ones((1, 8, 8))) == 1.0
    assert coverage(np.zeros((1, 8, 8))) == 0.0
    half = np.zeros((1, 8, 8))
    half[:, :4] = 1
    assert coverage(half) == 0.5


def test_apply_mask_identity_and_zero():
    y = np.random.default_rng(0).uniform(-1, 1, (3, 16, 16)).astype(np.float32)
    assert np.array_equal(apply_mask(y, np.zeros((1, 16, 16), np.float32)), y)
    assert np.abs(apply_mask(y, np.ones((1, 16, 16), np.float32))).sum() == 0


def test_apply_mask_checkerboard_elementwise():
    rng = np.random.default_rng(1)
    y = rng.uniform(-1, 1, (3, 8, 8))
    m = np.indices((8, 8)).sum(0) % 2
    out = apply_mask(y, m[None].astype(np.float32))
    # elementwise oracle
    for c in range(3):
        for i in range(8):
            for j in range(8):
                assert out[c, i, j] == y[c, i, j] * (1 - m[i, j])


def test_apply_mask_shape_mismatch():
    with pytest.raises(MaskError):
        apply_mask(np.zeros((3, 8, 8)), np.zeros((1, 4, 4)))


def test_composite_trivial():
    rng = np.random.default_rng(2)
    y = rng.uniform(-1, 1, (3, 8, 8))
    o = rng.uniform(-1, 1, (3, 8, 8))
    m = np.ones((1, 8, 8), np.float32)
    assert np.array_equal(composite(o, y, m), o)
    assert np.array_equal(composite(y, y, m * 0), y)


def test_composite_unmasked_pixels_bitwise():
    rng = np.random.default_rng(3)
    y = rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32)
    o = rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32)
    m = (rng.uniform(size=(1, 16, 16)) > 0.5).astype(np.float32)
    out = composite(o, y, m)
    known = ~np.broadcast_to(m.astype(bool), out.shape)
    assert np.array_equal(out[known], y[known])
    assert np.array_equal(out[~known], o[~known])


def test_generate_mask_deterministic():
    spec = MaskSpec("brush", "mid", seed=7)
    a = generate_mask(spec, 64, 64)
    b = generate_mask(spec, 64, 64)
    assert np.array_equal(a, b)


def test_generate_rect_low_is_single_rectangle():
    m = generate_mask(MaskSpec("rect", "low", seed=3), 64, 64)[0]
    assert 0.10 <= m.mean() <= 0.30
    rows = np.nonzero(m.any(axis=1))[0]
    cols = np.nonzero(m.any(axis=0))[0]
    # contiguous bounding box fully filled -> a single axis-aligned rectangle
    assert m[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].all()
    assert m.sum() == len(rows) * len(cols)


@pytest.mark.parametrize("kind", ["brush", "rect", "outpaint"])
@pytest.mark.parametrize("bucket", ["low", "mid", "high"])
def test_bucket_bounds_seed_sweep(kind, bucket):
    lo, hi = BUCKETS[bucket]
    for seed in range(200):
        m = generate_mask(MaskSpec(kind, bucket, seed), 64, 64)
        assert lo <= coverage(m) <= hi, (kind, bucket, seed)


def test_brush_high_monte_carlo_1000():
    lo, hi = BUCKETS["high"]
    covs = [
        coverage(generate_mask(MaskSpec("brush", "high", seed), 64, 64))
        for seed in range(1000)
    ]
    assert min(covs) >= lo and max(covs) <= hi


def test_outpaint_centered_frame():
    m = generate_mask(MaskSpec("outpaint", "mid", seed=5), 64, 64)[0]
    known = np.nonzero(m == 0)
    rows, cols = known
    h = rows.max() - rows.min() + 1
    w = cols.max() - cols.min() + 1
    # known region is one centered rectangle; everything else is missing
    assert (m == 0).sum() == h * w
    assert abs((rows.min() + rows.max() + 1) - 64) <= 1
    assert abs((cols.min() + cols.max() + 1) - 64) <= 1


def test_mask_png_roundtrip(tmp_path):
    m = generate_mask(MaskSpec("brush", "mid", seed=11), 64, 64)
    png = mask_to_png(m)
    assert set(np.unique(png)) <= {0, 255}
    assert np.array_equal(png_to_mask(png), m)
    p = tmp_path / "m.png"
    save_mask(str(p), m)
    assert np.array_equal(load_mask(str(p)), m)


def test_generate_mask_too_small():
    with pytest.raises(MaskError):
        generate_mask(MaskSpec("brush", "mid", seed=0), 8, 8)
