import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faceforge import uvtex


def _rand_img(rng, h=32, w=32, c=3):
    return rng.random((h, w, c))


# -- skin color ---------------------------------------------------------------

def test_skin_color_constant_image():
    img = np.full((16, 16, 3), 0.5)
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:8, 4:8] = True
    assert np.allclose(uvtex.skin_color(img, mask), [0.5, 0.5, 0.5])


def test_skin_color_mask_selectivity():
    img = np.full((16, 16, 3), 0.8)
    mask = np.zeros((16, 16), dtype=bool)
    mask[0:2, 0:2] = True
    img[0:2, 0:2] = 0.2
    assert np.allclose(uvtex.skin_color(img, mask), [0.2, 0.2, 0.2])


def test_skin_color_against_pixel_loop():
    rng = np.random.default_rng(0)
    img = _rand_img(rng)
    mask = rng.random((32, 32)) > 0.6
    got = uvtex.skin_color(img, mask)
    acc = np.zeros(3)
    count = 0
    for i in range(32):
        for j in range(32):
            if mask[i, j]:
                acc += img[i, j]
                count += 1
    assert np.abs(got - acc / count).max() < 1e-6


def test_skin_color_empty_mask_rejected():
    with pytest.raises(ValueError):
        uvtex.skin_color(np.zeros((4, 4, 3)), np.zeros((4, 4), dtype=bool))


# -- psnr ----------------------------------------------------------------------

def test_psnr_identical_is_infinite():
    img = np.full((8, 8, 3), 0.3)
    assert uvtex.psnr(img, img) == math.inf


def test_psnr_closed_form():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)  # mse = 0.01
    assert abs(uvtex.psnr(a, b) - 20.0) < 1e-9


def test_psnr_against_direct_mse():
    rng = np.random.default_rng(1)
    a, b = _rand_img(rng), _rand_img(rng)
    mse = 0.0
    for i in range(32):
        for j in range(32):
            for k in range(3):
                mse += (a[i, j, k] - b[i, j, k]) ** 2
    mse /= 32 * 32 * 3
    assert abs(uvtex.psnr(a, b) - 10 * math.log10(1 / mse)) < 1e-6


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        uvtex.psnr(np.zeros((4, 4)), np.zeros((5, 5)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_psnr_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert uvtex.psnr(a, b) == uvtex.psnr(b, a)


# -- nearest reference ---------------------------------------------------------

def test_nearest_reference_self_match():
    rng = np.random.default_rng(2)
    refs = [_rand_img(rng) for _ in range(5)]
    idx, p = uvtex.nearest_reference(refs[3], refs)
    assert idx == 3 and p == math.inf


def test_nearest_reference_tie_lowest_index():
    rng = np.random.default_rng(3)
    query = _rand_img(rng)
    ref = _rand_img(rng)
    idx, _ = uvtex.nearest_reference(query, [ref, ref.copy()])
    assert idx == 0


def test_nearest_reference_exhaustive_oracle():
    rng = np.random.default_rng(4)
    query = _rand_img(rng)
    refs = [_rand_img(rng) for _ in range(50)]
    got_idx, _ = uvtex.nearest_reference(query, refs)
    best, best_p = None, -math.inf
    for i, r in enumerate(refs):
        p = 10 * math.log10(1 / np.mean((query - r) ** 2))
        if p > best_p:
            best, best_p = i, p
    assert got_idx == best


def test_nearest_reference_empty():
    with pytest.raises(ValueError):
        uvtex.nearest_reference(np.zeros((4, 4)), [])


# -- pyramid blending ----------------------------------------------------------

def test_blend_full_keep_returns_a():
    rng = np.random.default_rng(5)
    a, b = _rand_img(rng), _rand_img(rng)
    out = uvtex.pyramid_blend(a, b, np.ones((32, 32)), levels=4)
    assert np.abs(out - a).max() < 1e-5


def test_blend_identical_inputs_identity():
    rng = np.random.default_rng(6)
    a = _rand_img(rng)
    mask = rng.random((32, 32))
    for levels in (1, 2, 4):
        out = uvtex.pyramid_blend(a, a.copy(), mask, levels=levels)
        assert np.abs(out - a).max() < 1e-5


def test_blend_single_level_equals_linear_blend_exactly():
    rng = np.random.default_rng(7)
    a, b = _rand_img(rng), _rand_img(rng)
    mask = rng.random((32, 32))
    out = uvtex.pyramid_blend(a, b, mask, levels=1)
    direct = np.clip(mask[..., None] * a + (1.0 - mask[..., None]) * b, 0.0, 1.0)
    assert np.array_equal(out, direct)


def test_blend_rejects_indivisible_resolution():
    img = np.zeros((24, 24, 3))
    with pytest.raises(ValueError):
        uvtex.pyramid_blend(img, img, np.ones((24, 24)), levels=5)
    with pytest.raises(ValueError):
        uvtex.pyramid_blend(img, img, np.ones((24, 24)), levels=0)


def test_blend_output_clamped():
    a = np.ones((16, 16, 3))
    b = np.zeros((16, 16, 3))
    mask = np.zeros((16, 16))
    mask[:, :8] = 1.0
    out = uvtex.pyramid_blend(a, b, mask, levels=3)
    assert out.min() >= 0.0 and out.max() <= 1.0


# -- completion -----------------------------------------------------------------

def test_complete_full_visibility_returns_partial():
    rng = np.random.default_rng(8)
    partial = _rand_img(rng)
    refs = [_rand_img(rng) for _ in range(3)]
    out = uvtex.complete_texture(partial, np.ones((32, 32)), refs, levels=3)
    assert np.abs(out - partial).max() < 1e-5


def test_complete_recovers_reference():
    rng = np.random.default_rng(9)
    refs = [np.clip(_rand_img(rng) * 0.2 + k * 0.2, 0, 1) for k in range(4)]
    vis = np.zeros((32, 32))
    vis[:, :20] = 1.0
    partial = refs[2] * vis[..., None]
    out = uvtex.complete_texture(partial, vis, refs, levels=1)
    assert np.abs(out - refs[2]).max() < 1e-3
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_complete_preserves_visible_region():
    rng = np.random.default_rng(10)
    partial = _rand_img(rng)
    refs = [_rand_img(rng) for _ in range(3)]
    vis = np.zeros((32, 32))
    vis[8:24, 8:24] = 1.0
    out = uvtex.complete_texture(partial, vis, refs, levels=3)
    inner = vis > 0.999
    # levels-limited leakage stays small well inside the region
    core = np.zeros_like(inner)
    core[12:20, 12:20] = True
    err = np.mean((out - partial)[core] ** 2)
    assert err <= 1e-3


# -- helpers ---------------------------------------------------------------------

def test_mirror_involution():
    rng = np.random.default_rng(11)
    img = _rand_img(rng)
    assert np.array_equal(uvtex.mirror(uvtex.mirror(img)), img)


def test_masks_ship_and_scale():
    for res in (64, 256):
        flat = uvtex.flat_region_mask(res)
        assert flat.shape == (res, res)
        assert flat.mean() >= 0.01  # at least 1% coverage
        vis = uvtex.visibility_mask(res)
        assert 0.0 <= vis.min() and vis.max() <= 1.0
        assert uvtex.face_mask(res).any()


def test_highpass_energy_detects_texture():
    flat = np.full((32, 32, 3), 0.5)
    noisy = flat + np.random.default_rng(1).normal(0, 0.05, (32, 32, 3))
    assert uvtex.highpass_energy(np.clip(noisy, 0, 1)) > uvtex.highpass_energy(flat)
