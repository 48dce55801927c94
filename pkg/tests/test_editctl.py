import numpy as np
import pytest
import torch

from faceforge import disgan, editctl
from faceforge.disgan import (AssistGenerator, ConditionalGenerator, Encoder,
                              GanConfig, ImageDiscriminator, Step2Model)
from faceforge.editctl import (GeometryOffset, SkinToneModel,
                               apply_geometry_offset, fit_skin_tone_model,
                               interpolate_grid, invert, load_offsets,
                               sample_skin_tone)
from faceforge.labels import AttributeLabel, encode_label
from faceforge.netops import seed_all
from faceforge.toydata import make_dataset
from faceforge.uvtex import flat_region_mask, skin_color

CFG = GanConfig(resolution=32, base=16)


@pytest.fixture(scope="module")
def step2():
    seed_all(0)
    return Step2Model(ConditionalGenerator(CFG), ImageDiscriminator(CFG),
                      Encoder(CFG), AssistGenerator(CFG), CFG)


@pytest.fixture(scope="module")
def target(step2):
    z = disgan.sample_prior(np.random.default_rng(1), CFG)
    return disgan.generate(z, encode_label(AttributeLabel(2, 1, 4)), step2)


def test_invert_zero_budget_returns_initialization(step2, target):
    res = invert(target, step2, budget=0)
    assert res.iterations == 0
    assert len(res.history) == 1
    code0 = disgan.encode(target, step2)
    assert np.allclose(res.code, code0, atol=1e-6)


def test_invert_history_non_increasing(step2, target):
    res = invert(target, step2, budget=40)
    hist = res.history
    assert all(hist[i + 1] <= hist[i] + 1e-12 for i in range(len(hist) - 1))
    assert res.final_loss == hist[-1]
    assert res.final_loss <= hist[0]
    for sub in (res.label.ethnicity, res.label.gender, res.label.age):
        assert abs(sub.sum() - 1.0) < 1e-6


def test_invert_rejects_negative_budget(step2, target):
    with pytest.raises(ValueError):
        invert(target, step2, budget=-1)


def test_edit_label_pure_function(step2, target):
    res = invert(target, step2, budget=5)
    label = encode_label(AttributeLabel(1, 0, 9))
    code_before = res.code.copy()
    a = editctl.edit_label(res, label, step2)
    b = editctl.edit_label(res, label, step2)
    assert np.array_equal(a.albedo, b.albedo)
    assert np.array_equal(res.code, code_before)
    same = editctl.edit_label(res, res.label, step2)
    base = disgan.generate(res.code, res.label, step2)
    assert np.array_equal(same.albedo, base.albedo)


def test_interpolate_grid_corners_match_pure_edits(step2):
    z = disgan.sample_prior(np.random.default_rng(2), CFG)
    base = encode_label(AttributeLabel(5, 0, 0))
    grid = interpolate_grid(z, base, ("age", 0, 12), ("gender", 0, 1), 3, step2)
    assert len(grid) == 3 and len(grid[0]) == 3
    corner = grid[0][0]
    pure = editctl._mix_axis(editctl._mix_axis(base, "age", 0, 12, 0.0),
                             "gender", 0, 1, 0.0)
    want = disgan.generate(z, pure, step2)
    assert np.array_equal(corner.albedo, want.albedo)
    single = interpolate_grid(z, base, ("age", 0, 12), ("gender", 0, 1), 1, step2)
    assert len(single) == 1 and len(single[0]) == 1


def test_interpolate_grid_rejects_same_axis(step2):
    z = disgan.sample_prior(np.random.default_rng(3), CFG)
    with pytest.raises(ValueError):
        interpolate_grid(z, encode_label(AttributeLabel(0, 0, 0)),
                         ("age", 0, 12), ("age", 0, 6), 3, step2)


# -- skin tone model -------------------------------------------------------------

def test_skin_tone_zero_covariance_returns_mean():
    model = SkinToneModel().fit({0: [[0.5, 0.4, 0.3]]})
    out = model.sample(0, np.random.default_rng(0))
    assert np.allclose(out, [0.5, 0.4, 0.3])


def test_skin_tone_sample_mean_clt():
    mean = np.array([0.5, 0.45, 0.40])
    rng = np.random.default_rng(1)
    draws = mean + rng.normal(0, 0.01, size=(500, 3))
    model = SkinToneModel().fit({2: draws})
    samples = np.stack([model.sample(2, rng) for _ in range(10_000)])
    sigma = draws.std(axis=0).max()
    assert np.abs(samples.mean(axis=0) - model.means[2]).max() < 3 * sigma / np.sqrt(10_000) * 10


def test_skin_tone_fitted_means_match_brute_force():
    records = make_dataset(60, seed=4, resolution=32)
    model = fit_skin_tone_model(records)
    flat = flat_region_mask(32)
    groups = {}
    for r in records:
        groups.setdefault(r.label.ethnicity, []).append(
            skin_color(r.lit_texture, flat))
    for e, colors in groups.items():
        want = np.mean(colors, axis=0)
        assert np.abs(model.means[e] - want).max() < 1e-6


def test_skin_tone_unfitted_rejected():
    with pytest.raises(ValueError):
        SkinToneModel().sample(3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_skin_tone(0, np.random.default_rng(0), SkinToneModel())


def test_skin_tone_samples_clamped():
    model = SkinToneModel().fit({0: np.random.default_rng(2).random((50, 3))})
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = model.sample(0, rng)
        assert (s >= 0).all() and (s <= 1).all()


# -- geometry offsets --------------------------------------------------------------

def test_offsets_ship_with_manifest():
    offsets = load_offsets()
    assert {"chin_cleft", "mouth_size", "nose_height"} <= set(offsets)
    for off in offsets.values():
        assert np.isfinite(off.delta).all()
        assert 0.0 <= off.default_weight <= 1.0


def test_offset_weight_zero_is_identity(step2, target):
    off = load_offsets()["chin_cleft"].at_resolution(target.resolution)
    out = apply_geometry_offset(target, off, 0.0)
    assert np.array_equal(out.position, target.position)
    assert np.array_equal(out.albedo, target.albedo)


def test_offset_leaves_albedo_bitwise(step2, target):
    off = load_offsets()["mouth_size"].at_resolution(target.resolution)
    out = apply_geometry_offset(target, off, 0.8)
    assert np.array_equal(out.albedo, target.albedo)
    assert not np.array_equal(out.position, target.position)


def test_offset_weight_inverse_recovers_without_clamping():
    albedo = np.full((256, 256, 3), 0.5, dtype=np.float32)
    position = np.full((256, 256, 3), 0.5, dtype=np.float32)
    from faceforge.toydata import FaceAsset
    asset = FaceAsset(albedo, position)
    off = load_offsets()["nose_height"]
    w = 0.5  # max |delta|*w stays well inside [0,1]: no clamping occurs
    forward = apply_geometry_offset(asset, off, w)
    back = apply_geometry_offset(forward, off, -w)
    assert np.abs(back.position - asset.position).max() < 1e-6


def test_offset_resolution_mismatch_rejected(target):
    off = load_offsets()["chin_cleft"]  # shipped at 256, target is 32
    with pytest.raises(ValueError):
        apply_geometry_offset(target, off, 1.0)


def test_offset_disjoint_support_commutes():
    from faceforge.toydata import FaceAsset
    asset = FaceAsset(np.full((64, 64, 3), 0.5, dtype=np.float32),
                      np.full((64, 64, 3), 0.5, dtype=np.float32))
    d1 = np.zeros((64, 64, 3), dtype=np.float32)
    d1[:16, :16, 2] = 0.1
    d2 = np.zeros((64, 64, 3), dtype=np.float32)
    d2[40:, 40:, 2] = -0.1
    o1 = GeometryOffset("a", d1)
    o2 = GeometryOffset("b", d2)
    ab = apply_geometry_offset(apply_geometry_offset(asset, o1, 1.0), o2, 1.0)
    ba = apply_geometry_offset(apply_geometry_offset(asset, o2, 1.0), o1, 1.0)
    assert np.array_equal(ab.position, ba.position)


def test_skin_edit_output_range(step2, target):
    from faceforge.normnet import Normalizer
    seed_all(1)
    model = Normalizer().eval()
    out = editctl.edit_skin_tone(np.asarray(target.albedo, dtype=np.float32).repeat(2, 0).repeat(2, 1),
                                 np.array([0.4, 0.35, 0.3]), model)
    assert out.min() >= 0.0 and out.max() <= 1.0
