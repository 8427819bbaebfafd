import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fontdml.losses import (SCORE_EPS, LossWeights, PerceptualExtractor, PixelWeighting, adv_d_tex_loss,
                            adv_g_loss, black_pixel_alpha, contextual_loss, contextual_similarity, dml_loss,
                            emd_weighted_l1, gaussian_blur, gaussian_kernel, l1_loss, local_losses,
                            random_patches, total_g_loss_agis, total_g_loss_emd)
from fontdml.models import dml_logits


def t64(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


# --- DML ---

def test_dml_uniform_logits():
    assert float(dml_loss(torch.zeros(3, dtype=torch.float64), 0)) == pytest.approx(math.log(3), abs=1e-12)


@pytest.mark.parametrize("tau,expected", [(1.0, math.log1p(math.exp(-2))), (0.5, math.log1p(math.exp(-4)))])
def test_dml_closed_form(tau, expected):
    x = t64([1.0, 0.0])
    w = t64([[1.0, -1.0], [0.0, 0.0]])  # columns e1, -e1
    logits = dml_logits(x, w, t64([0.0, 0.0]), tau)
    assert float(dml_loss(logits, 0)) == pytest.approx(expected, abs=1e-12)


def test_dml_reported_values():
    assert math.log1p(math.exp(-2)) == pytest.approx(0.12693, abs=5e-6)
    assert math.log1p(math.exp(-4)) == pytest.approx(0.01815, abs=5e-6)


def test_dml_invalid_class():
    with pytest.raises(ValueError):
        dml_loss(torch.zeros(3), 3)
    with pytest.raises(ValueError):
        dml_loss(torch.zeros(2, 3), torch.tensor([0, -1]))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-1e3, 1e3), st.data())
@settings(max_examples=100, deadline=None)
def test_dml_shift_invariance(logits, shift, data):
    target = data.draw(st.integers(0, len(logits) - 1))
    a = dml_loss(t64(logits), target)
    b = dml_loss(t64(logits) + shift, target)
    assert float(a) >= 0
    assert float(a) == pytest.approx(float(b), rel=1e-9, abs=1e-9)


def test_dml_large_logits_stable():
    assert math.isfinite(float(dml_loss(t64([1e4, -1e4, 0.0]), 1)))


# --- L1 ---

def test_l1_examples():
    a = torch.rand(2, 1, 8, 8)
    assert float(l1_loss(a, a)) == 0.0
    assert float(l1_loss(torch.zeros(1, 1, 4, 4), torch.ones(1, 1, 4, 4))) == 1.0
    y = t64([[0.0, 0.5], [1.0, 0.25]])[None, None]
    yh = t64([[0.5, 0.5], [0.0, 0.25]])[None, None]
    assert float(l1_loss(y, yh)) == pytest.approx(0.375, abs=1e-15)


# --- adversarial ---

def test_adv_examples():
    assert float(adv_g_loss(t64([0.5]))) == pytest.approx(math.log(0.5), abs=1e-12)
    opt = adv_d_tex_loss(t64([1 - SCORE_EPS]), t64([SCORE_EPS]))
    assert float(opt) == pytest.approx(2 * math.log(1 - SCORE_EPS), abs=1e-12)
    assert abs(float(opt)) < 1e-6
    assert float(adv_d_tex_loss(t64([0.5]), t64([0.5]))) == pytest.approx(2 * math.log(0.5), abs=1e-12)


def test_adv_scores_clamped():
    assert math.isfinite(float(adv_g_loss(t64([1.0]))))
    assert math.isfinite(float(adv_d_tex_loss(t64([0.0]), t64([1.0]))))


# --- contextual loss ---

def _cx_oracle(x, y, h=0.5, eps=1e-5):
    """Direct loops: x generated features (N_x, C), y target features (N_y, C)."""
    nx, ny = len(x), len(y)
    d = np.zeros((nx, ny))
    for i in range(nx):
        for j in range(ny):
            xi = x[i] / (np.linalg.norm(x[i]) + 1e-12)
            yj = y[j] / (np.linalg.norm(y[j]) + 1e-12)
            d[i, j] = 1.0 - float(xi @ yj)
    cx = np.zeros((nx, ny))
    for i in range(nx):
        dmin = min(d[i])
        w = [math.exp((1 - d[i, j] / (dmin + eps)) / h) for j in range(ny)]
        for j in range(ny):
            cx[i, j] = w[j] / sum(w)
    return sum(max(cx[i, j] for i in range(nx)) for j in range(ny)) / ny


@pytest.mark.parametrize("seed", range(5))
def test_contextual_similarity_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))  # two 3-channel feature vectors each
    got = contextual_similarity(t64(x.T)[None], t64(y.T)[None], h=0.5)
    assert float(got[0]) == pytest.approx(_cx_oracle(x, y), rel=1e-10)


def test_contextual_self_similarity_is_one():
    rng = np.random.default_rng(0)
    feats = t64(rng.normal(size=(1, 8, 5, 5)))
    assert float(contextual_similarity(feats, feats)[0]) == pytest.approx(1.0, abs=1e-9)
    ext = PerceptualExtractor().double()
    img = t64(rng.random((2, 1, 64, 64)))
    assert float(contextual_loss(img, img, ext)) == pytest.approx(0.0, abs=1e-9)


def test_contextual_alignment_free():
    rng = np.random.default_rng(1)
    x, y = t64(rng.normal(size=(1, 6, 16))), t64(rng.normal(size=(1, 6, 16)))
    perm = torch.from_numpy(rng.permutation(16))
    assert float(contextual_similarity(x[:, :, perm], y)) == pytest.approx(float(contextual_similarity(x, y)),
                                                                           rel=1e-12)
    assert float(contextual_similarity(x, y[:, :, perm])) == pytest.approx(float(contextual_similarity(x, y)),
                                                                           rel=1e-12)


def test_contextual_loss_nonnegative_finite():
    ext = PerceptualExtractor()
    a, b = torch.rand(3, 1, 64, 64), torch.rand(3, 1, 64, 64)
    val = contextual_loss(a, b, ext)
    assert math.isfinite(float(val)) and float(val) >= 0
    same = torch.ones(1, 1, 64, 64)
    assert math.isfinite(float(contextual_loss(same, same, ext)))


def test_extractor_is_frozen_and_reloadable(tmp_path):
    ext = PerceptualExtractor(seed=3)
    assert all(not p.requires_grad for p in ext.parameters())
    ext.save(tmp_path / "ext.ckpt")
    back = PerceptualExtractor.load(tmp_path / "ext.ckpt")
    assert back.provenance == "imported-weights"
    x = torch.rand(2, 1, 64, 64)
    assert torch.equal(ext.pooled(x), back.pooled(x))


# --- local texture ---

def test_local_generator_term():
    half = t64([0.5, 0.5, 0.5])
    g, d = local_losses(half, half, half)
    assert float(g) == pytest.approx(math.log(0.5), abs=1e-12)
    assert float(d) == pytest.approx(3 * math.log(0.5), abs=1e-12)


def test_blur_constant_patch_unchanged():
    patch = torch.full((2, 1, 16, 16), 0.37, dtype=torch.float64)
    assert torch.allclose(gaussian_blur(patch), patch, atol=1e-15)


def test_blur_impulse_gives_kernel():
    patch = torch.zeros(1, 1, 5, 5, dtype=torch.float64)
    patch[0, 0, 2, 2] = 1.0
    out = gaussian_blur(patch)[0, 0, 1:4, 1:4].numpy()
    g = np.array([math.exp(-0.5), 1.0, math.exp(-0.5)])
    expected = np.outer(g, g) / np.outer(g, g).sum()
    assert np.allclose(out, expected, atol=1e-15)
    assert out.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(gaussian_kernel().numpy(), expected)


def test_random_patches_shape_and_content():
    imgs = torch.arange(2 * 64 * 64, dtype=torch.float32).reshape(2, 1, 64, 64)
    rng = np.random.default_rng(0)
    p = random_patches(imgs, rng, 16, 4)
    assert p.shape == (8, 1, 16, 16)
    # each patch is a contiguous window of its source image
    first = p[0, 0]
    assert torch.all(first[:, 1:] - first[:, :-1] == 1)
    assert torch.all(first[1:, :] - first[:-1, :] == 64)


# --- EMD weighting ---

def test_emd_weighted_l1_examples():
    y_true = t64([[0.0, 0.0], [1.0, 1.0]])[None, None]
    y = t64([[0.3, 0.1], [0.8, 0.8]])[None, None]
    assert float(black_pixel_alpha(y_true)) == 0.5
    assert float(emd_weighted_l1(y, y_true, 0.5)) == pytest.approx(0.2, abs=1e-15)
    assert float(emd_weighted_l1(y_true, y_true, 0.7)) == 0.0


def test_emd_weighting_equal_means():
    imgs = np.stack([np.full((4, 4), 0.3), np.full((4, 4), 0.3)])
    pw = PixelWeighting.from_images(["a", "b"], imgs)
    assert np.allclose(pw.beta, [0.5, 0.5])


def test_emd_beta_sums_to_one():
    rng = np.random.default_rng(0)
    imgs = rng.random((500, 8, 8))
    for mode in ("all", "black"):
        pw = PixelWeighting.from_images(list(range(500)), imgs, mean_mode=mode)
        assert abs(pw.beta.sum() - 1.0) < 1e-9


def test_emd_beta_matches_softmax_of_ink():
    imgs = np.stack([np.full((2, 2), 1.0), np.array([[0.0, 1.0], [1.0, 1.0]])])
    pw = PixelWeighting.from_images(["blank", "ink"], imgs)
    # mean ink: 0 and 0.25
    expected = np.exp([0.0, 0.25]) / np.exp([0.0, 0.25]).sum()
    assert np.allclose(pw.beta, expected, atol=1e-15)
    black = PixelWeighting.from_images(["blank", "ink"], imgs, mean_mode="black")
    # ink mean over black pixels only: 0 (none) and 1.0
    assert np.allclose(black.beta, np.exp([0.0, 1.0]) / np.exp([0.0, 1.0]).sum())


def test_emd_no_black_pixels_falls_back(caplog):
    y_true = torch.ones(1, 1, 4, 4, dtype=torch.float64)
    y = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    val = emd_weighted_l1(y, y_true, 1.0)
    assert float(val) == pytest.approx(1.0)  # alpha = 1/16, sum |d| = 16
    assert "alpha falls back" in caplog.text


@given(st.floats(0.01, 10.0))
@settings(max_examples=30, deadline=None)
def test_emd_linear_in_residual(scale):
    rng = np.random.default_rng(0)
    y_true = t64((rng.random((1, 1, 6, 6)) > 0.5).astype(float))
    delta = t64(rng.normal(size=(1, 1, 6, 6)))
    base = float(emd_weighted_l1(y_true + delta, y_true, 0.3))
    assert float(emd_weighted_l1(y_true + scale * delta, y_true, 0.3)) == pytest.approx(scale * base, rel=1e-12)


# --- combined objectives ---

COMPONENTS = {"l1": t64([0.1]), "adv": t64([-0.5]), "cx": t64([0.3]), "local": t64([-0.2]), "dml": t64([1.2])}


def test_total_agis_zero_weights():
    w = LossWeights(0, 0, 0, 0, 0)
    assert float(total_g_loss_agis(COMPONENTS, w)) == 0.0


def test_total_agis_unit_weights():
    w = LossWeights(1, 1, 1, 1, 1)
    assert float(total_g_loss_agis(COMPONENTS, w)) == pytest.approx(0.1 - 0.5 + 0.3 - 0.2 + 1.2, abs=1e-12)


def test_total_agis_finetune_masking():
    w = LossWeights(1, 1, 1, 1, 1)
    val = total_g_loss_agis(COMPONENTS, w, has_ground_truth=torch.tensor([False]), mode="finetune")
    assert float(val) == pytest.approx(-0.5 - 0.2, abs=1e-12)
    with_gt = total_g_loss_agis(COMPONENTS, w, has_ground_truth=torch.tensor([True]), mode="finetune")
    assert float(with_gt) == pytest.approx(0.1 - 0.5 + 0.3 - 0.2, abs=1e-12)


def test_total_emd():
    assert total_g_loss_emd(0.3, 0.2, 0.0) == 0.3
    assert total_g_loss_emd(0.3, 0.2, 1.0) == pytest.approx(0.5)
    assert total_g_loss_emd(0.3, 0.2, 0.5) == pytest.approx(0.4)


def test_loss_weight_defaults():
    w = LossWeights()
    assert w.lambda_dml == 1.0
    with pytest.raises(ValueError):
        LossWeights(lambda_l1=-1)
