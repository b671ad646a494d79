import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_otsu, naive_box_mean, random_histograms
from skygnss.errors import DimensionMismatch, EmptyHistogram, EvenKernel
from skygnss.skyseg import (Histogram, SkyMask, apply_threshold, boundary, iou, local_threshold, mean_blur,
                            otsu, otsu_sweep, segment_sky, to_grayscale)


@pytest.mark.parametrize("rgb, gray", [((255, 255, 255), 255), ((0, 0, 0), 0), ((100, 150, 200), 141)])
def test_grayscale(rgb, gray):
    img = np.array([[rgb]], dtype=np.uint8)
    assert to_grayscale(img)[0, 0] == gray


def test_grayscale_shape_check():
    with pytest.raises(DimensionMismatch):
        to_grayscale(np.zeros((4, 4), dtype=np.uint8))


def test_blur_constant_and_identity():
    img = np.full((7, 9), 77, dtype=np.uint8)
    assert np.array_equal(mean_blur(img, 5), img)
    rng = np.random.default_rng(0)
    noise = rng.integers(0, 256, (6, 6)).astype(np.uint8)
    assert np.array_equal(mean_blur(noise, 1), noise)


def test_blur_impulse():
    img = np.zeros((7, 7), dtype=np.uint8)
    img[3, 3] = 255
    out = mean_blur(img, 3)
    assert np.array_equal(out[2:5, 2:5], np.full((3, 3), 28))
    assert out.sum() == 9 * 28


def test_blur_matches_naive_window():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (12, 15)).astype(np.uint8)
    expected = np.floor(naive_box_mean(img, 5) + 0.5).astype(np.uint8)
    assert np.array_equal(mean_blur(img, 5), expected)


@pytest.mark.parametrize("k", [0, 2, 4, -1])
def test_blur_rejects_even_kernels(k):
    with pytest.raises(EvenKernel):
        mean_blur(np.zeros((3, 3), dtype=np.uint8), k)


def test_half_black_half_white_ties_to_one():
    img = np.zeros((4, 8), dtype=np.uint8)
    img[:, 4:] = 255
    h = Histogram.from_image(img)
    res = otsu(h)
    assert res.threshold == 1 and not res.degenerate
    assert brute_force_otsu(h.counts)[0] == 1
    sweep = otsu_sweep(h)
    assert np.allclose(sweep.between, sweep.between[0])


def test_constant_image_is_degenerate():
    res = otsu(Histogram.from_image(np.full((5, 5), 123, dtype=np.uint8)))
    assert res.degenerate and res.between_class_variance == 0.0


def test_empty_histogram():
    with pytest.raises(EmptyHistogram):
        otsu(Histogram.from_counts(np.zeros(256)))


def test_random_histograms_match_brute_force():
    for counts in random_histograms(42, 40):
        t, sb = brute_force_otsu(counts)
        res = otsu(Histogram.from_counts(counts))
        assert res.threshold == t
        assert res.between_class_variance == pytest.approx(float(sb), rel=1e-12, abs=1e-12)


def test_skimage_agrees_on_separated_modes():
    filters = pytest.importorskip("skimage.filters")
    for counts in random_histograms(7, 40)[2::4]:
        # scikit-image puts level t in the dark class, so its t is ours minus one
        sk = filters.threshold_otsu(hist=(counts, np.arange(256)))
        assert otsu(Histogram.from_counts(counts)).threshold == int(sk) + 1


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, 256, elements=st.integers(0, 1000)))
def test_otsu_identities(counts):
    if counts.sum() == 0:
        counts[0] = 1
    sweep = otsu_sweep(Histogram.from_counts(counts))
    ok = ~np.isnan(sweep.mu0) & ~np.isnan(sweep.mu1)
    np.testing.assert_allclose((sweep.omega0 * sweep.mu0 + sweep.omega1 * sweep.mu1)[ok], sweep.mu_total, atol=1e-9)
    np.testing.assert_allclose(sweep.omega0 + sweep.omega1, 1.0, atol=1e-9)
    np.testing.assert_allclose((sweep.within + sweep.between)[ok], sweep.total_variance, atol=1e-6)


def test_apply_threshold_cases():
    img = np.array([[0, 254], [100, 200]], dtype=np.uint8)
    assert apply_threshold(img, 0).bits.all()
    assert not apply_threshold(img, 255).bits.any()
    checker = (np.indices((6, 6)).sum(0) % 2 * 255).astype(np.uint8)
    assert np.array_equal(apply_threshold(checker, 1).bits, checker == 255)


def test_local_threshold_constant_and_naive():
    img = np.full((9, 9), 100, dtype=np.uint8)
    assert local_threshold(img, 3, 1).bits.all()
    assert not local_threshold(img, 3, -1).bits.any()
    grad = np.add.outer(np.arange(10) * 3, np.arange(12) * 7).astype(np.uint8)
    assert np.array_equal(local_threshold(grad, 3, 0).bits, grad >= naive_box_mean(grad, 3))


def test_iou_cases():
    a = SkyMask(np.ones((4, 4), bool))
    assert iou(a, a) == 1.0
    left = np.zeros((4, 4), bool)
    left[:, :2] = True
    assert iou(SkyMask(left), SkyMask(~left)) == 0.0
    assert iou(SkyMask(np.zeros((3, 3), bool)), SkyMask(np.zeros((3, 3), bool))) == 1.0
    # 10 x 20 field: A covers columns 0-9, B columns 5-14 -> 50 shared, 150 in the union
    a = np.zeros((10, 20), bool)
    b = np.zeros((10, 20), bool)
    a[:, :10] = True
    b[:, 5:15] = True
    assert iou(SkyMask(a), SkyMask(b)) == pytest.approx(1 / 3)
    with pytest.raises(DimensionMismatch):
        iou(SkyMask(a), SkyMask(np.zeros((3, 3), bool)))


def test_boundary_marks_both_sides():
    bits = np.zeros((5, 6), bool)
    bits[:, 3:] = True
    edge = boundary(SkyMask(bits))
    assert edge[:, 2:4].all() and edge.sum() == 10


def test_segment_sky_bimodal():
    rng = np.random.default_rng(3)
    truth = np.zeros((60, 80), bool)
    truth[:30] = True
    img = np.clip(np.where(truth, 200, 60) + rng.normal(0, 10, truth.shape), 0, 255).astype(np.uint8)
    mask, res = segment_sky(img)
    assert 60 < res.threshold <= 200
    assert iou(mask, SkyMask(truth)) >= 0.99
    with pytest.raises(ValueError):
        segment_sky(img, method="kmeans")
