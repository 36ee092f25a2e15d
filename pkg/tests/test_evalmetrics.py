import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from talkinghead.errors import PreconditionError, ValidationError
from talkinghead.evalmetrics import (PoseHistogram, audio_pose_correlation, hs_score, lmd, normalized_w1,
                                     pose_histogram, psnr, ssim, wasserstein1, write_report)


# -------------------------------------------------------------- PSNR / SSIM

def test_psnr_identical_is_capped():
    a = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(a, a) == 100.0


def test_psnr_twenty_db():
    assert psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.1)) == pytest.approx(20.0)


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(32, 32, 3))
    noise = rng.normal(size=a.shape)
    values = [psnr(a, a + s * noise) for s in (0.01, 0.03, 0.1, 0.3)]
    assert all(x > y for x, y in zip(values, values[1:]))
    with pytest.raises(ValidationError):
        psnr(a, a[:4])


def gaussian_kernel_11():
    x = np.arange(-5, 6)
    g = np.exp(-(x ** 2) / (2 * 1.5 ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_window_oracle(x, y):
    """Explicit 11x11 weighted window at every interior pixel."""
    k = gaussian_kernel_11()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(5, x.shape[0] - 5):
        for j in range(5, x.shape[1] - 5):
            wx, wy = x[i - 5:i + 6, j - 5:j + 6], y[i - 5:i + 6, j - 5:j + 6]
            mx, my = (k * wx).sum(), (k * wy).sum()
            vx, vy = (k * (wx - mx) ** 2).sum(), (k * (wy - my) ** 2).sum()
            cov = (k * (wx - mx) * (wy - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_identity_and_symmetry():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(20, 20, 3)), rng.uniform(size=(20, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_binary_complement_negative_matches_window_oracle():
    a = (np.random.default_rng(3).uniform(size=(24, 24)) > 0.5).astype(float)
    ours = ssim(a[..., None], 1 - a[..., None])
    assert ours < 0
    assert ours == pytest.approx(ssim_window_oracle(a, 1 - a), abs=1e-10)


def test_ssim_matches_scikit_image():
    rng = np.random.default_rng(4)
    a = rng.uniform(size=(32, 40, 3))
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0, channel_axis=2)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_rejects_tiny_images():
    with pytest.raises(ValidationError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


# ---------------------------------------------------------------------- LMD

def test_lmd_identical_zero_and_shift():
    rng = np.random.default_rng(5)
    lm = rng.uniform(0, 64, size=(4, 20, 2))
    assert lmd(lm, lm) == 0.0
    shifted = lm + [3.0, 0.0]
    assert lmd(shifted, lm, align=False) == pytest.approx(3.0)
    assert lmd(shifted, lm) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValidationError):
        lmd(lm, lm[:, :3])


# ---------------------------------------------------------------- histogram

def test_constant_pose_is_unit_mass():
    h = pose_histogram(np.tile([0.1, -0.2, 0.3, 0, 0, 0], (7, 1)))
    assert np.all(h.counts.sum(1) == 1) and np.all(h.counts.max(1) == 1)


def test_two_frame_yaw_histogram():
    h = pose_histogram(np.radians([[0, -10, 0, 0, 0, 0], [0, 10, 0, 0, 0, 0]]))
    yaw = h.counts[1]
    assert sorted(yaw[yaw > 0].tolist()) == [0.5, 0.5]
    assert np.flatnonzero(yaw).tolist() == [80, 100]


def test_histogram_matches_counting_oracle():
    rng = np.random.default_rng(6)
    deg = rng.uniform(-89.9, 89.9, size=(1000, 3))
    h = pose_histogram(np.c_[np.radians(deg), np.zeros((1000, 3))])
    for k in range(3):
        oracle = np.zeros(180)
        for d in deg[:, k]:
            b = 0
            while -90 + (b + 1) <= d:
                b += 1
            oracle[b] += 1
        np.testing.assert_array_equal(h.counts[k], oracle / 1000)


def test_out_of_range_angles_clamp_with_warning():
    with pytest.warns(UserWarning):
        h = pose_histogram(np.radians([[100, -120, 0, 0, 0, 0]]))
    assert h.counts[0, -1] == 1 and h.counts[1, 0] == 1
    with pytest.raises(PreconditionError):
        pose_histogram(np.zeros((0, 6)))


# ----------------------------------------------------------------------- HS

def test_hs_identical_is_one():
    h = pose_histogram(np.random.default_rng(7).normal(scale=0.2, size=(50, 6)))
    assert hs_score(h, h) == 1.0


def test_opposite_point_masses_give_zero():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lo = pose_histogram(np.radians(np.tile([-90, -90, -90, 0, 0, 0], (3, 1))))
        hi = pose_histogram(np.radians(np.tile([89.5, 89.5, 89.5, 0, 0, 0], (3, 1))))
    assert normalized_w1(lo, hi) == pytest.approx(1.0)
    assert hs_score(lo, hi) == pytest.approx(0.0)


def test_w1_point_masses_closed_form():
    p, q = np.zeros(10), np.zeros(10)
    p[2], q[7] = 1, 1
    assert wasserstein1(p, q, width=2.0) == 10.0


def test_hs_rejects_mismatched_binning():
    a = PoseHistogram(np.ones((3, 180)) / 180)
    b = PoseHistogram(np.ones((3, 90)) / 90, width=2.0)
    with pytest.raises(ValidationError):
        hs_score(a, b)


histograms = st.lists(st.floats(0.0, 1.0), min_size=12, max_size=12).filter(lambda v: sum(v) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(histograms, histograms, histograms)
def test_w1_triangle_inequality_and_symmetry(p, q, r):
    p, q, r = (np.array(v) / sum(v) for v in (p, q, r))
    assert wasserstein1(p, r) <= wasserstein1(p, q) + wasserstein1(q, r) + 1e-12
    assert wasserstein1(p, q) == pytest.approx(wasserstein1(q, p), abs=1e-12)
    hp = PoseHistogram(np.tile(p, (3, 1)))
    hq = PoseHistogram(np.tile(q, (3, 1)))
    hs = hs_score(hp, hq)
    assert 0.0 <= hs <= 1.0
    assert hs == pytest.approx(hs_score(hq, hp), abs=1e-12)


# -------------------------------------------------------------- correlation

def test_linear_dependence_gives_one():
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(200, 4)) + 5.0
    poses = feats[:, :3] * 0.05
    r = audio_pose_correlation(feats[:, :3], poses)
    assert not r.degenerate and r.coefficient == pytest.approx(1.0, abs=1e-6)


def test_independent_noise_near_zero():
    rng = np.random.default_rng(9)
    feats = rng.normal(size=(500, 13)) + 3.0
    r = audio_pose_correlation(feats, rng.normal(size=(500, 3)))
    assert abs(r.coefficient) < 0.2


def test_correlation_invariant_to_pose_scale():
    rng = np.random.default_rng(10)
    feats = rng.normal(size=(150, 5)) + 2.0
    poses = np.tanh(feats[:, :3]) + 0.1 * rng.normal(size=(150, 3))
    a = audio_pose_correlation(feats, poses).coefficient
    b = audio_pose_correlation(feats, 7.5 * poses).coefficient
    assert a == pytest.approx(b, abs=1e-12)


def test_constant_pose_is_flagged_null():
    feats = np.random.default_rng(11).normal(size=(50, 4)) + 4.0
    r = audio_pose_correlation(feats, np.zeros((50, 3)))
    assert r.degenerate and r.coefficient is None


def test_correlation_preconditions():
    with pytest.raises(PreconditionError):
        audio_pose_correlation(np.ones((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        audio_pose_correlation(np.ones((5, 3)), np.zeros((4, 3)))


# ------------------------------------------------------------------- report

def test_report_json_and_csv(tmp_path):
    rows = [{"video": "a", "psnr": 30.0, "ssim": 0.9, "lmd": 1.0, "hs": 0.8, "correlation": 0.4},
            {"video": "b", "psnr": 25.0, "ssim": 0.8, "lmd": 2.0, "hs": 0.7, "correlation": None}]
    write_report(tmp_path / "out" / "report", rows)
    assert json.loads((tmp_path / "out" / "report.json").read_text()) == rows
    lines = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert lines[0] == "correlation,hs,lmd,psnr,ssim,video" and len(lines) == 3
