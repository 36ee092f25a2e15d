import wave

import numpy as np
import pytest

from talkinghead.audiofeat import (AudioClip, MfccConfig, compute_mfcc, load_features, load_features_csv,
                                   mel_energies, mel_filterbank, mfcc_distance, read_wav, save_features,
                                   save_features_csv, write_wav)
from talkinghead.errors import PreconditionError, ValidationError

SR = 16000


def noise_clip(seconds, seed=0):
    return AudioClip(np.random.default_rng(seed).uniform(-0.5, 0.5, int(seconds * SR)), SR)


def test_silence_rows_identical_with_log_floor():
    seq = compute_mfcc(AudioClip(np.zeros(SR), SR))
    assert seq.features.shape == (25, 364)
    assert (seq.features == seq.features[0]).all()
    c0 = seq.features[0, ::13]
    np.testing.assert_allclose(c0, np.log(1e-10))


def test_twelve_seconds_give_300_rows():
    assert len(compute_mfcc(noise_clip(12.0))) == 300


def test_feature_dim_is_13_by_28():
    cfg = MfccConfig()
    assert cfg.context_frames == 28 and cfg.feature_dim == 364


def test_shorter_than_context_is_error():
    with pytest.raises(PreconditionError):
        compute_mfcc(AudioClip(np.zeros(int(0.2 * SR)), SR))


def htk_filterbank_oracle(n_filters, n_fft, sr):
    mel = lambda f: 2595 * np.log10(1 + f / 700)  # noqa: E731
    inv = lambda m: 700 * (10 ** (m / 2595) - 1)  # noqa: E731
    edges = [inv(mel(0) + i * (mel(sr / 2) - mel(0)) / (n_filters + 1)) for i in range(n_filters + 2)]
    fb = np.zeros((n_filters, n_fft // 2 + 1))
    for k in range(n_filters):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        for b in range(n_fft // 2 + 1):
            f = b * sr / n_fft
            if lo < f <= mid:
                fb[k, b] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                fb[k, b] = (hi - f) / (hi - mid)
    return fb, np.array(edges[1:-1])


def test_tone_peaks_in_bracketing_filter_against_direct_dft():
    cfg = MfccConfig()
    t = np.arange(SR) / SR
    x = 0.5 * np.sin(2 * np.pi * 440 * t)
    energies = mel_energies(AudioClip(x, SR), cfg)

    # direct DFT of frame 50 (centred at sample 8000, inside the clip, no padding)
    n = np.arange(cfg.win_length)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.win_length)
    seg = x[8000 - cfg.win_length // 2: 8000 - cfg.win_length // 2 + cfg.win_length] * window
    bins = np.arange(cfg.n_fft // 2 + 1)
    dft = np.array([np.sum(seg * np.exp(-2j * np.pi * b * n / cfg.n_fft)) for b in bins])
    fb, centres = htk_filterbank_oracle(cfg.n_mels, cfg.n_fft, SR)
    oracle = fb @ (np.abs(dft) ** 2 / cfg.n_fft)
    np.testing.assert_allclose(energies[50], oracle, rtol=1e-8, atol=1e-12)

    k = int(np.argmax(oracle))
    assert centres[k - 1] < 440 < centres[k + 1]
    _, ours = mel_filterbank(cfg)
    np.testing.assert_allclose(ours, centres)


def test_mfcc_distance_examples(rng):
    a = rng.normal(size=364)
    assert mfcc_distance(a, a) == 0.0
    assert np.isclose(mfcc_distance(a, -a), 2 * np.linalg.norm(a))
    b = rng.normal(size=364)
    assert np.isclose(mfcc_distance(a, b), np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))
    assert mfcc_distance(a, b) == mfcc_distance(b, a)
    with pytest.raises(ValidationError):
        mfcc_distance(a, b[:3])


def test_deterministic():
    clip = noise_clip(2.0)
    assert np.array_equal(compute_mfcc(clip).features, compute_mfcc(clip).features)


def test_shift_covariance_interior_rows():
    base = noise_clip(3.0, seed=4).samples
    k = 3
    delayed = np.r_[np.random.default_rng(5).uniform(-0.5, 0.5, k * SR // 25), base]
    a = compute_mfcc(AudioClip(base, SR)).features
    b = compute_mfcc(AudioClip(delayed, SR)).features
    interior = slice(6, len(a) - 6)
    np.testing.assert_allclose(b[interior.start + k:interior.stop + k], a[interior], rtol=1e-9, atol=1e-9)


def test_energy_monotone_in_gain():
    clip = noise_clip(1.0, seed=2)
    lo = compute_mfcc(clip).features[:, ::13]
    hi = compute_mfcc(AudioClip(clip.samples * 2.0, SR)).features[:, ::13]
    assert np.all(hi > lo)


def test_resampled_input_gives_same_row_count():
    clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 8000 * 2), 8000)
    assert len(compute_mfcc(clip)) == 50


def test_wav_round_trip_and_stereo_downmix(tmp_path):
    clip = noise_clip(0.5, seed=1)
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    np.testing.assert_allclose(back.samples, clip.samples, atol=1 / 32767)

    left, right = np.full(100, 1000, "<i2"), np.full(100, 3000, "<i2")
    with wave.open(str(tmp_path / "s.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(SR)
        w.writeframes(np.c_[left, right].ravel().tobytes())
    np.testing.assert_allclose(read_wav(tmp_path / "s.wav").samples, 2000 / 32768)


def test_feature_csv_and_container_round_trip(tmp_path):
    seq = compute_mfcc(noise_clip(1.0))
    save_features_csv(tmp_path / "f.csv", seq)
    np.testing.assert_array_equal(load_features_csv(tmp_path / "f.csv").features, seq.features)
    save_features(tmp_path / "f.thc", seq)
    np.testing.assert_allclose(load_features(tmp_path / "f.thc").features, seq.features, rtol=1e-6)
