"""MFCC features aligned to video frames.

Each video frame t gets the concatenation of the MFCC frames inside a
window centred on its timestamp ``t / fps`` (280 ms by default, i.e. 28
frames of 13 coefficients at a 10 ms hop).  Coefficient 0 is the log frame
energy.
"""
from __future__ import annotations

import csv
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window, resample_poly

from . import container
from .errors import PreconditionError, ValidationError


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.sample_rate <= 0:
            raise ValidationError("sample rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 26
    n_ceps: int = 13
    context_ms: float = 280.0
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10
    fps: float = 25.0

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def context_frames(self) -> int:
        return int(round(self.context_ms / self.hop_ms))

    @property
    def feature_dim(self) -> int:
        return self.n_ceps * self.context_frames


@dataclass
class AudioFeatureSequence:
    features: np.ndarray   # (T, D)
    frame_rate: float

    def __len__(self) -> int:
        return self.features.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular HTK-mel filters over rfft bins; also returns centre frequencies."""
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down)), edges[1:-1]


def resample(clip: AudioClip, rate: int) -> AudioClip:
    if clip.sample_rate == rate:
        return clip
    g = math.gcd(int(rate), int(clip.sample_rate))
    return AudioClip(resample_poly(clip.samples, rate // g, clip.sample_rate // g), rate)


def _power_frames(x: np.ndarray, centres: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    win = get_window("hann", cfg.win_length, fftbins=True)
    start = centres - cfg.win_length // 2
    idx = start[:, None] + np.arange(cfg.win_length)[None, :]
    spec = np.fft.rfft(x[idx] * win, n=cfg.n_fft, axis=1)
    return (spec.real ** 2 + spec.imag ** 2) / cfg.n_fft


def power_spectrogram(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Power spectra of frames centred at k * hop (reflect-padded ends)."""
    clip = resample(clip, cfg.sample_rate)
    x = clip.samples
    pad = cfg.win_length // 2
    if x.size <= pad:
        raise PreconditionError("clip shorter than one analysis window")
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (x.size - 1) // cfg.hop_length
    centres = pad + np.arange(n_frames) * cfg.hop_length
    return _power_frames(xp, centres, cfg)


def mel_energies(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    fb, _ = mel_filterbank(cfg)
    return power_spectrogram(clip, cfg) @ fb.T


def _cepstra(power: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    fb, _ = mel_filterbank(cfg)
    logmel = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)[:, :cfg.n_ceps]
    ceps[:, 0] = np.log(np.maximum(power.sum(axis=1), cfg.log_floor))
    return ceps


def n_video_frames(n_samples: int, sample_rate: int, fps: float) -> int:
    return int(math.floor(n_samples * fps / sample_rate + 1e-9))


def compute_mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> AudioFeatureSequence:
    """Per-video-frame stacked MFCC context windows, shape (T, n_ceps * context)."""
    clip = resample(clip, cfg.sample_rate)
    x = clip.samples
    hop, ctx = cfg.hop_length, cfg.context_frames
    if x.size < ctx * hop:
        raise PreconditionError(f"clip shorter than one {cfg.context_ms:g} ms context window")
    n_out = n_video_frames(x.size, cfg.sample_rate, cfg.fps)
    if n_out < 1:
        raise PreconditionError("clip shorter than one video frame")

    centre_idx = np.rint(np.arange(n_out) * cfg.sample_rate / cfg.fps / hop).astype(np.int64)
    lo_k = -(ctx // 2)
    hi_k = int(centre_idx[-1]) + (ctx - ctx // 2 - 1)
    half = cfg.win_length // 2
    pad_left = -lo_k * hop + half
    pad_right = max(0, hi_k * hop + cfg.win_length - half - x.size + 1)
    if pad_left >= x.size or pad_right >= x.size:
        raise PreconditionError("clip too short for reflect padding")
    xp = np.pad(x, (pad_left, pad_right), mode="reflect")
    ks = np.arange(lo_k, hi_k + 1)
    ceps = _cepstra(_power_frames(xp, pad_left + ks * hop, cfg), cfg)

    rows = centre_idx[:, None] + np.arange(lo_k, lo_k + ctx)[None, :] - lo_k
    feats = ceps[rows].reshape(n_out, -1)
    if not np.all(np.isfinite(feats)):
        raise ValidationError("non-finite MFCC features")
    return AudioFeatureSequence(feats, cfg.fps)


def mfcc_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("feature rows differ in length")
    return float(np.linalg.norm(a - b))


def read_wav(path: str | Path) -> AudioClip:
    """16-bit PCM WAV; stereo is averaged down to mono."""
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise ValidationError("only 16-bit PCM WAV is supported")
        n_ch, rate = w.getnchannels(), w.getframerate()
        raw = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    data = raw.reshape(-1, n_ch).astype(np.float64) / 32768.0
    return AudioClip(data.mean(axis=1), rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(clip.sample_rate))
        w.writeframes(pcm.tobytes())


def save_features_csv(path: str | Path, seq: AudioFeatureSequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"f{i}" for i in range(seq.features.shape[1])])
        for t, row in enumerate(seq.features):
            writer.writerow([t] + [repr(float(v)) for v in row])


def load_features_csv(path: str | Path, frame_rate: float = 25.0) -> AudioFeatureSequence:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return AudioFeatureSequence(data[:, 1:], frame_rate)


def save_features(path: str | Path, seq: AudioFeatureSequence) -> None:
    container.save(path, {"features": seq.features}, {"kind": "audio_features", "frame_rate": seq.frame_rate})


def load_features(path: str | Path) -> AudioFeatureSequence:
    arrays, meta = container.load(path)
    return AudioFeatureSequence(arrays["features"].astype(np.float64), float(meta.get("frame_rate", 25.0)))
