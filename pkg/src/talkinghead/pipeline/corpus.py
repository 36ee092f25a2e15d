"""Seeded synthetic talking-head corpus with learnable audio-to-motion ground truth.

Ground truth (version ``GT_VERSION``): each identity speaks a multi-band
signal whose band envelopes drift slowly.  Expression and head pose are a
fixed squashed-linear function of the band log energies seen in a 280 ms
window, plus low-pass noise.  Pose mixing weights, mean pose and gain are
identity specific, which gives every identity its own head-motion style.
"Real" frames are the rendered frames with an identity-keyed colour tint
and high-frequency pattern inside the face region.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ..audiofeat import AudioClip, write_wav
from ..errors import ConfigurationError
from ..face3d.basis import FaceBasis, save_basis, synthetic_basis
from ..face3d.model import Camera, CoefficientSet, build_mesh, wrap_angle
from ..io import save_coefficients_csv, save_png, save_pose_csv
from ..render.background import composite
from ..render.raster import rasterize

GT_VERSION = 1
SAMPLE_RATE = 16000
BAND_CENTRES = (250.0, 700.0, 1600.0, 3400.0)
_GT_SEED = 7_20_2020
# fixed standardization of band log energies
_Z_MEAN = 1.6
_Z_STD = 1.5


@dataclass
class CorpusSpec:
    n_identities: int = 3
    frames_per_identity: int = 300
    fps: float = 25.0
    image_size: int = 32
    seed: int = 0
    detail_amplitude: float = 0.12
    tint_amplitude: float = 0.12
    pose_noise: float = 0.01
    expression_noise: float = 0.01
    n_vertices: int = 642
    d_id: int = 8
    d_exp: int = 6
    d_tex: int = 8

    def __post_init__(self):
        for name in ("n_identities", "frames_per_identity", "image_size", "n_vertices",
                     "d_id", "d_exp", "d_tex"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.fps <= 0:
            raise ConfigurationError("fps must be positive")


@dataclass
class IdentityRecord:
    index: int
    audio: AudioClip
    alpha: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray        # (T, D_exp)
    pose: np.ndarray        # (T, 6)
    rendered: np.ndarray    # (T, H, W, 3) face + background
    real: np.ndarray        # (T, H, W, 3)
    masks: np.ndarray       # (T, H, W)
    backgrounds: np.ndarray  # (T, H, W, 3)
    face_only: np.ndarray = field(repr=False, default=None)  # (T, H, W, 3) raster without background

    def coefficients(self, t: int) -> CoefficientSet:
        return CoefficientSet(self.alpha, self.beta[t], self.delta, self.gamma, self.pose[t])

    @property
    def n_frames(self) -> int:
        return self.beta.shape[0]


def _gt_weights(d_exp: int):
    rng = np.random.default_rng(_GT_SEED)
    nb = len(BAND_CENTRES)
    w_beta = rng.normal(size=(d_exp, nb)) / np.sqrt(nb)
    b_beta = rng.normal(size=d_exp) * 0.2
    w_pose = rng.normal(size=(6, nb)) / np.sqrt(nb)
    return w_beta, b_beta, w_pose


def lowpass_noise(rng, n: int, sigma: float) -> np.ndarray:
    x = gaussian_filter1d(rng.standard_normal(n), sigma, mode="reflect")
    return x / (x.std() + 1e-12)


def synth_audio(rng, n_frames: int, fps: float) -> tuple[AudioClip, np.ndarray]:
    """Multi-band signal and its band envelopes sampled at 100 Hz."""
    n = int(round(n_frames / fps * SAMPLE_RATE))
    ctrl_rate = 100
    n_ctrl = n * ctrl_rate // SAMPLE_RATE + 2
    gate = lowpass_noise(rng, n_ctrl, sigma=25.0)
    envs = []
    for _ in BAND_CENTRES:
        e = lowpass_noise(rng, n_ctrl, sigma=20.0)
        envs.append(np.log1p(np.exp(2.0 * e + 1.5 * gate)))
    envs = np.stack(envs, axis=1)
    t = np.arange(n) / SAMPLE_RATE
    tc = np.arange(n_ctrl) / ctrl_rate
    # speaker timbre: carrier pitch and per-band gain
    pitch = rng.uniform(0.75, 1.3)
    timbre = rng.uniform(0.6, 1.4, len(BAND_CENTRES))
    x = np.zeros(n)
    for b, fc in enumerate(BAND_CENTRES):
        env = timbre[b] * np.interp(t, tc, envs[:, b])
        for k, ratio in enumerate((0.92, 1.0, 1.09)):
            x += env * np.sin(2 * np.pi * fc * pitch * ratio * t + rng.uniform(0, 2 * np.pi)) / 3.0
    x = 0.5 * x / (np.abs(x).max() + 1e-12)
    x += 1e-3 * rng.standard_normal(n)
    return AudioClip(x, SAMPLE_RATE), envs


def band_features(envs: np.ndarray, n_frames: int, fps: float, context_s: float = 0.28) -> np.ndarray:
    """Standardized band log energies in a centred window per video frame, (T, bands)."""
    ctrl_rate = 100
    half = int(round(context_s * ctrl_rate / 2))
    padded = np.pad(envs ** 2, ((half, half), (0, 0)), mode="reflect")
    out = np.empty((n_frames, envs.shape[1]))
    for t in range(n_frames):
        c = int(round(t / fps * ctrl_rate)) + half
        out[t] = padded[c - half:c + half].mean(axis=0)
    return (np.log(out + 1e-2) - _Z_MEAN) / _Z_STD


def motion_from_audio(z: np.ndarray, rng, identity_style, d_exp: int,
                      pose_noise: float, expression_noise: float) -> tuple[np.ndarray, np.ndarray]:
    w_beta, b_beta, w_pose = _gt_weights(d_exp)
    n = z.shape[0]
    beta = 0.8 * np.tanh(z @ w_beta.T + b_beta)
    beta += expression_noise * np.stack([lowpass_noise(rng, n, 3.0) for _ in range(d_exp)], axis=1)
    mix, mean, gain = identity_style
    drive = np.tanh(z @ (w_pose + mix).T)
    pose = mean[None, :] + gain[None, :] * drive
    pose[:, :3] += pose_noise * np.stack([lowpass_noise(rng, n, 4.0) for _ in range(3)], axis=1)
    pose[:, :3] = wrap_angle(pose[:, :3])
    return beta, pose


def identity_style(rng):
    nb = len(BAND_CENTRES)
    mix = 0.4 * rng.normal(size=(6, nb)) / np.sqrt(nb)
    mean = np.r_[rng.uniform(-0.1, 0.1, 3), 0.0, 0.0, 0.0]
    gain = np.r_[rng.uniform(0.08, 0.25, 3), rng.uniform(0.02, 0.05, 2), 0.0]
    return mix, mean, gain


def background_plate(rng, size: int, margin: int) -> np.ndarray:
    h = size + 2 * margin
    yy, xx = np.mgrid[0:h, 0:h] / h
    base = rng.uniform(0.2, 0.7, 3)
    tilt = rng.uniform(-0.25, 0.25, 3)
    stripes = 0.1 * np.sin(2 * np.pi * (rng.uniform(2, 5) * xx + rng.uniform(0, 2) * yy))
    img = base[None, None, :] + tilt[None, None, :] * xx[..., None] + stripes[..., None]
    return np.clip(img, 0.0, 1.0)


def shifted_background(plate: np.ndarray, size: int, margin: int, pose: np.ndarray) -> np.ndarray:
    dx = int(np.clip(round(np.degrees(pose[1]) * 0.3), -margin, margin))
    dy = int(np.clip(round(np.degrees(pose[0]) * 0.3), -margin, margin))
    return plate[margin + dy:margin + dy + size, margin + dx:margin + dx + size]


def identity_detail(rng, size: int, amplitude: float, tint_amplitude: float):
    yy, xx = np.mgrid[0:size, 0:size] / size
    pattern = np.zeros((size, size))
    for _ in range(2):
        f = rng.uniform(4.0, 9.0)
        theta = rng.uniform(0, np.pi)
        pattern += np.sin(2 * np.pi * f * (np.cos(theta) * xx + np.sin(theta) * yy) + rng.uniform(0, 2 * np.pi))
    pattern = amplitude * pattern / 2.0
    tint = 1.0 + rng.uniform(-tint_amplitude, tint_amplitude, 3)
    return pattern, tint


def make_real(rendered: np.ndarray, mask: np.ndarray, pattern: np.ndarray, tint: np.ndarray) -> np.ndarray:
    face = np.clip(rendered * tint[None, None, :] + pattern[..., None], 0.0, 1.0)
    return np.where(mask[..., None] > 0, face, rendered)


def _speech(spec: CorpusSpec, rng, n_frames: int):
    clip, envs = synth_audio(rng, n_frames, spec.fps)
    z = band_features(envs, n_frames, spec.fps)
    beta, pose = motion_from_audio(z, rng, identity_style(rng), spec.d_exp,
                                   spec.pose_noise, spec.expression_noise)
    return clip, beta, pose


def speech_sequence(spec: CorpusSpec, index: int, n_frames: int | None = None):
    """Audio, expression and pose of identity ``index`` without rendering."""
    n_frames = spec.frames_per_identity if n_frames is None else n_frames
    return _speech(spec, np.random.default_rng([spec.seed, index, GT_VERSION]), n_frames)


def build_identity(spec: CorpusSpec, basis: FaceBasis, camera: Camera, index: int,
                   n_frames: int | None = None) -> IdentityRecord:
    n_frames = spec.frames_per_identity if n_frames is None else n_frames
    rng = np.random.default_rng([spec.seed, index, GT_VERSION])
    clip, beta, pose = _speech(spec, rng, n_frames)
    alpha = rng.normal(size=spec.d_id) * 0.5
    delta = rng.normal(size=spec.d_tex) * 0.5
    gamma = np.tile(np.r_[3.0, 0.0, -0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 3)
    gamma += np.repeat(rng.uniform(-0.2, 0.2, 3), 9) * np.tile(np.eye(9)[0], 3)
    gamma[np.r_[1, 3, 10, 12, 19, 21]] += np.tile(rng.uniform(-0.3, 0.3, 2), 3)
    margin = max(2, spec.image_size // 8)
    plate = background_plate(rng, spec.image_size, margin)
    pattern, tint = identity_detail(rng, spec.image_size, spec.detail_amplitude, spec.tint_amplitude)

    size = spec.image_size
    rendered = np.empty((n_frames, size, size, 3))
    real = np.empty_like(rendered)
    face_only = np.empty_like(rendered)
    backgrounds = np.empty_like(rendered)
    masks = np.empty((n_frames, size, size), dtype=np.uint8)
    for t in range(n_frames):
        coeffs = CoefficientSet(alpha, beta[t], delta, gamma, pose[t])
        frame = rasterize(build_mesh(basis, coeffs), pose[t], camera, gamma)
        bg = shifted_background(plate, size, margin, pose[t])
        rendered[t] = composite(frame, bg)
        real[t] = make_real(rendered[t], frame.mask, pattern, tint)
        face_only[t] = frame.image
        masks[t] = frame.mask
        backgrounds[t] = bg
    return IdentityRecord(index, clip, alpha, delta, gamma, beta, pose, rendered, real, masks,
                          backgrounds, face_only)


def corpus_basis(spec: CorpusSpec) -> FaceBasis:
    return synthetic_basis(spec.n_vertices, spec.d_id, spec.d_exp, spec.d_tex, seed=spec.seed)


def corpus_camera(spec: CorpusSpec) -> Camera:
    return Camera.for_image(spec.image_size)


def generate(spec: CorpusSpec) -> tuple[FaceBasis, Camera, list[IdentityRecord]]:
    basis = corpus_basis(spec)
    camera = corpus_camera(spec)
    return basis, camera, [build_identity(spec, basis, camera, i) for i in range(spec.n_identities)]


def identity_dir(root: Path, index: int) -> Path:
    return Path(root) / f"id{index:03d}"


def write_identity(root: Path, rec: IdentityRecord) -> None:
    d = identity_dir(root, rec.index)
    (d / "rendered").mkdir(parents=True, exist_ok=True)
    (d / "real").mkdir(parents=True, exist_ok=True)
    (d / "mask").mkdir(parents=True, exist_ok=True)
    write_wav(d / "audio.wav", rec.audio)
    coeffs = [rec.coefficients(t) for t in range(rec.n_frames)]
    save_coefficients_csv(d / "coeffs.csv", coeffs)
    save_pose_csv(d / "poses.csv", rec.pose)
    for t in range(rec.n_frames):
        save_png(d / "rendered" / f"{t:06d}.png", rec.rendered[t])
        save_png(d / "real" / f"{t:06d}.png", rec.real[t])
        save_png(d / "mask" / f"{t:06d}.png", rec.masks[t].astype(np.float64))


def synthesize_corpus(spec: CorpusSpec, root: str | Path) -> list[IdentityRecord]:
    """Write the corpus under ``root``; same spec, same bytes."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    basis, camera, records = generate(spec)
    save_basis(root / "basis.thc", basis)
    meta = {"gt_version": GT_VERSION, "spec": asdict(spec),
            "camera": asdict(camera), "identities": [f"id{r.index:03d}" for r in records]}
    (root / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for rec in records:
        write_identity(root, rec)
    return records
