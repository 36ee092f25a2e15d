"""Image, landmark and head-pose evaluation metrics."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import PreconditionError, ValidationError

PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
ANGLE_NAMES = ("pitch", "yaw", "roll")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for images in [0, 1]; identical images give ``PSNR_CAP``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("images differ in shape")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    filt = dict(sigma=SSIM_SIGMA, truncate=SSIM_RADIUS / SSIM_SIGMA, mode="reflect")
    mx, my = gaussian_filter(x, **filt), gaussian_filter(y, **filt)
    sxx = gaussian_filter(x * x, **filt) - mx * mx
    syy = gaussian_filter(y * y, **filt) - my * my
    sxy = gaussian_filter(x * y, **filt) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))
    r = SSIM_RADIUS
    return float(s[r:-r, r:-r].mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM (Gaussian 11x11, sigma 1.5, data range 1), averaged over channels.

    Border pixels whose window would leave the image are excluded.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("images differ in shape")
    if min(a.shape[:2]) <= 2 * SSIM_RADIUS:
        raise ValidationError("image smaller than the SSIM window")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def lmd(landmarks_gen: np.ndarray, landmarks_gt: np.ndarray, align: bool = True) -> float:
    """Mean landmark distance in pixels; optionally centroid-aligned per frame."""
    g = np.asarray(landmarks_gen, dtype=np.float64)
    t = np.asarray(landmarks_gt, dtype=np.float64)
    if g.shape != t.shape or g.ndim != 3 or g.shape[2] != 2:
        raise ValidationError("landmark arrays must both be (T, L, 2)")
    if align:
        g = g - g.mean(axis=1, keepdims=True)
        t = t - t.mean(axis=1, keepdims=True)
    return float(np.linalg.norm(g - t, axis=2).mean())


@dataclass(frozen=True)
class PoseHistogram:
    """Normalized per-angle histograms over degree bins, shape (3, n_bins)."""

    counts: np.ndarray
    low: float = -90.0
    high: float = 90.0
    width: float = 1.0

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def centres(self) -> np.ndarray:
        return self.low + self.width * (np.arange(self.n_bins) + 0.5)


def pose_histogram(poses: np.ndarray, low: float = -90.0, high: float = 90.0,
                   width: float = 1.0) -> PoseHistogram:
    """Histogram pitch/yaw/roll (radians in, degree bins out); edges clamp with a warning."""
    poses = np.atleast_2d(np.asarray(poses, dtype=np.float64))
    if poses.shape[0] == 0:
        raise PreconditionError("empty pose sequence")
    n_bins = int(round((high - low) / width))
    deg = np.degrees(poses[:, :3])
    idx = np.floor((deg - low) / width).astype(np.int64)
    outside = (idx < 0) | (idx >= n_bins)
    if outside.any():
        warnings.warn(f"{int(outside.sum())} angle samples outside [{low}, {high}) deg clamped to edge bins")
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.zeros((3, n_bins))
    for k in range(3):
        counts[k] = np.bincount(idx[:, k], minlength=n_bins)
    return PoseHistogram(counts / poses.shape[0], low, high, width)


def wasserstein1(p: np.ndarray, q: np.ndarray, width: float = 1.0) -> float:
    """1-D earth mover's distance between histograms on the same uniform bins."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError("histograms differ in binning")
    return float(np.sum(np.abs(np.cumsum(p - q)[:-1])) * width)


def normalized_w1(p_real: PoseHistogram, p_gen: PoseHistogram) -> float:
    """Mean over angles of W1 divided by the span between the outermost bin centres."""
    if (p_real.counts.shape != p_gen.counts.shape or p_real.low != p_gen.low
            or p_real.width != p_gen.width):
        raise ValidationError("histograms differ in binning")
    span = (p_real.n_bins - 1) * p_real.width
    return float(np.mean([wasserstein1(p_real.counts[k], p_gen.counts[k], p_real.width) / span
                          for k in range(3)]))


def hs_score(p_real: PoseHistogram, p_gen: PoseHistogram) -> float:
    """Head-pose similarity, 1 - normalized W1, in [0, 1]."""
    return float(min(1.0, max(0.0, 1.0 - normalized_w1(p_real, p_gen))))


@dataclass(frozen=True)
class CorrelationResult:
    coefficient: float | None   # None when a distance list has zero variance
    n_pairs: int
    degenerate: bool


def neighbour_distance_pairs(features: np.ndarray, poses: np.ndarray, radius_scale: float = 0.5):
    """(feature distance, pose distance) for each ordered pair within ``radius_scale * |s_t|`` of s_t."""
    s = np.asarray(features, dtype=np.float64)
    a = np.asarray(poses, dtype=np.float64)[:, :3]
    if s.shape[0] != a.shape[0]:
        raise ValidationError("features and poses differ in length")
    sq = np.sum(s * s, axis=1)
    fd = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * s @ s.T, 0.0))
    pd = np.linalg.norm(a[:, None, :] - a[None, :, :], axis=2)
    radius = radius_scale * np.sqrt(sq)
    sel = fd <= radius[:, None]
    np.fill_diagonal(sel, False)
    return fd[sel], pd[sel]


def audio_pose_correlation(features: np.ndarray, poses: np.ndarray,
                           radius_scale: float = 0.5) -> CorrelationResult:
    """Pearson correlation between MFCC distances and pose distances of neighbouring frames."""
    features = np.asarray(features)
    if features.shape[0] < 3:
        raise PreconditionError("need at least 3 frames")
    fd, pd = neighbour_distance_pairs(features, poses, radius_scale)
    if fd.size == 0:
        raise PreconditionError("no frame has a neighbour inside its radius")
    if fd.size < 2 or np.ptp(fd) == 0 or np.ptp(pd) == 0:
        return CorrelationResult(None, int(fd.size), True)
    r = float(np.corrcoef(fd, pd)[0, 1])
    return CorrelationResult(float(np.clip(r, -1.0, 1.0)), int(fd.size), False)


METRIC_KEYS = ("psnr", "ssim", "lmd", "hs", "correlation")


def write_report(path_stem: str | Path, rows: Sequence[Mapping[str, object]]) -> None:
    """Write ``<stem>.json`` and ``<stem>.csv`` with one row per evaluated video."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{stem}.json").write_text(json.dumps(list(rows), indent=2, sort_keys=True) + "\n")
    keys = sorted({k for r in rows for k in r})
    with open(f"{stem}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)
