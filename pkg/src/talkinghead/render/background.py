"""Keyframe selection, pose-matched backgrounds and compositing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import PreconditionError, ValidationError
from ..face3d.model import wrap_angle
from .raster import RenderedFrame

TRANSLATION_WEIGHT = 0.1
POSE_BLEND = 0.5


@dataclass
class BackgroundPlate:
    image: np.ndarray       # (H, W, 3)
    source_index: int
    source_pose: np.ndarray  # (6,)


def select_keyframes(poses: np.ndarray, window: int, eps: float = 1e-9) -> np.ndarray:
    """Frames where some Euler angle peaks or bottoms out inside a centred window.

    Always includes the first and last frame.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=np.float64))
    n = poses.shape[0]
    if n == 0:
        raise PreconditionError("empty pose sequence")
    half = max(int(window), 1) // 2
    keys = {0, n - 1}
    for angle in poses[:, :3].T:
        for t in range(n):
            lo, hi = max(0, t - half), min(n, t + half + 1)
            seg = angle[lo:hi]
            if seg.max() - seg.min() <= eps:
                continue
            if lo + int(np.argmax(seg)) == t or lo + int(np.argmin(seg)) == t:
                keys.add(t)
    return np.array(sorted(keys), dtype=np.int64)


def pose_distance_sq(a, b) -> np.ndarray:
    """Squared matching distance: angles in degrees plus 0.1 x translation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dang = np.degrees(wrap_angle(a[..., :3] - b[..., :3]))
    dtr = a[..., 3:] - b[..., 3:]
    return np.sum(dang ** 2, axis=-1) + TRANSLATION_WEIGHT * np.sum(dtr ** 2, axis=-1)


def match_background(key_pose, video_poses: np.ndarray, video_frames: Sequence[np.ndarray]) -> BackgroundPlate:
    """Input frame whose pose is nearest the query; lowest index wins ties."""
    video_poses = np.atleast_2d(np.asarray(video_poses, dtype=np.float64))
    if video_poses.shape[0] == 0 or len(video_frames) != video_poses.shape[0]:
        raise PreconditionError("need a nonempty input video with one pose per frame")
    d = pose_distance_sq(video_poses, np.asarray(key_pose, dtype=np.float64)[None, :])
    k = int(np.argmin(d))
    return BackgroundPlate(np.asarray(video_frames[k], dtype=np.float64), k, video_poses[k].copy())


def static_background(image: np.ndarray, pose) -> BackgroundPlate:
    """Single-image input: the still image is the background for every frame."""
    return BackgroundPlate(np.asarray(image, dtype=np.float64), 0, np.asarray(pose, dtype=np.float64).copy())


def interpolation_weights(key_indices: Sequence[int], n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """For each frame: the index of its left key (into ``key_indices``) and the weight of the right key."""
    keys = np.asarray(key_indices, dtype=np.int64)
    if keys.size < 2:
        raise PreconditionError("need at least two keyframes")
    if np.any(np.diff(keys) <= 0) or keys[0] != 0 or keys[-1] != n_frames - 1:
        raise ValidationError("keyframes must be strictly increasing and span the sequence")
    t = np.arange(n_frames)
    left = np.clip(np.searchsorted(keys, t, side="right") - 1, 0, keys.size - 2)
    u = (t - keys[left]) / (keys[left + 1] - keys[left])
    return left, u.astype(np.float64)


def interpolate_backgrounds(key_indices: Sequence[int], plates: Sequence[BackgroundPlate],
                            poses: np.ndarray, blend: float = POSE_BLEND):
    """Cross-dissolve key backgrounds over time and pull render poses toward them.

    Returns ``(backgrounds (T, H, W, 3), background poses (T, 6),
    adjusted render poses (T, 6), right-key weights (T,))``.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=np.float64))
    if len(plates) != len(key_indices):
        raise PreconditionError("one plate per keyframe required")
    left, u = interpolation_weights(key_indices, poses.shape[0])
    imgs = np.stack([p.image for p in plates])
    kposes = np.stack([p.source_pose for p in plates])
    w = u[:, None, None, None]
    backgrounds = (1 - w) * imgs[left] + w * imgs[left + 1]
    step = kposes[left + 1] - kposes[left]
    step[:, :3] = wrap_angle(step[:, :3])
    bg_poses = kposes[left] + u[:, None] * step
    adjusted = poses.copy()
    diff = bg_poses - poses
    diff[:, :3] = wrap_angle(diff[:, :3])
    adjusted += blend * diff
    adjusted[:, :3] = wrap_angle(adjusted[:, :3])
    bg_poses[:, :3] = wrap_angle(bg_poses[:, :3])
    return backgrounds, bg_poses, adjusted, u


def composite(rendered: RenderedFrame | np.ndarray, background: BackgroundPlate | np.ndarray,
              mask: np.ndarray | None = None) -> np.ndarray:
    """Face pixels from the render, everything else from the background."""
    if isinstance(rendered, RenderedFrame):
        image, mask = rendered.image, rendered.mask
    else:
        image = rendered
    bg = background.image if isinstance(background, BackgroundPlate) else background
    image, bg = np.asarray(image), np.asarray(bg)
    if image.shape != bg.shape or mask is None or mask.shape != image.shape[:2]:
        raise ValidationError("render, mask and background dimensions differ")
    return np.where(np.asarray(mask)[..., None] > 0, image, bg)
