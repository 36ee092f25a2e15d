"""Pose/coefficient CSV files and 8-bit PNG frames."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .face3d.model import CoefficientSet

POSE_COLUMNS = ("frame", "pitch", "yaw", "roll", "tx", "ty", "tz")


def save_pose_csv(path: str | Path, poses: np.ndarray) -> None:
    poses = np.atleast_2d(np.asarray(poses, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POSE_COLUMNS)
        for t, p in enumerate(poses):
            w.writerow([t] + [repr(float(v)) for v in p])


def load_pose_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != POSE_COLUMNS:
            raise ValueError(f"unexpected pose CSV header {header}")
        rows = [[float(v) for v in row[1:]] for row in reader]
    return np.array(rows, dtype=np.float64).reshape(-1, 6)


def coefficient_columns(d_id: int, d_exp: int, d_tex: int) -> list[str]:
    return (["frame"] + [f"alpha{i}" for i in range(d_id)] + [f"beta{i}" for i in range(d_exp)]
            + [f"delta{i}" for i in range(d_tex)] + [f"gamma{i}" for i in range(27)]
            + list(POSE_COLUMNS[1:]))


def save_coefficients_csv(path: str | Path, coeffs: Sequence[CoefficientSet]) -> None:
    d_id, d_exp, d_tex = coeffs[0].dims
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(coefficient_columns(d_id, d_exp, d_tex))
        for t, c in enumerate(coeffs):
            w.writerow([t] + [repr(float(v)) for v in c.to_vector()])


def load_coefficients_csv(path: str | Path) -> list[CoefficientSet]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d_id = sum(h.startswith("alpha") for h in header)
        d_exp = sum(h.startswith("beta") for h in header)
        d_tex = sum(h.startswith("delta") for h in header)
        return [CoefficientSet.from_vector([float(v) for v in row[1:]], d_id, d_exp, d_tex)
                for row in reader]


def save_expression_pose_csv(path: str | Path, beta: np.ndarray, pose: np.ndarray) -> None:
    beta = np.atleast_2d(beta)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"beta{i}" for i in range(beta.shape[1])] + list(POSE_COLUMNS[1:]))
        for t in range(beta.shape[0]):
            w.writerow([t] + [repr(float(v)) for v in np.r_[beta[t], pose[t]]])


def load_expression_pose_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:-6], data[:, -6:]


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Write an image in [0, 1]; (H, W) grayscale or (H, W, 3) RGB."""
    Image.fromarray(to_uint8(image)).save(path, format="PNG", optimize=False)


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 255.0


def load_png_sequence(folder: str | Path) -> np.ndarray:
    files = sorted(Path(folder).glob("*.png"))
    return np.stack([load_png(f) for f in files]) if files else np.zeros((0,))
