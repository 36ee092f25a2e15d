"""Generator, patch discriminator and the two feature encoders.

Tensors are NCHW in [0, 1].  A frame window stacks (r_{t-2}, r_{t-1}, r_t)
along channels, so the generator sees 9 input channels and the
discriminator 12 (window plus the frame being judged).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import ValidationError

WINDOW = 3
NORM_EPS = 1e-5


def instance_norm(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    # hand-rolled so 1x1 maps normalize to 0 instead of raising
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def unit(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


class AdaIN(nn.Module):
    """Instance norm whose per-channel scale and shift come from an embedding."""

    def __init__(self, channels: int, d_embed: int):
        super().__init__()
        self.affine = nn.Linear(d_embed, 2 * channels)
        nn.init.zeros_(self.affine.weight)
        nn.init.zeros_(self.affine.bias)

    def forward(self, x: torch.Tensor, embed: torch.Tensor) -> torch.Tensor:
        scale, shift = self.affine(embed).chunk(2, dim=1)
        return instance_norm(x) * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]


class Generator(nn.Module):
    """U-shaped encoder-decoder with attention and colour heads.

    ``depth`` stride-2 levels down and as many up, skip connections at every
    level, AdaIN in the decoder driven by the identity feature.
    """

    def __init__(self, base: int = 16, depth: int = 4, d_f: int = 64, d_embed: int = 64):
        super().__init__()
        self.base, self.depth, self.d_f, self.d_embed = base, depth, d_f, d_embed
        ch = [base * 2 ** min(i, 3) for i in range(depth + 1)]
        self.stem = nn.Conv2d(3 * WINDOW, ch[0], 3, padding=1)
        self.down = nn.ModuleList(nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1) for i in range(depth))
        self.up = nn.ModuleList(nn.Conv2d(ch[i + 1] + ch[i], ch[i], 3, padding=1) for i in range(depth))
        self.ada = nn.ModuleList(AdaIN(ch[i], d_embed) for i in range(depth))
        self.identity_mlp = nn.Sequential(nn.Linear(d_f, d_embed), nn.ReLU(), nn.Linear(d_embed, d_embed), nn.ReLU())
        self.attention_head = nn.Conv2d(ch[0], 1, 3, padding=1)
        self.colour_head = nn.Conv2d(ch[0], 3, 3, padding=1)

    def config(self) -> dict:
        return {"base": self.base, "depth": self.depth, "d_f": self.d_f, "d_embed": self.d_embed}

    def forward(self, window: torch.Tensor, f: torch.Tensor, force_attention: float | None = None):
        """(B, 9, H, W) window, (B, D_f) identity -> o, A (B,1,H,W), C (B,3,H,W)."""
        r = window[:, -3:]
        embed = self.identity_mlp(f)
        skips = [F.leaky_relu(self.stem(window), 0.2)]
        h = skips[0]
        for conv in self.down:
            h = F.leaky_relu(instance_norm(conv(h)), 0.2)
            skips.append(h)
        for i in reversed(range(self.depth)):
            skip = skips[i]
            h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = F.relu(self.ada[i](self.up[i](torch.cat([h, skip], dim=1)), embed))
        attention = torch.sigmoid(self.attention_head(h))
        colour = torch.sigmoid(self.colour_head(h))
        if force_attention is not None:
            attention = torch.full_like(attention, float(force_attention))
        return composite_attention(attention, r, colour), attention, colour


def composite_attention(attention: torch.Tensor, rendered: torch.Tensor, colour: torch.Tensor) -> torch.Tensor:
    """o = A * r + (1 - A) * C, broadcasting A over channels."""
    return attention * rendered + (1.0 - attention) * colour


class PatchDiscriminator(nn.Module):
    """PatchGAN: ``n_layers`` conv(k4, s2, p1) then a conv(k4, s1, p1) logit layer.

    An H x W input gives a map of side ``floor(H / 2**n_layers) - 1``.
    """

    def __init__(self, base: int = 16, n_layers: int = 3):
        super().__init__()
        self.base, self.n_layers = base, n_layers
        layers: list[nn.Module] = []
        c_in = 3 * (WINDOW + 1)
        for i in range(n_layers):
            c_out = base * 2 ** min(i, 3)
            layers += [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_in = c_out
        layers.append(nn.Conv2d(c_in, 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def config(self) -> dict:
        return {"base": self.base, "n_layers": self.n_layers}

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        k = 2 ** self.n_layers
        return height // k - 1, width // k - 1

    def forward(self, window: torch.Tensor, checking: torch.Tensor) -> torch.Tensor:
        oh, ow = self.output_size(*window.shape[-2:])
        if oh < 1 or ow < 1:
            raise ValidationError(f"frames too small for a {self.n_layers}-layer patch discriminator")
        if checking.shape[-2:] != window.shape[-2:]:
            raise ValidationError("checking frame and window differ in size")
        return self.net(torch.cat([window, checking], dim=1))


class ConvEncoder(nn.Module):
    """Four stride-2 conv layers, global average pool, linear, unit norm.

    With ``centered`` the projection has a running mean subtracted before
    normalization (updated in training mode only).  Untrained conv features
    of similar frames share a large common component; removing it lets the
    directions of the unit vectors reflect what differs between frames.
    """

    def __init__(self, out_dim: int = 64, base: int = 16, centered: bool = False, momentum: float = 0.1):
        super().__init__()
        self.out_dim, self.base, self.centered, self.momentum = out_dim, base, centered, momentum
        ch = [3] + [base * 2 ** min(i, 3) for i in range(4)]
        self.convs = nn.ModuleList(nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1) for i in range(4))
        self.fc = nn.Linear(ch[-1], out_dim)
        self.register_buffer("running_mean", torch.zeros(out_dim))
        self.register_buffer("tracked", torch.zeros((), dtype=torch.long))

    def config(self) -> dict:
        return {"out_dim": self.out_dim, "base": self.base, "centered": self.centered}

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        h = frames
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        z = self.fc(h.mean(dim=(2, 3)))
        if self.centered:
            if self.training:
                with torch.no_grad():
                    weight = 1.0 if self.tracked == 0 else self.momentum
                    self.running_mean.lerp_(z.mean(0).to(self.running_mean.dtype), weight)
                    self.tracked += 1
            z = z - self.running_mean
        return unit(z)


@dataclass
class FrameWindow:
    """Three consecutive rendered frames (H, W, 3) each, oldest first."""

    frames: np.ndarray  # (3, H, W, 3)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[0] != WINDOW or self.frames.shape[-1] != 3:
            raise ValidationError("a window holds 3 frames of shape (H, W, 3)")

    @property
    def current(self) -> np.ndarray:
        return self.frames[-1]

    @classmethod
    def at(cls, frames: np.ndarray, t: int) -> "FrameWindow":
        """Window ending at frame t; the first frame is repeated before the start."""
        idx = [max(0, t - k) for k in range(WINDOW - 1, -1, -1)]
        return cls(np.asarray(frames)[idx])


def windows_tensor(frames: np.ndarray | torch.Tensor, dtype=torch.float32) -> torch.Tensor:
    """(T, H, W, 3) sequence -> (T, 9, H, W) windows with edge replication at the start."""
    x = torch.as_tensor(np.asarray(frames), dtype=dtype).permute(0, 3, 1, 2)
    t = torch.arange(x.shape[0])
    parts = [x[(t - k).clamp_min(0)] for k in range(WINDOW - 1, -1, -1)]
    return torch.cat(parts, dim=1)


def to_nchw(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.asarray(images), dtype=dtype).permute(0, 3, 1, 2)


def to_nhwc(x: torch.Tensor) -> np.ndarray:
    return x.detach().permute(0, 2, 3, 1).double().cpu().numpy()


def _unit_feature(f, tol: float = 1e-6) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64).ravel()
    n = np.linalg.norm(f)
    if n == 0 or not np.isfinite(n):
        raise ValidationError("identity feature must be a finite nonzero vector")
    if abs(n - 1.0) > tol:
        warnings.warn(f"identity feature norm {n:.6g} renormalized to 1")
        f = f / n
    return f


@torch.no_grad()
def generate(generator: Generator, window: FrameWindow, f, force_attention: float | None = None):
    """Refine one frame.  Returns (o_t, A_t, C_t) as (H,W,3), (H,W), (H,W,3) arrays."""
    dtype = next(generator.parameters()).dtype
    x = torch.as_tensor(window.frames, dtype=dtype).permute(0, 3, 1, 2).reshape(1, -1, *window.frames.shape[1:3])
    ft = torch.as_tensor(_unit_feature(f), dtype=dtype)[None]
    o, a, c = generator(x, ft, force_attention)
    return to_nhwc(o)[0], a[0, 0].double().numpy(), to_nhwc(c)[0]


@torch.no_grad()
def discriminate(discriminator: PatchDiscriminator, window: FrameWindow, checking: np.ndarray) -> np.ndarray:
    """Patch logits for one checking frame against its window."""
    dtype = next(discriminator.parameters()).dtype
    x = torch.as_tensor(window.frames, dtype=dtype).permute(0, 3, 1, 2).reshape(1, -1, *window.frames.shape[1:3])
    c = to_nchw(np.asarray(checking)[None], dtype)
    return discriminator(x, c)[0, 0].double().numpy()


@torch.no_grad()
def extract_spatial_feature(encoder: ConvEncoder, frame: np.ndarray) -> np.ndarray:
    dtype = next(encoder.parameters()).dtype
    return encoder(to_nchw(np.asarray(frame)[None], dtype))[0].double().numpy()
