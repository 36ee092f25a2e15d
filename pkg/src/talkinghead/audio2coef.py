"""Recurrent audio-to-expression/pose regressor and its training loops."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import container
from .errors import PreconditionError, TrainingDiverged, ValidationError

log = logging.getLogger(__name__)

LAMBDA_POSE = 0.2
LAMBDA_POSE_SMOOTH = 0.01
LAMBDA_EXP_SMOOTH = 0.0001


@dataclass
class SequenceSample:
    audio: np.ndarray     # (T, D_mfcc)
    beta: np.ndarray      # (T, D_exp)
    pose: np.ndarray      # (T, 6)

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.pose = np.asarray(self.pose, dtype=np.float64)
        t = self.audio.shape[0]
        if self.beta.shape[0] != t or self.pose.shape[0] != t:
            raise ValidationError("audio, expression and pose lengths differ")
        if self.pose.ndim != 2 or self.pose.shape[1] != 6:
            raise ValidationError("pose targets must be (T, 6)")

    def __len__(self) -> int:
        return self.audio.shape[0]

    def head(self, n: int) -> "SequenceSample":
        return SequenceSample(self.audio[:n], self.beta[:n], self.pose[:n])


class RecurrentMapper(nn.Module):
    """MLP audio encoder -> LSTM -> linear expression and pose heads.

    Inputs are standardized with stored corpus statistics; the pose head
    works in standardized units and :meth:`predict` maps back.
    """

    def __init__(self, d_in: int, d_exp: int = 6, hidden: int = 32, enc_hidden: int = 256):
        super().__init__()
        self.d_in, self.d_exp, self.hidden, self.enc_hidden = d_in, d_exp, hidden, enc_hidden
        self.encoder = nn.Sequential(
            nn.Linear(d_in, enc_hidden), nn.Tanh(),
            nn.Linear(enc_hidden, enc_hidden), nn.Tanh(),
        )
        self.rnn = nn.LSTM(enc_hidden, hidden, batch_first=True)
        self.exp_head = nn.Linear(hidden, d_exp)
        self.pose_head = nn.Linear(hidden, 6)
        self.register_buffer("feat_mean", torch.zeros(d_in))
        self.register_buffer("feat_std", torch.ones(d_in))
        self.register_buffer("pose_mean", torch.zeros(6))
        self.register_buffer("pose_std", torch.ones(6))

    def config(self) -> dict:
        return {"d_in": self.d_in, "d_exp": self.d_exp, "hidden": self.hidden, "enc_hidden": self.enc_hidden}

    def zero_heads(self) -> None:
        for head in (self.exp_head, self.pose_head):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, audio: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, T, D) or (T, D) features -> expression and standardized pose.

        Hidden and cell state start at zero, so frame t only sees frames <= t.
        """
        if torch.isnan(audio).any():
            raise ValidationError("NaN in audio features")
        squeeze = audio.dim() == 2
        x = audio.unsqueeze(0) if squeeze else audio
        if x.shape[1] == 0:
            raise PreconditionError("empty audio sequence")
        x = (x - self.feat_mean) / self.feat_std
        h, _ = self.rnn(self.encoder(x))
        beta, pose = self.exp_head(h), self.pose_head(h)
        if squeeze:
            beta, pose = beta[0], pose[0]
        return beta, pose

    def standardize_pose(self, pose: torch.Tensor) -> torch.Tensor:
        return (pose - self.pose_mean) / self.pose_std

    def destandardize_pose(self, pose: torch.Tensor) -> torch.Tensor:
        return pose * self.pose_std + self.pose_mean

    @torch.no_grad()
    def predict(self, audio: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inference in physical units: (T, D_exp) expression, (T, 6) pose."""
        dtype = next(self.parameters()).dtype
        beta, pose = self.forward(torch.as_tensor(np.asarray(audio), dtype=dtype))
        return beta.double().numpy(), self.destandardize_pose(pose).double().numpy()

    def fit_statistics(self, corpus: Sequence[SequenceSample]) -> None:
        feats = np.concatenate([s.audio for s in corpus])
        poses = np.concatenate([s.pose for s in corpus])
        with torch.no_grad():
            self.feat_mean.copy_(torch.as_tensor(feats.mean(0)))
            self.feat_std.copy_(torch.as_tensor(np.maximum(feats.std(0), 1e-6)))
            self.pose_mean.copy_(torch.as_tensor(poses.mean(0)))
            self.pose_std.copy_(torch.as_tensor(np.maximum(poses.std(0), 1e-6)))


def continuity(seq: torch.Tensor) -> torch.Tensor:
    """Sum over t of squared frame-to-frame differences, averaged over the batch."""
    d = seq[..., 1:, :] - seq[..., :-1, :]
    per_seq = (d ** 2).sum(dim=(-1, -2))
    return per_seq.mean()


def loss(beta_pred, pose_pred, beta_gt, pose_gt, lambda1: float = LAMBDA_POSE,
         lambda2: float = LAMBDA_POSE_SMOOTH, lambda3: float = LAMBDA_EXP_SMOOTH) -> torch.Tensor:
    """Expression MSE + pose MSE + pose and expression continuity penalties."""
    if beta_pred.shape != beta_gt.shape or pose_pred.shape != pose_gt.shape:
        raise ValidationError("prediction and target shapes differ")
    return (torch.mean((beta_gt - beta_pred) ** 2)
            + lambda1 * torch.mean((pose_gt - pose_pred) ** 2)
            + lambda2 * continuity(pose_pred)
            + lambda3 * continuity(beta_pred))


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    seed: int = 0
    lambda1: float = LAMBDA_POSE
    lambda2: float = LAMBDA_POSE_SMOOTH
    lambda3: float = LAMBDA_EXP_SMOOTH
    checkpoint_path: str | None = None
    checkpoint_every: int = 50


def _tensors(sample: SequenceSample, mapper: RecurrentMapper):
    dtype = next(mapper.parameters()).dtype
    audio = torch.as_tensor(sample.audio, dtype=dtype)
    beta = torch.as_tensor(sample.beta, dtype=dtype)
    pose = mapper.standardize_pose(torch.as_tensor(sample.pose, dtype=dtype))
    return audio, beta, pose


def sample_loss(mapper: RecurrentMapper, sample: SequenceSample, cfg: TrainConfig | None = None) -> torch.Tensor:
    cfg = cfg or TrainConfig()
    audio, beta, pose = _tensors(sample, mapper)
    bp, pp = mapper(audio)
    return loss(bp, pp, beta, pose, cfg.lambda1, cfg.lambda2, cfg.lambda3)


@torch.no_grad()
def corpus_loss(mapper: RecurrentMapper, corpus: Sequence[SequenceSample], cfg: TrainConfig | None = None) -> float:
    return float(np.mean([sample_loss(mapper, s, cfg).item() for s in corpus]))


def _fit(mapper: RecurrentMapper, corpus: Sequence[SequenceSample], cfg: TrainConfig) -> list[float]:
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(mapper.parameters(), lr=cfg.lr)
    curve = [corpus_loss(mapper, corpus, cfg)]
    good = copy.deepcopy(mapper.state_dict())
    for epoch in range(1, cfg.epochs + 1):
        for i in torch.randperm(len(corpus), generator=gen).tolist():
            opt.zero_grad()
            value = sample_loss(mapper, corpus[i], cfg)
            if not torch.isfinite(value):
                mapper.load_state_dict(good)
                raise TrainingDiverged(f"loss became {value.item()} at epoch {epoch}", good)
            value.backward()
            opt.step()
        curve.append(corpus_loss(mapper, corpus, cfg))
        if not np.isfinite(curve[-1]):
            mapper.load_state_dict(good)
            raise TrainingDiverged(f"loss became {curve[-1]} after epoch {epoch}", good)
        good = copy.deepcopy(mapper.state_dict())
        if cfg.checkpoint_path and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            save_mapper(cfg.checkpoint_path, mapper)
        log.debug("epoch %d loss %.6g", epoch, curve[-1])
    return curve


def train_general(mapper: RecurrentMapper, corpus: Sequence[SequenceSample],
                  cfg: TrainConfig | None = None) -> tuple[RecurrentMapper, list[float]]:
    """Train on a multi-speaker corpus, one optimizer step per sequence.

    Returns the mapper and the corpus loss before training and after each epoch.
    """
    if len(corpus) == 0:
        raise PreconditionError("empty training corpus")
    cfg = cfg or TrainConfig()
    torch.manual_seed(cfg.seed)
    mapper.fit_statistics(corpus)
    return mapper, _fit(mapper, corpus, cfg)


def finetune(mapper: RecurrentMapper, target: SequenceSample, cfg: TrainConfig | None = None,
             ) -> tuple[RecurrentMapper, list[float]]:
    """Personalize a copy of a trained mapper on one target sequence (all weights free)."""
    if len(target) == 0:
        raise PreconditionError("empty fine-tuning sequence")
    cfg = cfg or TrainConfig(epochs=100, lr=1e-5)
    tuned = copy.deepcopy(mapper)
    return tuned, _fit(tuned, [target], cfg)


def save_mapper(path: str | Path, mapper: RecurrentMapper) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in mapper.state_dict().items()}
    container.save(path, arrays, {"kind": "recurrent_mapper", **mapper.config()})


def load_mapper(path: str | Path) -> RecurrentMapper:
    arrays, meta = container.load(path)
    mapper = RecurrentMapper(meta["d_in"], meta["d_exp"], meta["hidden"], meta["enc_hidden"])
    mapper.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    return mapper
