"""Alternating memory / discriminator / generator training and sequence refinement."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .. import container
from ..errors import PreconditionError, TrainingDiverged, ValidationError
from .losses import LAMBDA_L1, LAMBDA_MASK, LAMBDA_TV, discriminator_loss, generator_loss
from .memory import MemoryBank, memory_retrieve, memory_update, smooth_retrieved, threshold_triplet_loss
from .networks import ConvEncoder, Generator, PatchDiscriminator, to_nchw, to_nhwc, windows_tensor

log = logging.getLogger(__name__)


@dataclass
class RefinerConfig:
    base: int = 16
    depth: int = 4
    disc_layers: int = 2
    d_f: int = 64
    d_s: int = 64
    encoder_base: int = 16
    capacity: int = 64
    tau: float = 0.5
    margin: float = 0.2
    lr: float = 2e-4
    epochs: int = 20
    batch_size: int = 8
    lambda1: float = LAMBDA_L1
    lambda2: float = LAMBDA_MASK
    lambda3: float = LAMBDA_TV
    separation_weight: float = 1.0
    smoothing_window: int = 3
    seed: int = 0
    checkpoint_path: str | None = None
    loss_csv_path: str | None = None


@dataclass
class PairedSequence:
    """Rendered and real frames of one identity; ``real[0]`` is the identity reference."""

    rendered: np.ndarray   # (T, H, W, 3)
    real: np.ndarray       # (T, H, W, 3)
    identity: int

    def __post_init__(self):
        self.rendered = np.asarray(self.rendered, dtype=np.float64)
        self.real = np.asarray(self.real, dtype=np.float64)
        if self.rendered.shape != self.real.shape or self.rendered.ndim != 4:
            raise ValidationError("rendered and real frames must both be (T, H, W, 3)")
        if self.rendered.shape[0] == 0:
            raise PreconditionError("empty sequence")


class Refiner(nn.Module):
    def __init__(self, cfg: RefinerConfig | None = None):
        super().__init__()
        cfg = cfg or RefinerConfig()
        self.cfg = cfg
        self.generator = Generator(cfg.base, cfg.depth, cfg.d_f)
        self.discriminator = PatchDiscriminator(cfg.base, cfg.disc_layers)
        self.identity_encoder = ConvEncoder(cfg.d_f, cfg.encoder_base)
        self.spatial_encoder = ConvEncoder(cfg.d_s, cfg.encoder_base, centered=True)

    def new_bank(self) -> MemoryBank:
        return MemoryBank(self.cfg.capacity, self.cfg.d_s, self.cfg.d_f)


def separation_loss(features: torch.Tensor, labels: Sequence[int]) -> torch.Tensor:
    """Mean positive cosine between identity features of different identities."""
    labels = torch.as_tensor(list(labels))
    cos = features @ features.T
    other = labels[:, None] != labels[None, :]
    if not other.any():
        return features.sum() * 0.0
    return torch.relu(cos[other]).mean()


def _stack(sequences: Sequence[PairedSequence], dtype):
    windows = torch.cat([windows_tensor(s.rendered, dtype) for s in sequences])
    real = torch.cat([to_nchw(s.real, dtype) for s in sequences])
    owner = torch.cat([torch.full((len(s.rendered),), i, dtype=torch.long) for i, s in enumerate(sequences)])
    refs = torch.cat([to_nchw(s.real[:1], dtype) for s in sequences])
    return windows, real, owner, refs


def _write_history(path: str, history: list[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(history[0]))
        w.writeheader()
        w.writerows(history)


def rebuild_bank(model: Refiner, sequences: Sequence[PairedSequence], tau: float | None = None) -> MemoryBank:
    """Fresh bank filled with every frame's (spatial key, identity value) under the current encoders."""
    tau = model.cfg.tau if tau is None else tau
    model.eval()
    dtype = next(model.parameters()).dtype
    bank = model.new_bank()
    with torch.no_grad():
        for s in sequences:
            v = model.identity_encoder(to_nchw(s.real[:1], dtype))[0].double().numpy()
            q = model.spatial_encoder(to_nchw(s.rendered, dtype)).double().numpy()
            for qi in q:
                memory_update(bank, qi / np.linalg.norm(qi), v / np.linalg.norm(v), tau)
    return bank


def train_refiner(model: Refiner, bank: MemoryBank, sequences: Sequence[PairedSequence],
                  cfg: RefinerConfig | None = None) -> tuple[Refiner, MemoryBank, list[dict]]:
    """Per batch: memory update with the triplet step, one D step, one G step.

    The bank is rebuilt with the final encoders after the last epoch.
    Returns the model, the bank and per-epoch mean losses.
    """
    if len(sequences) == 0:
        raise PreconditionError("empty paired corpus")
    cfg = cfg or model.cfg
    if cfg.epochs == 0:
        return model, bank, []
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model.train()
    dtype = next(model.parameters()).dtype
    windows, real, owner, refs = _stack(sequences, dtype)
    labels = [s.identity for s in sequences]

    opt_g = torch.optim.Adam(list(model.generator.parameters()) + list(model.identity_encoder.parameters()),
                             lr=cfg.lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(model.discriminator.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    opt_s = torch.optim.Adam(model.spatial_encoder.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    good = copy.deepcopy(model.state_dict())
    history = []
    for epoch in range(1, cfg.epochs + 1):
        sums = {"generator": 0.0, "discriminator": 0.0, "triplet": 0.0}
        order = torch.randperm(windows.shape[0], generator=gen)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            win, gt, who = windows[idx], real[idx], owner[idx]

            # (1) memory: triplet step on the spatial encoder, then write the pairs
            q = model.spatial_encoder(win[:, -3:])
            with torch.no_grad():
                v_all = model.identity_encoder(refs)
            v = v_all[who].double().numpy()
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            trip = threshold_triplet_loss(bank, q, v, cfg.tau, cfg.margin)
            if trip.requires_grad and trip.item() > 0:
                opt_s.zero_grad()
                trip.backward()
                opt_s.step()
            qd = q.detach().double().numpy()
            for qi, vi in zip(qd / np.linalg.norm(qd, axis=1, keepdims=True), v):
                memory_update(bank, qi, vi, cfg.tau)

            # (2) discriminator
            f_all = model.identity_encoder(refs)
            o, a, _ = model.generator(win, f_all[who])
            d_loss = discriminator_loss(model.discriminator(win, gt), model.discriminator(win, o.detach()))
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            # (3) generator and identity encoder
            g_loss = generator_loss(model.discriminator(win, o), o, gt, a, cfg.lambda1, cfg.lambda2, cfg.lambda3)
            g_loss = g_loss + cfg.separation_weight * separation_loss(f_all, labels)
            if not torch.isfinite(g_loss):
                model.load_state_dict(good)
                raise TrainingDiverged(f"generator loss became {g_loss.item()} in epoch {epoch}", good)
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()

            sums["generator"] += g_loss.item()
            sums["discriminator"] += d_loss.item()
            sums["triplet"] += trip.item()
            n_batches += 1
        history.append({"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}})
        log.debug("refiner epoch %d %s", epoch, history[-1])
        good = copy.deepcopy(model.state_dict())
        if cfg.loss_csv_path:
            _write_history(cfg.loss_csv_path, history)
        if cfg.checkpoint_path:
            save_refiner(cfg.checkpoint_path, model, bank)
    bank = rebuild_bank(model, sequences, cfg.tau)
    if cfg.checkpoint_path:
        save_refiner(cfg.checkpoint_path, model, bank)
    return model, bank, history


@torch.no_grad()
def refine_sequence(model: Refiner, bank: MemoryBank, rendered: np.ndarray,
                    window: int | None = None, batch_size: int = 64) -> dict:
    """Refine a rendered sequence using identity features retrieved from ``bank``.

    Returns ``refined`` (T,H,W,3), ``attention`` (T,H,W) and ``features`` (T,D_f).
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    window = model.cfg.smoothing_window if window is None else window
    model.eval()
    dtype = next(model.parameters()).dtype
    frames = to_nchw(rendered, dtype)
    q = torch.cat([model.spatial_encoder(frames[i:i + batch_size])
                   for i in range(0, len(frames), batch_size)]).double().numpy()
    feats = smooth_retrieved(np.stack([memory_retrieve(bank, qi) for qi in q]), window)
    wins = windows_tensor(rendered, dtype)
    f = torch.as_tensor(feats, dtype=dtype)
    outs, atts = [], []
    for i in range(0, len(wins), batch_size):
        o, a, _ = model.generator(wins[i:i + batch_size], f[i:i + batch_size])
        outs.append(to_nhwc(o))
        atts.append(a[:, 0].double().numpy())
    return {"refined": np.concatenate(outs), "attention": np.concatenate(atts), "features": feats}


def save_refiner(path: str | Path, model: Refiner, bank: MemoryBank | None = None) -> None:
    arrays = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"kind": "refiner", "config": asdict(model.cfg)}
    if bank is not None:
        arrays.update({"bank/keys": bank.keys, "bank/values": bank.values,
                       "bank/ages": bank.ages.astype(np.int32)})
        meta["bank"] = {"capacity": bank.capacity, "d_key": bank.d_key, "d_value": bank.d_value,
                        "size": bank.size}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    container.save(path, arrays, meta)


def load_refiner(path: str | Path) -> tuple[Refiner, MemoryBank | None]:
    arrays, meta = container.load(path)
    model = Refiner(RefinerConfig(**meta["config"]))
    model.load_state_dict({k[6:]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith("model/")})
    bank = None
    if "bank" in meta:
        b = meta["bank"]
        bank = MemoryBank(b["capacity"], b["d_key"], b["d_value"], arrays["bank/keys"].astype(np.float64),
                          arrays["bank/values"].astype(np.float64), arrays["bank/ages"].astype(np.int64),
                          b["size"])
    return model, bank
