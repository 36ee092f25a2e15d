"""Key-value memory pairing spatial features (keys) with identity features (values).

Slots fill in index order and are never freed, so the occupied slots are
always ``0 .. size-1``.  Every write resets the written slot's age to 0 and
ages every other occupied slot by one, which keeps ages distinct.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import container
from ..errors import PreconditionError, ValidationError

UNIT_TOL = 1e-6
DEGENERATE_NORM = 1e-8


def _check_unit(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
        raise ValidationError(f"{what} must be unit-norm")
    return x


@dataclass
class MemoryBank:
    capacity: int
    d_key: int
    d_value: int
    keys: np.ndarray = field(default=None, repr=False)
    values: np.ndarray = field(default=None, repr=False)
    ages: np.ndarray = field(default=None, repr=False)
    size: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValidationError("capacity must be at least 1")
        if self.keys is None:
            self.keys = np.zeros((self.capacity, self.d_key))
            self.values = np.zeros((self.capacity, self.d_value))
            self.ages = np.zeros(self.capacity, dtype=np.int64)

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.capacity, self.d_key, self.d_value, self.keys.copy(),
                          self.values.copy(), self.ages.copy(), self.size)

    @property
    def occupied_keys(self) -> np.ndarray:
        return self.keys[:self.size]

    @property
    def occupied_values(self) -> np.ndarray:
        return self.values[:self.size]

    def _write(self, slot: int, key: np.ndarray, value: np.ndarray | None = None) -> None:
        self.ages[:self.size] += 1
        self.keys[slot] = key
        if value is not None:
            self.values[slot] = value
        self.ages[slot] = 0


def nearest_key(bank: MemoryBank, q: np.ndarray) -> int:
    """Slot whose key has the largest cosine with q; lowest index wins ties."""
    return int(np.argmax(bank.occupied_keys @ q))


def memory_update(bank: MemoryBank, q, v_gt, tau: float = 0.5) -> MemoryBank:
    """Merge (q, v_gt) into the nearest slot if its value agrees, else overwrite the oldest.

    An unfilled slot counts as older than any filled one.  Mutates and
    returns ``bank``.
    """
    q = _check_unit(q, "query")
    v = _check_unit(v_gt, "identity value")
    if bank.size > 0:
        k = nearest_key(bank, q)
        if float(bank.values[k] @ v) >= tau:
            merged = bank.keys[k] + q
            n = np.linalg.norm(merged)
            bank._write(k, merged / n if n > DEGENERATE_NORM else q)
            return bank
    if bank.size < bank.capacity:
        slot = bank.size
        bank.size += 1
        bank.ages[slot] = 0   # aged along with the others, then reset below
    else:
        slot = int(np.argmax(bank.ages))
    bank._write(slot, q, v)
    return bank


def memory_retrieve(bank: MemoryBank, q) -> np.ndarray:
    """Identity value paired with the best-matching key."""
    if bank.size == 0:
        raise PreconditionError("memory bank is empty")
    q = np.asarray(q, dtype=np.float64).ravel()
    return bank.values[nearest_key(bank, q)].copy()


def smooth_retrieved(features, window: int = 3) -> np.ndarray:
    """Trailing moving average over ``window`` frames, renormalized.

    Where the average cancels to (near) zero the previous output is reused.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if f.shape[0] == 0:
        raise PreconditionError("no features to smooth")
    if window < 1:
        raise ValidationError("window must be at least 1")
    csum = np.vstack([np.zeros((1, f.shape[1])), np.cumsum(f, axis=0)])
    out = np.empty_like(f)
    for t in range(f.shape[0]):
        lo = max(0, t - window + 1)
        avg = (csum[t + 1] - csum[lo]) / (t + 1 - lo)
        n = np.linalg.norm(avg)
        if n > DEGENERATE_NORM:
            out[t] = avg / n
        elif t > 0:
            out[t] = out[t - 1]
        else:
            raise ValidationError("first feature is zero")
    return out


def triplet_candidates(bank: MemoryBank, q: np.ndarray, v_gt: np.ndarray, tau: float):
    """(positive slot, negative slot) nearest to q on each side of the value threshold; None if absent."""
    if bank.size == 0:
        return None, None
    sim_v = bank.occupied_values @ v_gt
    sim_q = bank.occupied_keys @ q
    pos, neg = np.flatnonzero(sim_v >= tau), np.flatnonzero(sim_v < tau)
    best = lambda idx: int(idx[np.argmax(sim_q[idx])]) if idx.size else None  # noqa: E731
    return best(pos), best(neg)


def threshold_triplet_loss(bank: MemoryBank, q: torch.Tensor, v_gt, tau: float = 0.5,
                           margin: float = 0.2) -> torch.Tensor:
    """max(0, cos(q, k_neg) - cos(q, k_pos) + margin); zero without both candidates.

    ``q`` may be (D,) or (B, D) with ``v_gt`` matching; the batch mean is returned.
    """
    q2 = q.reshape(-1, q.shape[-1])
    v2 = np.atleast_2d(np.asarray(v_gt, dtype=np.float64))
    keys = torch.as_tensor(bank.keys, dtype=q.dtype)
    terms = []
    for i in range(q2.shape[0]):
        p, n = triplet_candidates(bank, q2[i].detach().double().cpu().numpy(), v2[i], tau)
        if p is None or n is None:
            terms.append(q2[i].sum() * 0.0)
            continue
        qi = q2[i]
        cos_p = qi @ keys[p] / qi.norm()
        cos_n = qi @ keys[n] / qi.norm()
        terms.append(torch.clamp(cos_n - cos_p + margin, min=0.0))
    return torch.stack(terms).mean()


def save_bank(path: str | Path, bank: MemoryBank) -> None:
    container.save(path, {"keys": bank.keys, "values": bank.values, "ages": bank.ages.astype(np.int32)},
                   {"kind": "memory_bank", "capacity": bank.capacity, "d_key": bank.d_key,
                    "d_value": bank.d_value, "size": bank.size})


def load_bank(path: str | Path) -> MemoryBank:
    arrays, meta = container.load(path)
    return MemoryBank(meta["capacity"], meta["d_key"], meta["d_value"],
                      arrays["keys"].astype(np.float64), arrays["values"].astype(np.float64),
                      arrays["ages"].astype(np.int64), meta["size"])
