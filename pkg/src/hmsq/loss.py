"""Belief tracking over a lossy packet channel, loss simulation and concealment.

The encoder gets no feedback.  It tracks the expected decoder belief, a
mixture of the received and lost branches weighted by the loss probability.
The decoder follows whichever branch actually happened and conceals lost
samples with the predictive mean.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .hmm import predict_belief
from .tracking import CodecSystem, run_decoder, run_encoder, train_system, update_belief


@dataclass(frozen=True)
class LossChannel:
    loss_prob: float
    seed: int | None = None
    model_kind: str = "iid"

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss probability must lie in [0, 1]")
        if self.model_kind != "iid":
            raise ValueError("only i.i.d. erasures are supported")

    def erasures(self, n: int) -> np.ndarray:
        """Boolean mask of lost packets."""
        return np.random.default_rng(self.seed).random(n) < self.loss_prob


class PacketStream(NamedTuple):
    seq_nos: np.ndarray  # strictly increasing; gaps are erasures
    indices: np.ndarray
    n_total: int

    def received_mask(self) -> np.ndarray:
        self.validate()
        mask = np.zeros(self.n_total, dtype=bool)
        mask[self.seq_nos] = True
        return mask

    def full_indices(self) -> np.ndarray:
        """Indices with -1 at erased positions."""
        out = np.full(self.n_total, -1, dtype=np.int64)
        out[self.seq_nos] = self.indices
        return out

    def validate(self):
        s = np.asarray(self.seq_nos)
        if s.size and (np.any(np.diff(s) <= 0) or s[0] < 0 or s[-1] >= self.n_total):
            raise ValueError("packet sequence numbers are out of order or out of range")


def lossy_update_encoder(belief, cell, p_loss: float, system: CodecSystem) -> np.ndarray:
    if not 0.0 <= p_loss <= 1.0:
        raise ValueError("loss probability must lie in [0, 1]")
    received = update_belief(belief, cell, system)
    lost = predict_belief(belief, system.model)
    p = (1.0 - p_loss) * received + p_loss * lost
    return p / p.sum()


def lossy_update_decoder(belief, cell, system: CodecSystem) -> np.ndarray:
    """``cell`` is the received cell, or None for an erasure."""
    if cell is None:
        return predict_belief(belief, system.model)
    return update_belief(belief, cell, system)


def conceal(belief, system: CodecSystem) -> float:
    """Conditional-mean estimate of a lost sample under the predictive belief."""
    return float(np.asarray(belief, dtype=float) @ system.model.means)


def simulate_loss(indices, channel: LossChannel) -> PacketStream:
    indices = np.asarray(indices, dtype=np.int64)
    keep = ~channel.erasures(indices.size)
    seq = np.flatnonzero(keep).astype(np.int64)
    return PacketStream(seq, indices[keep], indices.size)


def encode_lossy(obs, system: CodecSystem, p_loss: float | None = None) -> np.ndarray:
    p = system.p_loss if p_loss is None else p_loss
    return run_encoder(obs, system, p).indices


def decode_lossy(stream: PacketStream, system: CodecSystem) -> np.ndarray:
    stream.validate()
    return run_decoder(stream.full_indices(), system, stream.received_mask()).reconstruction


def train_lossy_system(model, rate_bits, p_loss, **kw) -> CodecSystem:
    """Class bank trained on encoder-side expected beliefs for ``p_loss``."""
    return train_system(model, rate_bits, p_loss=p_loss, **kw)
