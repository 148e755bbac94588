"""Adaptive scalar coding of hidden Markov sources by state-belief tracking.

Encoder and decoder both keep a belief over the hidden state, computed only
from transmitted quantizer cells.  For every sample the belief picks the
nearest class from a trained bank; that class codebook is refined by a Lloyd
iteration on the belief's emission mixture and used to code the sample.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2

from . import _kernels as K
from .hmm import HmmModel, predict_belief, sample, stationary_distribution
from .quantizer import Codebook, MixturePdf, expected_distortion, lloyd_design

log = logging.getLogger(__name__)

NO_INDICES = np.empty(0, dtype=np.int64)
NO_MASK = np.empty(0, dtype=np.bool_)


@dataclass(frozen=True)
class CodecSystem:
    model: HmmModel
    rate_bits: int
    class_reps: np.ndarray  # T x N
    class_codebooks: tuple
    initial_codebook: Codebook
    online_lloyd_iters: int = 1
    p_loss: float = 0.0  # loss probability the bank was trained for
    history: tuple = field(default=(), compare=False)  # training distortion per round (MSE)

    def __post_init__(self):
        reps = np.ascontiguousarray(self.class_reps, dtype=float)
        object.__setattr__(self, "class_reps", reps)
        object.__setattr__(self, "class_codebooks", tuple(self.class_codebooks))
        if reps.ndim != 2 or reps.shape[1] != self.model.n_states:
            raise ValueError("class representatives must be T x N")
        if len(self.class_codebooks) != reps.shape[0]:
            raise ValueError("one codebook per class representative is required")
        for cb in (*self.class_codebooks, self.initial_codebook):
            if cb.rate_bits != self.rate_bits:
                raise ValueError("all codebooks must share the system rate")
        object.__setattr__(self, "_bank", np.stack([cb.codewords for cb in self.class_codebooks]))

    @property
    def n_classes(self) -> int:
        return self.class_reps.shape[0]

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "rate_bits": self.rate_bits,
            "n_classes": self.n_classes,
            "class_reps": self.class_reps.tolist(),
            "class_codebooks": [cb.to_dict() for cb in self.class_codebooks],
            "initial_codebook": self.initial_codebook.to_dict(),
            "online_lloyd_iters": self.online_lloyd_iters,
            "p_loss": self.p_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecSystem":
        sys_ = cls(
            HmmModel.from_dict(d["model"]),
            int(d["rate_bits"]),
            np.asarray(d["class_reps"], dtype=float),
            [Codebook.from_dict(c) for c in d["class_codebooks"]],
            Codebook.from_dict(d["initial_codebook"]),
            int(d.get("online_lloyd_iters", 1)),
            float(d.get("p_loss", 0.0)),
        )
        if sys_.n_classes != d["n_classes"]:
            raise ValueError("n_classes does not match class_reps")
        return sys_

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "CodecSystem":
        with open(path) as f:
            return cls.from_dict(json.load(f))


class TrackResult(NamedTuple):
    indices: np.ndarray
    reconstruction: np.ndarray
    beliefs: np.ndarray  # predictive belief used to code each sample
    cells: np.ndarray  # (lo, hi] of each transmitted cell


def select_class(belief, system: CodecSystem) -> int:
    return int(K.nearest_rep(np.asarray(belief, dtype=float), system.class_reps))


def adapt_codebook(belief, system: CodecSystem) -> Codebook:
    belief = np.asarray(belief, dtype=float)
    pdf = MixturePdf.from_belief(belief, system.model)
    init = system.class_codebooks[select_class(belief, system)]
    return lloyd_design(pdf, system.rate_bits, init, iters=system.online_lloyd_iters, tol=0.0)


def update_belief(belief, cell, system: CodecSystem) -> np.ndarray:
    """Bayes update on the transmitted cell followed by one transition step."""
    model = system.model if isinstance(system, CodecSystem) else system
    lik = np.empty(model.n_states)
    K.cell_masses(model.means, model.sds, float(cell[0]), float(cell[1]), lik)
    post = np.asarray(belief, dtype=float) * lik
    s = post.sum()
    if not s > 0:
        raise ValueError(f"cell {tuple(cell)} has zero probability under every state")
    return predict_belief(post / s, model)


def _args(system: CodecSystem):
    m = system.model
    return (m.means, m.sds, m.transition, m.initial, system.initial_codebook.codewords,
            system.class_reps, system._bank, system.online_lloyd_iters)


def run_encoder(obs, system: CodecSystem, p_loss: float = 0.0) -> TrackResult:
    """Encode ``obs``; ``p_loss`` > 0 uses the expected-belief update for a lossy channel."""
    obs = np.ascontiguousarray(obs, dtype=float)
    mu, sd, A, pi, init, reps, bank, iters = _args(system)
    return TrackResult(*K.track(obs, NO_INDICES, mu, sd, A, pi, init, reps, bank, iters,
                                float(p_loss), NO_MASK))


def run_decoder(indices, system: CodecSystem, received=None) -> TrackResult:
    """Decode indices; with a ``received`` mask, erased samples are concealed."""
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < -1 or idx.max() >= 1 << system.rate_bits):
        raise IndexError("index out of range for the system rate")
    mask = NO_MASK if received is None else np.ascontiguousarray(received, dtype=np.bool_)
    if received is None and idx.size and idx.min() < 0:
        raise IndexError("negative index without an erasure mask")
    mu, sd, A, pi, init, reps, bank, iters = _args(system)
    return TrackResult(*K.track(np.empty(0), idx, mu, sd, A, pi, init, reps, bank, iters, 0.0, mask))


def encode(obs, system: CodecSystem) -> np.ndarray:
    return run_encoder(obs, system).indices


def decode(indices, system: CodecSystem) -> np.ndarray:
    return run_decoder(indices, system).reconstruction


def mse_db(x, y) -> float:
    return 10 * math.log10(float(np.mean((np.asarray(x) - np.asarray(y)) ** 2)))


def prior_codebook(model: HmmModel, rate_bits: int, weights=None) -> Codebook:
    w = model.initial if weights is None else weights
    return lloyd_design(MixturePdf.from_belief(w, model), rate_bits)


def static_distortion(model: HmmModel, rate_bits: int) -> float:
    """Distortion of the best single Lloyd quantizer for the stationary mixture."""
    pdf = MixturePdf.from_belief(stationary_distribution(model), model)
    return expected_distortion(pdf, lloyd_design(pdf, rate_bits))


def cluster_beliefs(beliefs, n_classes: int, rng, retries: int = 5) -> np.ndarray:
    """k-means on belief vectors; gives back fewer classes (with a warning) if some stay empty."""
    data = np.asarray(beliefs, dtype=float)
    T = n_classes
    while T > 1:
        for _ in range(retries):
            try:
                cents, labels = kmeans2(data, T, iter=30, minit="++", seed=rng, missing="raise")
            except ClusterError:
                continue
            cents = np.clip(cents, 0.0, None)
            cents /= cents.sum(axis=1, keepdims=True)
            d = np.sqrt(((cents[:, None] - cents[None]) ** 2).sum(-1)) + np.eye(T)
            if d.min() > 1e-6:
                order = np.lexsort(cents.T[::-1])
                return cents[order]
        warnings.warn(f"belief clustering left empty classes; reducing to {T - 1} classes")
        T -= 1
    return data.mean(axis=0, keepdims=True) / data.mean(axis=0).sum()


def _design_bank(model, reps, rate_bits):
    return [lloyd_design(MixturePdf.from_belief(rep, model), rate_bits) for rep in reps]


def train_system(model: HmmModel, rate_bits: int, n_classes: int = 5, train_len: int = 100_000,
                 em_rounds: int = 10, seed=0, obs=None, p_loss: float = 0.0,
                 online_lloyd_iters: int = 1, min_gain_db: float = 0.01) -> CodecSystem:
    """Iterative design of the class bank.

    Beliefs are first collected open-loop from unquantized data, then from the
    closed-loop codec itself.  Each round clusters the beliefs, designs one
    Lloyd codebook per class representative and re-measures the training
    distortion; the best round is returned.
    """
    rng = np.random.default_rng(seed)
    if obs is None:
        _, obs = sample(model, train_len, rng)
    obs = np.ascontiguousarray(obs, dtype=float)
    initial = prior_codebook(model, rate_bits)
    beliefs = K.forward_predictive(obs, model.means, model.sds, model.transition, model.initial)
    best = None
    history = []
    for r in range(max(em_rounds, 1)):
        reps = cluster_beliefs(beliefs, n_classes, rng)
        books = _design_bank(model, reps, rate_bits)
        system = CodecSystem(model, rate_bits, reps, books, initial, online_lloyd_iters, p_loss)
        res = run_encoder(obs, system, p_loss)
        d = float(np.mean((obs - res.reconstruction) ** 2))
        history.append(d)
        log.debug("training round %d: %.4f dB", r, 10 * math.log10(d))
        improved = best is None or 10 * math.log10(best[0] / d) >= min_gain_db
        if best is None or d < best[0]:
            best = (d, system)
        if not improved:
            break
        beliefs = res.beliefs
    d, system = best
    return CodecSystem(model, rate_bits, system.class_reps, system.class_codebooks, initial,
                       online_lloyd_iters, p_loss, tuple(history))
