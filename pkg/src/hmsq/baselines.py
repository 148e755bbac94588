"""Comparator codecs (DPCM, finite-state quantizer) and distortion lower bounds."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.cluster.vq import kmeans2

from . import _kernels as K
from .hmm import HmmModel, stationary_distribution
from .quantizer import Codebook, MixturePdf, empirical_lloyd, expected_distortion, lloyd_design

log = logging.getLogger(__name__)

NO_INDICES = np.empty(0, dtype=np.int64)
NO_MASK = np.empty(0, dtype=np.bool_)


# -- DPCM ------------------------------------------------------------------

@dataclass(frozen=True)
class DpcmCodec:
    """First-order closed-loop DPCM: residual e_t = x_t - pred_t is quantized.

    The prediction is ``mean + coeff * (xhat_{t-1} - mean)`` with xhat_0 = mean.
    """

    predictor_coeff: float
    residual_codebook: Codebook
    mean: float = 0.0

    def __post_init__(self):
        if not abs(self.predictor_coeff) < 1:
            raise ValueError("predictor coefficient must satisfy |a| < 1")

    @property
    def rate_bits(self) -> int:
        return self.residual_codebook.rate_bits

    def to_dict(self):
        return {"kind": "dpcm", "predictor_coeff": self.predictor_coeff, "mean": self.mean,
                "residual_codebook": self.residual_codebook.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["predictor_coeff"]), Codebook.from_dict(d["residual_codebook"]), float(d["mean"]))


def lag1_coefficient(x) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    var = float(x @ x)
    if var <= 0:
        raise ValueError("training data has zero variance")
    return float(x[1:] @ x[:-1]) / var


def dpcm_train(train, rate_bits: int, rounds: int = 5) -> DpcmCodec:
    train = np.ascontiguousarray(train, dtype=float)
    a = lag1_coefficient(train)
    m = float(train.mean())
    resid = (train[1:] - m) - a * (train[:-1] - m)
    cb = empirical_lloyd(resid, rate_bits)
    for _ in range(rounds):
        codec = DpcmCodec(a, cb, m)
        _, rec = _dpcm(train, codec)
        pred = np.concatenate([[m], m + a * (rec[:-1] - m)])
        cb = empirical_lloyd(train - pred, rate_bits, init=cb.codewords)
    return DpcmCodec(a, cb, m)


def _dpcm(obs, codec, given=NO_INDICES, received=NO_MASK):
    return K.dpcm_run(obs, given, codec.predictor_coeff, codec.mean, codec.mean,
                      codec.residual_codebook.codewords, received)


def dpcm_encode(obs, codec: DpcmCodec):
    """Returns (indices, encoder-side reconstruction)."""
    return _dpcm(np.ascontiguousarray(obs, dtype=float), codec)


def dpcm_decode(indices, codec: DpcmCodec, received=None) -> np.ndarray:
    """Decoder; lost residuals (``received`` False) are taken as zero."""
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    mask = NO_MASK if received is None else np.ascontiguousarray(received, dtype=np.bool_)
    if mask.size == 0 and idx.size and (idx.min() < 0 or idx.max() >= len(codec.residual_codebook)):
        raise IndexError("index out of range")
    return _dpcm(np.empty(0), codec, idx, mask)[1]


# -- finite-state quantizer --------------------------------------------------

@dataclass(frozen=True)
class FsqCodec:
    """Finite-state quantizer: the next state is ``next_state[state, index]``."""

    codebooks: tuple
    next_state: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "codebooks", tuple(self.codebooks))
        ns = np.ascontiguousarray(self.next_state, dtype=np.int64)
        object.__setattr__(self, "next_state", ns)
        Kq = len(self.codebooks)
        if ns.shape != (Kq, len(self.codebooks[0])) or ns.min() < 0 or ns.max() >= Kq:
            raise ValueError("next-state table does not match the codebooks")
        object.__setattr__(self, "_books", np.stack([c.codewords for c in self.codebooks]))
        width = max(len(self.codebooks[0]) - 1, 1)
        nb = np.full((Kq, width), np.inf)
        for s, c in enumerate(self.codebooks):
            nb[s, :c.boundaries.size] = c.boundaries
        object.__setattr__(self, "_bounds", nb if len(self.codebooks[0]) > 1 else np.empty((Kq, 0)))
        if len(_reachable(ns)) < Kq:
            warnings.warn("some FSQ states are unreachable from state 0")

    @property
    def n_states_q(self) -> int:
        return len(self.codebooks)

    @property
    def rate_bits(self) -> int:
        return self.codebooks[0].rate_bits

    def to_dict(self):
        return {"kind": "fsq", "codebooks": [c.to_dict() for c in self.codebooks],
                "next_state": self.next_state.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls([Codebook.from_dict(c) for c in d["codebooks"]], np.asarray(d["next_state"]))


def _reachable(ns):
    seen = {0}
    stack = [0]
    while stack:
        s = stack.pop()
        for t in ns[s]:
            if int(t) not in seen:
                seen.add(int(t))
                stack.append(int(t))
    return seen


def fsq_encode(obs, codec: FsqCodec):
    """Returns (indices, reconstruction, encoder state per sample)."""
    return K.fsq_run(np.ascontiguousarray(obs, dtype=float), NO_INDICES, codec._books,
                     codec._bounds, codec.next_state)


def fsq_decode(indices, codec: FsqCodec, received=None):
    """Decoder; returns (reconstruction, states).

    Erased indices are replaced by the index whose codeword is closest to the
    state's mean reconstruction, which both conceals the sample and picks the
    next state.
    """
    idx = np.array(indices, dtype=np.int64)
    if received is not None:
        lost = ~np.asarray(received, dtype=bool)
        if lost.any():
            return _fsq_decode_lossy(idx, lost, codec)
    if idx.size and (idx.min() < 0 or idx.max() >= len(codec.codebooks[0])):
        raise IndexError("index out of range")
    _, rec, states = K.fsq_run(np.empty(0), idx, codec._books, codec._bounds, codec.next_state)
    return rec, states


def _fsq_decode_lossy(idx, lost, codec):
    books = codec._books
    fill = np.array([int(np.argmin(np.abs(b - b.mean()))) for b in books])
    rec = np.empty(idx.size)
    states = np.empty(idx.size, dtype=np.int64)
    s = 0
    for t in range(idx.size):
        states[t] = s
        k = fill[s] if lost[t] else idx[t]
        rec[t] = books[s, k]
        s = codec.next_state[s, k]
    return rec, states


def _route_lloyd(x, states, Kq, rate_bits, prev=None):
    books = []
    for s in range(Kq):
        xs = x[states == s]
        init = None if prev is None else prev[s].codewords
        if xs.size < 4 * (1 << rate_bits):
            books.append(prev[s] if prev is not None else empirical_lloyd(x, rate_bits))
        else:
            books.append(empirical_lloyd(xs, rate_bits, iters=30, init=init))
    return books


def _best_successors(x, states, idx, books, Kq, nsym):
    """For every (state, index), the state whose codebook best codes the following sample."""
    nxt = x[1:]
    cost = np.empty((Kq, nxt.size))
    for s, cb in enumerate(books):
        q = cb.codewords[np.searchsorted(cb.boundaries, nxt, side="left")]
        cost[s] = (nxt - q) ** 2
    key = states[:-1] * nsym + idx[:-1]
    table = np.zeros((Kq * nsym, Kq))
    for s in range(Kq):
        table[:, s] = np.bincount(key, weights=cost[s], minlength=Kq * nsym)
    counts = np.bincount(key, minlength=Kq * nsym)
    return table, counts


def fsq_train(train, n_states_q: int, rate_bits: int, rounds: int = 10, seed=0,
              min_gain_db: float = 0.01) -> FsqCodec:
    """Alternating design of per-state codebooks and the next-state table."""
    x = np.ascontiguousarray(train, dtype=float)
    nsym = 1 << rate_bits
    rng = np.random.default_rng(seed)
    Kq = n_states_q
    if Kq == 1:
        cb = empirical_lloyd(x, rate_bits)
        return FsqCodec([cb], np.zeros((1, nsym), dtype=np.int64))
    cents, labels = kmeans2(x[:-1, None], Kq, minit="++", seed=rng, iter=50)
    cents = cents[:, 0]
    states = np.concatenate([[0], labels])
    Kq = _merge_empty(states, Kq)
    books = _route_lloyd(x, states, Kq, rate_bits)
    ns = np.array([[int(np.argmin(np.abs(cents[:Kq] - c))) for c in cb.codewords] for cb in books])
    codec = FsqCodec(books, ns)
    idx, rec, states = fsq_encode(x, codec)
    best_d = float(np.mean((x - rec) ** 2))
    best = codec
    for r in range(rounds):
        books = _route_lloyd(x, states, Kq, rate_bits, codec.codebooks)
        cand = FsqCodec(books, codec.next_state)
        idx, _, states = fsq_encode(x, cand)
        table, counts = _best_successors(x, states, idx, books, Kq, nsym)
        ns = np.where(counts[:, None] > 0, table, np.inf).argmin(axis=1).reshape(Kq, nsym)
        ns = np.where(counts.reshape(Kq, nsym) > 0, ns, cand.next_state)
        codec = FsqCodec(books, ns)
        idx, rec, states = fsq_encode(x, codec)
        d = float(np.mean((x - rec) ** 2))
        log.debug("fsq round %d: %.4f dB", r, 10 * math.log10(d))
        gain = 10 * math.log10(best_d / d)
        if d < best_d:
            best, best_d = codec, d
        if gain < min_gain_db:
            break
    return best


def _merge_empty(states, Kq):
    counts = np.bincount(states, minlength=Kq)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        warnings.warn(f"{empty.size} FSQ states are empty; merging them")
        keep = np.flatnonzero(counts > 0)
        remap = np.zeros(Kq, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        states[:] = remap[states]
        return keep.size
    return Kq


# -- bounds --------------------------------------------------------------------

def _restart_lloyd(pdf, rate_bits, restarts, rng):
    best = lloyd_design(pdf, rate_bits)
    best_d = expected_distortion(pdf, best)
    n = 1 << rate_bits
    for _ in range(restarts - 1):
        pts = np.sort(pdf.sample(n, rng))
        if np.any(np.diff(pts) <= 0):
            continue
        cb = lloyd_design(pdf, rate_bits, Codebook(pts, rate_bits), iters=2000)
        d = expected_distortion(pdf, cb)
        if d < best_d:
            best, best_d = cb, d
    return best, best_d


def bound_switched(model: HmmModel, rate_bits: int, restarts: int = 20, seed=0) -> float:
    """Distortion of a genie-aided switched quantizer that knows the previous state."""
    rho = stationary_distribution(model)
    rng = np.random.default_rng(seed)
    total = 0.0
    for m in range(model.n_states):
        pdf = MixturePdf.from_belief(model.transition[m], model)
        _, d = _restart_lloyd(pdf, rate_bits, restarts, rng)
        total += rho[m] * d
    return total


def clean_history_beliefs(model: HmmModel, obs) -> np.ndarray:
    obs = np.ascontiguousarray(obs, dtype=float)
    return K.forward_predictive(obs, model.means, model.sds, model.transition, model.initial)


def bound_clean_history(model: HmmModel, rate_bits: int, obs, iters: int = 200,
                        tol: float = 1e-9) -> float:
    """MSE when every sample is coded with the converged Lloyd quantizer for the
    belief computed from the unquantized past."""
    obs = np.ascontiguousarray(obs, dtype=float)
    beliefs = clean_history_beliefs(model, obs)
    # the codebook depends on the belief only, so visit samples in belief
    # order and each warm start is already close to converged
    order = np.lexsort(beliefs.T[::-1])
    rec = K.clean_history_run(obs[order], np.ascontiguousarray(beliefs[order]), model.means,
                              model.sds, rate_bits, iters, tol)
    return float(np.mean((obs[order] - rec) ** 2))


# -- scalable DPCM baseline ------------------------------------------------

class ScalableDpcm(NamedTuple):
    base: DpcmCodec
    enh_codebook: Codebook


def scalable_dpcm_train(train, r12: int, r2: int) -> ScalableDpcm:
    """DPCM base layer plus a Lloyd quantizer for the base reconstruction error."""
    base = dpcm_train(train, r12)
    _, rec = dpcm_encode(train, base)
    return ScalableDpcm(base, empirical_lloyd(np.asarray(train) - rec, r2))


def scalable_dpcm_run(obs, codec: ScalableDpcm):
    """Returns (base indices, enhancement indices, base reconstruction, enhanced reconstruction)."""
    bidx, brec = dpcm_encode(obs, codec.base)
    err = np.asarray(obs, dtype=float) - brec
    cb = codec.enh_codebook
    eidx = np.searchsorted(cb.boundaries, err, side="left")
    return bidx, eidx, brec, brec + cb.codewords[eidx]


def save_codec(codec, path):
    with open(path, "w") as f:
        json.dump(codec.to_dict(), f)


def load_codec(path):
    with open(path) as f:
        d = json.load(f)
    return {"dpcm": DpcmCodec, "fsq": FsqCodec}[d["kind"]].from_dict(d)
