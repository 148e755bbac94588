"""Two-layer scalable coding on top of the tracking codec.

The base layer is the tracking codec unchanged.  The enhancement layer keeps
its own state belief, driven by enhancement cells, and quantizes every sample
inside the base-layer cell with a quantizer designed on the fly for the
truncated emission mixture.  With a lookahead ``L`` >= 1 the enhancement
belief is further conditioned on base cells t .. t+L-1, which the
enhancement coder sees with a latency of L samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .hmm import predict_belief
from .quantizer import Codebook, MixturePdf, clipped_support, lloyd_design, uniform_codebook
from .tracking import CodecSystem, run_decoder, run_encoder

NO_INDICES = np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class ScalableSystem:
    base: CodecSystem
    enh_rate_bits: int
    L: int = 0
    enh_online_lloyd_iters: int = 1
    clip_sigma: float = 6.0
    enh_lloyd_tol: float = 0.0  # > 0 stops the design early once it has converged

    def __post_init__(self):
        if self.enh_rate_bits < 1:
            raise ValueError("enhancement rate must be at least 1 bit")
        if self.L < 0:
            raise ValueError("lookahead must be nonnegative")
        if self.enh_online_lloyd_iters < 1 or self.enh_lloyd_tol < 0:
            raise ValueError("need at least one Lloyd iteration and a nonnegative tolerance")

    @property
    def model(self):
        return self.base.model


class LayeredCell(NamedTuple):
    base_cell: tuple
    enh_cell: tuple


class ScalableStreams(NamedTuple):
    base_indices: np.ndarray
    enh_indices: np.ndarray
    base_reconstruction: np.ndarray
    enh_reconstruction: np.ndarray
    base_cells: np.ndarray
    enh_cells: np.ndarray
    enh_weights: np.ndarray  # state weights of the enhancement pdf at each step

    def layered_cell(self, t: int) -> LayeredCell:
        return LayeredCell(tuple(self.base_cells[t]), tuple(self.enh_cells[t]))


def enh_pdf(enh_belief, base_cell, system: ScalableSystem) -> MixturePdf:
    """Emission mixture with each component truncated to the base cell."""
    return MixturePdf.from_belief(enh_belief, system.model, tuple(base_cell))


def enh_adapt_codebook(enh_belief, base_cell, system: ScalableSystem) -> Codebook:
    pdf = enh_pdf(enh_belief, base_cell, system)
    # the clip only places the uniform start; the design keeps the whole cell
    lo, hi = clipped_support(np.asarray(enh_belief, dtype=float), system.model,
                             system.clip_sigma, cell=base_cell)
    init = uniform_codebook(lo, hi, system.enh_rate_bits)
    return lloyd_design(pdf, system.enh_rate_bits, init, iters=system.enh_online_lloyd_iters,
                        tol=system.enh_lloyd_tol)


def _cell_lik(model, cell):
    lik = np.empty(model.n_states)
    K.cell_masses(model.means, model.sds, float(cell[0]), float(cell[1]), lik)
    return lik


def delayed_enh_belief(enh_history_cells, base_cells_future, system: ScalableSystem) -> np.ndarray:
    """P(q_t | enhancement cells 1..t-1, base cells t..t-1+L).

    ``base_cells_future`` holds the base cells from time t onward; only the
    first ``system.L`` are used (fewer at the end of a stream).
    """
    model = system.model
    window = list(base_cells_future)[:max(system.L, 0)]
    if system.L >= 1 and not window:
        raise ValueError("the base cell at the current time is required")
    belief = model.initial.copy()
    for cell in enh_history_cells:
        post = belief * _cell_lik(model, cell)
        belief = predict_belief(post / post.sum(), model)
    if not window:
        return belief
    beta = np.ones(model.n_states)
    for cell in reversed(window[1:]):
        beta = model.transition @ (_cell_lik(model, cell) * beta)
        beta /= beta.sum()
    p = belief * _cell_lik(model, window[0]) * beta
    s = p.sum()
    if not s > 0:
        raise ValueError("delayed belief has zero mass")
    return p / s


def _enh(obs, given, base_cells, system, L):
    m = system.model
    return K.enh_layer(obs, given, m.means, m.sds, m.transition, m.initial,
                       np.ascontiguousarray(base_cells), system.enh_rate_bits,
                       system.enh_online_lloyd_iters, system.enh_lloyd_tol, system.clip_sigma, L)


def encode_scalable(obs, system: ScalableSystem, L: int | None = None) -> ScalableStreams:
    """Both layers; ``L`` overrides the system lookahead (0 = no delay)."""
    obs = np.ascontiguousarray(obs, dtype=float)
    L = system.L if L is None else L
    base = run_encoder(obs, system.base)
    eidx, erec, ecells, used = _enh(obs, NO_INDICES, base.cells, system, L)
    return ScalableStreams(base.indices, eidx, base.reconstruction, erec, base.cells, ecells, used)


def encode_scalable_delayed(obs, system: ScalableSystem) -> ScalableStreams:
    if system.L < 1:
        raise ValueError("delayed coding needs L >= 1")
    return encode_scalable(obs, system)


def decode_base(base_indices, system: ScalableSystem) -> np.ndarray:
    return run_decoder(base_indices, system.base).reconstruction


def decode_enh(base_indices, enh_indices, system: ScalableSystem, L: int | None = None):
    """Enhancement reconstruction; returns (reconstruction, enhancement cells)."""
    base_indices = np.asarray(base_indices)
    enh_indices = np.ascontiguousarray(enh_indices, dtype=np.int64)
    if base_indices.shape != enh_indices.shape:
        raise ValueError("base and enhancement layers differ in length")
    if enh_indices.size and (enh_indices.min() < 0 or enh_indices.max() >= 1 << system.enh_rate_bits):
        raise IndexError("enhancement index out of range")
    base = run_decoder(base_indices, system.base)
    L = system.L if L is None else L
    _, rec, cells, _ = _enh(np.empty(0), enh_indices, base.cells, system, L)
    return rec, cells


def decode_enh_delayed(base_indices, enh_indices, system: ScalableSystem):
    if system.L < 1:
        raise ValueError("delayed coding needs L >= 1")
    return decode_enh(base_indices, enh_indices, system)


def enh_belief_trace(enh_cells, model) -> np.ndarray:
    """Predictive enhancement beliefs implied by a sequence of enhancement cells."""
    out = np.empty((len(enh_cells), model.n_states))
    b = model.initial.copy()
    for t, cell in enumerate(enh_cells):
        out[t] = b
        post = b * _cell_lik(model, cell)
        b = predict_belief(post / post.sum(), model)
    return out


def distortion_db(x, y) -> float:
    return 10 * math.log10(float(np.mean((np.asarray(x) - np.asarray(y)) ** 2)))
