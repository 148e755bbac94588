"""Fixed-rate scalar quantizers designed for (truncated) Gaussian mixtures."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


@dataclass(frozen=True)
class Codebook:
    """Codewords of a midpoint-partition scalar quantizer at ``rate_bits`` bits."""

    codewords: np.ndarray
    rate_bits: int
    boundaries: np.ndarray = field(init=False)

    def __post_init__(self):
        cw = np.ascontiguousarray(self.codewords, dtype=float)
        object.__setattr__(self, "codewords", cw)
        if cw.ndim != 1 or cw.size != 1 << self.rate_bits:
            raise ValueError(f"rate {self.rate_bits} needs {1 << self.rate_bits} codewords, got {cw.size}")
        if np.any(np.diff(cw) <= 0):
            raise ValueError("codewords must be strictly increasing")
        object.__setattr__(self, "boundaries", K.midpoints(cw))

    def __len__(self):
        return self.codewords.size

    def to_dict(self) -> dict:
        return {"codewords": self.codewords.tolist(), "boundaries": self.boundaries.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Codebook":
        cw = np.asarray(d["codewords"], dtype=float)
        cb = cls(cw, int(round(math.log2(cw.size))))
        if "boundaries" in d and not np.array_equal(cb.boundaries, np.asarray(d["boundaries"], dtype=float)):
            raise ValueError("stored boundaries are not the codeword midpoints")
        return cb


@dataclass(frozen=True)
class MixturePdf:
    """Gaussian mixture restricted to ``support``.

    Each component is truncated and renormalized to the support separately,
    so the density is ``sum_j weights_j g_j(x) / Z_j`` on (lo, hi].
    ``normalizer`` is the mass the untruncated mixture puts on the support.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    support: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        lo, hi = map(float, self.support)
        object.__setattr__(self, "support", (lo, hi))
        if not lo < hi:
            raise ValueError("support must satisfy lo < hi")
        if abs(self.weights.sum() - 1) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("weights must be a probability vector")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        w = np.empty_like(self.weights)
        if not K.support_weights(self.weights, self.means, self.sds, lo, hi, w):
            raise ValueError("support has zero probability under every component")
        object.__setattr__(self, "_w", w)

    @classmethod
    def from_belief(cls, belief, model, support=(-math.inf, math.inf)) -> "MixturePdf":
        return cls(belief, model.means, model.emissions.variances, support)

    @property
    def sds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def kernel_weights(self) -> np.ndarray:
        return self._w

    @property
    def normalizer(self) -> float:
        lo, hi = self.support
        m = np.empty_like(self.weights)
        K.cell_masses(self.means, self.sds, lo, hi, m)
        return float(self.weights @ m)

    def _args(self):
        lo, hi = self.support
        return self._w, self.means, self.sds, lo, hi

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        z = (x[..., None] - self.means) / self.sds
        dens = (self._w * np.exp(-0.5 * z * z) / (self.sds * math.sqrt(2 * math.pi))).sum(axis=-1)
        return np.where((x > lo) & (x <= hi), dens, 0.0)

    def sample(self, n, seed=None) -> np.ndarray:
        """Draws by per-component inverse-CDF sampling (truncation respected)."""
        from scipy.stats import truncnorm

        rng = np.random.default_rng(seed)
        lo, hi = self.support
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        out = np.empty(n)
        for j in range(len(self.weights)):
            sel = comp == j
            a = (lo - self.means[j]) / self.sds[j]
            b = (hi - self.means[j]) / self.sds[j]
            out[sel] = truncnorm.rvs(a, b, loc=self.means[j], scale=self.sds[j],
                                     size=int(sel.sum()), random_state=rng)
        return out


def mixture_moments(pdf: MixturePdf) -> tuple[float, float]:
    w, mu, sd, lo, hi = pdf._args()
    m0 = s1 = 0.0
    comps = []
    for j in range(len(mu)):
        if w[j] == 0:
            continue
        m, a1, _ = K.component_moments(mu[j], sd[j], lo, hi, 0.0)
        comps.append((j, m, a1))
        m0 += w[j] * m
        s1 += w[j] * a1
    mean = s1 / m0
    s2 = sum(w[j] * K.component_moments(mu[j], sd[j], lo, hi, mean)[2] for j, _, _ in comps)
    return mean, s2 / m0


def cell_mass(pdf: MixturePdf, lo: float, hi: float) -> float:
    if hi < lo:
        raise ValueError("cell must satisfy lo <= hi")
    w, mu, sd, s_lo, s_hi = pdf._args()
    a, b = max(lo, s_lo), min(hi, s_hi)
    if not b > a:
        return 0.0
    m = np.empty_like(mu)
    K.cell_masses(mu, sd, a, b, m)
    return float(w @ m)


def uniform_codebook(lo: float, hi: float, rate_bits: int) -> Codebook:
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise ValueError("uniform codebook needs a finite interval lo < hi")
    n = 1 << rate_bits
    return Codebook(lo + (hi - lo) * (2 * np.arange(n) + 1) / (2 * n), rate_bits)


def clipped_support(pdf_or_belief, model=None, clip_sigma: float = 6.0, cell=None):
    """Finite version of ``cell``.

    Infinite edges move to the mean -/+ ``clip_sigma`` std of the mixture
    truncated to the cell, so extreme cells get a support matched to their
    own spread rather than to the whole source.
    """
    pdf = pdf_or_belief if isinstance(pdf_or_belief, MixturePdf) else MixturePdf.from_belief(pdf_or_belief, model)
    lo, hi = cell if cell is not None else pdf.support
    w = np.empty_like(pdf.weights)
    return K.clip_cell(pdf.weights, pdf.means, pdf.sds, float(lo), float(hi), float(clip_sigma), w)


def lloyd_design(pdf: MixturePdf, rate_bits: int, init: Codebook | None = None,
                 iters: int = 200, tol: float = 1e-12, repair: bool = True) -> Codebook:
    """Lloyd design of a ``rate_bits`` quantizer for ``pdf``.

    ``tol`` = 0 runs exactly ``iters`` iterations (the online setting).
    """
    cb, _ = lloyd_trace(pdf, rate_bits, init, iters, tol, repair)
    return cb


def lloyd_trace(pdf, rate_bits, init=None, iters=200, tol=1e-12, repair=True):
    """Like :func:`lloyd_design`, also returning the distortion after every iteration."""
    if init is None:
        init = uniform_codebook(*clipped_support(pdf, clip_sigma=3.0), rate_bits)
    if init.rate_bits != rate_bits:
        raise ValueError(f"init codebook has rate {init.rate_bits}, expected {rate_bits}")
    w, mu, sd, lo, hi = pdf._args()
    cw = init.codewords
    trace = [K.distortion(w, mu, sd, lo, hi, cw)]
    for _ in range(iters):
        cw, d, _ = K.lloyd(w, mu, sd, lo, hi, cw, 1, 1e-300, repair)
        trace.append(d)
        if tol > 0 and 0 <= trace[-2] - d <= tol * trace[-2]:
            break
    return Codebook(cw, rate_bits), np.array(trace)


def quantize(x, codebook: Codebook):
    """Cell index of ``x`` (scalar or array); points on a boundary go to the lower cell."""
    return np.searchsorted(codebook.boundaries, x, side="left")


def dequantize(index, codebook: Codebook):
    index = np.asarray(index)
    if np.any(index < 0) or np.any(index >= len(codebook)):
        raise IndexError(f"index out of range for a {len(codebook)}-cell codebook")
    return codebook.codewords[index]


def cell_interval(index: int, codebook: Codebook) -> tuple[float, float]:
    if not 0 <= index < len(codebook):
        raise IndexError(f"index {index} out of range for a {len(codebook)}-cell codebook")
    b = codebook.boundaries
    lo = -math.inf if index == 0 else float(b[index - 1])
    hi = math.inf if index == len(b) else float(b[index])
    return lo, hi


def expected_distortion(pdf: MixturePdf, codebook: Codebook) -> float:
    w, mu, sd, lo, hi = pdf._args()
    return float(K.distortion(w, mu, sd, lo, hi, codebook.codewords))


def empirical_lloyd(samples, rate_bits: int, iters: int = 300, init=None, tol: float = 1e-10) -> Codebook:
    """Lloyd design on a training set (used by the baseline codecs)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = 1 << rate_bits
    if x.size < n:
        raise ValueError("fewer training samples than codewords")
    if init is None:
        cw = np.quantile(x, (np.arange(n) + 0.5) / n)
    else:
        cw = np.asarray(init, dtype=float).copy()
    cs = np.concatenate([[0.0], np.cumsum(x)])
    prev = np.inf
    for _ in range(iters):
        cw = _dedupe(cw, x)
        edges = np.searchsorted(x, K.midpoints(cw), side="right")
        lo = np.concatenate([[0], edges])
        hi = np.concatenate([edges, [x.size]])
        cnt = hi - lo
        sums = cs[hi] - cs[lo]
        new = np.where(cnt > 0, sums / np.maximum(cnt, 1), cw)
        if np.any(cnt == 0):
            new = _split_empty(new, cnt, x, lo, hi)
        new = np.sort(new)
        d = _emp_dist(x, new)
        cw = new
        if np.isfinite(prev) and prev - d <= tol * prev:
            break
        prev = d
    return Codebook(_dedupe(cw, x), rate_bits)


def _emp_dist(x, cw):
    idx = np.searchsorted(K.midpoints(cw), x, side="left")
    return float(np.mean((x - cw[idx]) ** 2))


def _split_empty(cw, cnt, x, lo, hi):
    cw = cw.copy()
    for k in np.flatnonzero(cnt == 0):
        big = int(np.argmax(cnt))
        seg = x[lo[big]:hi[big]]
        q1, q3 = np.quantile(seg, [0.25, 0.75])
        cw[k], cw[big] = q1, q3
        cnt[big] //= 2
        cnt[k] = cnt[big]
    return cw


def _dedupe(cw, x):
    cw = np.sort(cw)
    spread = max(float(x[-1] - x[0]), 1e-9)
    for k in range(1, cw.size):
        if cw[k] <= cw[k - 1]:
            cw[k] = cw[k - 1] + 1e-9 * spread
    return cw
