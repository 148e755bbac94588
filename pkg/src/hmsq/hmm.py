"""Hidden Markov models with scalar Gaussian or discrete emissions."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.sparse.csgraph import connected_components

from . import _kernels as K

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6


class NumericalImpossibility(ValueError):
    """An observation has zero probability under every state."""

    def __init__(self, step: int):
        super().__init__(f"observation at step {step} has zero probability under the model")
        self.step = step


@dataclass(frozen=True)
class GaussianEmissions:
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        if self.means.shape != self.variances.shape or self.means.ndim != 1:
            raise ValueError("means and variances must be 1-D of equal length")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def sds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def likelihoods(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """Density matrix shifted per step, plus the log shift that was removed."""
        x = np.asarray(obs, dtype=float)[:, None]
        logp = -0.5 * (x - self.means) ** 2 / self.variances - 0.5 * np.log(2 * np.pi * self.variances)
        shift = logp.max(axis=1)
        return np.maximum(np.exp(logp - shift[:, None]), K.DENSITY_FLOOR), shift


@dataclass(frozen=True)
class DiscreteEmissions:
    probs: np.ndarray  # N x M, row-stochastic

    def __post_init__(self):
        B = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", B)
        if B.ndim != 2 or np.any(B < 0) or np.any(np.abs(B.sum(axis=1) - 1) > 1e-12):
            raise ValueError("emission matrix must be row-stochastic")

    def likelihoods(self, obs) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(obs, dtype=int)
        return np.ascontiguousarray(self.probs[:, idx].T), np.zeros(len(idx))


Emissions = Union[GaussianEmissions, DiscreteEmissions]


@dataclass(frozen=True)
class HmmModel:
    """Parameter set (A, emissions, pi) of an N-state hidden Markov source.

    ``transition[i, j]`` is the probability of moving from state i to state j.
    """

    transition: np.ndarray
    initial: np.ndarray
    emissions: Emissions

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.transition, dtype=float))
        pi = np.atleast_1d(np.asarray(self.initial, dtype=float))
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "initial", pi)
        N = pi.shape[0]
        if A.shape != (N, N):
            raise ValueError(f"transition must be {N}x{N}, got {A.shape}")
        if np.any(A < 0) or np.any(A > 1) or np.any(np.abs(A.sum(axis=1) - 1) > 1e-12):
            raise ValueError("transition matrix must be row-stochastic")
        if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        n_em = (self.emissions.means.shape[0] if isinstance(self.emissions, GaussianEmissions)
                else self.emissions.probs.shape[0])
        if n_em != N:
            raise ValueError("emissions do not match the number of states")

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    @property
    def means(self) -> np.ndarray:
        return self.emissions.means

    @property
    def sds(self) -> np.ndarray:
        return self.emissions.sds

    @classmethod
    def gaussian(cls, means, variances, transition, initial=None) -> "HmmModel":
        means = np.asarray(means, dtype=float)
        if initial is None:
            initial = np.full(len(means), 1.0 / len(means))
        return cls(transition, initial, GaussianEmissions(means, variances))

    @classmethod
    def two_state(cls, switch: float, mean: float = 1.5, variance: float = 1.0) -> "HmmModel":
        """Symmetric two-state source with means -mean/+mean and switching probability ``switch``."""
        A = np.array([[1 - switch, switch], [switch, 1 - switch]])
        return cls.gaussian([-mean, mean], [variance, variance], A)

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        if not isinstance(self.emissions, GaussianEmissions):
            raise TypeError("only Gaussian models have a file format")
        return {
            "n_states": self.n_states,
            "pi": self.initial.tolist(),
            "A": self.transition.tolist(),
            "emissions": {
                "kind": "gaussian",
                "means": self.emissions.means.tolist(),
                "vars": self.emissions.variances.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        em = d["emissions"]
        if em.get("kind") != "gaussian":
            raise ValueError(f"unsupported emission kind {em.get('kind')!r}")
        model = cls(d["A"], d["pi"], GaussianEmissions(em["means"], em["vars"]))
        if model.n_states != d["n_states"]:
            raise ValueError("n_states does not match parameter shapes")
        return model

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "HmmModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


class ForwardState(NamedTuple):
    scaled_alpha: np.ndarray  # T x N, each row sums to 1
    log_likelihood_accum: np.ndarray  # running sum of log scale factors


class BackwardState(NamedTuple):
    scaled_beta: np.ndarray
    log_scale: np.ndarray  # beta_t = scaled_beta_t * exp(log_scale[t])


def _emission_matrix(model: HmmModel, obs):
    if len(obs) == 0:
        raise ValueError("observation sequence is empty")
    return model.emissions.likelihoods(obs)


def _forward(model, obs):
    B, shift = _emission_matrix(model, obs)
    alpha, scales, bad = K.scaled_forward(B, model.transition, model.initial)
    if bad >= 0:
        raise NumericalImpossibility(bad)
    return alpha, scales, shift, B


def forward(model: HmmModel, obs) -> tuple[ForwardState, float]:
    alpha, scales, shift, _ = _forward(model, obs)
    acc = np.cumsum(np.log(scales) + shift)
    return ForwardState(alpha, acc), float(acc[-1])


def backward(model: HmmModel, obs) -> BackwardState:
    alpha, scales, shift, B = _forward(model, obs)
    beta = K.scaled_backward(B, model.transition, scales)
    logc = np.log(scales) + shift
    tail = np.concatenate([np.cumsum(logc[::-1])[::-1][1:], [0.0]])
    return BackwardState(beta, tail)


def gamma(model: HmmModel, obs) -> np.ndarray:
    """Smoothed posteriors P(q_t = S_i | O_1..O_T), one row per step."""
    alpha, scales, _, B = _forward(model, obs)
    beta = K.scaled_backward(B, model.transition, scales)
    g = alpha * beta
    s = g.sum(axis=1)
    bad = np.flatnonzero(~(s > 0))
    if bad.size:
        raise NumericalImpossibility(int(bad[0]))
    return g / s[:, None]


def predict_belief(posterior, model: HmmModel) -> np.ndarray:
    """One-step-ahead belief: p_i = sum_j posterior_j * a_ji."""
    p = np.asarray(posterior, dtype=float) @ model.transition
    return p / p.sum()


def stationary_distribution(model: HmmModel) -> np.ndarray:
    A = model.transition
    n_comp, _ = connected_components(A > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ValueError("transition matrix is reducible; no unique stationary distribution")
    # irreducible => one-dimensional null space; take the smallest singular vector
    _, _, vt = np.linalg.svd(A.T - np.eye(A.shape[0]))
    rho = np.abs(vt[-1])
    return rho / rho.sum()


def sample(model: HmmModel, length: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    N = model.n_states
    cum = np.cumsum(model.transition, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(length)
    states = np.empty(length, dtype=np.int64)
    states[0] = min(np.searchsorted(np.cumsum(model.initial), u[0], side="right"), N - 1)
    K.sample_chain(cum, u, states)
    if isinstance(model.emissions, GaussianEmissions):
        obs = model.means[states] + model.sds[states] * rng.standard_normal(length)
    else:
        B = np.cumsum(model.emissions.probs, axis=1)
        v = rng.random(length)
        obs = np.array([min(np.searchsorted(B[s], x, side="right"), B.shape[1] - 1)
                        for s, x in zip(states, v)], dtype=np.int64)
    return states, obs


def fit(obs: Sequence, n_states: int, emission_kind: str = "gaussian", seed=0,
        max_iters: int = 200, tol: float = 1e-8, n_symbols: int | None = None,
        retries: int = 3) -> HmmModel:
    """Baum-Welch estimate of an HMM (k-means initialization, EM to convergence)."""
    return fit_trace(obs, n_states, emission_kind, seed, max_iters, tol, n_symbols, retries)[0]


def fit_trace(obs, n_states, emission_kind="gaussian", seed=0, max_iters=200, tol=1e-8,
              n_symbols=None, retries=3):
    """Like :func:`fit` but also returns the per-iteration log-likelihoods."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    obs = np.asarray(obs)
    if len(obs) < 2 * n_states:
        raise ValueError("too few observations for the requested number of states")
    rng = np.random.default_rng(seed)
    for attempt in range(retries + 1):
        model = _init_model(obs, n_states, emission_kind, rng, n_symbols, perturb=attempt > 0)
        try:
            return _baum_welch(model, obs, max_iters, tol)
        except _EmptyState as e:
            log.warning("state %d lost all responsibility; restarting (attempt %d)", e.args[0], attempt + 1)
    raise RuntimeError(f"Baum-Welch failed after {retries} restarts: a state collapsed")


class _EmptyState(Exception):
    pass


def _init_model(obs, N, kind, rng, n_symbols, perturb):
    A = np.full((N, N), 1.0 / N)
    pi = np.full(N, 1.0 / N)
    if kind == "gaussian":
        x = obs.astype(float)
        if N == 1:
            means = np.array([x.mean()])
        else:
            means, _ = kmeans2(x[:, None], N, minit="++", seed=rng, iter=30)
            means = np.sort(means[:, 0])
        if perturb:
            means = means + 0.1 * x.std() * rng.standard_normal(N)
        return HmmModel(A, pi, GaussianEmissions(means, np.full(N, max(x.var(), VAR_FLOOR))))
    if kind == "discrete":
        M = n_symbols or int(obs.max()) + 1
        B = rng.random((N, M)) + 1.0
        return HmmModel(A, pi, DiscreteEmissions(B / B.sum(axis=1, keepdims=True)))
    raise ValueError(f"unknown emission kind {kind!r}")


def _baum_welch(model, obs, max_iters, tol):
    lls = []
    for it in range(max_iters):
        alpha, scales, shift, B = _forward(model, obs)
        ll = float(np.sum(np.log(scales) + shift))
        lls.append(ll)
        if len(lls) > 1 and lls[-1] - lls[-2] <= tol * abs(lls[-2]):
            break
        beta = K.scaled_backward(B, model.transition, scales)
        g = alpha * beta
        g /= g.sum(axis=1, keepdims=True)
        occ = g.sum(axis=0)
        if np.any(occ < 1e-10):
            raise _EmptyState(int(np.argmin(occ)))
        xi = K.xi_sum(alpha, beta, B, model.transition, scales)
        A = xi / xi.sum(axis=1, keepdims=True)
        pi = g[0] / g[0].sum()
        if isinstance(model.emissions, GaussianEmissions):
            x = obs.astype(float)
            means = g.T @ x / occ
            var = np.maximum((g * (x[:, None] - means) ** 2).sum(axis=0) / occ, VAR_FLOOR)
            em = GaussianEmissions(means, var)
        else:
            M = model.emissions.probs.shape[1]
            counts = np.zeros((model.n_states, M))
            for k in range(M):
                counts[:, k] = g[obs == k].sum(axis=0)
            em = DiscreteEmissions(counts / counts.sum(axis=1, keepdims=True))
        model = HmmModel(_fix_rows(A), _fix_rows(pi[None])[0], em)
    return model, np.array(lls)


def _fix_rows(M):
    # exact row sums for the constructor's 1e-12 check
    M = np.clip(M, 0.0, 1.0)
    M = M / M.sum(axis=1, keepdims=True)
    M[:, -1] = 1.0 - M[:, :-1].sum(axis=1)
    return np.clip(M, 0.0, 1.0)
