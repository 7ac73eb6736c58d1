"""Multiplicative-weights sampling distribution (the adaptive, checkpoint-free variant).

Sampled nodes have their weight multiplied by exp(delta * ||g_i||^2 / (n^2 p_i^3)),
and the sampling distribution mixes the normalised weights with uniform:
p_i = (1 - eta) * b * w_i / sum(w) + b * eta / n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import solver
from .errors import NonPositiveProb
from .samplers import make_rng

EXP_CLAMP = 30.0
RENORM_RATIO = 1e12
RENORM_MAX = 1e100
WEIGHT_FLOOR = 1e-200  # far below the mixing floor b * eta / n, so p is unaffected


def _renormalise(w: np.ndarray) -> np.ndarray:
    top = w.max()
    if top > RENORM_MAX or top > RENORM_RATIO * w.min():
        w = np.maximum(w / top, WEIGHT_FLOOR)
    return w


@dataclass
class BanditState:
    weights: np.ndarray
    eta: float
    delta: float
    budget: int
    step: int = 0

    @classmethod
    def uniform(cls, n: int, budget: int, eta: float = 0.4, delta: float = 1e-3) -> "BanditState":
        if not 0 < eta < 0.5:
            raise ValueError("eta must lie in (0, 0.5)")
        if not 1 <= budget <= n:
            raise ValueError("budget must lie in [1, n]")
        return cls(np.ones(n), eta, delta, budget)

    @property
    def n(self) -> int:
        return self.weights.size


def mixed_probs(state: BanditState) -> np.ndarray:
    """The unclipped mixture (1 - eta) b w / sum(w) + b eta / n."""
    w = state.weights
    b, eta, n = state.budget, state.eta, state.n
    return (1 - eta) * b * w / w.sum() + b * eta / n


def current_probs(state: BanditState) -> np.ndarray:
    """Mixture clipped at 1, excess spread proportionally over the unclipped entries."""
    p = mixed_probs(state)
    b = float(state.budget)
    clipped = np.zeros(p.size, dtype=bool)
    for _ in range(p.size):
        over = ~clipped & (p >= 1.0)
        if not over.any():
            break
        clipped |= over
        p[clipped] = 1.0
        free = ~clipped
        rest = b - clipped.sum()
        if not free.any():
            break
        p[free] *= rest / p[free].sum()
    return p


def bandit_update(state: BanditState, sampled, grad_sq, probs_used) -> BanditState:
    sampled = np.asarray(sampled, dtype=np.int64)
    g2 = np.asarray(grad_sq, dtype=np.float64)
    p = np.asarray(probs_used, dtype=np.float64)
    if np.any(p <= 0) or np.any(p > 1):
        raise NonPositiveProb("probabilities used for sampling must lie in (0, 1]")
    if np.unique(sampled).size != sampled.size:
        raise ValueError("sampled ids must be unique")
    n = state.n
    expo = np.minimum(state.delta * g2 / (n * n * p**3), EXP_CLAMP)
    w = state.weights.copy()
    w[sampled] *= np.exp(expo)
    return BanditState(_renormalise(w), state.eta, state.delta, state.budget, state.step + 1)


def default_delta(g_bar, T: int, eta: float = 0.4) -> float:
    """Step size sqrt(eta^4 ln n / (T sum g^2))."""
    g = np.asarray(g_bar, dtype=np.float64)
    return float(np.sqrt(eta**4 * np.log(g.size) / (T * np.sum(g * g))))


def nonvacuous_scale(g_bar, T: int, b: int) -> float:
    """Norm scale c at which, for c * g_bar held fixed over T steps, the additive
    regret term 50 sqrt(T sum G^2 ln n) equals the optimal cumulative variance
    sum_t G_t(p*) (evaluated in the unclamped regime)."""
    g = np.asarray(g_bar, dtype=np.float64)
    n = g.size
    return float(50 * np.sqrt(T * np.sum(g * g) * np.log(n)) * n * n * b / (T * g.sum() ** 2))


@dataclass
class RegretTrace:
    G_bandit: np.ndarray
    G_opt: np.ndarray
    l1_to_opt: np.ndarray
    final_probs: np.ndarray

    @property
    def ratio(self) -> float:
        return float(self.G_bandit.sum() / self.G_opt.sum())


def simulate_regret(g_schedule, b: int, eta: float = 0.4, delta=None, T=None, seed=0,
                    expected: bool = False) -> RegretTrace:
    """Run the bandit loop against known per-step norms.

    ``g_schedule`` is an array (T, n) or a callable t -> array. With
    ``expected=True`` every node receives its expected reward
    delta g_i^2 / (n^2 p_i^2) each step (mean-field dynamics); otherwise a
    Bernoulli(p) batch is drawn and only sampled nodes are rewarded.
    """
    if callable(g_schedule):
        if T is None:
            raise ValueError("T is required with a callable schedule")
        sched = g_schedule
    else:
        arr = np.asarray(g_schedule, dtype=np.float64)
        if arr.ndim == 1:
            arr = np.broadcast_to(arr, (T or 1, arr.size))
        T = arr.shape[0] if T is None else T
        sched = lambda t: arr[t % arr.shape[0]]
    if T < 1:
        raise ValueError("T must be >= 1")
    g0 = np.asarray(sched(0), dtype=np.float64)
    n = g0.size
    if delta is None:
        delta = default_delta(g0, T, eta)
    state = BanditState.uniform(n, b, eta, delta)
    rng = make_rng(seed)
    gb, go, l1 = np.empty(T), np.empty(T), np.empty(T)
    for t in range(T):
        g = np.asarray(sched(t), dtype=np.float64)
        p = current_probs(state)
        pstar = solver.optimal_probs(g, b).probs
        gb[t] = solver.G_value(g, p)
        go[t] = solver.G_value(g, pstar)
        l1[t] = np.abs(p - pstar).sum()
        if expected:
            expo = np.minimum(delta * g * g / (n * n * p * p), EXP_CLAMP)
            w = _renormalise(state.weights * np.exp(expo))
            state = BanditState(w, eta, delta, b, state.step + 1)
        else:
            mask = rng.random(n) < p
            ids = np.flatnonzero(mask)
            state = bandit_update(state, ids, g[ids] ** 2, p[ids])
    return RegretTrace(gb, go, l1, current_probs(state))
