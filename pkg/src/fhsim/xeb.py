"""Cross-entropy benchmarking against the free-fermion ideal model.

Scores are ``XE = <log2 1/p_eps(z)>`` over samples, where
``p_eps = (1 - eps) p_FLO + eps / D`` and ``D`` is the number of bitstrings
with the conserved per-sector particle numbers. Internals use natural logs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import nearflo
from .initial_state import MagicInitialState
from .nearflo import Propagator
from .shots import ShotTable

LN2 = math.log(2.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class XebModel:
    """Ideal free-fermion output distribution mixed with uniform noise."""

    prop: Propagator
    init: MagicInitialState
    epsilon: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    @property
    def D(self) -> int:
        return nearflo.sector_dimension(self.init)

    def with_epsilon(self, epsilon: float) -> "XebModel":
        return XebModel(self.prop, self.init, epsilon, self._cache)

    def p_flo(self, bits) -> float:
        key = _key(bits)
        p = self._cache.get(key)
        if p is None:
            p = nearflo.probability(self.prop, self.init, np.frombuffer(key, np.uint8))
            self._cache[key] = p
        return p

    def p_flo_many(self, bits: np.ndarray) -> np.ndarray:
        """Ideal probabilities per row; duplicates are evaluated once."""
        bits = np.asarray(bits, dtype=np.uint8)
        uniq, inv = np.unique(bits, axis=0, return_inverse=True)
        vals = np.array([self.p_flo(row) for row in uniq])
        return vals[np.ravel(inv)]

    def p(self, bits) -> float:
        return (1 - self.epsilon) * self.p_flo(bits) + self.epsilon / self.D


def _key(bits) -> bytes:
    if isinstance(bits, str):
        bits = [int(c) for c in bits]
    return np.ascontiguousarray(bits, dtype=np.uint8).tobytes()


def _as_bits(samples) -> np.ndarray:
    if isinstance(samples, ShotTable):
        return samples.bits
    arr = np.asarray(samples)
    if arr.dtype.kind in "US":
        return np.array([[int(c) for c in s] for s in arr], dtype=np.uint8)
    return arr.astype(np.uint8)


def _surprisal(p_flo: np.ndarray, epsilon: float, D: int) -> np.ndarray:
    """Per-sample ``-ln p_eps``."""
    p = (1 - epsilon) * p_flo + epsilon / D
    if np.any(p <= 0):
        raise ZeroDivisionError("a sample has zero probability under the model (log-XEB diverges); use epsilon > 0")
    return -np.log(p)


@dataclass(frozen=True)
class XebScore:
    value: float  # bits
    se: float
    n: int


def score_from_probs(p_flo: np.ndarray, epsilon: float, D: int) -> XebScore:
    s = _surprisal(np.asarray(p_flo, float), epsilon, D) / LN2
    n = len(s)
    if n == 0:
        raise ValueError("need at least one sample")
    se = float(s.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return XebScore(float(s.mean()), se, n)


def log_xeb(samples, model: XebModel) -> XebScore:
    """Mean log2 surprisal of ``samples`` under ``model`` with its standard error."""
    bits = _as_bits(samples)
    return score_from_probs(model.p_flo_many(bits), model.epsilon, model.D)


@dataclass(frozen=True)
class EpsilonFit:
    epsilon: float
    score: float
    grid: np.ndarray
    curve: np.ndarray


def _mean_score(p_flo, eps, D) -> float:
    p = (1 - eps) * p_flo + eps / D
    with np.errstate(divide="ignore"):
        return float(-np.log(p).mean() / LN2)


def fit_epsilon_from_probs(p_flo: np.ndarray, D: int, n_grid: int = 101, tol: float = 1e-4) -> EpsilonFit:
    """Minimize the mean surprisal over eps in [0, 1].

    The score is convex in eps, so a grid scan brackets the minimum and
    golden-section search refines it to ``tol``.
    """
    p_flo = np.asarray(p_flo, float)
    if len(p_flo) == 0:
        raise ValueError("need at least one sample")
    grid = np.linspace(0.0, 1.0, n_grid)
    curve = np.array([_mean_score(p_flo, e, D) for e in grid])
    i = int(np.argmin(curve))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    f = lambda e: _mean_score(p_flo, e, D)
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    cands = [(curve[i], grid[i]), (f(a), a), (f(b), b), (f(0.5 * (a + b)), 0.5 * (a + b))]
    best, eps = min(cands)
    return EpsilonFit(float(eps), float(best), grid, curve)


def fit_epsilon(samples, model: XebModel, **kw) -> EpsilonFit:
    bits = _as_bits(samples)
    return fit_epsilon_from_probs(model.p_flo_many(bits), model.D, **kw)


# ------------------------------------------------------- enumerable models
def sector_bitstrings(n_sites: int, n_per_sector: int) -> np.ndarray:
    """All bitstrings with ``n_per_sector`` particles in each spin sector."""
    combos = list(itertools.combinations(range(n_sites), n_per_sector))
    out = np.zeros((len(combos) ** 2, 2 * n_sites), np.uint8)
    for k, (a, b) in enumerate(itertools.product(combos, combos)):
        out[k, list(a)] = 1
        out[k, [n_sites + j for j in b]] = 1
    return out


def exact_distribution(model: XebModel) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate the sector-valid outcomes and their ideal probabilities."""
    z = sector_bitstrings(model.init.n_sites, model.init.particles_per_sector)
    return z, model.p_flo_many(z)


def sample_model(model: XebModel, n_shots: int, seed=None, epsilon: float | None = None) -> np.ndarray:
    """Draw from ``p_eps`` on an enumerable instance (``epsilon`` overrides the model's)."""
    eps = model.epsilon if epsilon is None else epsilon
    z, p = exact_distribution(model)
    q = (1 - eps) * p + eps / len(z)
    q = q / q.sum()
    rng = np.random.default_rng(seed)
    return z[rng.choice(len(z), size=n_shots, p=q)]


def uniform_samples(init: MagicInitialState, n_shots: int, seed=None) -> np.ndarray:
    """Uniform draws over the sector-valid set (works at any size)."""
    rng = np.random.default_rng(seed)
    L, N = init.n_sites, init.particles_per_sector
    out = np.zeros((n_shots, 2 * L), np.uint8)
    for k in range(n_shots):
        out[k, rng.choice(L, N, replace=False)] = 1
        out[k, L + rng.choice(L, N, replace=False)] = 1
    return out
