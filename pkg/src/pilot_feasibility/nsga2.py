"""Real-coded NSGA-II with constraint domination.

All objectives are minimised.  ``evaluate(X)`` receives an ``(n, d)``
array and returns ``(F, CV)``: an ``(n, m)`` objective array and an
``(n,)`` array of nonnegative constraint violations (0 = feasible).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class MooSettings:
    population: int = 100
    generations: int = 200
    crossover_prob: float = 0.9
    crossover_eta: float = 15.0
    mutation_prob: Optional[float] = None  # None -> 1 / dims
    mutation_eta: float = 20.0
    seed: int = 20190101

    def __post_init__(self):
        if self.population < 8 or self.population % 2:
            raise ValueError("population must be even and at least 8")
        if self.generations < 0:
            raise ValueError("generations must be nonnegative")
        if not (0.0 <= self.crossover_prob <= 1.0):
            raise ValueError("crossover_prob must be in [0, 1]")
        if self.mutation_prob is not None and not (0.0 <= self.mutation_prob <= 1.0):
            raise ValueError("mutation_prob must be in [0, 1]")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class Population:
    X: np.ndarray
    F: np.ndarray
    CV: np.ndarray
    rank: np.ndarray
    crowding: np.ndarray

    def first_front(self):
        idx = np.flatnonzero(self.rank == 0)
        return self.X[idx], self.F[idx], self.CV[idx]


def constrained_dominance(F, CV):
    """Boolean matrix D with D[i, j] True when i constraint-dominates j."""
    feas = CV <= 0
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    pareto = le & lt
    both_feas = feas[:, None] & feas[None, :]
    both_infeas = ~feas[:, None] & ~feas[None, :]
    return ((both_feas & pareto)
            | (feas[:, None] & ~feas[None, :])
            | (both_infeas & (CV[:, None] < CV[None, :])))


def nondominated_sort(F, CV=None):
    """Front index (0 = best) of each row of ``F``."""
    n = len(F)
    if CV is None:
        CV = np.zeros(n)
    dom = constrained_dominance(F, CV)
    count = dom.sum(axis=0)
    rank = np.full(n, -1)
    current = np.flatnonzero(count == 0)
    level = 0
    while current.size:
        rank[current] = level
        count = count - dom[current].sum(axis=0)
        count[rank >= 0] = -1
        current = np.flatnonzero(count == 0)
        level += 1
    return rank


def crowding_distance(F):
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        col = F[order, k]
        span = col[-1] - col[0]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


def _rank_and_crowd(F, CV):
    rank = nondominated_sort(F, CV)
    crowd = np.zeros(len(F))
    for r in np.unique(rank):
        idx = np.flatnonzero(rank == r)
        crowd[idx] = crowding_distance(F[idx])
    return rank, crowd


def _tournament(rng, rank, crowd, CV, n):
    i = rng.integers(0, len(rank), size=n)
    j = rng.integers(0, len(rank), size=n)
    coin = rng.random(n) < 0.5
    # rank already encodes constraint domination; ties go to crowding then a coin
    better_i = (rank[i] < rank[j]) | ((rank[i] == rank[j]) & (crowd[i] > crowd[j]))
    tie = (rank[i] == rank[j]) & (crowd[i] == crowd[j])
    pick_i = np.where(tie, coin, better_i)
    return np.where(pick_i, i, j)


def sbx_crossover(rng, p1, p2, lower, upper, eta, prob):
    c1, c2 = p1.copy(), p2.copy()
    n, d = p1.shape
    do_pair = rng.random(n) < prob
    do_var = (rng.random((n, d)) < 0.5) & do_pair[:, None] & (np.abs(p1 - p2) > 1e-14)
    u = rng.random((n, d))
    swap = rng.random((n, d)) < 0.5

    y1 = np.minimum(p1, p2)
    y2 = np.maximum(p1, p2)
    span = np.where(do_var, y2 - y1, 1.0)
    lo = np.broadcast_to(lower, p1.shape)
    hi = np.broadcast_to(upper, p1.shape)

    def betaq(beta):
        alpha = 2.0 - beta ** (-(eta + 1.0))
        small = u <= 1.0 / alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(small,
                            (u * alpha) ** (1.0 / (eta + 1.0)),
                            (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0)))

    bq1 = betaq(1.0 + 2.0 * (y1 - lo) / span)
    bq2 = betaq(1.0 + 2.0 * (hi - y2) / span)
    ch1 = np.clip(0.5 * ((y1 + y2) - bq1 * (y2 - y1)), lo, hi)
    ch2 = np.clip(0.5 * ((y1 + y2) + bq2 * (y2 - y1)), lo, hi)
    a = np.where(swap, ch2, ch1)
    b = np.where(swap, ch1, ch2)
    c1[do_var] = a[do_var]
    c2[do_var] = b[do_var]
    return c1, c2


def polynomial_mutation(rng, X, lower, upper, eta, prob):
    n, d = X.shape
    Y = X.copy()
    mask = rng.random((n, d)) < prob
    u = rng.random((n, d))
    lo = np.broadcast_to(lower, X.shape)
    hi = np.broadcast_to(upper, X.shape)
    width = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.where(width > 0, (X - lo) / width, 0.0)
        d2 = np.where(width > 0, (hi - X) / width, 0.0)
    mpow = 1.0 / (eta + 1.0)
    left = u < 0.5
    val_l = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
    val_r = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
    deltaq = np.where(left, val_l ** mpow - 1.0, 1.0 - val_r ** mpow)
    Y[mask] = np.clip(X + deltaq * width, lo, hi)[mask]
    return Y


def nsga2(evaluate, lower, upper, settings, initial=None, callback=None):
    """Run NSGA-II and return the final population (ranked)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    n = settings.population
    rng = np.random.default_rng(settings.seed)
    pm = settings.mutation_prob if settings.mutation_prob is not None else 1.0 / d

    X = lower + rng.random((n, d)) * (upper - lower)
    if initial is not None:
        initial = np.clip(np.atleast_2d(np.asarray(initial, dtype=float)), lower, upper)
        X[: len(initial)] = initial[:n]
    F, CV = evaluate(X)
    rank, crowd = _rank_and_crowd(F, CV)

    for gen in range(settings.generations):
        parents = _tournament(rng, rank, crowd, CV, n)
        p1, p2 = X[parents[0::2]], X[parents[1::2]]
        c1, c2 = sbx_crossover(rng, p1, p2, lower, upper,
                               settings.crossover_eta, settings.crossover_prob)
        kids = np.vstack([c1, c2])
        kids = polynomial_mutation(rng, kids, lower, upper, settings.mutation_eta, pm)
        kF, kCV = evaluate(kids)

        allX = np.vstack([X, kids])
        allF = np.vstack([F, kF])
        allCV = np.concatenate([CV, kCV])
        arank, acrowd = _rank_and_crowd(allF, allCV)
        # elitist survival: whole fronts first, the last one by crowding
        order = np.lexsort((-acrowd, arank))[:n]
        X, F, CV = allX[order], allF[order], allCV[order]
        rank, crowd = _rank_and_crowd(F, CV)
        if callback is not None:
            callback(gen, X, F, CV)

    return Population(X, F, CV, rank, crowd)
