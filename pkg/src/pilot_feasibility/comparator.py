"""Conventional progression criteria: separate thresholds on each estimate.

The pilot proceeds only when every estimate strictly beats its threshold,
``phi_hat_f > c_f``, ``phi_hat_a > c_a`` and ``phi_hat_r > c_r``.  With the
counts independent the go probability is a product of three tails.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hypotheses import DEFAULT_GRID_STEP, check_feasible
from .model import Rates
from .ocs import _Boundary, default_sigma_grid
from .stats import (
    binomial_sf_array,
    neg_binomial_cdf,
    neg_binomial_cdf_array,
    neg_binomial_quantile,
)

# guards floor/ceil against representation error when a threshold sits
# exactly on an achievable estimate
_EDGE = 1e-9


@dataclass(frozen=True)
class ThresholdTriple:
    c_f: float
    c_a: float
    c_r: float

    def __post_init__(self):
        for name in ("c_f", "c_a", "c_r"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")


@dataclass(frozen=True)
class PcErrorRatePoint:
    thresholds: ThresholdTriple
    alpha: float
    beta: float
    phi0_witness: Optional[Rates]
    phi1_witness: Optional[Rates]


def follow_up_cut(n_p, c_f):
    """Largest follow-up count that fails, so the test passes iff f > cut."""
    return int(math.floor(2 * n_p * c_f + _EDGE))


def adherence_cut(n_p, c_a):
    return int(math.floor(n_p * c_a + _EDGE))


def decliner_cut(n_p, c_r):
    """Largest passing decliner count, ``None`` if all pass, -1 if none do.

    ``phi_hat_r > c_r`` is ``s < 2n_p / c_r - 2n_p``.
    """
    if c_r == 0:
        return None
    limit = 2 * n_p / c_r - 2 * n_p
    return int(math.ceil(limit - _EDGE)) - 1


def go_probability(design, n_p, thresholds, rates):
    """Pr[all three estimates beat their thresholds] under independence."""
    if rates.phi_or != 1.0:
        raise ValueError("the comparator assumes independent estimates (phi_or = 1)")
    s_cut = decliner_cut(n_p, thresholds.c_r)
    if s_cut is None:
        p_r = 1.0
    elif s_cut < 0:
        p_r = 0.0
    else:
        p_r = neg_binomial_cdf(s_cut, 2 * n_p, rates.phi_r)
    p_f = float(binomial_sf_array(2 * n_p, rates.phi_f)[follow_up_cut(n_p, thresholds.c_f)]) \
        if follow_up_cut(n_p, thresholds.c_f) < 2 * n_p else 0.0
    p_a = float(binomial_sf_array(n_p, rates.phi_a)[adherence_cut(n_p, thresholds.c_a)]) \
        if adherence_cut(n_p, thresholds.c_a) < n_p else 0.0
    return min(max(p_r * p_f * p_a, 0.0), 1.0)


def _sigma_layers(design, hyp):
    if hyp.sigma_floor is None:
        return [design.sigma0]
    return list(default_sigma_grid(hyp.sigma_floor))


class _PcBoundaries:
    """Boundary points (all SD layers merged) with their tail probabilities."""

    def __init__(self, design, hyp, n_p, grid_step, is_null):
        x_i = hyp.x0 if is_null else hyp.x1
        parts = [_Boundary(design, n_p, x_i, grid_step, s, is_null)
                 for s in _sigma_layers(design, hyp)]
        parts = [b for b in parts if len(b)]
        self.n_p = n_p
        phi_r, phi_f, phi_a, sig = [], [], [], []
        for b in parts:
            g = b.grid
            phi_r.append(g.phi_r)
            phi_f.append(g.phi_f)
            phi_a.append(g.phi_a)
            sig.append(np.full(len(g), g.sigma))
        self.phi_r = np.concatenate(phi_r)
        self.phi_f = np.concatenate(phi_f)
        self.phi_a = np.concatenate(phi_a)
        self.sigma = np.concatenate(sig)
        self.estimated_sd = hyp.sigma_floor is not None
        # regroup by recruitment rate so rows can share negative binomial work
        order = np.argsort(self.phi_r, kind="stable")
        for name in ("phi_r", "phi_f", "phi_a", "sigma"):
            setattr(self, name, getattr(self, name)[order])
        self.row_values, self.row_start = np.unique(self.phi_r, return_index=True)
        self.sf_f = binomial_sf_array(2 * n_p, self.phi_f)  # Pr[F > k]
        self.sf_a = binomial_sf_array(n_p, self.phi_a)      # Pr[A > k]

    def __len__(self):
        return len(self.phi_r)

    def rates(self, i):
        return Rates(float(self.phi_r[i]), float(self.phi_f[i]), float(self.phi_a[i]), 1.0,
                     float(self.sigma[i]) if self.estimated_sd else None)

    def recruit_pass(self, s_cut):
        """Pr[S <= s_cut] per point (``None`` means always pass)."""
        if s_cut is None:
            return np.ones(len(self))
        if s_cut < 0:
            return np.zeros(len(self))
        rows = neg_binomial_cdf_array(2 * self.n_p, self.row_values, s_cut)[:, s_cut]
        counts = np.diff(np.append(self.row_start, len(self)))
        return np.repeat(rows, counts)

    def go(self, n_p, thresholds):
        f_cut = follow_up_cut(n_p, thresholds.c_f)
        a_cut = adherence_cut(n_p, thresholds.c_a)
        p_f = self.sf_f[:, f_cut] if f_cut < 2 * n_p else np.zeros(len(self))
        p_a = self.sf_a[:, a_cut] if a_cut < n_p else np.zeros(len(self))
        return np.clip(self.recruit_pass(decliner_cut(n_p, thresholds.c_r)) * p_f * p_a,
                       0.0, 1.0)


class PcCharacteristics:
    def __init__(self, design, hyp, n_p, grid_step=DEFAULT_GRID_STEP):
        check_feasible(hyp, design)
        self.design = design
        self.hyp = hyp
        self.n_p = n_p
        self.null = _PcBoundaries(design, hyp, n_p, grid_step, True)
        self.alt = _PcBoundaries(design, hyp, n_p, grid_step, False)

    def at(self, thresholds):
        h0 = self.null.go(self.n_p, thresholds)
        h1 = self.alt.go(self.n_p, thresholds)
        i, j = int(np.argmax(h0)), int(np.argmin(h1))
        return PcErrorRatePoint(thresholds, float(h0[i]), 1.0 - float(h1[j]),
                                self.null.rates(i), self.alt.rates(j))


def pc_error_rates(design, hyp, n_p, thresholds, grid_step=DEFAULT_GRID_STEP):
    """Worst-case (alpha, beta) of a threshold triple over the boundary grid."""
    return PcCharacteristics(design, hyp, n_p, grid_step).at(thresholds)


def _row_reduce(values, starts, op):
    # values: (points, ...) sorted by row; reduce within each row
    return op.reduceat(values, starts, axis=0)


def _recruit_table(bnd, s_cuts):
    """Pr[pass recruitment] per (row, s_cut), last column for c_r = 0."""
    nb = neg_binomial_cdf_array(2 * bnd.n_p, bnd.row_values, int(s_cuts.max()))
    return np.concatenate([nb[:, s_cuts], np.ones((len(bnd.row_values), 1))], axis=1)


def _lattice_rates(bnd, pr, f_cut, reduce_op, combine_op):
    """Error-rate extreme for every (s, a) at one follow-up cut.

    Recruitment only depends on the row, so the follow-up x adherence part
    can be reduced within each row first.
    """
    pf = bnd.sf_f[:, f_cut]
    pa = bnd.sf_a[:, :bnd.n_p]                      # a_cut = 0..n_p-1
    row_ext = _row_reduce(pf[:, None] * pa, bnd.row_start, reduce_op)   # (rows, A)
    # (rows, S+1, A) -> extreme over rows
    return combine_op(pr[:, :, None] * row_ext[:, None, :], axis=0)


def pc_frontier(design, hyp, n_p, grid_step=DEFAULT_GRID_STEP, s_quantile=0.999, threads=1):
    """Nondominated threshold triples over the lattice of distinct decision rules.

    c_a and c_f run over midpoints between achievable estimates, c_r over
    midpoints of ``2n_p / (2n_p + s)`` for s up to the negative binomial
    ``s_quantile`` quantile at the smallest boundary recruitment rate, plus
    c_r = 0.  Returns a list of PcErrorRatePoint sorted by alpha.
    """
    oc = PcCharacteristics(design, hyp, n_p, grid_step)
    r_min = float(min(oc.null.row_values.min(), oc.alt.row_values.min()))
    s_top = neg_binomial_quantile(s_quantile, 2 * n_p, r_min)
    s_cuts = np.arange(s_top + 1)
    f_cuts = np.arange(2 * n_p)

    pr0 = _recruit_table(oc.null, s_cuts)
    pr1 = _recruit_table(oc.alt, s_cuts)

    def one(f_cut):
        alpha = _lattice_rates(oc.null, pr0, f_cut, np.maximum, np.max)
        beta = 1.0 - _lattice_rates(oc.alt, pr1, f_cut, np.minimum, np.min)
        return alpha, beta

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            res = list(pool.map(one, f_cuts))
    else:
        res = [one(f) for f in f_cuts]
    alpha = np.stack([r[0] for r in res])           # (F, S+1, A)
    beta = np.stack([r[1] for r in res])

    a_flat, b_flat = alpha.ravel(), beta.ravel()
    order = np.lexsort((b_flat, a_flat))
    running = np.minimum.accumulate(b_flat[order])
    prev = np.concatenate([[np.inf], running[:-1]])
    keep = order[b_flat[order] < prev]

    def c_r_of(k):
        if k == s_top + 1:
            return 0.0
        s = int(s_cuts[k])
        return 0.5 * (2 * n_p / (2 * n_p + s) + 2 * n_p / (2 * n_p + s + 1))

    out = []
    for flat in keep:
        fi, si, ai = np.unravel_index(flat, alpha.shape)
        triple = ThresholdTriple(float((fi + 0.5) / (2 * n_p)), float((ai + 0.5) / n_p),
                                 float(c_r_of(si)))
        out.append(oc.at(triple))
    return out
