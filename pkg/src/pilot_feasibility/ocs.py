"""Operating characteristics of the pilot test and their Pareto frontier.

Worst-case error rates are found on the hypothesis boundaries: pilot power
increases with every rate, so within the null the largest go probability
sits where ``x(phi) = x0``, and within the alternative the largest stop
probability where ``x(phi) = x1``.  Boundaries are swept on a
``(phi_r, phi_a)`` grid with ``phi_f`` solved for.
"""

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import UnattainableTargetError
from .hypotheses import (
    DEFAULT_GRID_STEP,
    HypothesisPair,
    boundary_grid,
    check_feasible,
)
from .model import Rates, expected_recruited, max_statistic, x_from_parts
from .nsga2 import MooSettings, nsga2
from .pilot import (
    INDEPENDENT,
    MARGINAL,
    PilotDesign,
    decliner_cap,
    engine_for,
    pilot_power,
)
from .stats import (
    binomial_pmf_array,
    neg_binomial_cdf_array,
    neg_binomial_pmf_array,
)
from .variance import VarianceConfig, decliner_limit, go_kernel, pilot_power_unknown_sigma

SIGMA_GRID_POINTS = 25
SIGMA_GRID_SPAN = 2.5
# smallest recruitment rate the optimiser may propose
MIN_SEARCH_RATE = 0.01
# gap filling between frontier points: bisection width in c, and the error-rate
# difference below which an interval cannot hide a materially better point
REFINE_TOL_C = 1e-4
REFINE_EPS = 1e-3


@dataclass(frozen=True)
class ErrorRatePoint:
    c: float
    alpha: float
    beta: float
    phi0_witness: Rates
    phi1_witness: Rates


@dataclass(frozen=True)
class PilotModel:
    """How the pilot data are modelled when computing go probabilities."""

    correlation_mode: str = INDEPENDENT
    adherence_estimator: str = MARGINAL
    phi_or: float = 1.0

    @property
    def fast(self):
        return (self.correlation_mode == INDEPENDENT and self.adherence_estimator == MARGINAL
                and self.phi_or == 1.0)


INDEPENDENT_MODEL = PilotModel()


def default_sigma_grid(sigma_floor):
    return tuple(np.geomspace(sigma_floor, SIGMA_GRID_SPAN * sigma_floor, SIGMA_GRID_POINTS))


class _Boundary:
    """Boundary points plus the per-point binomial pmfs (c independent)."""

    def __init__(self, design, n_p, x_i, step, sigma, is_null):
        grid = boundary_grid(design, x_i, step, sigma)
        if is_null and len(grid) == 0 and max_statistic(design, sigma) <= x_i:
            # whole rate space lies below x_i; its top corner is the worst case
            one = np.array([1.0])
            grid = type(grid)(one, np.array([0]), one, one, one, float(sigma))
        self.grid = grid
        self.n_p = n_p
        if len(grid):
            self.pa = binomial_pmf_array(n_p, grid.phi_a)
            self.pf = binomial_pmf_array(2 * n_p, grid.phi_f)
            starts = np.searchsorted(grid.row, np.arange(len(grid.phi_r_values) + 1))
            self.slices = [slice(starts[k], starts[k + 1]) for k in range(len(starts) - 1)]

    def __len__(self):
        return len(self.grid)

    def rates(self, i, phi_or=1.0, with_sigma=False):
        g = self.grid
        return Rates(float(g.phi_r[i]), float(g.phi_f[i]), float(g.phi_a[i]), phi_or,
                     g.sigma if with_sigma else None)


class _KnownSigmaEvaluator:
    """Independent model, known SD: one matrix product per phi_r row."""

    def __init__(self, design, n_p, x0, x1, step):
        self.design = design
        self.n_p = n_p
        self.engine = engine_for(design, n_p)
        self.null = _Boundary(design, n_p, x0, step, design.sigma0, True)
        self.alt = _Boundary(design, n_p, x1, step, design.sigma0, False)
        rows = [b.grid.phi_r_values for b in (self.null, self.alt) if len(b)]
        self.cap = decliner_cap(n_p, float(min(r.min() for r in rows)))
        self.engine.recruitment(self.cap)
        self._nb = {id(b): neg_binomial_cdf_array(2 * n_p, b.grid.phi_r_values, self.cap)
                    for b in (self.null, self.alt) if len(b)}

    def s_tilde(self, c):
        return self.engine.s_tilde_marginal(c, self.design.sigma0, self.cap)

    def signature(self, c):
        return self.s_tilde(c).tobytes()

    def power(self, c, which):
        b = self.null if which == "null" else self.alt
        if not len(b):
            return np.empty(0)
        st = self.s_tilde(c)
        nb = self._nb[id(b)]
        idx = np.maximum(st, 0)
        out = np.empty(len(b))
        for r, sl in enumerate(b.slices):
            go = np.where(st < 0, 0.0, nb[r][idx])
            out[sl] = ((b.pa[sl] @ go) * b.pf[sl]).sum(axis=1)
        return np.clip(out, 0.0, 1.0)

    def witness(self, which, i):
        b = self.null if which == "null" else self.alt
        return b.rates(i)


class _PointwiseEvaluator:
    """Any pilot model, one exact pilot_power call per boundary point."""

    def __init__(self, design, n_p, x0, x1, step, model):
        self.design = design
        self.n_p = n_p
        self.model = model
        self.null = _Boundary(design, n_p, x0, step, design.sigma0, True)
        self.alt = _Boundary(design, n_p, x1, step, design.sigma0, False)

    def signature(self, c):
        return None

    def power(self, c, which):
        b = self.null if which == "null" else self.alt
        pilot = PilotDesign(self.n_p, c, self.model.correlation_mode,
                            self.model.adherence_estimator)
        return np.array([pilot_power(self.design, pilot, b.rates(i, self.model.phi_or))
                         for i in range(len(b))])

    def witness(self, which, i):
        b = self.null if which == "null" else self.alt
        return b.rates(i, self.model.phi_or)


class _SigmaSide:
    """One boundary at one true SD, with its truncated decliner pmfs."""

    def __init__(self, design, n_p, x_i, step, sigma, s_quantile, is_null):
        self.sigma = sigma
        self.bnd = _Boundary(design, n_p, x_i, step, sigma, is_null)
        if not len(self.bnd):
            return
        rows = self.bnd.grid.phi_r_values
        s_max = np.array([decliner_limit(n_p, float(p), s_quantile) for p in rows])
        self.S = int(s_max.max())
        pmf = neg_binomial_pmf_array(2 * n_p, rows, self.S)
        pmf[np.arange(self.S + 1)[None, :] > s_max[:, None]] = 0.0
        self.ps = pmf
        self.a_keep = (self.bnd.pa > 1e-16).any(axis=0)
        self.f_keep = (self.bnd.pf > 1e-16).any(axis=0)

    def __len__(self):
        return len(self.bnd)

    def powers(self, design, n_p, c):
        K = go_kernel(design, n_p, c, self.sigma, self.S, self.a_keep, self.f_keep)
        M = (K.reshape(-1, self.S + 1) @ self.ps.T).reshape(K.shape[0], K.shape[1], -1)
        b = self.bnd
        h = np.empty(len(b))
        for r, sl in enumerate(b.slices):
            h[sl] = ((b.pa[sl] @ M[:, :, r]) * b.pf[sl]).sum(axis=1)
        return np.clip(h, 0.0, 1.0)


class _UnknownSigmaEvaluator:
    """Estimated SD: worst cases over the boundary grid and a grid of true SDs."""

    def __init__(self, design, n_p, x0, x1, step, sigmas, s_quantile):
        self.design = design
        self.n_p = n_p
        null = [_SigmaSide(design, n_p, x0, step, float(s), s_quantile, True) for s in sigmas]
        alt = [_SigmaSide(design, n_p, x1, step, float(s), s_quantile, False) for s in sigmas]
        self.sides = {"null": [L for L in null if len(L)], "alt": [L for L in alt if len(L)]}
        engine_for(design, n_p).recruitment(
            max(L.S for L in self.sides["null"] + self.sides["alt"]))

    def signature(self, c):
        return None

    def side_powers(self, c, which):
        """[(side, h)] for every true SD on the grid with a nonempty boundary."""
        return [(L, L.powers(self.design, self.n_p, c)) for L in self.sides[which]]


class OperatingCharacteristics:
    """Worst-case error rates of ``x(phi_hat) > c`` for one (design, hypotheses, n_p)."""

    def __init__(self, design, hyp, n_p, grid_step=DEFAULT_GRID_STEP, model=INDEPENDENT_MODEL,
                 sigma_grid=None, s_quantile=0.999):
        check_feasible(hyp, design)
        self.design = design
        self.hyp = hyp
        self.n_p = n_p
        self.model = model
        self.unknown_sigma = hyp.sigma_floor is not None
        if self.unknown_sigma:
            if not model.fast:
                raise ValueError("estimated-SD error rates need the independent pilot model")
            sigmas = default_sigma_grid(hyp.sigma_floor) if sigma_grid is None else sigma_grid
            if min(sigmas) < hyp.sigma_floor:
                raise ValueError("sigma grid must not go below the floor")
            self.vcfg = VarianceConfig(hyp.sigma_floor, s_quantile)
            self._ev = _UnknownSigmaEvaluator(design, n_p, hyp.x0, hyp.x1, grid_step,
                                              sigmas, s_quantile)
        elif model.fast:
            self._ev = _KnownSigmaEvaluator(design, n_p, hyp.x0, hyp.x1, grid_step)
        else:
            self._ev = _PointwiseEvaluator(design, n_p, hyp.x0, hyp.x1, grid_step, model)

    def signature(self, c):
        """Bytes identifying the decision rule, or None if not available."""
        return self._ev.signature(c)

    def at(self, c):
        c = float(c)
        if self.unknown_sigma:
            alpha, w0 = self._sigma_extreme(c, "null")
            beta, w1 = self._sigma_extreme(c, "alt")
            return ErrorRatePoint(c, alpha, beta, w0, w1)
        h0 = self._ev.power(c, "null")
        h1 = self._ev.power(c, "alt")
        i, j = int(np.argmax(h0)), int(np.argmin(h1))
        return ErrorRatePoint(c, float(h0[i]), 1.0 - float(h1[j]),
                              self._ev.witness("null", i), self._ev.witness("alt", j))

    def _sigma_extreme(self, c, which):
        best, witness = -1.0, None
        for side, h in self._ev.side_powers(c, which):
            i = int(np.argmax(h)) if which == "null" else int(np.argmin(h))
            value = h[i] if which == "null" else 1.0 - h[i]
            if value > best:
                best, witness = float(value), side.bnd.rates(i, with_sigma=True)
        return best, witness

    def alpha(self, c):
        if self.unknown_sigma:
            return self._sigma_extreme(float(c), "null")[0]
        return float(self._ev.power(float(c), "null").max())

    def beta(self, c):
        if self.unknown_sigma:
            return self._sigma_extreme(float(c), "alt")[0]
        return 1.0 - float(self._ev.power(float(c), "alt").min())

    # single-point evaluations used by the optimiser
    def go_probability(self, c, rates):
        if self.unknown_sigma:
            pilot = PilotDesign(self.n_p, c)
            return pilot_power_unknown_sigma(self.design, pilot, rates, self.vcfg)
        pilot = PilotDesign(self.n_p, c, self.model.correlation_mode,
                            self.model.adherence_estimator)
        return pilot_power(self.design, pilot, rates)


_OCS_CACHE = {}
_OCS_LOCK = threading.Lock()


def characteristics(design, hyp, n_p, grid_step=DEFAULT_GRID_STEP, model=INDEPENDENT_MODEL,
                    sigma_grid=None, s_quantile=0.999):
    key = (design, hyp, n_p, grid_step, model,
           None if sigma_grid is None else tuple(sigma_grid), s_quantile)
    with _OCS_LOCK:
        oc = _OCS_CACHE.get(key)
        if oc is None:
            if len(_OCS_CACHE) > 32:
                _OCS_CACHE.clear()
            oc = OperatingCharacteristics(design, hyp, n_p, grid_step, model,
                                          sigma_grid, s_quantile)
            _OCS_CACHE[key] = oc
    return oc


def error_rates_at(design, hyp, n_p, c, **kwargs):
    """Worst-case (alpha, beta) of the test with critical value ``c``."""
    return characteristics(design, hyp, n_p, **kwargs).at(c)


def _c_upper(design, hyp):
    sigma = design.sigma0 if hyp.sigma_floor is None else hyp.sigma_floor
    return 1.5 * max_statistic(design, sigma)


def solve_c_for_beta(design, hyp, n_p, beta_target, tol_c=1e-6, **kwargs):
    """Largest critical value whose type II error does not exceed ``beta_target``.

    beta(c) is a nondecreasing step function of c; bisection brackets the
    step that crosses the target.
    """
    if not (0.0 < beta_target < 1.0):
        raise ValueError("beta_target must be in (0, 1)")
    oc = characteristics(design, hyp, n_p, **kwargs)
    lo, hi = 0.0, _c_upper(design, hyp)
    if oc.beta(lo) > beta_target:
        raise UnattainableTargetError(
            f"beta at c = 0 is {oc.beta(lo):.4f}, above the target {beta_target}")
    if oc.beta(hi) <= beta_target:
        return hi
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        if oc.beta(mid) <= beta_target:
            lo = mid
        else:
            hi = mid
    return lo


def solve_c_for_alpha(design, hyp, n_p, alpha_target, tol_c=1e-6, **kwargs):
    """Smallest critical value whose type I error does not exceed ``alpha_target``.

    Since alpha falls and beta rises with c, this picks the frontier point
    with the smallest beta subject to the alpha constraint.
    """
    if not (0.0 < alpha_target < 1.0):
        raise ValueError("alpha_target must be in (0, 1)")
    oc = characteristics(design, hyp, n_p, **kwargs)
    lo, hi = 0.0, _c_upper(design, hyp)
    if oc.alpha(hi) > alpha_target:
        raise UnattainableTargetError(
            f"alpha at c = {hi:.3f} is {oc.alpha(hi):.4f}, above the target {alpha_target}")
    if oc.alpha(lo) <= alpha_target:
        return lo
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        if oc.alpha(mid) <= alpha_target:
            hi = mid
        else:
            lo = mid
    return hi


def sweep_p0(design, p1, n_p, c, p0_grid, **kwargs):
    """Type I error at fixed ``c`` as the null power threshold varies."""
    out = []
    for p0 in p0_grid:
        hyp = HypothesisPair.from_powers(design, p0, p1)
        out.append((float(p0), characteristics(design, hyp, n_p, **kwargs).alpha(c)))
    return out


# ---------------------------------------------------------------------------
# Pareto frontier
# ---------------------------------------------------------------------------

def nondominated(points, key=lambda p: (p.alpha, p.beta)):
    """Mutually nondominated subset (minimising both coordinates), sorted by the first."""
    items = sorted(points, key=lambda p: key(p))
    out = []
    best_second = math.inf
    for p in items:
        first, second = key(p)
        if second < best_second:
            if out and key(out[-1])[0] == first:
                continue
            out.append(p)
            best_second = second
    return out


class _Problem:
    """Decision vector: c, phi0 = (r, f, a[, sigma]), phi1 = (r, f, a[, sigma])."""

    def __init__(self, oc, threads):
        self.oc = oc
        self.design = oc.design
        self.hyp = oc.hyp
        self.k = 4 if oc.unknown_sigma else 3
        self.threads = threads
        lo_rate = [MIN_SEARCH_RATE, 0.0, 0.0]
        hi_rate = [1.0, 1.0, 1.0]
        if oc.unknown_sigma:
            lo_rate.append(self.hyp.sigma_floor)
            hi_rate.append(SIGMA_GRID_SPAN * self.hyp.sigma_floor)
        self.lower = np.array([0.0] + lo_rate + lo_rate)
        self.upper = np.array([_c_upper(self.design, self.hyp)] + hi_rate + hi_rate)

    def rates(self, v):
        sigma = float(v[3]) if self.k == 4 else None
        return Rates(float(v[0]), float(v[1]), float(v[2]), self.oc.model.phi_or, sigma)

    def statistic(self, v):
        sigma = float(v[3]) if self.k == 4 else self.design.sigma0
        if v[2] == 0:
            return 0.0
        e_n = expected_recruited(self.design, float(v[0]))
        return float(x_from_parts(self.design.mu, sigma, e_n, v[1], v[2]))

    def violation(self, row):
        k = self.k
        x0 = self.statistic(row[1:1 + k])
        x1 = self.statistic(row[1 + k:1 + 2 * k])
        return max(0.0, x0 - self.hyp.x0) + max(0.0, self.hyp.x1 - x1)

    def _one(self, row):
        cv = self.violation(row)
        if cv > 0:
            # infeasible rows are ordered by violation alone
            return (0.0, 0.0), cv
        k = self.k
        h0 = self.oc.go_probability(float(row[0]), self.rates(row[1:1 + k]))
        h1 = self.oc.go_probability(float(row[0]), self.rates(row[1 + k:1 + 2 * k]))
        return (-h0, -(1.0 - h1)), 0.0

    def evaluate(self, X):
        rows = list(X)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                res = list(pool.map(self._one, rows))
        else:
            res = [self._one(r) for r in rows]
        F = np.array([r[0] for r in res], dtype=float)
        CV = np.array([r[1] for r in res], dtype=float)
        return F, CV


def certify(oc, candidates, threads=1):
    """Re-evaluate candidate critical values on the boundary grid.

    ``candidates`` is a list of (c, h0, phi0, h1, phi1) from the optimiser.
    Reported rates are the larger of the grid maximum and the optimiser's
    own witness value, so they never understate either.
    """
    groups = {}
    order = []
    for cand in sorted(candidates, key=lambda t: t[0]):
        sig = oc.signature(cand[0])
        key = sig if sig is not None else cand[0]
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(cand)

    reps = [groups[k][0][0] for k in order]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            grid_points = list(pool.map(oc.at, reps))
    else:
        grid_points = [oc.at(c) for c in reps]

    out = []
    for key, gp in zip(order, grid_points):
        alpha, w0 = gp.alpha, gp.phi0_witness
        beta, w1 = gp.beta, gp.phi1_witness
        for _, h0, phi0, h1, phi1 in groups[key]:
            if h0 > alpha:
                alpha, w0 = h0, phi0
            if 1.0 - h1 > beta:
                beta, w1 = 1.0 - h1, phi1
        out.append(ErrorRatePoint(gp.c, alpha, beta, w0, w1))
    return out


def refine_gaps(oc, points, tol_c=REFINE_TOL_C, eps=REFINE_EPS, threads=1):
    """Fill gaps between neighbouring frontier points by bisection on c.

    Between two certified critical values whose alpha and beta both differ,
    alpha and beta step at different places, and a c between the steps can
    trade better than either end.  Each such interval is halved until the
    ends share a decision rule, are ``tol_c`` apart, or differ by less than
    ``eps`` in alpha or in beta (then every point inside is within ``eps``
    of dominating by one of the ends).  Every midpoint is certified on the
    boundary grid.  Returns the new points only.
    """
    pts = sorted(points, key=lambda p: p.c)
    level = list(zip(pts, pts[1:]))
    added = []

    def open_gap(lo, hi):
        if hi.c - lo.c <= tol_c or lo.alpha - hi.alpha < eps or hi.beta - lo.beta < eps:
            return False
        sig_lo = oc.signature(lo.c)
        return sig_lo is None or sig_lo != oc.signature(hi.c)

    while level:
        level = [(lo, hi) for lo, hi in level if open_gap(lo, hi)]
        mids = [0.5 * (lo.c + hi.c) for lo, hi in level]
        if threads > 1 and len(mids) > 1:
            with ThreadPoolExecutor(threads) as pool:
                new = list(pool.map(oc.at, mids))
        else:
            new = [oc.at(c) for c in mids]
        added += new
        level = [pair for (lo, hi), m in zip(level, new) for pair in ((lo, m), (m, hi))]
    return added


def pareto_frontier(design, hyp, n_p, settings=MooSettings(), threads=1, raw=False,
                    refine=None, **kwargs):
    """Certified (alpha, beta) frontier over critical values for pilot size ``n_p``.

    NSGA-II searches (c, phi0, phi1) jointly, maximising the go probability
    at phi0 in the null and the stop probability at phi1 in the alternative.
    Its surviving critical values are then re-certified on the boundary grid,
    gaps between them are refined by bisection (``refine``; by default only
    when decision rules can be compared cheaply, i.e. with a known SD), and
    the mutually nondominated subset is returned, sorted by c.  If the
    search never reaches a feasible pair, an even grid of c is certified
    instead.  With ``raw=True`` the uncertified optimiser front is returned
    as well.
    """
    oc = characteristics(design, hyp, n_p, **kwargs)
    problem = _Problem(oc, threads)
    pop = nsga2(problem.evaluate, problem.lower, problem.upper, settings)
    X, F, CV = pop.first_front()
    k = problem.k
    candidates = []
    for row, f, cv in zip(X, F, CV):
        if cv > 0:
            continue
        candidates.append((float(row[0]), -f[0], problem.rates(row[1:1 + k]),
                           1.0 + f[1], problem.rates(row[1 + k:1 + 2 * k])))
    if not candidates:
        # too small a search budget to reach the feasible set: certify an even c grid
        cs = np.linspace(problem.lower[0], problem.upper[0], settings.population)
        candidates = [(float(c), 0.0, None, 1.0, None) for c in cs]
    certified = nondominated(certify(oc, candidates, threads))
    if refine is None:
        refine = oc.signature(0.0) is not None
    if refine:
        certified = nondominated(certified + refine_gaps(oc, certified, threads=threads))
    certified.sort(key=lambda p: p.c)
    if raw:
        return certified, candidates
    return certified
