"""Exact power of the pilot progression test ``x(phi_hat) > c``.

The pilot recruits ``2 n_p`` participants (``n_p`` per arm); ``S`` is the
number of eligible patients who declined before the ``2 n_p``-th consent,
so ``phi_r_hat = 2 n_p / (2 n_p + S)``.  Given the follow-up and adherence
counts the test passes exactly when ``S <= s_tilde``, where ``s_tilde`` is
the largest ``s`` whose implied expected recruitment beats the required
sample size ``n_tilde``.  Pilot power is then a finite sum of negative
binomial cdf values weighted by the binomial (or multinomial) counts.
"""

import functools
import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericGuardError
from .model import cell_probabilities, expected_recruited, x_from_parts, x_to_power
from .stats import (
    binomial_pmf_array,
    compositions,
    log_factorial,
    neg_binomial_cdf_array,
    neg_binomial_quantile,
    _xlogy,
)

INDEPENDENT = "independent"
CORRELATED = "correlated"
MARGINAL = "marginal"
CONDITIONAL = "conditional"

# tail mass ignored when truncating the decliner count
S_CAP_TAIL = 1e-12
MAX_CORRELATED_NP = 150


@dataclass(frozen=True)
class PilotDesign:
    n_p: int
    c: float
    correlation_mode: str = INDEPENDENT
    adherence_estimator: str = MARGINAL

    def __post_init__(self):
        if self.n_p < 1:
            raise ValueError("n_p must be at least 1")
        if self.correlation_mode not in (INDEPENDENT, CORRELATED):
            raise ValueError(f"unknown correlation mode {self.correlation_mode!r}")
        if self.adherence_estimator not in (MARGINAL, CONDITIONAL):
            raise ValueError(f"unknown adherence estimator {self.adherence_estimator!r}")


@dataclass(frozen=True)
class PilotOutcome:
    """Observed pilot counts.

    ``s`` eligible patients declined; ``f0`` control participants were
    followed up; ``n11, n01, n00, n10`` are the intervention-arm
    (adhered, followed-up) cells.  ``sigma_hat`` is the pooled outcome SD,
    needed only when the SD is estimated.
    """

    s: int
    f0: int
    n11: int
    n01: int
    n00: int
    n10: int
    sigma_hat: Optional[float] = None

    def __post_init__(self):
        counts = (self.s, self.f0, self.n11, self.n01, self.n00, self.n10)
        if any(int(v) != v or v < 0 for v in counts):
            raise ValueError(f"counts must be nonnegative integers, got {counts}")
        if self.f0 > self.n_p:
            raise ValueError("f0 cannot exceed the per-arm size")
        if self.sigma_hat is not None and not self.sigma_hat > 0:
            raise ValueError("sigma_hat must be positive")

    @property
    def n_p(self):
        return self.n11 + self.n01 + self.n00 + self.n10


@dataclass(frozen=True)
class PilotEstimates:
    phi_r_hat: float
    phi_f_hat: float
    phi_a_hat: float


@dataclass(frozen=True)
class Decision:
    go: bool
    statistic: float
    predicted_power: float
    estimates: PilotEstimates


def estimates(outcome, design):
    n_p = outcome.n_p
    if n_p != design.n_p:
        raise ValueError(f"outcome has {n_p} intervention participants, design says {design.n_p}")
    phi_r = 2 * n_p / (2 * n_p + outcome.s)
    phi_f = (outcome.f0 + outcome.n11 + outcome.n01) / (2 * n_p)
    if design.adherence_estimator == MARGINAL:
        phi_a = (outcome.n11 + outcome.n10) / n_p
    else:
        followed = outcome.n11 + outcome.n01
        phi_a = outcome.n11 / followed if followed else 0.0
    return PilotEstimates(phi_r, phi_f, phi_a)


def required_sample(design, phi_f_hat, phi_a_hat, c, sigma=None):
    """Expected definitive recruitment needed for ``x(phi_hat) > c``."""
    if c <= 0:
        raise ValueError("required_sample needs c > 0")
    sigma = design.sigma0 if sigma is None else sigma
    mu = design.mu
    if phi_a_hat * phi_f_hat == 0:
        return math.inf
    return (c * c * (4.0 * sigma * sigma + 2.0 * mu * mu * phi_a_hat * (1.0 - phi_a_hat))
            / (mu * mu * phi_a_hat * phi_a_hat * phi_f_hat))


def _implied_recruitment(design, n_p, s):
    return expected_recruited(design, 2 * n_p / (2 * n_p + s))


def s_tilde(design, n_p, n_tilde, s_cap=None):
    """Largest decliner count ``s`` still giving ``E[N | phi_r_hat] > n_tilde``.

    Bisection over ``[0, s_cap]``; ``None`` if even ``s = 0`` fails.  The
    default cap ``2 n_p n_e`` is where the implied rate drops below
    ``1 / n_e``.
    """
    if n_tilde < 0:
        raise ValueError("n_tilde must be nonnegative")
    if s_cap is None:
        s_cap = 2 * n_p * design.n_e
    passes = lambda s: _implied_recruitment(design, n_p, s) > n_tilde  # noqa: E731
    if not passes(0):
        return None
    if passes(s_cap):
        return s_cap
    lo, hi = 0, s_cap  # passes(lo), not passes(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo


def decliner_cap(n_p, phi_r):
    """Decliner count beyond which the remaining mass is below ``S_CAP_TAIL``."""
    if phi_r <= 0:
        raise NumericGuardError("recruitment rate 0 gives an unbounded decliner count")
    return neg_binomial_quantile(1.0 - S_CAP_TAIL, 2 * n_p, phi_r)


class PilotEngine:
    """Per-(design, n_p) caches shared by every pilot power evaluation.

    Holds ``E[N | 2n_p / (2n_p + s)]`` for s = 0..cap, grown on demand.
    """

    def __init__(self, design, n_p):
        self.design = design
        self.n_p = n_p
        self._recruit = np.empty(0)
        self._lock = threading.Lock()

    def recruitment(self, cap):
        with self._lock:
            return self._recruitment(cap)

    def _recruitment(self, cap):
        if cap >= self._recruit.size:
            size = max(cap + 1, 2 * self._recruit.size, 256)
            s = np.arange(self._recruit.size, size)
            ext = expected_recruited(self.design, 2 * self.n_p / (2 * self.n_p + s))
            # E[N] is monotone in the rate; remove rounding-level wiggles so
            # the table can be binary searched
            self._recruit = np.minimum.accumulate(np.concatenate([self._recruit, ext]))
        return self._recruit[: cap + 1]

    def s_tilde_array(self, n_tilde, cap):
        """Vectorised s_tilde; -1 means no s passes, ``cap`` means all do."""
        table = self.recruitment(cap)
        n_tilde = np.asarray(n_tilde, dtype=float)
        count = np.searchsorted(-table, -n_tilde.ravel(), side="left")
        return np.minimum(count - 1, cap).reshape(n_tilde.shape)

    def n_tilde(self, c, phi_f_hat, phi_a_hat, sigma):
        mu = self.design.mu
        phi_f_hat = np.asarray(phi_f_hat, dtype=float)
        phi_a_hat = np.asarray(phi_a_hat, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (c * c * (4.0 * sigma * sigma + 2.0 * mu * mu * phi_a_hat * (1.0 - phi_a_hat))
                   / (mu * mu * phi_a_hat ** 2 * phi_f_hat))
        return np.where(phi_a_hat * phi_f_hat == 0, np.inf, out)

    def s_tilde_marginal(self, c, sigma, cap):
        """s_tilde for every (a, f) with a in 0..n_p and f in 0..2n_p."""
        n_p = self.n_p
        if c < 0:
            return np.full((n_p + 1, 2 * n_p + 1), cap)
        a_hat = np.arange(n_p + 1)[:, None] / n_p
        f_hat = np.arange(2 * n_p + 1)[None, :] / (2 * n_p)
        return self.s_tilde_array(self.n_tilde(c, f_hat, a_hat, sigma), cap)


@functools.lru_cache(maxsize=64)
def engine_for(design, n_p):
    return PilotEngine(design, n_p)


def _statistic_sigma(design, rates):
    return design.sigma0 if rates.sigma is None else rates.sigma


def _nb_cdf_at(n_p, phi_r, s_tilde_values, cap):
    cdf = neg_binomial_cdf_array(2 * n_p, phi_r, cap)
    return np.where(s_tilde_values < 0, 0.0, cdf[np.maximum(s_tilde_values, 0)])


def _power_independent(design, pilot, rates):
    n_p = pilot.n_p
    engine = engine_for(design, n_p)
    cap = decliner_cap(n_p, rates.phi_r)
    st = engine.s_tilde_marginal(pilot.c, _statistic_sigma(design, rates), cap)
    go_given_af = _nb_cdf_at(n_p, rates.phi_r, st, cap)
    pa = binomial_pmf_array(n_p, rates.phi_a)
    pf = binomial_pmf_array(2 * n_p, rates.phi_f)
    return float(pa @ go_given_af @ pf)


@functools.lru_cache(maxsize=8)
def _cells(n_p):
    return compositions(n_p, 4)


def _intervention_cells_pmf(n_p, rates):
    cells = _cells(n_p)
    probs = np.array(cell_probabilities(rates))
    logp = (log_factorial(n_p) - log_factorial(cells).sum(axis=1)
            + _xlogy(cells, probs[None, :]).sum(axis=1))
    return cells, np.exp(logp)


def _power_correlated(design, pilot, rates):
    n_p = pilot.n_p
    if n_p > MAX_CORRELATED_NP:
        raise NumericGuardError(
            f"correlated enumeration limited to n_p <= {MAX_CORRELATED_NP}, got {n_p}")
    engine = engine_for(design, n_p)
    cap = decliner_cap(n_p, rates.phi_r)
    sigma = _statistic_sigma(design, rates)
    cells, pmf = _intervention_cells_pmf(n_p, rates)
    n11, n01, _, n10 = cells.T
    f1 = n11 + n01
    p_f0 = binomial_pmf_array(n_p, rates.phi_f)
    nb_cdf = neg_binomial_cdf_array(2 * n_p, rates.phi_r, cap)

    if pilot.adherence_estimator == MARGINAL:
        joint = np.zeros((n_p + 1, n_p + 1))  # (a, f1)
        np.add.at(joint, (n11 + n10, f1), pmf)
        # convolve intervention follow-up with control follow-up
        prob = np.zeros((n_p + 1, 2 * n_p + 1))
        for f0 in range(n_p + 1):
            prob[:, f0:f0 + n_p + 1] += joint * p_f0[f0]
        if pilot.c < 0:
            return float(prob.sum())
        st = engine.s_tilde_marginal(pilot.c, sigma, cap)
    else:
        joint = np.zeros((n_p + 1, n_p + 1))  # (n11, f1)
        np.add.at(joint, (n11, f1), pmf)
        prob = np.zeros((n_p + 1, n_p + 1, 2 * n_p + 1))
        for f0 in range(n_p + 1):
            prob[:, np.arange(n_p + 1), np.arange(n_p + 1) + f0] += joint * p_f0[f0]
        if pilot.c < 0:
            return float(prob.sum())
        k = np.arange(n_p + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            a_hat = np.where(k[None, :] > 0, k[:, None] / k[None, :], 0.0)
        f_hat = np.arange(2 * n_p + 1) / (2 * n_p)
        n_til = engine.n_tilde(pilot.c, f_hat[None, None, :], a_hat[:, :, None], sigma)
        st = engine.s_tilde_array(n_til, cap)
    go = np.where(st < 0, 0.0, nb_cdf[np.maximum(st, 0)])
    return float(np.sum(prob * go))


def pilot_power(design, pilot, rates):
    """Pr[x(phi_hat) > c | rates] for a pilot of ``n_p`` per arm."""
    if pilot.correlation_mode == INDEPENDENT:
        if pilot.adherence_estimator != MARGINAL:
            raise ValueError("the conditional adherence estimator needs correlated mode")
        if rates.phi_or != 1.0:
            raise ValueError("independent mode requires phi_or = 1")
        return min(max(_power_independent(design, pilot, rates), 0.0), 1.0)
    return min(max(_power_correlated(design, pilot, rates), 0.0), 1.0)


def statistic_from_estimates(design, est, sigma=None):
    if est.phi_a_hat == 0 or est.phi_f_hat == 0:
        return 0.0
    sigma = design.sigma0 if sigma is None else sigma
    e_n = expected_recruited(design, est.phi_r_hat)
    return float(x_from_parts(design.mu, sigma, e_n, est.phi_f_hat, est.phi_a_hat))


def decide(design, pilot, outcome):
    """Go/stop for observed pilot counts.

    When ``outcome.sigma_hat`` is set it replaces the design SD in the
    statistic.
    """
    est = estimates(outcome, pilot)
    x = statistic_from_estimates(design, est, outcome.sigma_hat)
    return Decision(go=x > pilot.c, statistic=x, predicted_power=x_to_power(design, x),
                    estimates=est)
