"""Pilot power when the outcome SD is estimated from the pilot as well.

With ``f`` participants followed up across both arms the pooled variance
satisfies ``sigma_hat^2 ~ sigma^2 chi2_{f-1} / (f-1)``, and the test
``x(phi_hat, sigma_hat) > c`` passes exactly when ``sigma_hat^2 < y`` with

    y = phi_a_hat^2 mu^2 phi_f_hat E[N | phi_r_hat] / (4 c^2)
        - mu^2 phi_a_hat (1 - phi_a_hat) / 2.

Only the independent follow-up/adherence model is supported here.
"""

from dataclasses import dataclass

import numpy as np

from .model import expected_recruited
from .pilot import INDEPENDENT, MARGINAL, engine_for
from .stats import (
    binomial_pmf_array,
    chisq_cdf_array,
    neg_binomial_pmf_array,
    neg_binomial_quantile,
)

# (a, f) cells whose probability is below this are skipped
_NEGLIGIBLE = 1e-16


@dataclass(frozen=True)
class VarianceConfig:
    sigma_floor: float
    s_quantile: float = 0.999

    def __post_init__(self):
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        if not (0.9 <= self.s_quantile < 1.0):
            raise ValueError("s_quantile must lie in [0.9, 1)")


def variance_cutoff(design, est, c):
    """Largest sample variance that still gives a 'go' for these estimates."""
    if c <= 0:
        raise ValueError("variance_cutoff needs c > 0")
    mu = design.mu
    e_n = expected_recruited(design, est.phi_r_hat)
    return (est.phi_a_hat ** 2 * mu * mu * est.phi_f_hat * e_n / (4.0 * c * c)
            - 0.5 * mu * mu * est.phi_a_hat * (1.0 - est.phi_a_hat))


def decliner_limit(n_p, phi_r, s_quantile):
    return neg_binomial_quantile(s_quantile, 2 * n_p, phi_r)


def go_kernel(design, n_p, c, sigma, s_max, a_keep=None, f_keep=None):
    """Pr[go | a, f, s] for a in 0..n_p, f in 0..2n_p, s in 0..s_max.

    ``a_keep``/``f_keep`` are boolean masks; excluded rows are left at 0.
    """
    engine = engine_for(design, n_p)
    recruit = engine.recruitment(s_max)
    a_idx = np.arange(n_p + 1) if a_keep is None else np.flatnonzero(a_keep)
    f_idx = np.arange(2, 2 * n_p + 1)
    if f_keep is not None:
        f_idx = f_idx[f_keep[2:]]
    out = np.zeros((n_p + 1, 2 * n_p + 1, s_max + 1))
    if a_idx.size == 0 or f_idx.size == 0:
        return out

    a_hat = (a_idx / n_p)[:, None, None]
    f_hat = (f_idx / (2 * n_p))[None, :, None]
    df = (f_idx - 1.0)[None, :, None]
    if c <= 0:
        # the statistic is >= 0, and > 0 once anything adheres
        go = np.broadcast_to((a_hat > 0) | (c < 0), (a_idx.size, f_idx.size, s_max + 1))
        out[np.ix_(a_idx, f_idx)] = go.astype(float)
        return out

    mu2 = design.mu ** 2
    y = (a_hat ** 2 * mu2 * f_hat * recruit[None, None, :] / (4.0 * c * c)
         - 0.5 * mu2 * a_hat * (1.0 - a_hat))
    block = np.zeros(y.shape)
    pos = y > 0
    if pos.any():
        dfb = np.broadcast_to(df, y.shape)
        block[pos] = chisq_cdf_array(y[pos] * dfb[pos] / (sigma * sigma), dfb[pos])
    out[np.ix_(a_idx, f_idx)] = block
    return out


def _check_mode(pilot):
    if pilot.correlation_mode != INDEPENDENT or pilot.adherence_estimator != MARGINAL:
        raise ValueError("estimated-SD pilot power is implemented for the independent model only")


def pilot_power_unknown_sigma(design, pilot, rates, cfg):
    """Go probability of ``x(phi_hat, sigma_hat) > c`` at true rates and SD.

    The decliner count is summed up to its ``cfg.s_quantile`` quantile; the
    remaining tail is dropped, not renormalised.
    """
    _check_mode(pilot)
    if rates.phi_or != 1.0:
        raise ValueError("independent mode requires phi_or = 1")
    n_p = pilot.n_p
    sigma = design.sigma0 if rates.sigma is None else rates.sigma
    s_max = decliner_limit(n_p, rates.phi_r, cfg.s_quantile)
    pa = binomial_pmf_array(n_p, rates.phi_a)
    pf = binomial_pmf_array(2 * n_p, rates.phi_f)
    kernel = go_kernel(design, n_p, pilot.c, sigma, s_max,
                       a_keep=pa > _NEGLIGIBLE, f_keep=pf > _NEGLIGIBLE)
    ps = neg_binomial_pmf_array(2 * n_p, rates.phi_r, s_max)
    h = pa @ (kernel @ ps) @ pf
    return min(max(float(h), 0.0), 1.0)
