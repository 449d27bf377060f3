"""Recruitment, follow-up and adherence model of the definitive trial.

The definitive trial recruits from ``n_e`` eligible patients, each
consenting with probability ``phi_r``, and stops at ``n_t``.  Its power is
``Phi(x(phi) - z_{1-alpha})`` where

    x(phi) = phi_a * mu * sqrt(phi_f * E[N | phi_r])
             / sqrt(4 sigma^2 + 2 mu^2 phi_a (1 - phi_a)).
"""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParametrizationError
from .stats import _xlogy, log_binom_coef, std_normal_cdf, std_normal_quantile

_CHUNK = 4096


@dataclass(frozen=True)
class Rates:
    """Feasibility parameters.

    ``phi_a`` is adherence conditional on follow-up; ``phi_or`` the odds
    ratio linking follow-up and adherence (1 = independent).  ``sigma`` is
    only used when the outcome SD is treated as unknown; ``None`` means
    "use the design value".
    """

    phi_r: float
    phi_f: float
    phi_a: float
    phi_or: float = 1.0
    sigma: Optional[float] = None

    def __post_init__(self):
        for name in ("phi_r", "phi_f", "phi_a"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if not self.phi_or > 0:
            raise ValueError(f"phi_or must be positive, got {self.phi_or!r}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")

    def with_sigma(self, sigma):
        return Rates(self.phi_r, self.phi_f, self.phi_a, self.phi_or, sigma)


@dataclass(frozen=True)
class DefinitiveDesign:
    n_t: int
    n_e: int
    mu: float
    sigma0: float = 1.0
    alpha_one_sided: float = 0.025

    def __post_init__(self):
        if self.n_t < 2 or self.n_t % 2:
            raise ValueError(f"n_t must be a positive even number, got {self.n_t!r}")
        if self.n_e < self.n_t:
            raise ValueError(f"n_e ({self.n_e}) must be at least n_t ({self.n_t})")
        if self.mu == 0:
            raise ValueError("mu must be nonzero")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if not (0.0 < self.alpha_one_sided < 0.5):
            raise ValueError("alpha_one_sided must be in (0, 0.5)")
        if self.n_t // 2 < 30:
            warnings.warn(
                f"per-arm target {self.n_t // 2} is below 30; the normal "
                "approximation behind the power formula may be poor",
                stacklevel=3,
            )

    @property
    def z_alpha(self):
        return std_normal_quantile(1.0 - self.alpha_one_sided)


def cell_probabilities(rates):
    """(p11, p01, p00, p10) for the intervention-arm follow-up x adherence table.

    First index is adherence, second follow-up.
    """
    p11 = rates.phi_a * rates.phi_f
    p01 = rates.phi_f - p11
    denom = p11 + rates.phi_or * p01
    if denom == 0:
        # nobody followed up: the split of the lost between adherers and
        # non-adherers is not identified by (phi_f, phi_a); use phi_a
        # (the odds-ratio limit as p01 -> 0 with phi_or fixed)
        p00 = (1.0 - rates.phi_a) * (1.0 - p11 - p01) if rates.phi_f == 0 else 0.0
    else:
        p00 = rates.phi_or * p01 * (1.0 - p11 - p01) / denom
    p10 = 1.0 - p11 - p01 - p00
    cells = (p11, p01, p00, p10)
    for v in cells:
        if v < -1e-12 or v > 1.0 + 1e-12:
            raise InvalidParametrizationError(f"cell probabilities {cells} outside [0, 1]")
    return tuple(min(max(v, 0.0), 1.0) for v in cells)


def expected_recruited(design, phi_r):
    """E[N | phi_r] for the binomial recruitment truncated at ``n_t``.

    Accepts a scalar or an array of recruitment rates.
    """
    p = np.asarray(phi_r, dtype=float)
    flat = p.ravel()
    out = np.empty(flat.shape)
    k = np.arange(design.n_t)
    logc = log_binom_coef(design.n_e, k)
    for start in range(0, flat.size, _CHUNK):
        pc = flat[start:start + _CHUNK, None]
        pmf = np.exp(logc + _xlogy(k, pc) + _xlogy(design.n_e - k, 1.0 - pc))
        below = pmf.sum(axis=1)
        out[start:start + _CHUNK] = pmf @ k + design.n_t * np.clip(1.0 - below, 0.0, 1.0)
    out = np.clip(out, 0.0, design.n_t)
    return float(out[0]) if p.ndim == 0 else out.reshape(p.shape)


def x_from_parts(mu, sigma, e_n, phi_f, phi_a):
    """The x statistic from its ingredients; broadcasts over arrays."""
    phi_a = np.asarray(phi_a, dtype=float)
    num = phi_a * abs(mu) * np.sqrt(np.asarray(phi_f) * np.asarray(e_n))
    den = np.sqrt(4.0 * np.asarray(sigma) ** 2 + 2.0 * mu * mu * phi_a * (1.0 - phi_a))
    return num / den


def x_statistic(design, rates):
    if rates.phi_a * design.mu == 0:
        return 0.0
    sigma = design.sigma0 if rates.sigma is None else rates.sigma
    e_n = expected_recruited(design, rates.phi_r)
    return float(x_from_parts(design.mu, sigma, e_n, rates.phi_f, rates.phi_a))


def definitive_power(design, rates):
    return std_normal_cdf(x_statistic(design, rates) - design.z_alpha)


def power_to_x(design, power):
    """Statistic threshold corresponding to a definitive-trial power."""
    return std_normal_quantile(power) + design.z_alpha


def x_to_power(design, x):
    return std_normal_cdf(x - design.z_alpha)


def max_statistic(design, sigma=None):
    """x at perfect rates (1, 1, 1), the largest value the statistic can take."""
    sigma = design.sigma0 if sigma is None else sigma
    return abs(design.mu) * math.sqrt(design.n_t) / (2.0 * sigma)
