"""Null and alternative regions defined by definitive-trial power thresholds."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasibleHypothesisError, SigmaFloorError
from .model import expected_recruited, max_statistic, power_to_x, x_statistic

NULL = "null"
ALTERNATIVE = "alternative"
INDETERMINATE = "indeterminate"

DEFAULT_GRID_STEP = 0.005


@dataclass(frozen=True)
class HypothesisPair:
    p0: float
    p1: float
    x0: float
    x1: float
    sigma_floor: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.p0 < self.p1 < 1.0):
            raise ValueError(f"need 0 < p0 < p1 < 1, got p0={self.p0}, p1={self.p1}")
        if not self.x0 < self.x1:
            raise ValueError("x0 must be below x1")
        if self.sigma_floor is not None and not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")

    @classmethod
    def from_powers(cls, design, p0, p1, sigma_floor=None):
        return cls(p0, p1, power_to_x(design, p0), power_to_x(design, p1), sigma_floor)

    def threshold(self, which):
        if which == NULL:
            return self.x0
        if which == ALTERNATIVE:
            return self.x1
        raise ValueError(f"which must be {NULL!r} or {ALTERNATIVE!r}, got {which!r}")


def _sigma_of(design, rates):
    return design.sigma0 if rates.sigma is None else rates.sigma


def membership(h, design, rates):
    if h.sigma_floor is not None and not _sigma_of(design, rates) > h.sigma_floor:
        raise SigmaFloorError(
            f"sigma {_sigma_of(design, rates)} must exceed the floor {h.sigma_floor}")
    x = x_statistic(design, rates)
    if x <= h.x0:
        return NULL
    if x >= h.x1:
        return ALTERNATIVE
    return INDETERMINATE


def check_feasible(h, design):
    """Raise if the alternative region is empty (the null never is)."""
    sigma = design.sigma0 if h.sigma_floor is None else h.sigma_floor
    if max_statistic(design, sigma) < h.x1:
        raise InfeasibleHypothesisError(
            f"no rates reach power {h.p1}: max statistic "
            f"{max_statistic(design, sigma):.4f} < x1 = {h.x1:.4f}")


def follow_up_on_boundary(design, x_i, e_n, phi_a, sigma):
    """Follow-up rate solving x(phi) = x_i; broadcasts, no feasibility filtering."""
    phi_a = np.asarray(phi_a, dtype=float)
    mu = design.mu
    with np.errstate(divide="ignore", invalid="ignore"):
        return (x_i * x_i * (4.0 * np.asarray(sigma) ** 2 + 2.0 * mu * mu * phi_a * (1.0 - phi_a))
                / ((phi_a * mu) ** 2 * np.asarray(e_n)))


def boundary_follow_up(h, design, phi_r, phi_a, which, sigma=None):
    """Follow-up rate putting (phi_r, phi_f, phi_a) exactly on a hypothesis boundary.

    Returns ``None`` when the required rate is outside (0, 1].
    """
    if phi_a <= 0:
        return None
    e_n = expected_recruited(design, phi_r)
    if e_n <= 0:
        return None
    sigma = design.sigma0 if sigma is None else sigma
    phi_f = float(follow_up_on_boundary(design, h.threshold(which), e_n, phi_a, sigma))
    if not (0.0 < phi_f <= 1.0) or math.isnan(phi_f):
        return None
    return phi_f


def rate_grid(step=DEFAULT_GRID_STEP):
    if not (0.0 < step <= 0.1):
        raise ValueError(f"grid step must be in (0, 0.1], got {step}")
    n = int(math.floor(1.0 / step + 1e-9))
    return np.round(np.arange(1, n + 1) * step, 12)


@dataclass(frozen=True)
class BoundaryGrid:
    """Boundary points on a (phi_r, phi_a) grid, grouped by phi_r row.

    ``row`` indexes into ``phi_r_values``; points are sorted by row.
    """

    phi_r_values: np.ndarray
    row: np.ndarray
    phi_r: np.ndarray
    phi_a: np.ndarray
    phi_f: np.ndarray
    sigma: float

    def __len__(self):
        return len(self.phi_r)


def boundary_grid(design, x_i, step=DEFAULT_GRID_STEP, sigma=None):
    sigma = design.sigma0 if sigma is None else sigma
    g = rate_grid(step)
    e_n = expected_recruited(design, g)
    phi_f = follow_up_on_boundary(design, x_i, e_n[:, None], g[None, :], sigma)
    keep = (phi_f > 0) & (phi_f <= 1.0)
    rows, cols = np.nonzero(keep)
    used = np.unique(rows)
    remap = np.full(len(g), -1)
    remap[used] = np.arange(len(used))
    return BoundaryGrid(
        phi_r_values=g[used],
        row=remap[rows],
        phi_r=g[rows],
        phi_a=g[cols],
        phi_f=phi_f[rows, cols],
        sigma=float(sigma),
    )


def boundary_surface(h, design, grid_step=DEFAULT_GRID_STEP, which=NULL, sigma=None):
    """(phi_r, phi_a, phi_f) triples on the chosen boundary over a rate grid."""
    grid = boundary_grid(design, h.threshold(which), grid_step, sigma)
    return list(zip(grid.phi_r.tolist(), grid.phi_a.tolist(), grid.phi_f.tolist()))
