"""Monte Carlo simulation of pilot and definitive trials.

Used as an oracle for the exact calculations: it draws the raw counts from
the generative model and applies the decision rules directly, without any
of the closed-form shortcuts (no s_tilde tables, no negative binomial cdf).
Replicates are split into fixed-size chunks, each with its own
``SeedSequence`` child, so results do not depend on the thread count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import cell_probabilities, expected_recruited, x_from_parts
from .pilot import CONDITIONAL, MARGINAL

CHUNK = 20_000


@dataclass(frozen=True)
class SimSettings:
    replicates: int = 100_000
    seed: int = 12345
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


@dataclass(frozen=True)
class SimResult:
    estimate: float
    se: float
    replicates: int

    def z_score(self, target):
        """Standardised distance to ``target`` using the binomial SE at ``target``.

        The SE under the hypothesised rate stays informative when the
        empirical rate sits at or next to 0 or 1, where ``se`` collapses.
        The empirical SE is used only when ``target`` itself is 0 or 1.
        """
        se = math.sqrt(max(target * (1.0 - target), 0.0) / self.replicates)
        if se == 0:
            se = self.se
        if se == 0:
            return 0.0 if abs(self.estimate - target) < 1e-12 else math.inf
        return (self.estimate - target) / se


def _run_chunks(sim, count_successes):
    sizes = [CHUNK] * (sim.replicates // CHUNK)
    if sim.replicates % CHUNK:
        sizes.append(sim.replicates % CHUNK)
    seeds = np.random.SeedSequence(sim.seed).spawn(len(sizes))
    jobs = [(np.random.default_rng(s), n) for s, n in zip(seeds, sizes)]
    if sim.threads > 1:
        with ThreadPoolExecutor(sim.threads) as pool:
            hits = list(pool.map(lambda job: count_successes(*job), jobs))
    else:
        hits = [count_successes(*job) for job in jobs]
    p = sum(hits) / sim.replicates
    return SimResult(p, math.sqrt(p * (1.0 - p) / sim.replicates), sim.replicates)


def draw_pilot(rng, n_p, rates, size, sigma=None):
    """Raw pilot counts for ``size`` replicates.

    Decliners are counted by screening: each of the ``2 n_p`` consents is
    preceded by a geometric number of refusals.
    """
    if rates.phi_r <= 0:
        raise ValueError("recruitment rate must be positive to simulate")
    s = (rng.geometric(rates.phi_r, size=(size, 2 * n_p)) - 1).sum(axis=1)
    cells = rng.multinomial(n_p, np.array(cell_probabilities(rates)), size=size)
    f0 = rng.binomial(n_p, rates.phi_f, size=size)
    out = {"s": s, "f0": f0, "n11": cells[:, 0], "n01": cells[:, 1],
           "n00": cells[:, 2], "n10": cells[:, 3]}
    if sigma is not None:
        f = f0 + cells[:, 0] + cells[:, 1]
        dof = np.maximum(f - 1, 1)
        var = sigma * sigma * rng.chisquare(dof) / dof
        out["sigma_hat"] = np.where(f >= 2, np.sqrt(var), np.nan)
    return out


def pilot_estimates(counts, n_p, adherence_estimator=MARGINAL):
    phi_r = 2 * n_p / (2 * n_p + counts["s"])
    phi_f = (counts["f0"] + counts["n11"] + counts["n01"]) / (2 * n_p)
    if adherence_estimator == CONDITIONAL:
        followed = counts["n11"] + counts["n01"]
        phi_a = np.where(followed > 0, counts["n11"] / np.maximum(followed, 1), 0.0)
    else:
        phi_a = (counts["n11"] + counts["n10"]) / n_p
    return phi_r, phi_f, phi_a


def statistic_batch(design, phi_r, phi_f, phi_a, sigma):
    """x(phi_hat) for arrays of estimates; NaN sigma (too few followed up) gives 0."""
    r_vals, inv = np.unique(phi_r, return_inverse=True)
    e_n = expected_recruited(design, r_vals)[inv]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), phi_r.shape)
    with np.errstate(invalid="ignore"):
        x = x_from_parts(design.mu, np.where(np.isnan(sigma), 1.0, sigma), e_n, phi_f, phi_a)
    return np.where(np.isnan(sigma) | (phi_a * phi_f == 0), 0.0, x)


def simulate_pilot(design, pilot, rates, sim, estimate_sigma=False, thresholds=None):
    """Empirical go rate of the pilot.

    By default the rule is ``x(phi_hat) > c`` with the design SD, or with
    the pooled pilot SD when ``estimate_sigma``.  Passing a
    ``ThresholdTriple`` switches to conventional per-estimate thresholds.
    """
    n_p = pilot.n_p
    sigma_true = design.sigma0 if rates.sigma is None else rates.sigma

    def hits(rng, size):
        counts = draw_pilot(rng, n_p, rates, size, sigma_true if estimate_sigma else None)
        if thresholds is not None:
            phi_r, phi_f, phi_a = pilot_estimates(counts, n_p, MARGINAL)
            go = (phi_f > thresholds.c_f) & (phi_a > thresholds.c_a) & (phi_r > thresholds.c_r)
            return int(go.sum())
        phi_r, phi_f, phi_a = pilot_estimates(counts, n_p, pilot.adherence_estimator)
        sigma = counts["sigma_hat"] if estimate_sigma else design.sigma0
        x = statistic_batch(design, phi_r, phi_f, phi_a, sigma)
        return int((x > pilot.c).sum())

    return _run_chunks(sim, hits)


def simulate_definitive(design, rates, sim, mu=None):
    """Empirical power of the complete-case z-test in the definitive trial.

    ``mu`` overrides the true effect (the test stays one-sided in the
    direction of ``design.mu``); ``mu=0`` gives the type I error.

    Recruitment is Bin(n_e, phi_r) capped at n_t; an odd total puts the
    extra participant in control.  The test uses the true per-arm outcome
    variances (sigma^2 in control, sigma^2 + mu^2 q (1 - q) in the
    intervention arm, q the adherence rate among the followed-up).
    """
    sigma = design.sigma0 if rates.sigma is None else rates.sigma
    mu = design.mu if mu is None else float(mu)
    p11, p01, _, _ = cell_probabilities(rates)
    q = p11 / (p11 + p01) if p11 + p01 > 0 else 0.0
    var1 = sigma * sigma + mu * mu * q * (1.0 - q)
    z_crit = design.z_alpha
    sign = 1.0 if design.mu > 0 else -1.0

    def hits(rng, size):
        n = np.minimum(rng.binomial(design.n_e, rates.phi_r, size=size), design.n_t)
        n_control = (n + 1) // 2
        n_treat = n // 2
        f0 = rng.binomial(n_control, rates.phi_f)
        f1 = rng.binomial(n_treat, rates.phi_f)
        adhered = rng.binomial(f1, q)
        ok = (f0 > 0) & (f1 > 0)
        f0s, f1s = np.maximum(f0, 1), np.maximum(f1, 1)
        # sufficient statistics: sample means given the counts
        mean0 = rng.normal(0.0, 1.0, size) * sigma / np.sqrt(f0s)
        mean1 = (adhered * mu + rng.normal(0.0, 1.0, size) * sigma * np.sqrt(f1s)) / f1s
        z = sign * (mean1 - mean0) / np.sqrt(sigma * sigma / f0s + var1 / f1s)
        return int(((z > z_crit) & ok).sum())

    return _run_chunks(sim, hits)
