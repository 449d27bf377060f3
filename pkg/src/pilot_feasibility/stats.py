"""Special functions and discrete distributions.

Every pmf is evaluated in log space from a cached table of log-factorials
and exponentiated at the end, so sizes in the tens of thousands are fine.
Scalar functions take plain Python numbers; the ``*_array`` variants are
vectorised over numpy arrays and are what the hot loops use.
"""

import math
from statistics import NormalDist

import numpy as np

from .errors import DomainError, NumericGuardError

_SQRT2 = math.sqrt(2.0)
_STD_NORMAL = NormalDist()

# Chernoff bound cut-off for the incomplete gamma: a tail below exp(-40)
# (about 4e-18) is treated as exactly 0 or 1.
_GAMMA_TAIL_LOG = -40.0
_GAMMA_EPS = 1e-15
_GAMMA_MAX_ITER = 2000

MAX_NB_SUPPORT = 20_000_000


def _clamp_probability(value):
    if value < 0.0:
        if value < -1e-12:
            raise ArithmeticError(f"probability {value!r} below 0")
        return 0.0
    if value > 1.0:
        if value > 1.0 + 1e-12:
            raise ArithmeticError(f"probability {value!r} above 1")
        return 1.0
    return value


def _check_probability(p, name="p"):
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {p!r}")


# ---------------------------------------------------------------------------
# Normal distribution
# ---------------------------------------------------------------------------

def std_normal_cdf(z):
    """Standard normal distribution function."""
    return _clamp_probability(0.5 * math.erfc(-z / _SQRT2))


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` for ``0 < p < 1``."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"normal quantile needs 0 < p < 1, got {p!r}")
    z = _STD_NORMAL.inv_cdf(p)
    # one Newton step against our own cdf keeps the pair self-consistent
    dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if dens > 1e-300:
        z -= (std_normal_cdf(z) - p) / dens
    return z


def std_normal_cdf_array(z):
    z = np.asarray(z, dtype=float)
    return 0.5 * np.vectorize(math.erfc, otypes=[float])(-z / _SQRT2)


# ---------------------------------------------------------------------------
# Log-factorials
# ---------------------------------------------------------------------------

_LOG_FACT = np.zeros(1)


def log_factorial(n):
    """log(n!) for integer (array) ``n``, from a cached lgamma table."""
    global _LOG_FACT
    n = np.asarray(n)
    top = int(n.max()) if n.size else 0
    if top >= _LOG_FACT.size:
        size = max(top + 1, 2 * _LOG_FACT.size, 1024)
        old = _LOG_FACT.size
        ext = np.array([math.lgamma(k + 1.0) for k in range(old, size)])
        _LOG_FACT = np.concatenate([_LOG_FACT, ext])
    out = _LOG_FACT[n]
    return float(out) if out.ndim == 0 else out


def log_binom_coef(n, k):
    return log_factorial(n) - log_factorial(k) - log_factorial(np.asarray(n) - k)


def _xlogy(x, y):
    """x*log(y) with the convention 0*log(0) = 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(y)
    return np.where(x == 0, 0.0, out)


# ---------------------------------------------------------------------------
# Binomial
# ---------------------------------------------------------------------------

def binomial_pmf(k, n, p):
    if k < 0 or k > n:
        raise DomainError(f"binomial pmf needs 0 <= k <= n, got k={k}, n={n}")
    _check_probability(p)
    logp = log_binom_coef(n, k) + float(_xlogy(k, p)) + float(_xlogy(n - k, 1.0 - p))
    return _clamp_probability(math.exp(logp))


def binomial_cdf(k, n, p):
    """Pr[Bin(n, p) <= k]."""
    if k < 0 or k > n:
        raise DomainError(f"binomial cdf needs 0 <= k <= n, got k={k}, n={n}")
    _check_probability(p)
    if k == n:
        return 1.0
    pmf = binomial_pmf_array(n, p)
    lower = float(np.sum(pmf[: k + 1]))
    upper = float(np.sum(pmf[k + 1:]))
    # sum the smaller tail for accuracy
    return _clamp_probability(lower if lower <= upper else 1.0 - upper)


def binomial_pmf_array(n, p):
    """pmf over k = 0..n; ``p`` may be an array, giving shape ``p.shape + (n+1,)``."""
    p = np.asarray(p, dtype=float)
    k = np.arange(n + 1)
    logc = log_binom_coef(n, k)
    pe = p[..., None]
    logp = logc + _xlogy(k, pe) + _xlogy(n - k, 1.0 - pe)
    return np.exp(logp)


def binomial_sf_array(n, p):
    """Pr[Bin(n, p) > k] for k = 0..n, along the last axis."""
    pmf = binomial_pmf_array(n, p)
    # reversed cumulative sum: tail mass strictly above k
    tail = np.cumsum(pmf[..., ::-1], axis=-1)[..., ::-1]
    sf = np.concatenate([tail[..., 1:], np.zeros(pmf.shape[:-1] + (1,))], axis=-1)
    return np.clip(sf, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Negative binomial (failures before the r-th success)
# ---------------------------------------------------------------------------

def neg_binomial_pmf_array(r, p, s_max):
    """pmf of the failure count at s = 0..s_max, for scalar or array ``p``."""
    if r < 1:
        raise DomainError("negative binomial needs r >= 1")
    p = np.asarray(p, dtype=float)
    s = np.arange(s_max + 1)
    logc = log_factorial(s + r - 1) - log_factorial(s) - log_factorial(r - 1)
    pe = p[..., None]
    logp = logc + r * _xlogy(1.0, pe) + _xlogy(s, 1.0 - pe)
    return np.exp(logp)


def neg_binomial_cdf_array(r, p, s_max):
    return np.clip(np.cumsum(neg_binomial_pmf_array(r, p, s_max), axis=-1), 0.0, 1.0)


def neg_binomial_pmf(s, r, p):
    if s < 0:
        raise DomainError("negative binomial support is s >= 0")
    _check_probability(p)
    return _clamp_probability(float(neg_binomial_pmf_array(r, p, s)[-1]))


def neg_binomial_cdf(s, r, p):
    """Pr[S <= s] where S counts failures before the r-th success."""
    if r < 1:
        raise DomainError("negative binomial needs r >= 1")
    _check_probability(p)
    if s < 0:
        return 0.0
    if p == 1.0:
        return 1.0
    if p == 0.0:
        return 0.0
    mean = r * (1.0 - p) / p
    if s > mean:
        # upper tail is short relative to the sum; use the binomial identity
        # Pr[S <= s] = Pr[Bin(r + s, p) >= r]
        pmf = binomial_pmf_array(r + s, p)
        return _clamp_probability(1.0 - float(np.sum(pmf[:r])))
    return _clamp_probability(float(np.sum(neg_binomial_pmf_array(r, p, s))))


def neg_binomial_quantile(q, r, p):
    """Smallest s with Pr[S <= s] >= q."""
    if r < 1:
        raise DomainError("negative binomial needs r >= 1")
    if not (0.0 < q < 1.0):
        raise DomainError(f"quantile level must be in (0, 1), got {q!r}")
    _check_probability(p)
    if p == 1.0:
        return 0
    if p == 0.0:
        raise DomainError("negative binomial with p = 0 has no finite quantile")
    mean = r * (1.0 - p) / p
    sd = math.sqrt(r * (1.0 - p)) / p
    s_max = int(mean + 12.0 * sd + 50)
    while True:
        if s_max > MAX_NB_SUPPORT:
            raise NumericGuardError(
                f"negative binomial quantile beyond {MAX_NB_SUPPORT} (r={r}, p={p})")
        cdf = neg_binomial_cdf_array(r, p, s_max)
        idx = int(np.searchsorted(cdf, q, side="left"))
        if idx <= s_max:
            return idx
        s_max *= 2


# ---------------------------------------------------------------------------
# Incomplete gamma and chi-squared
# ---------------------------------------------------------------------------

def _gamma_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a, x):
    # modified Lentz, returns the upper regularised tail Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def reg_lower_gamma(a, x):
    """Regularised lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise DomainError("incomplete gamma needs a > 0")
    if x < 0:
        raise DomainError("incomplete gamma needs x >= 0")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _clamp_probability(_gamma_series(a, x))
    return _clamp_probability(1.0 - _gamma_cont_frac(a, x))


def chisq_cdf(x, df):
    if df < 1:
        raise DomainError("chi-squared needs df >= 1")
    if x <= 0:
        return 0.0
    return reg_lower_gamma(0.5 * df, 0.5 * x)


def _gamma_series_array(a, x):
    # converged entries leave the working set every few sweeps; summing a
    # few extra negligible terms does not change them
    out = np.empty(a.size)
    idx = np.arange(a.size)
    ap = a.copy()
    t = 1.0 / a
    tot = t.copy()
    for it in range(1, _GAMMA_MAX_ITER + 1):
        ap += 1.0
        t *= x[idx] / ap if idx.size < a.size else x / ap
        tot += t
        if it % 4 == 0 or it == _GAMMA_MAX_ITER:
            done = np.abs(t) < np.abs(tot) * _GAMMA_EPS
            if done.any():
                out[idx[done]] = tot[done]
                keep = ~done
                idx, ap, t, tot = idx[keep], ap[keep], t[keep], tot[keep]
                if idx.size == 0:
                    break
    out[idx] = tot
    return out


def _gamma_cont_frac_array(a, x):
    tiny = 1e-300
    out = np.empty(a.size)
    idx = np.arange(a.size)
    b = x + 1.0 - a
    c = np.full(a.shape, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    ac = a
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - ac)
        b = b + 2.0
        d = an * d + b
        d[np.abs(d) < tiny] = tiny
        c = b + an / c
        c[np.abs(c) < tiny] = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if i % 4 == 0:
            done = np.abs(delta - 1.0) < _GAMMA_EPS
            if done.any():
                out[idx[done]] = h[done]
                keep = ~done
                idx, ac, b, c, d, h = idx[keep], ac[keep], b[keep], c[keep], d[keep], h[keep]
                if idx.size == 0:
                    break
    out[idx] = h
    return out


def reg_lower_gamma_array(a, x):
    """Vectorised P(a, x); same series / continued-fraction split as the scalar.

    Entries whose Chernoff tail bound is below exp(-40) are set to 0 or 1
    without iterating.
    """
    a, x = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    out = np.zeros(a.shape)
    pos = x > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pos, x / a, 1.0)
        chernoff = -a * (ratio - 1.0 - np.log(ratio))
    low = pos & (ratio < 1.0) & (chernoff < _GAMMA_TAIL_LOG)
    high = pos & (ratio > 1.0) & (chernoff < _GAMMA_TAIL_LOG)
    out[high] = 1.0
    work = pos & ~low & ~high
    if not work.any():
        return out

    aw = a[work]
    xw = x[work]
    # a takes few distinct values in practice (half-integers for chi-squared)
    ua, inv = np.unique(aw, return_inverse=True)
    lg = np.array([math.lgamma(v) for v in ua])[inv]
    logpref = -xw + aw * np.log(xw) - lg
    res = np.empty(aw.shape)

    ser = xw < aw + 1.0
    if ser.any():
        res[ser] = _gamma_series_array(aw[ser], xw[ser]) * np.exp(logpref[ser])
    cf = ~ser
    if cf.any():
        res[cf] = 1.0 - np.exp(logpref[cf]) * _gamma_cont_frac_array(aw[cf], xw[cf])

    out[work] = np.clip(res, 0.0, 1.0)
    return out


def chisq_cdf_array(x, df):
    x = np.asarray(x, dtype=float)
    df = np.asarray(df, dtype=float)
    if np.any(df < 1):
        raise DomainError("chi-squared needs df >= 1")
    return reg_lower_gamma_array(0.5 * df, 0.5 * np.maximum(x, 0.0))


# ---------------------------------------------------------------------------
# Multinomial
# ---------------------------------------------------------------------------

def multinomial_pmf(counts, probs):
    counts = [int(c) for c in counts]
    probs = [float(p) for p in probs]
    if len(counts) != len(probs):
        raise DomainError("counts and probs must have equal length")
    if any(c < 0 for c in counts):
        raise DomainError("counts must be nonnegative")
    if any(p < 0 or p > 1 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
        raise DomainError(f"cell probabilities must sum to 1, got {sum(probs)!r}")
    n = sum(counts)
    logp = log_factorial(n) - sum(log_factorial(c) for c in counts)
    logp += sum(float(_xlogy(c, p)) for c, p in zip(counts, probs))
    return _clamp_probability(math.exp(logp))


def compositions(n, parts):
    """All nonnegative integer vectors of length ``parts`` summing to ``n``.

    Returned as an int array of shape (C(n+parts-1, parts-1), parts).
    """
    if parts == 1:
        return np.array([[n]])
    rows = []
    for first in range(n + 1):
        rest = compositions(n - first, parts - 1)
        rows.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(rows)
