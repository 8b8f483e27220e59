"""Univariate sampling kernels used by every sampler in the package.

All samplers take an explicit ``numpy.random.Generator``; nothing here touches
global random state.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr

from .exceptions import InvalidInputError, NumericError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# standardized-bound thresholds for choosing a truncated-normal algorithm
_TAIL_START = 0.5
_NARROW_WIDTH = 2.5
_MAX_ROUNDS = 10_000


@dataclass(frozen=True)
class TruncInterval:
    """Open interval ``(lower, upper)``; bounds may be infinite or arrays."""

    lower: object = -np.inf
    upper: object = np.inf

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise InvalidInputError("interval bounds must not be NaN")
        if np.any(lo >= hi):
            raise InvalidInputError("interval must satisfy lower < upper")

    def contains(self, x):
        return (np.asarray(x) > self.lower) & (np.asarray(x) < self.upper)


@dataclass(frozen=True)
class SliceConfig:
    """Settings for one-dimensional slice sampling."""

    width: float = 1.0
    max_stepout: int = 50
    domain: TruncInterval = field(default_factory=TruncInterval)

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidInputError("slice width must be positive")
        if self.max_stepout < 1:
            raise InvalidInputError("max_stepout must be a positive integer")


def log_phi_diff(a, b):
    """Stable ``log(Phi(b) - Phi(a))`` for ``a < b`` (vectorized).

    When both bounds are positive the difference is evaluated on the mirrored
    lower tail, where ``log_ndtr`` keeps full relative precision.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a < b)):
        raise InvalidInputError("log_phi_diff requires a < b")
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    with np.errstate(divide="ignore"):
        x = log_ndtr(lo) - log_hi
    out = log_hi + _log1mexp(x)
    return out if out.ndim else float(out)


def _log1mexp(x):
    # log(1 - exp(x)) for x <= 0
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -math.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _std_truncnorm(alpha, beta, rng):
    """Standard normal draws restricted to ``(alpha, beta)`` elementwise."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    out = np.empty(alpha.shape)
    # mirror left tails onto the right so only one tail routine is needed
    mirror = beta < -_TAIL_START
    lo = np.where(mirror, -beta, alpha)
    hi = np.where(mirror, -alpha, beta)
    tail = lo > _TAIL_START
    narrow = ~tail & (hi - lo < _NARROW_WIDTH)
    bulk = ~tail & ~narrow
    if np.any(tail):
        out[tail] = _exp_tail(lo[tail], hi[tail], rng)
    if np.any(narrow):
        out[narrow] = _uniform_rejection(lo[narrow], hi[narrow], rng)
    if np.any(bulk):
        out[bulk] = _normal_rejection(lo[bulk], hi[bulk], rng)
    return np.where(mirror, -out, out)


def _exp_tail(lo, hi, rng):
    # translated-exponential proposal on (lo, hi), lo > 0 (Robert, 1995)
    rate = 0.5 * (lo + np.sqrt(lo * lo + 4.0))
    peak = np.clip(rate, lo, hi)
    width = hi - lo
    out = np.empty(lo.shape)
    todo = np.arange(lo.size)
    for _ in range(_MAX_ROUNDS):
        if todo.size == 0:
            return out
        r, lw, w, pk = rate[todo], lo[todo], width[todo], peak[todo]
        u = rng.random(todo.size)
        # inverse CDF of Exp(rate) truncated to (0, width)
        e = -np.log1p(u * np.expm1(-r * w)) / r
        z = lw + e
        logacc = -0.5 * (z - r) ** 2 + 0.5 * (pk - r) ** 2
        ok = (np.log(rng.random(todo.size)) < logacc) & (z > lw) & (z < lw + w)
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    raise NumericError("truncated-normal tail sampler did not terminate")


def _uniform_rejection(lo, hi, rng):
    mode = np.clip(0.0, lo, hi)
    out = np.empty(lo.shape)
    todo = np.arange(lo.size)
    for _ in range(_MAX_ROUNDS):
        if todo.size == 0:
            return out
        a, b, m = lo[todo], hi[todo], mode[todo]
        z = a + (b - a) * rng.random(todo.size)
        logacc = 0.5 * (m * m - z * z)
        ok = (np.log(rng.random(todo.size)) < logacc) & (z > a) & (z < b)
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    raise NumericError("truncated-normal uniform sampler did not terminate")


def _normal_rejection(lo, hi, rng):
    out = np.empty(lo.shape)
    todo = np.arange(lo.size)
    for _ in range(_MAX_ROUNDS):
        if todo.size == 0:
            return out
        z = rng.standard_normal(todo.size)
        ok = (z > lo[todo]) & (z < hi[todo])
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    raise NumericError("truncated-normal rejection sampler did not terminate")


def sample_truncnorm(mean, variance, interval, rng, size=None):
    """Draw from ``N(mean, variance)`` restricted to an open interval.

    ``mean``, ``variance`` and the interval bounds broadcast against each other
    (and against ``size`` if given). Deep tails use an exponential proposal,
    so intervals many standard deviations from the mean are handled exactly.

    Parameters
    ----------
    mean, variance : float or ndarray
    interval : TruncInterval
    rng : numpy.random.Generator
    size : int or tuple, optional

    Returns
    -------
    float or ndarray
        Draws strictly inside ``interval``.
    """
    if not isinstance(interval, TruncInterval):
        interval = TruncInterval(*interval)
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise InvalidInputError("variance must be positive")
    mean, sd, lower, upper = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.sqrt(variance),
        np.asarray(interval.lower, dtype=float), np.asarray(interval.upper, dtype=float))
    if size is not None:
        shape = np.broadcast_shapes(mean.shape, (size,) if np.isscalar(size) else tuple(size))
        mean, sd, lower, upper = (np.broadcast_to(v, shape) for v in (mean, sd, lower, upper))
    shape = mean.shape
    mean, sd, lower, upper = (v.ravel() for v in (mean, sd, lower, upper))
    x = mean + sd * _std_truncnorm((lower - mean) / sd, (upper - mean) / sd, rng)
    # rounding in the affine map can land exactly on a bound
    bad = ~((x > lower) & (x < upper))
    for _ in range(100):
        if not np.any(bad):
            break
        idx = np.flatnonzero(bad)
        x[idx] = mean[idx] + sd[idx] * _std_truncnorm(
            (lower[idx] - mean[idx]) / sd[idx], (upper[idx] - mean[idx]) / sd[idx], rng)
        bad = ~((x > lower) & (x < upper))
    else:
        raise NumericError("could not place a draw strictly inside the interval")
    x = x.reshape(shape)
    return x if x.ndim else float(x)


def truncnorm_mean(mean, sd, lower, upper):
    """Closed-form mean of a truncated normal (used by checks and reports)."""
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    log_z = log_phi_diff(a, b)
    log_pa = -0.5 * a * a - _LOG_SQRT_2PI if np.isfinite(a) else -np.inf
    log_pb = -0.5 * b * b - _LOG_SQRT_2PI if np.isfinite(b) else -np.inf
    return mean + sd * (np.exp(log_pa - log_z) - np.exp(log_pb - log_z))


def sample_inverse_gamma(shape, rate, rng, size=None):
    """Inverse-gamma draw with density proportional to ``x**(-shape-1) exp(-rate/x)``."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)):
        raise InvalidInputError("inverse-gamma shape and rate must be positive")
    if size is None:
        size = np.broadcast_shapes(shape.shape, rate.shape) or None
    x = rate / rng.gamma(shape, 1.0, size=size)
    return x if np.ndim(x) else float(x)


def inverse_gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def slice_sample_1d(log_density, x0, cfg, rng):
    """One stepping-out and shrinkage slice-sampling transition.

    Parameters
    ----------
    log_density : callable
        Unnormalized log density, scalar to scalar.
    x0 : float
        Current state; must lie in ``cfg.domain`` with finite log density.
    cfg : SliceConfig
    rng : numpy.random.Generator

    Returns
    -------
    float
        New state inside ``cfg.domain``.
    """
    lower = float(cfg.domain.lower)
    upper = float(cfg.domain.upper)
    x0 = float(x0)
    if not lower < x0 < upper:
        raise InvalidInputError(f"x0={x0!r} lies outside the slice domain")

    def logf(x):
        if not lower < x < upper:
            return -np.inf
        val = log_density(x)
        if np.isnan(val):
            raise NumericError(f"log density is NaN at x={x!r}", point=x)
        return val

    f0 = logf(x0)
    if not np.isfinite(f0):
        raise NumericError(f"log density is not finite at x0={x0!r}", point=x0)
    level = f0 - rng.exponential()

    w = cfg.width
    left = x0 - w * rng.random()
    right = left + w
    j = math.floor(cfg.max_stepout * rng.random())
    k = cfg.max_stepout - 1 - j
    while j > 0 and left > lower and logf(left) > level:
        left -= w
        j -= 1
    while k > 0 and right < upper and logf(right) > level:
        right += w
        k -= 1
    left = max(left, lower)
    right = min(right, upper)

    while True:
        x1 = left + (right - left) * rng.random()
        if logf(x1) > level:
            return x1
        if x1 < x0:
            left = x1
        elif x1 > x0:
            right = x1
        else:
            raise NumericError("slice shrank onto the current point", point=x0)
