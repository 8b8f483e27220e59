"""Soft-thresholding and the blocked three-component update of the precursor.

Given per-coordinate linear terms ``a`` (theta side) and ``c`` (beta side) and
quadratic coefficients ``d`` and ``e``, each coordinate has density

    exp(-0.5 * (d * theta**2 - 2 * a * theta + e * beta**2 - 2 * c * beta)),
    theta = sign(beta) * max(|beta| - kappa, 0),

which splits into three truncated-normal pieces indexed by
``b = sign(theta)`` in ``{-1, 0, 1}``. All weights are handled in log space.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .distributions import TruncInterval, log_phi_diff, sample_truncnorm, slice_sample_1d
from .exceptions import InvalidInputError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SIGNS = np.array([-1, 0, 1])


def soft_threshold(beta, kappa):
    beta = np.asarray(beta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        raise InvalidInputError("thresholds must be non-negative")
    return np.sign(beta) * np.maximum(np.abs(beta) - kappa, 0.0)


@dataclass(frozen=True)
class CoordCoeffs:
    """Per-coordinate coefficients; fields broadcast to a common length.

    ``d`` may be zero (no theta-side curvature) but ``e`` must be positive.
    """

    a: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        arrays = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float))
                                       for v in (self.a, self.c, self.d, self.e, self.kappa)))
        for name, arr in zip(("a", "c", "d", "e", "kappa"), arrays):
            object.__setattr__(self, name, arr)
        if np.any(self.d < 0) or np.any(~(self.e > 0)):
            raise InvalidInputError("need d >= 0 and e > 0 for every coordinate")
        if np.any(self.kappa < 0):
            raise InvalidInputError("thresholds must be non-negative")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.c))):
            raise InvalidInputError("linear coefficients must be finite")

    def __len__(self):
        return self.a.shape[0]

    def components(self):
        """Location and scale of the three truncated-normal pieces.

        Returns a dict keyed by ``b`` with ``(mean, sd, lower, upper)``.
        """
        de = self.d + self.e
        s1 = 1.0 / np.sqrt(de)
        k = self.kappa
        return {
            -1: ((self.a + self.c - self.d * k) / de, s1, -np.inf, -k),
            0: (self.c / self.e, 1.0 / np.sqrt(self.e), -k, k),
            1: ((self.a + self.c + self.d * k) / de, s1, k, np.inf),
        }


@dataclass(frozen=True)
class MixtureWeights:
    """Unnormalized log-weights; columns are ``b = -1, 0, 1``."""

    logw: np.ndarray

    @property
    def log_probs(self):
        shifted = self.logw - self.logw.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    @property
    def probs(self):
        return np.exp(self.log_probs)


def mixture_log_weights(co):
    """Log-weights of the three mixture components for every coordinate."""
    a, c, d, e, k = co.a, co.c, co.d, co.e, co.kappa
    de = d + e
    log_s1 = -0.5 * np.log(de)
    comps = co.components()

    mu_pos, s1 = comps[1][0], comps[1][1]
    mu_neg = comps[-1][0]
    logw_pos = ((a + c + d * k) ** 2 / (2 * de) - 0.5 * d * k * k - a * k
                + log_s1 + _LOG_SQRT_2PI + log_ndtr((mu_pos - k) / s1))
    logw_neg = ((a + c - d * k) ** 2 / (2 * de) - 0.5 * d * k * k + a * k
                + log_s1 + _LOG_SQRT_2PI + log_ndtr((-k - mu_neg) / s1))

    logw_zero = np.full(a.shape, -np.inf)
    live = k > 0
    if np.any(live):
        mu0, s0 = comps[0][0][live], comps[0][1][live]
        kl = k[live]
        lo, hi = (-kl - mu0) / s0, (kl - mu0) / s0
        # a tiny threshold can make the standardized bounds coincide: use width * density
        sep = lo < hi
        log_mass = np.log(2.0 * kl / s0) - 0.5 * (mu0 / s0) ** 2 - _LOG_SQRT_2PI
        if np.any(sep):
            log_mass[sep] = log_phi_diff(lo[sep], hi[sep])
        logw_zero[live] = c[live] ** 2 / (2 * e[live]) + np.log(s0) + _LOG_SQRT_2PI + log_mass
    return MixtureWeights(np.stack([logw_neg, logw_zero, logw_pos], axis=-1))


def sample_beta_coord(b, co, rng):
    """Draw each precursor coordinate from the piece selected by ``b``."""
    b = np.broadcast_to(np.asarray(b, dtype=int), co.a.shape)
    if np.any((b == 0) & (co.kappa == 0)):
        raise InvalidInputError("b = 0 requires a positive threshold")
    k = co.kappa
    de = co.d + co.e
    pos, neg = b == 1, b == -1
    slab_mean = (co.a + co.c + np.where(pos, co.d, -co.d) * k) / de
    mean = np.where(b == 0, co.c / co.e, slab_mean)
    var = np.where(b == 0, 1.0 / co.e, 1.0 / de)
    lower = np.where(pos, k, np.where(neg, -np.inf, -k))
    upper = np.where(neg, -k, np.where(pos, np.inf, k))
    return sample_truncnorm(mean, var, TruncInterval(lower, upper), rng)


def sample_mixture_labels(weights, rng):
    """Categorical draw of ``b`` from normalized log-weights (one uniform each)."""
    probs = weights.probs
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=-1)
    idx = (u[:, None] >= cum[:, :2]).sum(axis=-1)
    return _SIGNS[idx]


def blocked_beta_update(coeffs, rng):
    """Joint conditional draw of all precursor coordinates.

    Returns
    -------
    beta : ndarray
    b : ndarray of int
        Sign labels in ``{-1, 0, 1}``.
    theta : ndarray
        ``soft_threshold(beta, kappa)``; exactly zero wherever ``b == 0``.
    """
    b = sample_mixture_labels(mixture_log_weights(coeffs), rng)
    beta = np.atleast_1d(sample_beta_coord(b, coeffs, rng))
    theta = soft_threshold(beta, coeffs.kappa)
    return beta, b, theta


def kappa_slice_update(beta, theta_energy, prior_log_density, kappa0, cfg, rng):
    """Slice-sampling update of a shared threshold ``kappa0`` given ``beta``.

    The log target is ``prior_log_density(k) - 0.5 * theta_energy(theta_k)``
    with ``theta_k = soft_threshold(beta, k)``. ``theta_energy(idx, vals)``
    evaluates ``theta' M theta - 2 phi' theta`` for the vector that holds
    ``vals`` at ``idx`` and zeros elsewhere. The beta-side exponent does not
    depend on ``k`` and is left out.
    """
    beta = np.asarray(beta, dtype=float)
    abs_beta = np.abs(beta)
    # the support of theta_k is the set of the largest |beta_j|, a prefix of this order
    order = np.argsort(-abs_beta, kind="stable")
    abs_sorted = abs_beta[order]
    sign_sorted = np.sign(beta[order])
    ascending = abs_sorted[::-1]

    def log_target(k):
        lp = prior_log_density(k)
        if not np.isfinite(lp):
            return lp
        n_active = ascending.size - int(np.searchsorted(ascending, k, side="right"))
        vals = sign_sorted[:n_active] * (abs_sorted[:n_active] - k)
        return lp - 0.5 * theta_energy(order[:n_active], vals)

    return slice_sample_1d(log_target, kappa0, cfg, rng)
