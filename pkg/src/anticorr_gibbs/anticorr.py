"""Samplers for the anti-correlation Gaussian ``r ~ N((dI - M) x, dI - M)``.

Three interchangeable routes are provided:

* :class:`DirectAnticorr` factorizes ``dI - M`` once (Cholesky) and reuses it.
* :class:`HomoscedasticAnticorr` caches the factor of ``(lam + eps) I - X'X``
  so that ``M = X'X / sigma2`` can change scale every iteration for free.
* :func:`sample_anticorr_regression` uses a precomputed SVD of ``X`` for
  ``M = X' Omega X`` with diagonal ``Omega``; no factorization at call time.
* :func:`sample_anticorr_series` approximates the draw with a truncated
  Neumann series.

Every sampler accepts ``size`` for batched draws; rows are independent.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DefinitenessError, InvalidInputError
from .spectral_linalg import SvdFactors, _as_symmetric, spectral_upper_bound

DEFAULT_EPSILON = 1e-6
SERIES_EPS = 1e-8
SERIES_RHO = 2.0 / 3.0
_DEGENERATE_VAR = 1e-12


@dataclass(frozen=True)
class AntiCorrSpec:
    """Choice of the diagonal constant ``d`` for one augmentation."""

    d: float
    epsilon_margin: float = DEFAULT_EPSILON

    @classmethod
    def from_matrix(cls, m, epsilon=DEFAULT_EPSILON):
        return cls(d=choose_d(spectral_upper_bound(m), epsilon), epsilon_margin=epsilon)


@dataclass(frozen=True)
class RegressionOmega:
    """Diagonal noise precision ``Omega`` of a regression."""

    omega_diag: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega_diag, dtype=float)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvalidInputError("omega_diag must be a finite positive vector")
        object.__setattr__(self, "omega_diag", w)

    @property
    def b_omega(self):
        return 1.0 / float(self.omega_diag.max())

    @classmethod
    def homoscedastic(cls, n, sigma2):
        return cls(np.full(n, 1.0 / sigma2))


def choose_d(bound, epsilon=DEFAULT_EPSILON):
    if bound < 0 or not epsilon > 0:
        raise InvalidInputError("need bound >= 0 and epsilon > 0")
    return bound + epsilon


def _clamped_sd(var, what):
    var = np.asarray(var, dtype=float)
    if np.any(var < -_DEGENERATE_VAR):
        raise InvalidInputError(f"negative variance in {what}: {var.min():.3g}")
    return np.sqrt(np.where(var <= _DEGENERATE_VAR, 0.0, var))


def _normals(rng, size, dim):
    shape = (dim,) if size is None else (size, dim)
    return rng.standard_normal(shape)


class DirectAnticorr:
    """Cholesky-based exact sampler for a fixed symmetric ``M`` and ``d``."""

    def __init__(self, m, d):
        m = _as_symmetric(m, rtol=1e-10)
        self.m = m
        self.d = float(d)
        p = m.shape[0]
        cov = self.d * np.eye(p) - m
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DefinitenessError(
                f"dI - M is not positive definite for d={self.d:.6g}",
                diagnostics={"d": self.d}) from exc

    @property
    def dim(self):
        return self.m.shape[0]

    def mean(self, x):
        return self.d * x - x @ self.m  # m symmetric, so this also works row-wise

    def sample(self, x, rng, size=None):
        g = _normals(rng, size, self.dim)
        return g @ self.chol.T + self.mean(np.asarray(x, dtype=float))


def sample_anticorr_direct(m, spec, theta, rng, size=None):
    return DirectAnticorr(m, spec.d).sample(theta, rng, size=size)


class HomoscedasticAnticorr:
    """Anti-correlation sampler for ``M = gram / sigma2`` with a cached factor.

    With ``lam`` an upper bound on the spectral norm of ``gram`` the constant
    is ``d = (lam + eps) / sigma2`` and ``dI - M = ((lam + eps) I - gram) /
    sigma2``, whose Cholesky factor is computed once at construction.
    """

    def __init__(self, gram, epsilon=DEFAULT_EPSILON, bound=None):
        gram = _as_symmetric(gram, rtol=1e-10)
        self.gram = gram
        self.bound = spectral_upper_bound(gram) if bound is None else float(bound)
        self.scaled_d = self.bound + epsilon
        self.epsilon = epsilon
        cov = self.scaled_d * np.eye(gram.shape[0]) - gram
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DefinitenessError("(lam + eps) I - X'X is not positive definite") from exc

    def at(self, sigma2):
        return _ScaledAnticorr(self, float(sigma2))


class _ScaledAnticorr:
    def __init__(self, base, sigma2):
        self.base = base
        self.sigma2 = sigma2
        self.d = base.scaled_d / sigma2

    def sample(self, x, rng, size=None):
        gram = self.base.gram
        g = _normals(rng, size, gram.shape[0])
        x = np.asarray(x, dtype=float)
        nz = np.flatnonzero(x) if x.ndim == 1 else None
        # soft-thresholded inputs are mostly zero: only their rows of the Gram matrix matter
        mx = x[nz] @ gram[nz] if nz is not None and 3 * nz.size < x.size else x @ gram
        return (g @ self.base.chol.T) / math.sqrt(self.sigma2) + self.d * x - mx / self.sigma2


def _check_regression_d(svd, omega, d):
    need = float(omega.omega_diag.max()) * svd.largest ** 2
    if not d > need:
        raise InvalidInputError(
            f"d={d:.6g} must exceed max(omega) * s_max^2 = {need:.6g}")


def sample_anticorr_regression(svd, omega, spec, theta, rng, size=None, x=None):
    """Factorization-free draw of ``r ~ N((dI - X'WX) theta, dI - X'WX)``.

    Uses the SVD ``X = U S V'`` precomputed in ``svd`` and diagonal ``Omega``.
    Coordinates whose variance is numerically zero are set to their mean.

    Parameters
    ----------
    svd : SvdFactors
    omega : RegressionOmega
    spec : AntiCorrSpec
        ``spec.d`` must exceed ``max(omega) * s_max**2``.
    theta : (p,) ndarray
    rng : numpy.random.Generator
    size : int, optional
        Number of independent draws; returns shape ``(size, p)``.
    x : (n, p) ndarray, optional
        The design matrix; rebuilt from ``svd`` when omitted.
    """
    d = float(spec.d)
    _check_regression_d(svd, omega, d)
    if x is None:
        x = svd.reconstruct()
    n, p, k = svd.n, svd.p, svd.k
    w = omega.omega_diag
    b = omega.b_omega
    s = svd.singular_values
    theta = np.asarray(theta, dtype=float)

    g1 = math.sqrt(d) * _normals(rng, size, k)
    g2 = math.sqrt(d) * _normals(rng, size, p - k)
    # gamma_3 | gamma_1: first k coordinates conditional, the rest N(0, b)
    sd3 = np.concatenate([_clamped_sd(b - s * s / d, "gamma_3"), np.full(n - k, math.sqrt(b))])
    mean3 = np.zeros(g1.shape[:-1] + (n,))
    mean3[..., :k] = g1 * (s / d)
    g3 = mean3 + sd3 * _normals(rng, size, n)
    eta = _clamped_sd(1.0 / w - b, "eta") * _normals(rng, size, n)

    z = g3 @ svd.u.T + eta
    r = g1 @ svd.v.T + g2 @ svd.v_complement.T - ((z * w) @ x)
    xt = theta @ x.T
    return r + d * theta - (xt * w) @ x


def series_truncation(eps=SERIES_EPS, rho=SERIES_RHO):
    """Truncation order of the series sampler and the loop passes it needs.

    Returns ``(k_hat, passes)`` with ``k_hat = floor(log(eps) / log(rho))``;
    each pass adds two terms to the series, so ``passes = ceil((k_hat + 1) / 2)``
    and the realized truncation ``2 * passes - 1`` is at least ``k_hat``.
    """
    if not 0 < rho < 1:
        raise InvalidInputError("series ratio rho must lie in (0, 1)")
    if not 0 < eps < 1:
        raise InvalidInputError("series tolerance eps must lie in (0, 1)")
    k_hat = int(math.floor(math.log(eps) / math.log(rho)))
    return k_hat, int(math.ceil((k_hat + 1) / 2))


def sample_anticorr_series(x, omega, d, theta, rng, rho_target=SERIES_RHO,
                           eps=SERIES_EPS, size=None, m_bound=None, return_info=False):
    """Approximate anti-correlation draw via a truncated Neumann series.

    Starting from ``g = 0`` the recursion
    ``g <- e1 + d^{-1/2} X' W^{1/2} e2 + (X'WX / d) g`` is run for the number
    of passes given by :func:`series_truncation`; then
    ``r = (dI - X'WX) d^{-1/2} g + (dI - X'WX) theta``. The covariance of ``r``
    matches ``dI - X'WX`` up to a relative error of ``rho**(2 * passes)``.

    ``m_bound`` is an upper bound on the spectral norm of ``X'WX``; it is
    computed when omitted. The bound must put ``m_bound / d`` at or below
    ``rho_target``.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    w = omega.omega_diag
    d = float(d)
    if m_bound is None:
        m_bound = spectral_upper_bound((x.T * w) @ x)
    rho = m_bound / d
    if rho >= 1:
        raise InvalidInputError(f"series ratio rho={rho:.4g} must be below 1")
    if rho > rho_target:
        raise InvalidInputError(
            f"series ratio rho={rho:.4g} exceeds rho_target={rho_target:.4g}; increase d")
    k_hat, passes = series_truncation(eps, rho_target)
    sqrt_w = np.sqrt(w)
    theta = np.asarray(theta, dtype=float)

    def apply_m(v):
        return ((v @ x.T) * w) @ x

    g = np.zeros((p,) if size is None else (size, p))
    done = 0
    for _ in range(passes):
        e1 = _normals(rng, size, p)
        e2 = _normals(rng, size, n)
        g = e1 + ((e2 * sqrt_w) @ x) / math.sqrt(d) + apply_m(g) / d
        done += 1
    r = (d * g - apply_m(g)) / math.sqrt(d) + d * theta - apply_m(theta)
    if return_info:
        return r, {"k_hat": k_hat, "passes": done, "rho": rho, "rel_error_bound": rho ** (2 * done)}
    return r


class RegressionAnticorr:
    """SVD-route sampler bound to a fixed design and a current ``Omega``."""

    def __init__(self, x, svd, omega, d):
        self.x = x
        self.svd = svd
        self.omega = omega
        self.spec = AntiCorrSpec(d)
        self.d = float(d)
        _check_regression_d(svd, omega, self.d)

    def sample(self, theta, rng, size=None):
        return sample_anticorr_regression(self.svd, self.omega, self.spec, theta, rng,
                                          size=size, x=self.x)


class SeriesAnticorr:
    def __init__(self, x, omega, d, m_bound, rho_target=SERIES_RHO, eps=SERIES_EPS):
        self.x = x
        self.omega = omega
        self.d = float(d)
        self.m_bound = m_bound
        self.rho_target = rho_target
        self.eps = eps

    def sample(self, theta, rng, size=None):
        return sample_anticorr_series(self.x, self.omega, self.d, theta, rng,
                                      rho_target=self.rho_target, eps=self.eps,
                                      size=size, m_bound=self.m_bound)


def regression_d(svd, omega, epsilon=DEFAULT_EPSILON, safety=1.0):
    """Smallest admissible ``d`` for the SVD route, plus ``epsilon``."""
    return safety * float(omega.omega_diag.max()) * svd.largest ** 2 + epsilon


__all__ = [
    "AntiCorrSpec", "RegressionOmega", "SvdFactors", "choose_d", "DirectAnticorr",
    "HomoscedasticAnticorr", "RegressionAnticorr", "SeriesAnticorr",
    "sample_anticorr_direct", "sample_anticorr_regression", "sample_anticorr_series",
    "series_truncation", "regression_d",
]
