"""Concrete models: sparse linear regression and soft-thresholded GP smoothing.

Each model exposes the interface consumed by :func:`engine.run_chain`:
``initial_state``, ``step``, ``record``, ``log_posterior``, ``kappa_of`` and
``param_names``.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .anticorr import (DEFAULT_EPSILON, SERIES_EPS, SERIES_RHO, HomoscedasticAnticorr,
                       RegressionAnticorr, RegressionOmega, SeriesAnticorr, regression_d)
from .distributions import (SliceConfig, TruncInterval, inverse_gamma_logpdf,
                            sample_inverse_gamma, slice_sample_1d)
from .engine import (ChainState, EigenAnticorr, EigenPrecision, QuadTarget, gibbs_step)
from .exceptions import InvalidInputError
from .l1ball import soft_threshold
from .spectral_linalg import full_svd, spectral_upper_bound

SIGNAL_PATTERN = np.array([2.0, -3.0, 2.0, 2.0, -3.0, 3.0, -2.0, 3.0, -2.0, 3.0])
ANTICORR_METHODS = ("direct", "svd", "series")


def exp_log_density(rate):
    log_rate = math.log(rate)

    def logpdf(k):
        return log_rate - rate * k if k >= 0 else -np.inf
    return logpdf


# ---------------------------------------------------------------- regression


@dataclass
class LinRegModel:
    """Sparse linear regression ``y ~ N(X theta, sigma2 I)`` with an L1-ball prior.

    ``tau``, ``sigma2`` and ``kappa0`` are the current (initial) values of the
    hyperparameters; ``ig_tau`` and ``ig_sigma`` are inverse-gamma
    ``(shape, rate)`` pairs, ``exp_rate_kappa`` the rate of the threshold prior.
    """

    x: np.ndarray
    y: np.ndarray
    tau: np.ndarray = None
    sigma2: float = 1.0
    kappa0: float = 1.0
    ig_tau: tuple = (5.0, 1.0)
    ig_sigma: tuple = (1.0, 1.0)
    exp_rate_kappa: float = 1.0
    gram: np.ndarray = field(init=False, repr=False)
    xty: np.ndarray = field(init=False, repr=False)
    x_cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise InvalidInputError("need x of shape (n, p) and y of length n")
        p = self.x.shape[1]
        self.tau = np.full(p, 0.25) if self.tau is None else \
            np.broadcast_to(np.asarray(self.tau, dtype=float), (p,)).copy()
        if np.any(self.tau <= 0) or not self.sigma2 > 0 or self.kappa0 < 0:
            raise InvalidInputError("variance parameters must be positive")
        if min(*self.ig_tau, *self.ig_sigma, self.exp_rate_kappa) <= 0:
            raise InvalidInputError("prior hyperparameters must be positive")
        self.gram = self.x.T @ self.x
        self.xty = self.x.T @ self.y
        self.x_cols = np.asfortranarray(self.x)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]


def linreg_target(model, sigma2=None, tau=None, kappa0=None, check=True):
    """``QuadTarget`` with ``M = X'X / sigma2``, ``phi = X'y / sigma2``, ``H = diag(1 / tau)``."""
    sigma2 = model.sigma2 if sigma2 is None else sigma2
    tau = model.tau if tau is None else tau
    kappa0 = model.kappa0 if kappa0 is None else kappa0
    return QuadTarget(m=model.gram, m_scale=1.0 / sigma2, phi=model.xty / sigma2,
                      h=1.0 / np.asarray(tau), psi=np.zeros(model.p),
                      kappa=np.full(model.p, float(kappa0)), check=check,
                      m_factor=model.x_cols if model.n < model.p else None)


def simulate_regression(n, p, rho, c, seed):
    """Simulated design with AR(1)-correlated columns and a sparse truth.

    Returns ``(x, y, theta_true)``. The first ten entries of ``theta_true``
    are ``c * sqrt(log(p) / n)`` times a fixed sign pattern; the rest are 0.
    """
    if p < 10:
        raise InvalidInputError("need p >= 10 for the ten-signal truth")
    if n < 1 or not abs(rho) < 1:
        raise InvalidInputError("need n >= 1 and |rho| < 1")
    rng = np.random.default_rng(seed)
    x = np.empty((n, p))
    x[:, 0] = rng.standard_normal(n)
    innov = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        x[:, j] = rho * x[:, j - 1] + innov * rng.standard_normal(n)
    theta = np.zeros(p)
    theta[:10] = c * math.sqrt(math.log(p) / n) * SIGNAL_PATTERN
    y = x @ theta + rng.standard_normal(n)
    return x, y, theta


def write_regression_csv(path, x, y, theta_true):
    """Dataset as CSV: columns ``y, x_1..x_p``; truth goes to a second file."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x_{j + 1}" for j in range(x.shape[1])])
        for yi, row in zip(y, x):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in row])
    truth_path = str(path).rsplit(".", 1)[0] + "_truth.csv"
    with open(truth_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_true"])
        for v in theta_true:
            w.writerow([repr(float(v))])
    return truth_path


def update_sigma2(model, theta, y=None, rng=None):
    """Draw ``sigma2 ~ IG(a + n/2, b + ||y - X theta||^2 / 2)``."""
    y = model.y if y is None else y
    nz = np.flatnonzero(theta)
    resid = y - model.x[:, nz] @ theta[nz]
    a, b = model.ig_sigma
    return sample_inverse_gamma(a + 0.5 * y.shape[0], b + 0.5 * float(resid @ resid), rng)


def update_tau(model, beta, rng):
    """Draw ``tau_j ~ IG(a_j + 1/2, b_j + beta_j^2 / 2)`` independently."""
    a, b = model.ig_tau
    return sample_inverse_gamma(a + 0.5, b + 0.5 * np.asarray(beta) ** 2, rng)


def linreg_log_posterior(model, beta, sigma2, tau, kappa0):
    """Unnormalized joint log density of ``(beta, sigma2, tau, kappa0)`` given ``y``."""
    if kappa0 < 0:
        return -np.inf
    theta = soft_threshold(beta, kappa0)
    nz = np.flatnonzero(theta)
    resid = model.y - model.x[:, nz] @ theta[nz]
    lp = -0.5 * model.n * math.log(sigma2) - 0.5 * float(resid @ resid) / sigma2
    lp += float(np.sum(-0.5 * np.log(tau) - 0.5 * beta * beta / tau))
    lp += float(np.sum(inverse_gamma_logpdf(tau, *model.ig_tau)))
    lp += float(inverse_gamma_logpdf(sigma2, *model.ig_sigma))
    return lp + math.log(model.exp_rate_kappa) - model.exp_rate_kappa * kappa0


class LinRegSampler:
    """Anti-correlation blocked Gibbs sampler for :class:`LinRegModel`.

    ``method`` selects the r-augmentation: ``"direct"`` reuses one Cholesky
    factor of ``(lam + eps) I - X'X`` (valid because ``Omega = I / sigma2``),
    ``"svd"`` uses the factorization-free SVD scheme and ``"series"`` the
    truncated series.
    """

    def __init__(self, model, method="direct", epsilon=DEFAULT_EPSILON,
                 eps_series=SERIES_EPS, rho_target=SERIES_RHO, kappa_cfg=None):
        if method not in ANTICORR_METHODS:
            raise InvalidInputError(f"unknown anti-correlation method {method!r}")
        self.model = model
        self.method = method
        self.epsilon = epsilon
        self.eps_series = eps_series
        self.rho_target = rho_target
        self.kappa_prior = exp_log_density(model.exp_rate_kappa)
        self.kappa_cfg = kappa_cfg or SliceConfig(domain=TruncInterval(0.0, np.inf))
        if method == "direct":
            self._homo = HomoscedasticAnticorr(model.gram, epsilon=epsilon)
        elif method == "svd":
            self._svd = full_svd(model.x)
        else:
            self._gram_bound = spectral_upper_bound(model.gram)
        p = model.p
        self.param_names = [f"theta_{j + 1}" for j in range(p)] + ["sigma2", "kappa0"]
        # the target is rebuilt each sweep; its PSD status follows from the Gram matrix
        QuadTarget(m=model.gram, phi=model.xty, h=1.0 / model.tau, psi=np.zeros(p),
                   kappa=np.zeros(p))

    def augmenter(self, sigma2):
        if self.method == "direct":
            return self._homo.at(sigma2)
        omega = RegressionOmega.homoscedastic(self.model.n, sigma2)
        if self.method == "svd":
            return RegressionAnticorr(self.model.x, self._svd, omega,
                                      regression_d(self._svd, omega, self.epsilon))
        m_bound = self._gram_bound / sigma2
        return SeriesAnticorr(self.model.x, omega, m_bound / self.rho_target, m_bound,
                              rho_target=self.rho_target, eps=self.eps_series)

    def initial_state(self, rng):
        m = self.model
        p = m.p
        return ChainState(beta=np.zeros(p), theta=np.zeros(p), kappa0=float(m.kappa0),
                          hyper={"sigma2": float(m.sigma2), "tau": m.tau.copy()})

    def _hyper_hook(self, state, rng):
        state.hyper["sigma2"] = update_sigma2(self.model, state.theta, rng=rng)
        state.hyper["tau"] = update_tau(self.model, state.beta, rng)

    def step(self, state, rng):
        h = state.hyper
        target = linreg_target(self.model, h["sigma2"], h["tau"], state.kappa0, check=False)
        return gibbs_step(state, target, rng, r_aug=self.augmenter(h["sigma2"]),
                          kappa_prior=self.kappa_prior, kappa_cfg=self.kappa_cfg,
                          hooks=(self._hyper_hook,))

    def record(self, state):
        return np.concatenate([state.theta, [state.hyper["sigma2"], state.kappa0]])

    def log_posterior(self, state):
        h = state.hyper
        return linreg_log_posterior(self.model, state.beta, h["sigma2"], h["tau"], state.kappa0)

    def kappa_of(self, state):
        return np.full(self.model.p, state.kappa0)


# ---------------------------------------------------------------- STGP

XI_GRID = 0.5 * np.arange(1, 21)
STGP_NUGGET = 1e-2


def grid_coordinates(n1, n2):
    if n1 < 1 or n2 < 1:
        raise InvalidInputError("grid dimensions must be positive")
    ii, jj = np.meshgrid(np.arange(1, n1 + 1), np.arange(1, n2 + 1), indexing="ij")
    return np.column_stack([ii.ravel(), jj.ravel()]).astype(float)


def se_kernel(coords, xi):
    """Unit-amplitude squared-exponential kernel ``exp(-||s - s'||^2 / (2 xi^2))``."""
    sq = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1)
    return np.exp(-sq / (2.0 * xi * xi))


def grid_neighbors(n1, n2):
    """Index pairs of horizontally or vertically adjacent pixels (row-major)."""
    idx = np.arange(n1 * n2).reshape(n1, n2)
    return np.concatenate([
        np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
        np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()]),
    ])


@dataclass(frozen=True)
class KernelEigen:
    """Eigendecomposition of ``K_xi + nugget I`` for one bandwidth."""

    xi: float
    q: np.ndarray
    evals: np.ndarray

    @property
    def logdet(self):
        return float(np.sum(np.log(self.evals)))

    def inv_quad(self, beta):
        z = self.q.T @ beta
        return float(np.sum(z * z / self.evals))


class StgpModel:
    """Soft-thresholded GP smoothing ``y = theta + N(0, sigma2 I)`` on a pixel grid.

    The precursor is ``beta ~ N(0, tau_gp (K_xi + nugget I))`` with ``xi`` on a
    discrete grid. Every kernel is eigendecomposed once up front, which gives
    log-determinants, quadratic forms and exact anti-correlation draws for
    any ``(tau_gp, xi)`` without further factorizations.
    """

    def __init__(self, y, n1, n2, xi_grid=XI_GRID, nugget=STGP_NUGGET, ig_tau=(0.1, 0.1),
                 ig_sigma=(0.1, 0.1), exp_rate_kappa=0.5, epsilon=DEFAULT_EPSILON):
        self.n1, self.n2 = int(n1), int(n2)
        self.y = np.asarray(y, dtype=float).ravel()
        if self.y.shape[0] != self.n1 * self.n2:
            raise InvalidInputError("y does not match the grid size")
        if not nugget > 0:
            raise InvalidInputError("kernel nugget must be positive")
        self.coords = grid_coordinates(self.n1, self.n2)
        self.xi_grid = np.asarray(xi_grid, dtype=float)
        self.nugget = float(nugget)
        self.ig_tau = ig_tau
        self.ig_sigma = ig_sigma
        self.exp_rate_kappa = exp_rate_kappa
        self.epsilon = epsilon
        self.eigen = []
        for xi in self.xi_grid:
            k = se_kernel(self.coords, xi)
            evals, q = np.linalg.eigh(k)
            # eigh may return tiny negative eigenvalues for this near-singular kernel
            self.eigen.append(KernelEigen(float(xi), q, np.maximum(evals, 0.0) + self.nugget))

    @property
    def p(self):
        return self.y.shape[0]

    def precision(self, tau_gp, xi_index):
        ke = self.eigen[xi_index]
        return EigenPrecision(ke.q, 1.0 / (tau_gp * ke.evals))


def stgp_target(model, sigma2, tau_gp, xi_index, kappa0):
    """``QuadTarget`` with ``M = I / sigma2``, ``phi = y / sigma2``, ``H = (tau_gp K_xi)^{-1}``."""
    p = model.p
    return QuadTarget(m=np.full(p, 1.0 / sigma2), phi=model.y / sigma2,
                      h=model.precision(tau_gp, xi_index), psi=np.zeros(p),
                      kappa=np.full(p, float(kappa0)), check=False)


def xi_log_weights(model, beta, tau_gp):
    """Categorical log-weights of every bandwidth given ``beta`` (uniform prior)."""
    p = model.p
    return np.array([-0.5 * (p * math.log(tau_gp) + ke.logdet) - 0.5 * ke.inv_quad(beta) / tau_gp
                     for ke in model.eigen])


def update_xi(model, beta, tau_gp, rng):
    logw = xi_log_weights(model, beta, tau_gp)
    probs = np.exp(logw - logsumexp(logw))
    return int(rng.choice(len(probs), p=probs / probs.sum()))


def update_tau_gp(model, beta, xi_index, rng):
    a, b = model.ig_tau
    q = model.eigen[xi_index].inv_quad(beta)
    return sample_inverse_gamma(a + 0.5 * model.p, b + 0.5 * q, rng)


def update_sigma2_stgp(model, theta, rng):
    a, b = model.ig_sigma
    resid = model.y - theta
    return sample_inverse_gamma(a + 0.5 * model.p, b + 0.5 * float(resid @ resid), rng)


def stgp_empirical_bayes(model):
    """Data-driven starting values for the STGP hyperparameters.

    Treats ``y`` as ``N(0, tau_gp (K_xi + nugget I) + sigma2 I)``. For every
    grid ``xi`` it maximizes that marginal likelihood times the inverse-gamma
    priors of ``(tau_gp, sigma2)``, as a density in ``(log tau_gp, log sigma2)``,
    and keeps the best bandwidth. The priors keep ``tau_gp`` away from zero
    when ``y`` is pure noise. Returns ``{"tau_gp", "xi_index", "sigma2"}``.
    """
    v0 = max(float(np.var(model.y)), 1e-8)
    (at, bt), (as_, bs) = model.ig_tau, model.ig_sigma
    best = None
    for idx, ke in enumerate(model.eigen):
        z2 = (ke.q.T @ model.y) ** 2

        def nll(u, evals=ke.evals, z2=z2):
            tau, s2 = math.exp(u[0]), math.exp(u[1])
            var = tau * evals + s2
            prior = at * u[0] + bt / tau + as_ * u[1] + bs / s2
            return 0.5 * float(np.sum(np.log(var) + z2 / var)) + prior
        res = minimize(nll, np.log([v0 / 2, v0 / 2]), method="L-BFGS-B",
                       bounds=[(-20.0, 20.0), (-20.0, 20.0)])
        if best is None or res.fun < best[0]:
            best = (res.fun, idx, float(math.exp(res.x[0])), float(math.exp(res.x[1])))
    _, idx, tau_gp, sigma2 = best
    return {"tau_gp": tau_gp, "xi_index": idx, "sigma2": sigma2}


def gp_smoother(model, tau_gp, xi_index, sigma2):
    """Posterior mean of ``beta`` when ``y = beta + N(0, sigma2 I)``, used as a start."""
    ke = model.eigen[xi_index]
    prior = tau_gp * ke.evals
    return ke.q @ (prior / (prior + sigma2) * (ke.q.T @ model.y))


def simulate_stgp_image(n1, n2, tau=1.0, xi=2.0, kappa=0.5, sigma2=0.25, seed=0):
    """Draw ``(y, theta_true, beta_true)`` from a soft-thresholded GP on an ``n1 x n2`` grid.

    Vectors are in row-major pixel order.
    """
    if sigma2 < 0 or tau <= 0 or xi <= 0 or kappa < 0:
        raise InvalidInputError("invalid simulation parameters")
    coords = grid_coordinates(n1, n2)
    k = se_kernel(coords, xi)
    evals, q = np.linalg.eigh(k)
    root = q * np.sqrt(np.maximum(evals, 0.0))
    rng = np.random.default_rng(seed)
    beta = math.sqrt(tau) * (root @ rng.standard_normal(n1 * n2))
    theta = soft_threshold(beta, kappa)
    y = theta + math.sqrt(sigma2) * rng.standard_normal(n1 * n2)
    return y, theta, beta


class StgpSampler:
    """Blocked Gibbs sampler for :class:`StgpModel`.

    Only ``H`` is dense, so only the t-augmentation is used; ``e`` is
    recomputed from the exact largest eigenvalue whenever ``(tau_gp, xi)``
    changes. Names in ``fixed`` keep their ``init`` values throughout.

    Unless overridden through ``init``, ``(tau_gp, xi_index, sigma2)`` start
    at :func:`stgp_empirical_bayes` values, ``kappa0`` at 0.1 and ``beta`` at
    the matching :func:`gp_smoother` output.
    """

    def __init__(self, model, kappa_cfg=None, init=None, fixed=()):
        unknown = set(fixed) - {"tau_gp", "xi_index", "sigma2", "kappa0"}
        if unknown:
            raise InvalidInputError(f"cannot hold {sorted(unknown)} fixed")
        self.model = model
        self.fixed = frozenset(fixed)
        self.kappa_prior = exp_log_density(model.exp_rate_kappa)
        self.kappa_cfg = kappa_cfg or SliceConfig(domain=TruncInterval(0.0, np.inf))
        init = dict(init or {})
        if not {"tau_gp", "xi_index", "sigma2"} <= set(init):
            init = {**stgp_empirical_bayes(model), **init}
        self.init = {"kappa0": 0.1, **init}
        self.param_names = [f"theta_{j + 1}" for j in range(model.p)]

    def initial_state(self, rng):
        h = self.init
        beta = gp_smoother(self.model, h["tau_gp"], h["xi_index"], h["sigma2"])
        k0 = float(h["kappa0"])
        return ChainState(beta=beta, theta=soft_threshold(beta, k0), kappa0=k0,
                          hyper={k: self.init[k] for k in ("tau_gp", "xi_index", "sigma2")})

    def _hyper_hook(self, state, rng):
        m, h = self.model, state.hyper
        if "sigma2" not in self.fixed:
            h["sigma2"] = update_sigma2_stgp(m, state.theta, rng)
        if "tau_gp" not in self.fixed:
            h["tau_gp"] = update_tau_gp(m, state.beta, h["xi_index"], rng)
        if "xi_index" not in self.fixed:
            h["xi_index"] = update_xi(m, state.beta, h["tau_gp"], rng)

    def step(self, state, rng):
        h = state.hyper
        target = stgp_target(self.model, h["sigma2"], h["tau_gp"], h["xi_index"], state.kappa0)
        t_aug = EigenAnticorr(target.h, target.h.largest + self.model.epsilon)
        kprior = None if "kappa0" in self.fixed else self.kappa_prior
        return gibbs_step(state, target, rng, t_aug=t_aug, kappa_prior=kprior,
                          kappa_cfg=self.kappa_cfg, hooks=(self._hyper_hook,))

    def record(self, state):
        return state.theta

    def log_posterior(self, state):
        m, h = self.model, state.hyper
        resid = m.y - state.theta
        lp = -0.5 * m.p * math.log(h["sigma2"]) - 0.5 * float(resid @ resid) / h["sigma2"]
        ke = m.eigen[h["xi_index"]]
        lp += -0.5 * (m.p * math.log(h["tau_gp"]) + ke.logdet) \
            - 0.5 * ke.inv_quad(state.beta) / h["tau_gp"]
        lp += float(inverse_gamma_logpdf(h["tau_gp"], *m.ig_tau))
        lp += float(inverse_gamma_logpdf(h["sigma2"], *m.ig_sigma))
        return lp + self.kappa_prior(state.kappa0)

    def kappa_of(self, state):
        return np.full(self.model.p, state.kappa0)


__all__ = [
    "LinRegModel", "LinRegSampler", "linreg_target", "simulate_regression", "update_sigma2",
    "update_tau", "linreg_log_posterior", "write_regression_csv", "StgpModel", "StgpSampler",
    "stgp_target", "stgp_empirical_bayes", "gp_smoother", "update_xi", "update_tau_gp", "update_sigma2_stgp", "xi_log_weights",
    "simulate_stgp_image", "grid_coordinates", "grid_neighbors", "se_kernel", "XI_GRID",
    "STGP_NUGGET", "exp_log_density",
]
