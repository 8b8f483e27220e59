"""Chain diagnostics and the component-wise slice-sampling baseline."""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import SliceConfig, TruncInterval, slice_sample_1d
from .engine import ChainState
from .exceptions import DegenerateChainWarning, InvalidInputError
from .models import exp_log_density, linreg_log_posterior, update_sigma2, update_tau

MIN_ESS_LENGTH = 100


def _as_chain(chain):
    x = np.asarray(chain, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("chain must be one-dimensional")
    return x


def _autocovariance(x):
    n = x.shape[0]
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def autocorrelation(chain, max_lag):
    """Sample autocorrelations at lags ``0..max_lag``.

    Returns ``(acf, degenerate)``. A constant chain gives ``[1, 0, 0, ...]``
    with ``degenerate=True``.
    """
    x = _as_chain(chain)
    if not 0 <= max_lag < x.shape[0]:
        raise InvalidInputError("need 0 <= max_lag < chain length")
    acov = _autocovariance(x)
    if not acov[0] > 0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out, True
    return acov[:max_lag + 1] / acov[0], False


def effective_sample_size(chain):
    """Initial-monotone-sequence ESS estimate, capped at the chain length.

    Autocorrelations are summed in adjacent pairs ``G_m = rho_{2m} + rho_{2m+1}``
    until the first non-positive pair; pair sums are forced non-increasing.
    A constant chain returns ``N`` and emits :class:`DegenerateChainWarning`.
    """
    x = _as_chain(chain)
    n = x.shape[0]
    if n < MIN_ESS_LENGTH:
        raise InvalidInputError(f"ESS needs at least {MIN_ESS_LENGTH} draws")
    acov = _autocovariance(x)
    if not acov[0] > 0:
        warnings.warn("constant chain; ESS set to the chain length", DegenerateChainWarning)
        return float(n)
    rho = acov / acov[0]
    npairs = n // 2
    pairs = rho[0:2 * npairs:2] + rho[1:2 * npairs:2]
    stop = np.flatnonzero(pairs <= 0)
    pairs = pairs[:stop[0]] if stop.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * float(pairs.sum())
    return float(n) if tau <= 1.0 else n / tau


@dataclass(frozen=True)
class EssReport:
    ess: np.ndarray
    wall_seconds: float
    ess_per_second: np.ndarray
    group_means: tuple

    def to_dict(self):
        first, rest = self.group_means
        return {"wall_seconds": self.wall_seconds, "ess_mean": float(np.mean(self.ess)),
                "ess_per_second_first10": first, "ess_per_second_rest": rest}


def ess_report(draws, wall_seconds, n_first=10):
    """ESS per column, ESS per second and the first-``n_first`` vs remainder means."""
    draws = np.asarray(draws, dtype=float)
    if not wall_seconds > 0:
        raise InvalidInputError("wall_seconds must be positive")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChainWarning)
        ess = np.array([effective_sample_size(draws[:, j]) for j in range(draws.shape[1])])
    eps = ess / wall_seconds
    first = float(eps[:n_first].mean())
    rest = float(eps[n_first:].mean()) if draws.shape[1] > n_first else None
    return EssReport(ess=ess, wall_seconds=float(wall_seconds), ess_per_second=eps,
                     group_means=(first, rest))


@dataclass(frozen=True)
class SelectionMetrics:
    fpr: float
    fnr: float
    mse: float
    lower: np.ndarray
    upper: np.ndarray

    def to_dict(self):
        return {"fpr": self.fpr, "fnr": self.fnr, "mse": self.mse}


def interval_selection_metrics(draws, truth, level=0.95):
    """Credible-interval based selection errors and posterior-mean MSE.

    Intervals are equal-tailed empirical quantiles. FPR is the share of
    zero-truth coordinates whose interval excludes 0; FNR is the share of
    nonzero-truth coordinates whose interval contains 0. Either rate is
    ``None`` when its reference set is empty.
    """
    draws = np.asarray(draws, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != truth.shape[0]:
        raise InvalidInputError("draws must be (n_draws, p) with p = len(truth)")
    if not 0 < level < 1:
        raise InvalidInputError("level must lie in (0, 1)")
    alpha = 0.5 * (1.0 - level)
    lower, upper = np.quantile(draws, [alpha, 1.0 - alpha], axis=0)
    covers = (lower <= 0.0) & (upper >= 0.0)
    zero = truth == 0
    fpr = float(np.mean(~covers[zero])) if np.any(zero) else None
    fnr = float(np.mean(covers[~zero])) if np.any(~zero) else None
    mse = float(np.mean((draws.mean(axis=0) - truth) ** 2))
    return SelectionMetrics(fpr=fpr, fnr=fnr, mse=mse, lower=lower, upper=upper)


def componentwise_slice_step(log_posterior, state, cfg, rng):
    """One sweep of coordinate-wise slice sampling on a vector target."""
    x = np.array(state, dtype=float)
    for j in range(x.shape[0]):
        def section(v, j=j):
            old = x[j]
            x[j] = v
            val = log_posterior(x)
            x[j] = old
            return val
        x[j] = slice_sample_1d(section, x[j], cfg, rng)
    return x


class CompSliceLinReg:
    """Component-wise slice baseline for :class:`models.LinRegModel`.

    Each sweep slice-samples every ``beta_j`` against the full log posterior,
    evaluated from scratch as a generic function of the whole vector (one
    ``O(n p)`` product per call). Then ``kappa0`` is slice sampled and
    ``sigma2`` and ``tau`` are drawn from their conjugate conditionals.
    """

    def __init__(self, model, cfg=None):
        self.model = model
        self.cfg = cfg or SliceConfig()
        self.kappa_cfg = SliceConfig(domain=TruncInterval(0.0, np.inf))
        self.kappa_prior = exp_log_density(model.exp_rate_kappa)
        p = model.p
        self.param_names = [f"theta_{j + 1}" for j in range(p)] + ["sigma2", "kappa0"]

    def _beta_logpost(self, sigma2, tau, kappa0):
        x, y = self.model.x, self.model.y

        def logpost(beta):
            theta = np.sign(beta) * np.maximum(np.abs(beta) - kappa0, 0.0)
            resid = y - x @ theta
            return -0.5 * float(resid @ resid) / sigma2 - 0.5 * float(np.sum(beta * beta / tau))
        return logpost

    def initial_state(self, rng):
        m = self.model
        return ChainState(beta=np.zeros(m.p), theta=np.zeros(m.p), kappa0=float(m.kappa0),
                          hyper={"sigma2": float(m.sigma2), "tau": m.tau.copy()})

    def step(self, state, rng):
        new = state.copy()
        h = new.hyper
        new.beta = componentwise_slice_step(
            self._beta_logpost(h["sigma2"], h["tau"], new.kappa0), new.beta, self.cfg, rng)
        x, y, beta = self.model.x, self.model.y, new.beta
        abs_b, sgn = np.abs(beta), np.sign(beta)

        def kappa_logpost(k):
            lp = self.kappa_prior(k)
            if not np.isfinite(lp):
                return lp
            theta = sgn * np.maximum(abs_b - k, 0.0)
            nz = np.flatnonzero(theta)
            resid = y - x[:, nz] @ theta[nz]
            return lp - 0.5 * float(resid @ resid) / h["sigma2"]

        new.kappa0 = slice_sample_1d(kappa_logpost, new.kappa0, self.kappa_cfg, rng)
        new.theta = sgn * np.maximum(abs_b - new.kappa0, 0.0)
        h["sigma2"] = update_sigma2(self.model, new.theta, rng=rng)
        h["tau"] = update_tau(self.model, new.beta, rng)
        new.iteration = state.iteration + 1
        return new

    def record(self, state):
        return np.concatenate([state.theta, [state.hyper["sigma2"], state.kappa0]])

    def log_posterior(self, state):
        h = state.hyper
        return linreg_log_posterior(self.model, state.beta, h["sigma2"], h["tau"], state.kappa0)

    def kappa_of(self, state):
        return np.full(self.model.p, state.kappa0)


def _distance_matrix(z):
    sq = np.sum(z * z, 1)
    return np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0))


def energy_distance_test(x, y, rng, n_perm=199):
    """Two-sample energy-distance permutation test.

    Rows are observations (1-D inputs are treated as univariate samples).
    Returns ``(statistic, p_value)`` with the ``(1 + #{T_perm >= T}) /
    (1 + n_perm)`` p-value convention.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    y = y[:, None] if y.ndim == 1 else y
    if x.shape[1] != y.shape[1]:
        raise InvalidInputError("samples must have the same dimension")
    nx, ny = x.shape[0], y.shape[0]
    if nx == 0 or ny == 0:
        raise InvalidInputError("both samples must be non-empty")
    n = nx + ny
    dist = _distance_matrix(np.vstack([x, y]))
    total = dist.sum()

    labels = np.zeros((n_perm + 1, n))
    labels[0, :nx] = 1.0
    for i in range(1, n_perm + 1):
        labels[i, rng.permutation(n)[:nx]] = 1.0
    dl = labels @ dist
    sxx = np.sum(dl * labels, axis=1)
    sxy = np.sum(dl, axis=1) - sxx
    syy = total - 2.0 * sxy - sxx
    stat = nx * ny / n * (2.0 * sxy / (nx * ny) - sxx / nx ** 2 - syy / ny ** 2)
    t0 = stat[0]
    return float(t0), (1 + int(np.sum(stat[1:] >= t0))) / (1 + n_perm)


def moment_zscores(draws, mean, cov):
    """Monte Carlo z-scores of the sample mean and covariance against targets.

    Standard errors assume Gaussian draws: ``sqrt(cov_ii / N)`` for means and
    ``sqrt((cov_ii cov_jj + cov_ij^2) / N)`` for covariance entries. Returns
    ``(z_mean, z_cov)`` (the latter over the upper triangle).
    """
    draws = np.asarray(draws, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = draws.shape[0]
    var = np.diag(cov)
    z_mean = (draws.mean(axis=0) - mean) / np.sqrt(var / n)
    emp = np.cov(draws, rowvar=False).reshape(cov.shape)
    iu = np.triu_indices(cov.shape[0])
    se = np.sqrt((np.outer(var, var) + cov * cov) / n)
    return z_mean, ((emp - cov) / se)[iu]


def timed(fn, *args, **kwargs):
    """Run ``fn`` and return ``(result, seconds)``."""
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


__all__ = [
    "autocorrelation", "effective_sample_size", "EssReport", "ess_report",
    "SelectionMetrics", "interval_selection_metrics", "componentwise_slice_step",
    "CompSliceLinReg", "energy_distance_test", "moment_zscores",
]
