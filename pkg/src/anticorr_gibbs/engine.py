"""Blocked Gibbs orchestration with anti-correlation augmentation.

One iteration of :func:`gibbs_step` runs, in order:

1. draw ``r`` given ``theta`` (only if ``M`` is dense) and ``t`` given
   ``beta`` (only if ``H`` is dense);
2. draw every ``beta_j`` from its three-component conditional;
3. slice-update the shared threshold ``kappa0`` (if it has a prior);
4. recompute ``theta``;
5. run the model's hyperparameter hooks.

Diagonal ``M`` or ``H`` needs no augmentation: its diagonal enters the
coordinate update directly.
"""

import csv
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .anticorr import DEFAULT_EPSILON, DirectAnticorr, choose_d
from .distributions import SliceConfig, TruncInterval, sample_truncnorm, slice_sample_1d
from .exceptions import InvalidInputError, NumericError
from .l1ball import (CoordCoeffs, blocked_beta_update, kappa_slice_update,
                     soft_threshold)
from .spectral_linalg import cholesky_psd, spectral_upper_bound

KAPPA_SLICE = SliceConfig(width=1.0, max_stepout=50, domain=TruncInterval(0.0, np.inf))


class EigenPrecision:
    """Symmetric PSD matrix held as ``Q diag(evals) Q'`` (never formed densely)."""

    def __init__(self, q, evals):
        self.q = np.asarray(q, dtype=float)
        self.evals = np.asarray(evals, dtype=float)
        if self.q.shape != (self.evals.shape[0],) * 2:
            raise InvalidInputError("eigenvector matrix and eigenvalues disagree in size")
        if np.any(self.evals < 0) or not np.all(np.isfinite(self.evals)):
            raise InvalidInputError("eigenvalues must be finite and non-negative")

    @property
    def dim(self):
        return self.evals.shape[0]

    @property
    def largest(self):
        return float(self.evals.max())

    def matvec(self, v):
        return self.q @ (self.evals * (self.q.T @ v))

    def dense(self):
        return (self.q * self.evals) @ self.q.T


class EigenAnticorr:
    """Exact anti-correlation draws for an :class:`EigenPrecision` matrix."""

    def __init__(self, prec, d):
        self.prec = prec
        self.d = float(d)
        if not self.d > prec.largest:
            raise InvalidInputError(f"d={self.d:.6g} must exceed the largest eigenvalue "
                                    f"{prec.largest:.6g}")
        self.scale = np.sqrt(self.d - prec.evals)

    def sample(self, x, rng):
        g = rng.standard_normal(self.prec.dim)
        return self.prec.q @ (self.scale * g) + self.d * x - self.prec.matvec(x)


def _psd_check(m, name):
    if isinstance(m, EigenPrecision):
        return
    if m.ndim == 1:
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise InvalidInputError(f"diagonal {name} must be finite and non-negative")
        return
    scale = max(np.trace(m) / m.shape[0], 1.0)
    cholesky_psd(m + 1e-10 * scale * np.eye(m.shape[0]))


@dataclass(frozen=True)
class QuadTarget:
    """Conditional posterior ``exp(-(theta'M theta - 2 phi'theta)/2 - (beta'H beta - 2 psi'beta)/2)``.

    ``m`` and ``h`` are dense ``(p, p)`` arrays, 1-D arrays holding a
    diagonal, or :class:`EigenPrecision` operators. ``kappa`` is the
    per-coordinate threshold. The effective ``M`` is ``m_scale * m``, which
    lets a fixed matrix be rescaled without copying it. ``m_factor``, if
    given, is a matrix ``F`` with ``m = F'F``; quadratic forms in ``M`` are
    then evaluated as ``|F theta|^2``, which is cheaper when ``F`` is wide.
    """

    m: np.ndarray
    phi: np.ndarray
    h: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    check: bool = field(default=True, compare=False, repr=False)
    m_scale: float = 1.0
    m_factor: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        m = self.m if isinstance(self.m, EigenPrecision) else np.asarray(self.m, dtype=float)
        h = self.h if isinstance(self.h, EigenPrecision) else np.asarray(self.h, dtype=float)
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        p = phi.shape[0]
        kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), (p,))
        for name, v in (("m", m), ("h", h)):
            if isinstance(v, EigenPrecision):
                if v.dim != p:
                    raise InvalidInputError(f"{name} has dimension {v.dim}, expected {p}")
            elif v.shape not in ((p,), (p, p)):
                raise InvalidInputError(f"{name} has shape {v.shape}, expected ({p},) or ({p}, {p})")
        if psi.shape != (p,):
            raise InvalidInputError("psi and phi lengths differ")
        if not self.m_scale > 0:
            raise InvalidInputError("m_scale must be positive")
        if np.any(kappa < 0):
            raise InvalidInputError("kappa must be non-negative")
        if self.m_factor is not None:
            # column-major so that gathering the active columns is contiguous
            factor = np.asfortranarray(self.m_factor, dtype=float)
            if factor.ndim != 2 or factor.shape[1] != p:
                raise InvalidInputError(f"m_factor must have {p} columns")
            object.__setattr__(self, "m_factor", factor)
        if self.check:
            _psd_check(m, "M")
            _psd_check(h, "H")
        for name, v in (("m", m), ("h", h), ("phi", phi), ("psi", psi), ("kappa", kappa)):
            object.__setattr__(self, name, v)

    @property
    def dim(self):
        return self.phi.shape[0]

    @property
    def m_is_diag(self):
        return not isinstance(self.m, EigenPrecision) and self.m.ndim == 1

    @property
    def h_is_diag(self):
        return not isinstance(self.h, EigenPrecision) and self.h.ndim == 1

    def theta_energy(self, theta):
        """``theta' M theta - 2 phi' theta``, using only the non-zero entries."""
        nz = np.flatnonzero(theta)
        return self.theta_energy_sparse(nz, theta[nz], theta)

    def theta_energy_sparse(self, nz, t, theta=None):
        """``theta_energy`` for the vector with entries ``t`` at indices ``nz``, zero elsewhere.

        ``theta`` is the dense vector when the caller already has it.
        """
        if nz.size == 0:
            return 0.0
        if self.m_factor is not None:
            if theta is None or 3 * nz.size < theta.shape[0]:
                ft = self.m_factor[:, nz] @ t
            else:
                ft = self.m_factor @ theta
            quad = float(ft @ ft)
        elif self.m_is_diag:
            quad = float(np.dot(self.m[nz] * t, t))
        elif isinstance(self.m, EigenPrecision):
            if theta is None:
                theta = np.zeros(self.dim)
                theta[nz] = t
            quad = float(theta @ self.m.matvec(theta))
        else:
            quad = float(t @ self.m[np.ix_(nz, nz)] @ t)
        return self.m_scale * quad - 2.0 * float(np.dot(self.phi[nz], t))

    def beta_energy(self, beta):
        if self.h_is_diag:
            hb = self.h * beta
        elif isinstance(self.h, EigenPrecision):
            hb = self.h.matvec(beta)
        else:
            hb = self.h @ beta
        return float(beta @ hb) - 2.0 * float(self.psi @ beta)

    def log_density(self, beta):
        theta = soft_threshold(beta, self.kappa)
        return -0.5 * (self.theta_energy(theta) + self.beta_energy(beta))


@dataclass
class ChainState:
    beta: np.ndarray
    theta: np.ndarray
    kappa0: float
    r: np.ndarray = None
    t: np.ndarray = None
    hyper: dict = field(default_factory=dict)
    iteration: int = 0

    def copy(self):
        return replace(self, beta=self.beta.copy(), theta=self.theta.copy(),
                       r=None if self.r is None else self.r.copy(),
                       t=None if self.t is None else self.t.copy(),
                       hyper=dict(self.hyper))


def gibbs_step(state, target, rng, r_aug=None, t_aug=None, kappa_prior=None,
               kappa_cfg=KAPPA_SLICE, hooks=(), shared_kappa=True):
    """One sweep of the anti-correlation blocked Gibbs sampler.

    Parameters
    ----------
    state : ChainState
    target : QuadTarget
        Current conditional target (depends on hyperparameters in ``state``).
    rng : numpy.random.Generator
    r_aug, t_aug : sampler objects, optional
        Anything with a ``d`` attribute and ``sample(x, rng)`` drawing the
        anti-correlation Gaussian for ``M`` (resp. ``H``). Required when the
        matching matrix is dense; ignored when it is diagonal.
    kappa_prior : callable, optional
        Log prior density of ``kappa0``. When ``None`` the threshold is fixed
        at ``target.kappa``.
    hooks : sequence of callables
        ``hook(state, rng)`` called last, in order; each may update
        ``state.hyper`` in place.

    Returns
    -------
    ChainState
        A new state; the input is not modified.
    """
    p = target.dim
    if state.beta.shape != (p,):
        raise InvalidInputError(f"state has dimension {state.beta.shape}, target has {p}")
    new = state.copy()

    if target.m_is_diag:
        a, dcoef, new.r = target.phi, target.m_scale * target.m, None
    else:
        if r_aug is None:
            raise InvalidInputError("dense M needs an r augmentation sampler")
        new.r = r_aug.sample(state.theta, rng)
        a, dcoef = target.phi + new.r, r_aug.d
    if target.h_is_diag:
        c, ecoef, new.t = target.psi, target.h, None
    else:
        if t_aug is None:
            raise InvalidInputError("dense H needs a t augmentation sampler")
        new.t = t_aug.sample(state.beta, rng)
        c, ecoef = target.psi + new.t, t_aug.d

    kappa = target.kappa
    new.beta, _, new.theta = blocked_beta_update(CoordCoeffs(a, c, dcoef, ecoef, kappa), rng)

    if kappa_prior is not None:
        if not shared_kappa:
            raise InvalidInputError("only a shared threshold can be slice-updated")
        new.kappa0 = kappa_slice_update(new.beta, target.theta_energy_sparse, kappa_prior,
                                        state.kappa0, kappa_cfg, rng)
        kappa = np.full(p, new.kappa0)
    new.theta = soft_threshold(new.beta, kappa)

    for hook in hooks:
        hook(new, rng)
    new.iteration = state.iteration + 1
    return new


class FixedQuadModel:
    """Model with a fixed ``QuadTarget``: direct augmentations, no hyperparameters.

    ``kappa_prior`` switches on the shared-threshold slice update.
    """

    def __init__(self, target, epsilon=DEFAULT_EPSILON, kappa_prior=None, d=None, e=None):
        self.target = target
        self.kappa_prior = kappa_prior
        m = target.m_scale * (target.m.dense() if isinstance(target.m, EigenPrecision)
                              else target.m)
        h = target.h.dense() if isinstance(target.h, EigenPrecision) else target.h
        self.r_aug = None if target.m_is_diag else DirectAnticorr(
            m, d if d is not None else choose_d(spectral_upper_bound(m), epsilon))
        self.t_aug = None if target.h_is_diag else DirectAnticorr(
            h, e if e is not None else choose_d(spectral_upper_bound(h), epsilon))
        self.param_names = [f"theta_{j + 1}" for j in range(target.dim)] + ["kappa0"]

    def initial_state(self, rng):
        p = self.target.dim
        beta = np.zeros(p)
        k0 = float(self.target.kappa[0]) if self.kappa_prior is None else max(float(self.target.kappa[0]), 0.5)
        return ChainState(beta=beta, theta=np.zeros(p), kappa0=k0)

    def current_target(self, state):
        if self.kappa_prior is None:
            return self.target
        return replace(self.target, kappa=np.full(self.target.dim, state.kappa0), check=False)

    def step(self, state, rng):
        return gibbs_step(state, self.current_target(state), rng, r_aug=self.r_aug,
                          t_aug=self.t_aug, kappa_prior=self.kappa_prior)

    def record(self, state):
        return np.concatenate([state.theta, [state.kappa0]])

    def log_posterior(self, state):
        lp = self.current_target(state).log_density(state.beta)
        if self.kappa_prior is not None:
            lp += self.kappa_prior(state.kappa0)
        return lp

    def kappa_of(self, state):
        return self.current_target(state).kappa


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burn_in: int = 0
    thinning: int = 1

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise InvalidInputError("need iterations > burn_in >= 0")
        if self.thinning < 1:
            raise InvalidInputError("thinning must be at least 1")

    @property
    def n_retained(self):
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class SampleStore:
    """Retained draws of one chain plus run metadata."""

    names: list
    draws: np.ndarray
    logpost: np.ndarray
    seed: int
    iterations: int
    burn_in: int
    thinning: int
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def column(self, name):
        return self.draws[:, self.names.index(name)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.names)
            for row in self.draws:
                writer.writerow([repr(float(v)) for v in row])

    def trace_to_csv(self, path, extra_columns=None):
        """Per-iteration trace (all iterations, including burn-in)."""
        extra_columns = extra_columns or {}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "logpost", *extra_columns])
            cols = [np.asarray(v) for v in extra_columns.values()]
            for i, lp in enumerate(self.logpost):
                writer.writerow([i + 1, repr(float(lp)), *(repr(float(c[i])) for c in cols)])

    def metadata(self):
        return {"seed": self.seed, "iterations": self.iterations, "burn_in": self.burn_in,
                "thinning": self.thinning, "wall_seconds": self.wall_seconds,
                "n_retained": int(self.draws.shape[0]), **self.extra}

    def to_json(self, path, **metrics):
        with open(path, "w") as fh:
            json.dump({**self.metadata(), **metrics}, fh, indent=2, sort_keys=True, default=float)

    @classmethod
    def from_csv(cls, path, **meta):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        draws = np.array([[float(v) for v in row] for row in rows[1:]])
        return cls(names=rows[0], draws=draws, logpost=np.array([]), **meta)


def run_chain(config, model, rng_seed, check_invariants=False, trace_keys=(), on_retain=None):
    """Run one chain of ``model`` and collect a :class:`SampleStore`.

    ``model`` provides ``initial_state(rng)``, ``step(state, rng)``,
    ``record(state)``, ``log_posterior(state)`` and ``param_names``. The run
    is a pure function of ``rng_seed``. ``trace_keys`` names ``state.hyper``
    entries (or ``"kappa0"``) to record at every iteration. ``on_retain`` is
    called as ``on_retain(state)`` for every retained draw.
    """
    rng = np.random.default_rng(rng_seed)
    state = model.initial_state(rng)
    draws = np.empty((config.n_retained, len(model.param_names)))
    logpost = np.empty(config.iterations)
    traces = {k: np.empty(config.iterations) for k in trace_keys}
    kept = 0
    start = time.perf_counter()
    for it in range(1, config.iterations + 1):
        try:
            state = model.step(state, rng)
        except (NumericError, InvalidInputError, np.linalg.LinAlgError) as exc:
            raise NumericError(f"iteration {it}: {exc}", diagnostics={"iteration": it}) from exc
        if check_invariants:
            kappa = model.kappa_of(state)
            if not np.array_equal(state.theta, soft_threshold(state.beta, kappa)):
                raise NumericError(f"iteration {it}: theta out of sync with beta")
        logpost[it - 1] = model.log_posterior(state)
        for k in trace_keys:
            traces[k][it - 1] = state.kappa0 if k == "kappa0" else state.hyper[k]
        if it > config.burn_in and (it - config.burn_in) % config.thinning == 0:
            draws[kept] = model.record(state)
            kept += 1
            if on_retain is not None:
                on_retain(state)
    wall = time.perf_counter() - start
    store = SampleStore(names=list(model.param_names), draws=draws, logpost=logpost,
                        seed=rng_seed, iterations=config.iterations, burn_in=config.burn_in,
                        thinning=config.thinning, wall_seconds=wall)
    store.extra["traces"] = traces
    store.extra["final_state"] = state
    return store


def latent_gaussian_decouple_update(z, m_of_theta, d, rng, coord_sampler=None, log_g=None,
                                    slice_cfg=None, aug=None):
    """Decoupled update of a latent Gaussian vector ``z`` with precision ``M``.

    Draws ``r ~ N((dI - M) z, dI - M)``, after which the coordinates of ``z``
    are conditionally independent with densities proportional to
    ``g(y_i | z_i) exp(-d z_i**2 / 2 + z_i r_i)``.

    Parameters
    ----------
    z : (p,) ndarray
    m_of_theta : (p, p) ndarray
        Prior precision of ``z``.
    d : float
        Must exceed the spectral norm of ``m_of_theta``.
    coord_sampler : callable, optional
        ``coord_sampler(i, d, r_i, z_i, rng) -> float``. Defaults to a slice
        step on ``log_g(i, z_i) - d z_i**2 / 2 + z_i r_i``.
    log_g : callable, optional
        ``log_g(i, z_i)``; required for the default coordinate sampler.
    aug : DirectAnticorr, optional
        Cached factorization of ``dI - M`` to reuse across calls.
    """
    z = np.asarray(z, dtype=float)
    if aug is None:
        aug = DirectAnticorr(m_of_theta, d)
    r = aug.sample(z, rng)
    if coord_sampler is None:
        if log_g is None:
            raise InvalidInputError("either coord_sampler or log_g is required")
        cfg = slice_cfg or SliceConfig()

        def coord_sampler(i, d_, r_i, z_i, rng_):
            return slice_sample_1d(lambda v: log_g(i, v) - 0.5 * d_ * v * v + v * r_i,
                                   z_i, cfg, rng_)
    return np.array([coord_sampler(i, aug.d, r[i], z[i], rng) for i in range(z.shape[0])])


def truncated_mvn_step(theta, mu, precision, d, box, rng, aug=None):
    """One blocked update for ``N(mu, precision^{-1})`` truncated to a box.

    ``box`` is a :class:`TruncInterval` with per-coordinate bounds (arrays).
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    lower = np.broadcast_to(np.asarray(box.lower, dtype=float), theta.shape)
    upper = np.broadcast_to(np.asarray(box.upper, dtype=float), theta.shape)
    if np.any(theta < lower) or np.any(theta > upper):
        raise InvalidInputError("theta lies outside the truncation box")
    if aug is None:
        aug = DirectAnticorr(precision, d)
    r = aug.sample(theta - mu, rng)
    return sample_truncnorm(mu + r / aug.d, 1.0 / aug.d, TruncInterval(lower, upper), rng)


class TruncatedMvnModel:
    """Chain wrapper around :func:`truncated_mvn_step` for :func:`run_chain`."""

    def __init__(self, mu, precision, box, epsilon=DEFAULT_EPSILON, d=None):
        self.mu = np.asarray(mu, dtype=float)
        self.precision = np.asarray(precision, dtype=float)
        lower = np.broadcast_to(np.asarray(box.lower, dtype=float), self.mu.shape)
        upper = np.broadcast_to(np.asarray(box.upper, dtype=float), self.mu.shape)
        self.box = TruncInterval(lower.copy(), upper.copy())
        if d is None:
            d = choose_d(spectral_upper_bound(self.precision), epsilon)
        self.aug = DirectAnticorr(self.precision, d)
        self.param_names = [f"theta_{j + 1}" for j in range(self.mu.shape[0])]

    def initial_state(self, rng):
        lo, hi = self.box.lower, self.box.upper
        with np.errstate(invalid="ignore"):
            start = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                             np.where(np.isfinite(lo), lo + 1.0,
                                      np.where(np.isfinite(hi), hi - 1.0, self.mu)))
        return ChainState(beta=start.copy(), theta=start.copy(), kappa0=0.0)

    def step(self, state, rng):
        theta = truncated_mvn_step(state.theta, self.mu, self.precision, self.aug.d,
                                   self.box, rng, aug=self.aug)
        return ChainState(beta=theta, theta=theta, kappa0=0.0, iteration=state.iteration + 1)

    def record(self, state):
        return state.theta

    def log_posterior(self, state):
        dev = state.theta - self.mu
        return -0.5 * float(dev @ self.precision @ dev)

    def kappa_of(self, state):
        return np.zeros_like(state.theta)
