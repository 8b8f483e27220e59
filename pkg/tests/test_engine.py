import math

import numpy as np
import pytest
from scipy import integrate, stats

from anticorr_gibbs.anticorr import DirectAnticorr
from anticorr_gibbs.diagnostics import effective_sample_size, moment_zscores
from anticorr_gibbs.distributions import SliceConfig, TruncInterval
from anticorr_gibbs.engine import (ChainConfig, ChainState, EigenAnticorr, EigenPrecision,
                                   FixedQuadModel, QuadTarget, SampleStore, TruncatedMvnModel,
                                   gibbs_step, latent_gaussian_decouple_update, run_chain,
                                   truncated_mvn_step)
from anticorr_gibbs.exceptions import DefinitenessError, InvalidInputError, NumericError
from anticorr_gibbs.l1ball import CoordCoeffs, blocked_beta_update, soft_threshold
from anticorr_gibbs.models import exp_log_density

from oracles import QuadOracle2D, box_moments_2d, mixed_marginal_checks

M2 = np.array([[1.0, 0.5], [0.5, 0.8]])
H2 = np.array([[1.2, -0.4], [-0.4, 1.0]])
PHI2, PSI2, KAPPA2 = np.array([0.8, -0.5]), np.array([0.2, 0.1]), np.array([0.5, 0.4])


def p2_target():
    return QuadTarget(m=M2, phi=PHI2, h=H2, psi=PSI2, kappa=KAPPA2)


def test_quad_target_validation():
    with pytest.raises(InvalidInputError):
        QuadTarget(m=np.eye(3), phi=np.zeros(2), h=np.ones(2), psi=np.zeros(2), kappa=0.1)
    with pytest.raises(InvalidInputError):
        QuadTarget(m=np.ones(2), phi=np.zeros(2), h=np.ones(2), psi=np.zeros(3), kappa=0.1)
    with pytest.raises(InvalidInputError):
        QuadTarget(m=np.ones(2), phi=np.zeros(2), h=np.ones(2), psi=np.zeros(2), kappa=-1.0)
    with pytest.raises(DefinitenessError):
        QuadTarget(m=np.array([[1.0, 2.0], [2.0, 1.0]]), phi=np.zeros(2), h=np.ones(2),
                   psi=np.zeros(2), kappa=0.1)
    with pytest.raises(InvalidInputError):
        QuadTarget(m=np.ones(2), phi=np.zeros(2), h=-np.ones(2), psi=np.zeros(2), kappa=0.1)


def test_theta_energy_forms_agree(rng):
    a = rng.standard_normal((3, 5))
    gram = a.T @ a
    ev, q = np.linalg.eigh(gram)
    ev = np.maximum(ev, 0)
    kw = dict(phi=rng.standard_normal(5), h=np.ones(5), psi=np.zeros(5), kappa=0.2)
    theta = np.array([0.0, 1.2, -0.3, 0.0, 2.0])
    ref = 0.5 * theta @ gram @ theta - 2 * kw["phi"] @ theta
    forms = [QuadTarget(m=gram, m_scale=0.5, **kw), QuadTarget(m=gram, m_scale=0.5, m_factor=a, **kw),
             QuadTarget(m=EigenPrecision(q, ev), m_scale=0.5, **kw)]
    nz = np.flatnonzero(theta)[::-1]
    for t in forms:
        assert t.theta_energy(theta) == pytest.approx(ref, rel=1e-10)
        assert t.theta_energy_sparse(nz, theta[nz]) == pytest.approx(ref, rel=1e-10)
        assert t.theta_energy_sparse(nz[:0], theta[:0]) == 0.0
    diag = QuadTarget(m=np.diag(gram), **kw)
    assert diag.theta_energy(theta) == pytest.approx(
        theta @ np.diag(np.diag(gram)) @ theta - 2 * kw["phi"] @ theta)


def test_eigen_precision_and_anticorr(rng):
    a = rng.standard_normal((6, 4))
    m = a.T @ a
    ev, q = np.linalg.eigh(m)
    prec = EigenPrecision(q, np.maximum(ev, 0))
    np.testing.assert_allclose(prec.dense(), m, atol=1e-10)
    d = prec.largest + 0.3
    aug = EigenAnticorr(prec, d)
    x = rng.standard_normal(4)
    draws = np.array([aug.sample(x, rng) for _ in range(100_000)])
    zm, zc = moment_zscores(draws, d * x - m @ x, d * np.eye(4) - m)
    assert np.max(np.abs(zm)) < 4.5 and np.max(np.abs(zc)) < 4.5
    with pytest.raises(InvalidInputError):
        EigenAnticorr(prec, prec.largest)


def test_diagonal_step_is_plain_coordinate_update():
    m, h = np.array([1.0, 2.0, 0.5]), np.array([0.7, 1.1, 2.0])
    phi, psi = np.array([0.3, -1.0, 2.0]), np.array([0.1, 0.0, -0.4])
    target = QuadTarget(m=m, phi=phi, h=h, psi=psi, kappa=0.6)
    state = ChainState(beta=np.zeros(3), theta=np.zeros(3), kappa0=0.6)
    for seed in range(5):
        new = gibbs_step(state, target, np.random.default_rng(seed))
        assert new.r is None and new.t is None
        beta, _, theta = blocked_beta_update(CoordCoeffs(phi, psi, m, h, 0.6),
                                             np.random.default_rng(seed))
        np.testing.assert_array_equal(new.beta, beta)
        np.testing.assert_array_equal(new.theta, theta)


def test_dense_step_needs_augmentation():
    state = ChainState(beta=np.zeros(2), theta=np.zeros(2), kappa0=0.5)
    with pytest.raises(InvalidInputError):
        gibbs_step(state, p2_target(), np.random.default_rng(0))
    bad = ChainState(beta=np.zeros(3), theta=np.zeros(3), kappa0=0.5)
    with pytest.raises(InvalidInputError):
        gibbs_step(bad, QuadTarget(m=np.ones(2), phi=np.zeros(2), h=np.ones(2),
                                   psi=np.zeros(2), kappa=0.1), np.random.default_rng(0))


def test_step_does_not_mutate_input():
    model = FixedQuadModel(p2_target())
    state = model.initial_state(np.random.default_rng(0))
    before = state.copy()
    model.step(state, np.random.default_rng(1))
    np.testing.assert_array_equal(state.beta, before.beta)


def test_p2_stationarity_against_quadrature():
    oracle = QuadOracle2D(M2, PHI2, H2, PSI2, KAPPA2)
    store = run_chain(ChainConfig(40_000, 1_000), FixedQuadModel(p2_target()), 17,
                      check_invariants=True)
    for j in range(2):
        atom_err, ks = mixed_marginal_checks(store.draws, oracle, j)
        assert atom_err < 0.02
        assert ks < 0.03


@pytest.mark.parametrize("eps", [1e-6, 1e-2, 1.0, 10.0])
def test_stationary_moments_insensitive_to_margin(eps):
    oracle = QuadOracle2D(M2, PHI2, H2, PSI2, KAPPA2)
    store = run_chain(ChainConfig(20_000, 1_000), FixedQuadModel(p2_target(), epsilon=eps), 5)
    for j in range(2):
        col = store.draws[:, j]
        se = col.std() / math.sqrt(effective_sample_size(col))
        assert abs(col.mean() - oracle.theta_mean(j)) < 4.5 * se


def test_kappa_update_inside_gibbs():
    # one coordinate, flat likelihood in theta: kappa keeps its Exp(1) prior
    target = QuadTarget(m=np.zeros(1), phi=np.zeros(1), h=np.ones(1), psi=np.zeros(1), kappa=1.0)
    model = FixedQuadModel(target, kappa_prior=exp_log_density(1.0))
    store = run_chain(ChainConfig(20_000, 500), model, 4, check_invariants=True)
    assert stats.kstest(store.column("kappa0")[::2], "expon").statistic < 0.03


def test_run_chain_determinism_and_shape(tmp_path):
    model = FixedQuadModel(p2_target())
    a = run_chain(ChainConfig(10_000, 2_000), model, 1)
    b = run_chain(ChainConfig(10_000, 2_000), model, 1)
    c = run_chain(ChainConfig(10_000, 2_000), model, 2)
    assert a.draws.shape == (8_000, 3)
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.logpost, b.logpost)
    assert not np.array_equal(a.draws, c.draws)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = SampleStore.from_csv(tmp_path / "a.csv", seed=1, iterations=10_000, burn_in=2_000,
                                thinning=1)
    np.testing.assert_array_equal(back.draws, a.draws)
    assert back.names == a.names


def test_thinning_row_count():
    store = run_chain(ChainConfig(1_000, 100, thinning=3), FixedQuadModel(p2_target()), 0)
    assert store.draws.shape[0] == (1_000 - 100) // 3
    assert store.logpost.shape == (1_000,)


def test_chain_config_validation():
    for bad in [dict(iterations=10, burn_in=10), dict(iterations=0), dict(iterations=5, thinning=0),
                dict(iterations=5, burn_in=-1)]:
        with pytest.raises(InvalidInputError):
            ChainConfig(**bad)


class _Exploding:
    param_names = ["x"]

    def initial_state(self, rng):
        return ChainState(beta=np.zeros(1), theta=np.zeros(1), kappa0=0.0)

    def step(self, state, rng):
        if state.iteration == 2:
            raise NumericError("boom")
        return ChainState(beta=state.beta, theta=state.theta, kappa0=0.0,
                          iteration=state.iteration + 1)

    def record(self, state):
        return state.theta

    def log_posterior(self, state):
        return 0.0


def test_run_chain_attaches_iteration():
    with pytest.raises(NumericError) as info:
        run_chain(ChainConfig(10), _Exploding(), 0)
    assert info.value.diagnostics["iteration"] == 3
    assert "iteration 3" in str(info.value)


def test_latent_gaussian_conjugate_case():
    rng = np.random.default_rng(31)
    a = rng.standard_normal((5, 3))
    sigma = a.T @ a / 5 + 0.3 * np.eye(3)
    prec = np.linalg.inv(sigma)
    y = np.array([1.0, -0.5, 2.0])
    d = np.linalg.eigvalsh(prec).max() + 0.1
    aug = DirectAnticorr(prec, d)
    post_prec = prec + np.eye(3)
    post_cov = np.linalg.inv(post_prec)
    post_mean = post_cov @ y

    def coord(i, d_, r_i, z_i, rng_):
        # exact conjugate draw: log density -(d+1) z^2 / 2 + z (r_i + y_i)
        return rng_.normal((r_i + y[i]) / (d_ + 1), 1 / math.sqrt(d_ + 1))
    z = np.zeros(3)
    out = np.empty((60_000, 3))
    for it in range(61_000):
        z = latent_gaussian_decouple_update(z, prec, d, rng, coord_sampler=coord, aug=aug)
        if it >= 1_000:
            out[it - 1_000] = z
    for j in range(3):
        se = math.sqrt(post_cov[j, j] / effective_sample_size(out[:, j]))
        assert abs(out[:, j].mean() - post_mean[j]) < 4.5 * se
    assert np.max(np.abs(np.cov(out, rowvar=False) - post_cov)) < 0.03


def test_latent_gaussian_no_coupling_matches_coordinate_slice():
    # M = 0: r ~ N(0, dI) and each coordinate targets log g - d z^2/2 + z r
    y = np.array([0.5, -1.0])
    log_g = lambda i, v: -0.5 * (y[i] - v) ** 2
    rng = np.random.default_rng(2)
    z = np.zeros(2)
    out = np.empty((30_000, 2))
    for it in range(30_000):
        z = latent_gaussian_decouple_update(z, np.zeros((2, 2)), 1.0, rng, log_g=log_g)
        out[it] = z
    # flat prior on z, so the stationary law is N(y, I)
    assert np.max(np.abs(out.mean(0) - y)) < 0.05
    assert np.max(np.abs(out.var(0) - 1)) < 0.05


def test_latent_gaussian_poisson_quadrature():
    counts = np.array([1, 0])
    sigma = np.array([[1.0, 0.6], [0.6, 1.0]])
    prec = np.linalg.inv(sigma)
    d = np.linalg.eigvalsh(prec).max() + 1e-3
    log_g = lambda i, v: counts[i] * v - math.exp(v)
    rng = np.random.default_rng(9)
    aug = DirectAnticorr(prec, d)
    z = np.zeros(2)
    out = np.empty((40_000, 2))
    for it in range(41_000):
        z = latent_gaussian_decouple_update(z, prec, d, rng, log_g=log_g, aug=aug)
        if it >= 1_000:
            out[it - 1_000] = z
    grid = np.linspace(-8, 5, 1301)
    g1, g2 = np.meshgrid(grid, grid, indexing="ij")
    logp = (counts[0] * g1 - np.exp(g1) + counts[1] * g2 - np.exp(g2)
            - 0.5 * (prec[0, 0] * g1 ** 2 + 2 * prec[0, 1] * g1 * g2 + prec[1, 1] * g2 ** 2))
    dens = np.exp(logp - logp.max())
    for j, marg in enumerate([dens.sum(1), dens.sum(0)]):
        cdf = np.cumsum(marg) / marg.sum()
        ks = stats.kstest(out[::4, j], lambda t: np.interp(t, grid, cdf)).statistic
        assert ks < 0.03


def test_truncated_mvn_unbounded_box():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 4))
    cov = a.T @ a / 6 + 0.2 * np.eye(4)
    mu = np.array([1.0, -1.0, 0.0, 2.0])
    model = TruncatedMvnModel(mu, np.linalg.inv(cov), TruncInterval(-np.inf, np.inf))
    store = run_chain(ChainConfig(40_000, 1_000), model, 4)
    for j in range(4):
        se = math.sqrt(cov[j, j] / effective_sample_size(store.draws[:, j]))
        assert abs(store.draws[:, j].mean() - mu[j]) < 4.5 * se
    assert np.max(np.abs(np.cov(store.draws, rowvar=False) - cov)) < 0.1


def test_truncated_mvn_correlated_positive_quadrant():
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    mu = np.zeros(2)
    lower, upper = np.zeros(2), np.full(2, np.inf)
    model = TruncatedMvnModel(mu, np.linalg.inv(cov), TruncInterval(lower, upper))
    store = run_chain(ChainConfig(60_000, 2_000), model, 6)
    mean, var = box_moments_2d(mu, cov, lower, [12.0, 12.0])
    assert np.all(store.draws > 0)
    np.testing.assert_allclose(store.draws.mean(0), mean, atol=0.01)
    np.testing.assert_allclose(np.cov(store.draws, rowvar=False), var, atol=0.02)


def test_truncated_mvn_rejects_outside_start():
    box = TruncInterval(np.zeros(2), np.ones(2))
    with pytest.raises(InvalidInputError):
        truncated_mvn_step(np.array([2.0, 0.5]), np.zeros(2), np.eye(2), 1.5, box,
                           np.random.default_rng(0))
