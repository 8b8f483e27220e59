import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from anticorr_gibbs.distributions import SliceConfig, TruncInterval
from anticorr_gibbs.exceptions import InvalidInputError
from anticorr_gibbs.l1ball import (CoordCoeffs, blocked_beta_update, kappa_slice_update,
                                   mixture_log_weights, sample_beta_coord, sample_mixture_labels,
                                   soft_threshold)

KAPPA_CFG = SliceConfig(domain=TruncInterval(0.0, np.inf))


def piecewise_quad(f, lo, hi, breaks):
    """Integral of ``f`` over ``(lo, hi)`` split at the interior ``breaks``."""
    pts = [lo] + [b for b in sorted(breaks) if lo < b < hi] + [hi]
    return sum(integrate.quad(f, u, v, epsabs=0, epsrel=1e-11, limit=200)[0]
               for u, v in zip(pts[:-1], pts[1:]))


def region_masses(a, c, d, e, k):
    """Quadrature of the coordinate density over beta < -k, |beta| < k, beta > k."""
    def f(beta):
        th = math.copysign(max(abs(beta) - k, 0.0), beta)
        return math.exp(-0.5 * (d * th * th - 2 * a * th + e * beta * beta - 2 * c * beta))
    kw = dict(epsabs=0, epsrel=1e-12, limit=200)
    neg = integrate.quad(f, -np.inf, -k, **kw)[0]
    zero = integrate.quad(f, -k, k, **kw)[0] if k > 0 else 0.0
    pos = integrate.quad(f, k, np.inf, **kw)[0]
    tot = neg + zero + pos
    return np.array([neg, zero, pos]) / tot


def test_soft_threshold_examples():
    np.testing.assert_array_equal(soft_threshold([2.0, -0.3, 0.0], [0.5] * 3), [1.5, 0, 0])
    b = np.array([0.3, -2.0, 5.5])
    np.testing.assert_array_equal(soft_threshold(b, np.zeros(3)), b)
    assert soft_threshold([-1.2], [1.2])[0] == 0.0
    with pytest.raises(InvalidInputError):
        soft_threshold([1.0], [-0.1])


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.floats(0, 10))
def test_soft_threshold_is_one_lipschitz(pair, k):
    t = soft_threshold(np.array(pair), k)
    assert abs(t[0] - t[1]) <= abs(pair[0] - pair[1]) + 1e-12


def test_weights_sign_symmetry():
    p = mixture_log_weights(CoordCoeffs(0.0, 0.0, 1.0, 1.0, 1.0)).probs[0]
    assert abs(p[0] - p[2]) < 1e-12


def test_weights_large_threshold():
    p = mixture_log_weights(CoordCoeffs(0.0, 0.0, 1.0, 1.0, 50.0)).probs[0]
    assert abs(p[1] - 1.0) < 1e-10


def test_weights_zero_threshold_has_no_zero_component():
    w = mixture_log_weights(CoordCoeffs(0.3, 0.1, 1.0, 2.0, 0.0))
    assert w.logw[0, 1] == -np.inf
    assert np.all(np.isfinite(w.probs))
    assert w.probs[0, 1] == 0.0


def test_weights_quadrature_oracle():
    p = mixture_log_weights(CoordCoeffs(1.3, -0.4, 2.0, 1.0, 0.7)).probs[0]
    np.testing.assert_allclose(p, region_masses(1.3, -0.4, 2.0, 1.0, 0.7), atol=1e-6)


def test_weights_quadrature_oracle_random_points():
    rng = np.random.default_rng(21)
    for _ in range(20):
        a, c = rng.normal(0, 2, 2)
        d, e = rng.uniform(0.1, 3, 2)
        k = rng.uniform(0.05, 2)
        p = mixture_log_weights(CoordCoeffs(a, c, d, e, k)).probs[0]
        np.testing.assert_allclose(p, region_masses(a, c, d, e, k), atol=1e-6)


def _shared_de_transcription(a, c, d, e, k):
    """Direct log-space transcription of the three weights for shared (d, e)."""
    s1 = 1 / math.sqrt(d + e)
    s0 = 1 / math.sqrt(e)
    mu_p = (a + c + d * k) / (d + e)
    mu_n = (a + c - d * k) / (d + e)
    mu0 = c / e
    m_pos = s1 * math.sqrt(2 * math.pi) * stats.norm.sf((k - mu_p) / s1)
    m_neg = s1 * math.sqrt(2 * math.pi) * stats.norm.cdf((-k - mu_n) / s1)
    m_zero = s0 * math.sqrt(2 * math.pi) * (stats.norm.cdf((k - mu0) / s0)
                                            - stats.norm.cdf((-k - mu0) / s0))
    lw = np.array([
        (a + c - d * k) ** 2 / (2 * (d + e)) - d * k * k / 2 + a * k + math.log(m_neg),
        c * c / (2 * e) + math.log(m_zero),
        (a + c + d * k) ** 2 / (2 * (d + e)) - d * k * k / 2 - a * k + math.log(m_pos),
    ])
    return lw - lw.max()


def test_weights_reduce_to_shared_coefficient_form():
    rng = np.random.default_rng(5)
    d, e = 1.7, 0.6
    a, c = rng.normal(0, 1.5, 20), rng.normal(0, 1.5, 20)
    k = rng.uniform(0.1, 1.5, 20)
    w = mixture_log_weights(CoordCoeffs(a, c, d, e, k))
    for j in range(20):
        got = w.logw[j] - w.logw[j].max()
        np.testing.assert_allclose(got, _shared_de_transcription(a[j], c[j], d, e, k[j]),
                                   atol=1e-9)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1e-3, 1e2),
       st.floats(1e-3, 1e2), st.floats(0, 50))
def test_weights_normalize(a, c, d, e, k):
    p = mixture_log_weights(CoordCoeffs(a, c, d, e, k)).probs
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


def test_coeff_validation():
    with pytest.raises(InvalidInputError):
        CoordCoeffs(0.0, 0.0, 1.0, 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        CoordCoeffs(0.0, 0.0, -1.0, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        CoordCoeffs(0.0, 0.0, 1.0, 1.0, -1.0)


def test_beta_coord_zero_piece(rng):
    co = CoordCoeffs(np.full(100_000, 3.0), 0.0, 1.0, 1.0, 2.0)
    x = sample_beta_coord(0, co, rng)
    assert np.all(np.abs(x) < 2)
    assert abs(x.mean()) < 0.02


def test_beta_coord_positive_piece(rng):
    co = CoordCoeffs(np.zeros(100_000), 0.0, 1.0, 1.0, 1.0)
    mu, sd, lo, hi = co.components()[1]
    assert mu[0] == pytest.approx(0.5) and sd[0] == pytest.approx(1 / math.sqrt(2))
    x = sample_beta_coord(1, co, rng)
    assert np.all(x > 1)
    ref = stats.truncnorm.mean((1 - 0.5) / sd[0], np.inf, loc=0.5, scale=sd[0])
    assert abs(x.mean() - ref) < 0.01


def test_beta_coord_negative_piece(rng):
    co = CoordCoeffs(np.full(100_000, 1.3), -0.4, 2.0, 1.0, 0.7)
    x = sample_beta_coord(-1, co, rng)
    mu, s = (1.3 - 0.4 - 1.4) / 3, 1 / math.sqrt(3)
    assert mu == pytest.approx(-0.1667, abs=1e-4)
    ref = stats.truncnorm.mean(-np.inf, (-0.7 - mu) / s, loc=mu, scale=s)
    assert np.all(x < -0.7)
    assert abs(x.mean() - ref) < 0.01


def test_beta_coord_zero_needs_threshold(rng):
    with pytest.raises(InvalidInputError):
        sample_beta_coord(0, CoordCoeffs(0.0, 0.0, 1.0, 1.0, 0.0), rng)


def test_blocked_update_huge_threshold(rng):
    co = CoordCoeffs(np.zeros(50), 0.0, 1.0, 1.0, 1e3)
    beta, b, theta = blocked_beta_update(co, rng)
    assert np.all(b == 0)
    assert np.all(theta == 0.0)


def test_blocked_update_label_frequencies(rng):
    N = 200_000
    co = CoordCoeffs(np.full(N, 1.3), -0.4, 2.0, 1.0, 0.7)
    _, b, _ = blocked_beta_update(co, rng)
    freq = np.array([np.mean(b == s) for s in (-1, 0, 1)])
    assert np.all(np.abs(freq - region_masses(1.3, -0.4, 2.0, 1.0, 0.7)) < 3 / math.sqrt(N))


def test_blocked_update_beta_law_matches_density(rng):
    N = 100_000
    a, c, d, e, k = 0.8, 0.3, 1.5, 1.0, 0.6
    beta, _, _ = blocked_beta_update(CoordCoeffs(np.full(N, a), c, d, e, k), rng)

    def dens(x):
        th = math.copysign(max(abs(x) - k, 0.0), x)
        return math.exp(-0.5 * (d * th * th - 2 * a * th + e * x * x - 2 * c * x))
    z = piecewise_quad(dens, -np.inf, np.inf, [-k, k])

    def cdf(x):
        return piecewise_quad(dens, -np.inf, x, [-k, k]) / z
    grid = np.quantile(beta, np.linspace(0.01, 0.99, 60))
    emp = np.searchsorted(np.sort(beta), grid, side="right") / N
    assert np.max(np.abs(emp - np.array([cdf(g) for g in grid]))) < 0.01


def test_blocked_update_coordinates_independent(rng):
    N = 100_000
    a = np.tile([0.4, -0.2], N)
    co = CoordCoeffs(a, np.tile([0.1, 0.3], N), 1.0, 1.0, 0.5)
    _, b, _ = blocked_beta_update(co, rng)
    b = b.reshape(N, 2)
    table = np.array([[np.sum((b[:, 0] == i) & (b[:, 1] == j)) for j in (-1, 0, 1)]
                      for i in (-1, 0, 1)])
    assert stats.chi2_contingency(table).pvalue > 0.01


@given(st.integers(0, 2**31 - 1))
def test_blocked_update_exact_zeros(seed):
    rng = np.random.default_rng(seed)
    p = 30
    co = CoordCoeffs(rng.normal(0, 3, p), rng.normal(0, 3, p), rng.uniform(0.1, 3, p),
                     rng.uniform(0.1, 3, p), rng.uniform(0, 2, p) * (rng.random(p) < 0.8))
    beta, b, theta = blocked_beta_update(co, rng)
    zero = theta == 0
    assert np.array_equal(zero, (b == 0) | (np.abs(beta) <= co.kappa))
    assert np.all(np.abs(beta[b == 0]) < co.kappa[b == 0])
    assert np.array_equal(np.sign(theta[~zero]), b[~zero])


def test_labels_use_probabilities(rng):
    w = mixture_log_weights(CoordCoeffs(np.zeros(3), 0.0, 1.0, 1.0, np.array([0.0, 1.0, 60.0])))
    b = sample_mixture_labels(w, rng)
    assert b[0] != 0 and b[2] == 0


def _dense_energy(energy, p):
    def sparse(idx, vals):
        th = np.zeros(p)
        th[idx] = vals
        return energy(th)
    return sparse


def _kappa_chain(beta, energy, n, seed, k0=1.0):
    rng = np.random.default_rng(seed)
    prior = lambda k: -k if k >= 0 else -np.inf
    sparse = _dense_energy(energy, len(beta))
    out = np.empty(n)
    k = k0
    for i in range(n):
        k = kappa_slice_update(beta, sparse, prior, k, KAPPA_CFG, rng)
        out[i] = k
    return out


def test_kappa_flat_likelihood_recovers_prior():
    beta = np.array([0.5, -2.0, 1.0])
    ks = _kappa_chain(beta, lambda th: 0.0, 20_000, 1)
    assert stats.kstest(ks, "expon").statistic < 0.02


def test_kappa_target_constant_beyond_saturation():
    beta = np.array([0.5, -2.0])
    m, phi = np.array([[2.0, 0.3], [0.3, 1.0]]), np.array([1.0, -1.0])
    calls = []

    def energy(th):
        calls.append(th.copy())
        return float(th @ m @ th - 2 * phi @ th)
    e1 = energy(soft_threshold(beta, 2.5))
    e2 = energy(soft_threshold(beta, 7.0))
    assert e1 == e2 == 0.0


def test_kappa_one_dimensional_quadrature_oracle():
    beta = np.array([3.0])
    ks = _kappa_chain(beta, lambda th: float(th[0] ** 2 - 4 * th[0]), 20_000, 2)

    def dens(k):
        th = max(3 - k, 0.0)
        return math.exp(-0.5 * (th * th - 4 * th) - k)
    z = piecewise_quad(dens, 0, np.inf, [3.0])
    cdf = np.vectorize(lambda x: piecewise_quad(dens, 0, x, [3.0]) / z)
    assert stats.kstest(ks, cdf).statistic < 0.02


def test_kappa_target_passes_soft_thresholded_support(rng):
    beta = np.array([0.3, -2.0, 1.1, 0.0, -0.7])
    seen = []

    def energy(idx, vals):
        seen.append((idx.copy(), vals.copy()))
        return 0.0
    kappa_slice_update(beta, energy, lambda k: -k if k >= 0 else -np.inf, 0.5, KAPPA_CFG, rng)
    assert seen
    for idx, vals in seen:
        th = np.zeros(beta.size)
        th[idx] = vals
        k = np.max(np.abs(beta)) - np.max(np.abs(vals)) if idx.size else None
        if k is not None:
            np.testing.assert_allclose(th, soft_threshold(beta, k), atol=1e-12)
        assert np.all(vals != 0)
