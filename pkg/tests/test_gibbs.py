import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bulknoise.chain import ChainParams, ChainState, local_observables
from bulknoise.gibbs import (GibbsParams, energy_covariance_matrix, equilibrium_energy_covariance,
                             gibbs_covariance, gibbs_moments, linear_profile,
                             lte_fluctuation_prediction)


@pytest.mark.parametrize("t,tau,expected", [(2, 3, (2, 6.5, 3)), (1, 0, (1, 1, 0)),
                                            (5, -2, (5, 7, -2))])
def test_gibbs_moments(t, tau, expected):
    assert gibbs_moments(GibbsParams(t, tau)) == pytest.approx(expected)


def test_gibbs_moments_rejects_pinning():
    with pytest.raises(ValueError, match="pinning"):
        gibbs_moments(GibbsParams(1.0, 0.0, pinning=0.5))
    with pytest.raises(ValueError):
        GibbsParams(0.0)


def test_tension_ensemble_by_sampling():
    # under the (T, tau) measure the r_j are iid N(tau, T) and p_j iid N(0, T)
    rng = np.random.default_rng(0)
    t, tau = 2.0, 3.0
    r = rng.normal(tau, np.sqrt(t), size=(200_000, 2))
    p = rng.normal(0, np.sqrt(t), size=200_000)
    e = p**2 / 2 + (r[:, 0] ** 2 + r[:, 1] ** 2) / 4
    _, mean_e, mean_r = gibbs_moments(GibbsParams(t, tau))
    assert abs(e.mean() - mean_e) < 4 * e.std() / np.sqrt(e.size)
    assert abs(r[:, 0].mean() - mean_r) < 4 * np.sqrt(t / r.shape[0])


def test_bulk_covariances_approach_product_measure():
    # the fixed ends couple the r_j through sum r = 0, an O(1/N) correction
    for n in (64, 256):
        c = energy_covariance_matrix(n, 2.0)
        m = n // 2
        assert abs(c[m, m] - 0.75 * 4) < 4.0 / n
        assert abs(c[m, m + 1] - 0.125 * 4) < 4.0 / n
        assert abs(c[m, m + 2]) < 4 * 4.0 / n**2
        assert abs(c[m, m + 7]) < 4 * 4.0 / n**2


def test_covariance_index_check():
    with pytest.raises(IndexError):
        equilibrium_energy_covariance(0, 10, 1.0, 0.0, 8)
    assert equilibrium_energy_covariance(0, 9, 1.0, 0.0, 8) == pytest.approx(
        energy_covariance_matrix(8)[0, 9])


@pytest.mark.parametrize("nu", [0.0, 1.0])
def test_wick_against_gaussian_sampling(nu):
    n, reps = 16, 400_000
    rng = np.random.default_rng(int(10 * nu) + 1)
    x = rng.multivariate_normal(np.zeros(2 * n), gibbs_covariance(n, 1.0, nu), size=reps,
                                method="cholesky")
    params = ChainParams(n, pinning=nu)
    energies = np.array([local_observables(ChainState(row[:n], row[n:]), params).local_energy
                         for row in x[:1]])
    assert energies.shape == (1, n + 2)
    q = np.concatenate([np.zeros((reps, 1)), x[:, :n], np.zeros((reps, 1))], axis=1)
    p = np.concatenate([np.zeros((reps, 1)), x[:, n:], np.zeros((reps, 1))], axis=1)
    r = np.diff(q, axis=1)
    e = p**2 / 2 + nu**2 * q**2 / 2
    e[:, :-1] += r**2 / 4
    e[:, 1:] += r**2 / 4
    assert np.allclose(e[0], energies[0])
    ec = e - e.mean(axis=0)
    exact = energy_covariance_matrix(n, 1.0, nu)
    prods = ec[:, :, None] * ec[:, None, :]
    est = prods.mean(axis=0)
    err = prods.std(axis=0) / np.sqrt(reps)
    err[err == 0] = 1e-12
    z = np.abs(est - exact) / err
    # about 170 distinct pairs; 4 sigma over all of them at once, plus a 5 sigma hard bound
    assert np.mean(z > 4) < 0.01
    assert z.max() < 5.5


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 20), st.integers(2, 20), st.sampled_from([0.0, 0.5, 1.0]))
def test_covariance_scales_as_t_squared(c, n, nu):
    base = energy_covariance_matrix(n, 1.0, nu)
    assert np.allclose(energy_covariance_matrix(n, c, nu), c**2 * base, rtol=1e-12, atol=0)


def _decay_rate(n, site, span):
    c = np.abs(energy_covariance_matrix(n, 1.0, 1.0)[site, site + 1: site + 1 + span])
    k = np.arange(1, span + 1)
    slope, _ = np.polyfit(k, np.log(c), 1)
    return -slope


def test_pinned_covariance_decays_exponentially():
    r32 = _decay_rate(32, 10, 8)
    r64 = _decay_rate(64, 20, 8)
    assert r32 > 1.0
    assert abs(r32 - r64) < 0.02 * r32


def test_lte_uniform_profile():
    for n in (16, 64):
        s = lte_fluctuation_prediction(np.full(n, 3.0))
        assert abs(s - 1.0) < 2.0 / n
    assert lte_fluctuation_prediction(linear_profile(2, 2, 64)) == pytest.approx(
        lte_fluctuation_prediction(np.full(64, 2.0)), abs=1e-14)


def test_lte_linear_profile_1_8():
    s = lte_fluctuation_prediction(linear_profile(1, 8, 400))
    assert round(s, 2) == 1.20
    assert abs(s - (73 / 3) / 4.5**2) < 5e-3


def test_lte_rejects_bad_profile():
    with pytest.raises(ValueError):
        lte_fluctuation_prediction(np.array([1.0, -1.0, 2.0]))
    with pytest.raises(ValueError):
        lte_fluctuation_prediction(np.ones(5), n=6)
