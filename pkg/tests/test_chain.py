import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bulknoise.chain import (ChainParams, ChainState, Model, QuadraticObservable,
                             check_current_decomposition, conservation_check, generator_apply,
                             generator_quadratic, hamiltonian, local_observables, site_energies,
                             total_energy)
from bulknoise.dynamics import simulate_segments

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def states(n):
    return st.tuples(arrays(float, n, elements=finite), arrays(float, n, elements=finite)).map(
        lambda qp: ChainState(qp[0], qp[1]))


def brute_energy(q, p, nu):
    # term-by-term evaluation of the Hamiltonian display, boundary particles included
    qq = [0.0] + list(q) + [0.0]
    pp = [0.0] + list(p) + [0.0]
    h = 0.0
    for j in range(len(qq)):
        h += pp[j] ** 2 / 2 + nu**2 * qq[j] ** 2 / 2
        for i in (j - 1, j + 1):
            if 0 <= i < len(qq):
                h += (qq[j] - qq[i]) ** 2 / 4
    return h


# ---------------------------------------------------------------- params / state


def test_params_validation():
    with pytest.raises(ValueError):
        ChainParams(1)
    with pytest.raises(ValueError):
        ChainParams(4, pinning=-1)
    with pytest.raises(ValueError):
        ChainParams(4, temp_left=0)
    with pytest.raises(ValueError):
        ChainParams(4, flip_rate=-0.1)
    p = ChainParams(4, model="SelfConsistent")
    assert p.model is Model.SELF_CONSISTENT


def test_state_validation():
    with pytest.raises(ValueError):
        ChainState([1.0, np.nan], [0.0, 0.0])
    with pytest.raises(ValueError):
        ChainState([1.0], [0.0, 0.0])


def test_site_roles():
    vf = ChainParams(6)
    assert list(vf.bath_sites()) == [0, 5]
    assert list(vf.flip_sites()) == [1, 2, 3, 4]
    assert list(vf.with_(flip_at_baths=True).flip_sites()) == list(range(6))
    sc = ChainParams(6, model=Model.SELF_CONSISTENT)
    assert list(sc.bath_sites()) == list(range(6))
    assert sc.flip_sites().size == 0
    assert vf.damping_rate == 2 * vf.flip_rate


# ---------------------------------------------------------------- energy


def test_total_energy_zero():
    assert total_energy(ChainState.zeros(5), ChainParams(5)) == 0.0


def test_total_energy_two_sites_pinned():
    # p = 0; E = nu^2 q_1^2/2 + bonds (1)^2/4 * 2 * 2 halves: 1/2 + 1/2 + 1/2 = 1.5
    p = ChainParams(2, pinning=1.0)
    assert total_energy(ChainState([1.0, 0.0], [0.0, 0.0]), p) == pytest.approx(1.5, abs=1e-15)


def test_total_energy_single_particle():
    # N=1 is below the chain minimum, so evaluate the Hamiltonian directly:
    # p^2/2 + two boundary bonds of stretch 2, each worth (2^2)/2 = 2
    assert hamiltonian(np.array([2.0]), np.array([2.0])) == pytest.approx(6.0)
    assert brute_energy([2.0], [2.0], 0.0) == pytest.approx(6.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.tuples(states(n), st.floats(0, 3))))
def test_energy_matches_bruteforce_and_local_sum(args):
    state, nu = args
    params = ChainParams(state.n_sites, pinning=nu)
    h = total_energy(state, params)
    assert h == pytest.approx(brute_energy(state.positions, state.momenta, nu), rel=1e-12, abs=1e-12)
    obs = local_observables(state, params)
    assert obs.local_energy.sum() == pytest.approx(h, rel=1e-12, abs=1e-12)
    assert np.allclose(site_energies(state.positions, state.momenta, nu), obs.local_energy[1:-1])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.tuples(states(n), st.integers(0, n - 1))))
def test_flip_invariance(args):
    state, site = args
    params = ChainParams(state.n_sites, pinning=0.7)
    flipped = ChainState(state.positions, state.momenta.copy())
    flipped.momenta[site] *= -1
    a = local_observables(state, params).local_energy
    b = local_observables(flipped, params).local_energy
    assert np.array_equal(a, b)
    assert total_energy(state, params) == total_energy(flipped, params)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 9).flatmap(states))
def test_deformation_sums_to_zero(state):
    r = local_observables(state, ChainParams(state.n_sites)).deformation
    assert abs(r.sum()) <= 1e-12 * (1 + np.abs(r).sum())


# ---------------------------------------------------------------- currents


def test_current_example():
    # r_1 = q_2 - q_1 = 1, p_1 = p_2 = 1 -> j_2 = -1
    state = ChainState([0.0, 1.0, 0.0], [1.0, 1.0, 0.0])
    obs = local_observables(state, ChainParams(3))
    assert obs.energy_current[2] == pytest.approx(-1.0)
    assert np.array_equal(obs.deformation_current[1:-1], -state.momenta)


def test_zero_state_observables():
    obs = local_observables(ChainState.zeros(4), ChainParams(4))
    for arr in (obs.local_energy, obs.deformation, obs.energy_current, obs.deformation_current):
        assert not np.any(arr)


# ---------------------------------------------------------------- generator


def test_generator_rejects_high_degree():
    f = QuadraticObservable.zero(3)
    f.degree = 3
    with pytest.raises(ValueError):
        generator_apply(f, ChainState.zeros(3), ChainParams(3))
    with pytest.raises(ValueError):
        QuadraticObservable(0.0, np.zeros(6), np.zeros((6, 6)), degree=3)


def _flip_part(f, params, x):
    full = generator_quadratic(f, params)(x)
    noflip = generator_quadratic(f, params.with_(flip_rate=0.0))(x)
    return full - noflip


def _flip_oracle(f, params, x):
    # gamma * sum_j [f(..., -p_j, ...) - f(x)], evaluated literally
    n = params.n_sites
    total = 0.0
    for s in params.flip_sites():
        y = x.copy()
        y[n + s] = -y[n + s]
        total += params.flip_rate * (f(y) - f(x))
    return total


@pytest.mark.parametrize("a,b,factor", [("p3", "p3", 0.0), ("q1", "p3", -2.0), ("p2", "p4", -4.0)])
def test_flip_part_monomials(a, b, factor):
    n = 6
    params = ChainParams(n, flip_rate=0.7)
    idx = {"q": lambda j: j - 1, "p": lambda j: n + j - 1}
    ia, ib = idx[a[0]](int(a[1])), idx[b[0]](int(b[1]))
    f = QuadraticObservable.monomial(n, ia, ib)
    x = np.random.default_rng(1).normal(size=2 * n)
    assert _flip_part(f, params, x) == pytest.approx(factor * params.flip_rate * f(x), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_generator_flip_part_matches_oracle(n, seed):
    rng = np.random.default_rng(seed)
    params = ChainParams(n, pinning=rng.uniform(0, 2), flip_rate=rng.uniform(0.1, 2),
                         flip_at_baths=bool(rng.integers(2)))
    quad = rng.normal(size=(2 * n, 2 * n))
    f = QuadraticObservable(rng.normal(), rng.normal(size=2 * n), quad)
    x = rng.normal(size=2 * n)
    assert _flip_part(f, params, x) == pytest.approx(_flip_oracle(f, params, x), abs=1e-10)


def test_generator_closure_matches_finite_differences():
    # drift part of L f equals grad f . (A x); check against a numerical directional derivative
    n = 5
    rng = np.random.default_rng(3)
    params = ChainParams(n, pinning=0.5, flip_rate=0.0, bath_coupling=0.0)
    f = QuadraticObservable(0.0, rng.normal(size=2 * n), rng.normal(size=(2 * n, 2 * n)))
    lf = generator_quadratic(f, params)
    assert lf.quad.shape == (2 * n, 2 * n) and np.allclose(lf.quad, lf.quad.T)
    from bulknoise.chain import drift_matrix
    a = drift_matrix(params)
    x = rng.normal(size=2 * n)
    h = 1e-6
    fd = (f(x + h * a @ x) - f(x - h * a @ x)) / (2 * h)
    assert lf(x) == pytest.approx(fd, rel=1e-7)


def test_generator_flip_part_monte_carlo():
    # d<f>/dt at t = 0 for f = q_1 p_3: short-time Monte Carlo over flip clocks only
    n = 5
    params = ChainParams(n, flip_rate=1.0, bath_coupling=0.0)
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=2 * n)
    f = QuadraticObservable.monomial(n, 0, n + 2)
    t = 1e-3
    reps = 400_000
    flips = rng.random(reps) < (1 - np.exp(-2 * params.flip_rate * t)) / 2
    vals = np.where(flips, -f(x0), f(x0))
    est = (vals.mean() - f(x0)) / t
    err = vals.std() / np.sqrt(reps) / t
    assert abs(est - _flip_part(f, params, x0)) < 4 * err + 2e-3 * abs(f(x0))


# ---------------------------------------------------------------- identities


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(4, 8))
def test_current_decomposition_random_states(seed, site):
    rng = np.random.default_rng(seed)
    n = 10
    params = ChainParams(n, flip_rate=rng.uniform(0.1, 3.0), bath_coupling=rng.uniform(0, 2))
    state = ChainState(rng.normal(size=n) * 2, rng.normal(size=n) * 2)
    assert check_current_decomposition(state, params, site) <= 1e-10


def test_current_decomposition_sweep_n8():
    rng = np.random.default_rng(11)
    params = ChainParams(8, flip_rate=0.8, flip_at_baths=True, bath_coupling=0.0)
    worst = 0.0
    for _ in range(1000):
        state = ChainState(rng.normal(size=8), rng.normal(size=8))
        for site in range(3, 8):
            worst = max(worst, check_current_decomposition(state, params, site))
    assert worst <= 1e-10
    assert check_current_decomposition(ChainState.zeros(8), params, 4) == 0.0


def test_current_decomposition_rejects_boundary_sites():
    params = ChainParams(8)
    state = ChainState.zeros(8)
    for bad in (1, 2, 8):
        with pytest.raises(ValueError):
            check_current_decomposition(state, params, bad)
    with pytest.raises(ValueError):
        check_current_decomposition(state, params.with_(pinning=1.0), 5)


def test_conservation_defect_second_order():
    params = ChainParams(8, pinning=0.3, flip_rate=0.5, bath_coupling=0.0, flip_at_baths=True)
    rng = np.random.default_rng(5)
    state = ChainState(rng.normal(size=8), rng.normal(size=8))
    t_end = 4.0
    defects = []
    for dt in (0.02, 0.01):
        segs = simulate_segments(state, params, dt, int(round(t_end / dt)),
                                 np.random.default_rng(0))
        defects.append(conservation_check(segs, params, dt).max())
    assert defects[1] < defects[0] / 3.0
    assert defects[0] < 0.05


def test_conservation_zero_state():
    params = ChainParams(5, bath_coupling=0.0)
    segs = simulate_segments(ChainState.zeros(5), params, 0.01, 50, np.random.default_rng(0))
    assert np.all(conservation_check(segs, params, 0.01) == 0)


def test_conservation_pure_flip_no_time():
    # a segment with identical endpoints apart from a momentum sign has zero defect
    params = ChainParams(4, bath_coupling=0.0)
    x = np.arange(1.0, 9.0)
    y = x.copy()
    y[5] *= -1
    segs = np.array([[y, y]])
    assert conservation_check(segs, params, 0.0).max() == 0.0
