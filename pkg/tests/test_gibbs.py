import numpy as np
import pytest
from scipy import integrate, optimize, stats

from abundmap.gibbs import (
    GibbsSampler,
    GibbsState,
    beta_conditional,
    center_theta,
    initial_state,
    mh_missed,
    reconstruct_z_T,
    sample_missed_exact,
    target_density_case1,
    theta_conditional,
    transformed_probability,
    update_alpha,
    update_beta,
    update_site_positive,
    update_site_zero,
    zero_site_log_weights,
)
from abundmap.lattice import AdjacencyStructure, CellGrid
from abundmap.model import (
    ABSENT,
    MISSED,
    POSITIVE,
    TRANSFORMED,
    Dataset,
    HyperParams,
    InvariantError,
    check_state,
)
from abundmap.parallel import ThetaSchedule, run_theta_sweep
from abundmap.simulate import SimConfig, simulate_dataset
from abundmap.stat_kernels import RngStream, left_tail_mean, normal_pdf, truncnorm_cdf


def gen(seed=0):
    return np.random.default_rng(seed)


# ------------------------------------------------------------ positive sites

def test_positive_top_class_support():
    n = 5000
    z_O, z_P = update_site_positive(np.full(n, 3), np.full(n, 1.0), np.zeros(n), (0.8, 1.7), gen())
    assert np.all(z_O > 1.7)
    assert np.all(z_P > 0)


def test_positive_potential_moments_untruncated():
    # a very narrow class pins z_O at 2; then z_P ~ N((2 + 0) / 2, 1/2)
    n = 100_000
    _, z_P = update_site_positive(np.full(n, 2), np.full(n, 2.0), np.zeros(n),
                                  (2.0 - 1e-9, 2.0 + 1e-9), gen(1), truncate_potential=False)
    assert abs(z_P.mean() - 1.0) < 0.01
    assert abs(z_P.var() - 0.5) < 0.01


def test_positive_observed_ks():
    n = 20_000
    z_O, _ = update_site_positive(np.ones(n, int), np.full(n, 0.5), np.zeros(n), (1.0, 2.0), gen(2))
    assert np.all((z_O > 0) & (z_O < 1))
    assert stats.kstest(z_O, lambda q: truncnorm_cdf(q, 0.5, 0.0, 1.0)).pvalue > 0.01


# ------------------------------------------------------------ zero sites

def normalized_weights(u, mu):
    w = np.exp(zero_site_log_weights(np.array([u]), np.array([mu])))[0]
    return w / w.sum()


def test_zero_weights_example():
    w = np.exp(zero_site_log_weights(np.array([0.5]), np.array([0.0])))[0]
    assert np.allclose(w, [0.0625, 0.5, 0.25], atol=1e-12)
    assert np.allclose(w / w.sum(), [0.0769231, 0.6153846, 0.3076923], atol=1e-6)


def test_zero_weights_limits():
    assert normalized_weights(1.0, 0.3)[2] == 0
    w = normalized_weights(0.0, 0.7)
    assert w[0] == 0
    assert w[1] / w[2] == pytest.approx(stats.norm.sf(0.7) / stats.norm.cdf(0.7), rel=1e-12)


def test_zero_case_frequencies():
    n = 200_000
    case, z, _, _ = update_site_zero(np.full(n, 0.5), np.zeros(n), np.full(n, -0.1),
                                     np.full(n, ABSENT), gen(3))
    freq = np.bincount(case, minlength=4)[1:] / n
    assert np.allclose(freq, [0.0769231, 0.6153846, 0.3076923], atol=0.004)
    assert np.all(z[case == ABSENT] < 0)
    assert np.all(z[case != ABSENT] > 0)


def test_zero_u_one_never_transformed():
    n = 20_000
    case, *_ = update_site_zero(np.ones(n), np.full(n, 1.0), np.full(n, -1.0),
                                np.full(n, ABSENT), gen(4))
    assert not np.any(case == TRANSFORMED)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_zero_weights_underflow_raises():
    with pytest.raises(FloatingPointError):
        update_site_zero(np.array([1.0]), np.array([np.inf]), np.array([0.5]),
                         np.array([ABSENT]), gen())


def test_case1_density_support_and_mode():
    assert target_density_case1(-0.5, 0.0) == 0
    assert target_density_case1(0.5, 0.0) > 0
    # mode: root of d/dz log density = -(z - mu) - hazard(z)
    for mu in (0.0, 1.0, 3.0):
        grid = np.linspace(1e-6, mu + 6, 200_001)
        argmax = grid[np.argmax(target_density_case1(grid, mu))]
        h = 1e-6
        dlog = lambda z: (np.log(target_density_case1(z + h, mu))
                          - np.log(target_density_case1(z - h, mu))) / (2 * h)
        if dlog(1e-5) < 0:   # boundary mode
            assert argmax < 1e-3
        else:
            root = optimize.brentq(dlog, 1e-5, mu + 6)
            assert argmax == pytest.approx(root, abs=1e-3)


def test_mh_long_run_matches_density():
    mu, n = 0.8, 200_000
    g = gen(5)
    z = np.array([0.5])
    draws = np.empty(n)
    acc = 0
    for k in range(n):
        z, a = mh_missed(z, np.array([mu]), g)
        draws[k] = z[0]
        acc += a[0]
    assert 0 < acc / n <= 1
    x = np.linspace(0, mu + 10, 20001)
    f = target_density_case1(x, mu)
    cdf = integrate.cumulative_trapezoid(f, x, initial=0)
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0, 1, 21), cdf, x)
    edges[-1] = np.inf
    obs = np.histogram(draws[::20], edges)[0]
    assert stats.chisquare(obs).pvalue > 0.01


def test_mh_acceptance_uses_survival_ratio():
    # proposal drawn, acceptance probability = min(1, sf(z*) / sf(z))
    g1, g2 = gen(6), gen(6)
    z_cur = np.full(100_000, 0.3)
    out, acc = mh_missed(z_cur, np.full(z_cur.size, 0.5), g1)
    from abundmap.stat_kernels import sample_truncnorm

    prop = sample_truncnorm(np.full(z_cur.size, 0.5), 0.0, np.inf, g2)
    expected = np.minimum(1, stats.norm.sf(prop) / stats.norm.sf(0.3))
    assert abs(acc.mean() - expected.mean()) < 0.01


def test_missed_exact_sampler_ks():
    mu = 1.3
    x = np.linspace(0, mu + 10, 20001)
    f = target_density_case1(x, mu)
    cdf = integrate.cumulative_trapezoid(f, x, initial=0)
    cdf /= cdf[-1]
    d = sample_missed_exact(np.full(50_000, mu), gen(7))
    assert np.all(d > 0)
    assert stats.kstest(d, lambda q: np.interp(q, x, cdf)).pvalue > 0.01


# ------------------------------------------------------------ cut points

def test_alpha_bounds_example():
    z_O = np.array([0.2, 0.5, 0.9, 1.4, 3.0])
    y = np.array([1, 1, 2, 2, 3])
    g = gen(8)
    a1 = np.array([update_alpha(z_O, y, (0.6, 2.0), g)[0][0] for _ in range(2000)])
    assert np.all((a1 > 0.5) & (a1 < 0.9))


def test_alpha_top_cap_uniform():
    z_O = np.array([0.2, 0.5, 0.9, 1.4])
    y = np.array([1, 1, 2, 2])
    g = gen(9)
    a2 = np.array([update_alpha(z_O, y, (0.6, 2.0), g, cap=20.0)[0][1] for _ in range(10_000)])
    assert np.all((a2 > 1.4) & (a2 < 20))
    assert stats.kstest(a2, stats.uniform(1.4, 18.6).cdf).pvalue > 0.01


def test_alpha_inverted_interval_raises():
    z_O = np.array([1.0, 0.5])
    y = np.array([1, 2])
    with pytest.raises(InvariantError):
        update_alpha(z_O, y, (0.7, 2.0), gen())


def test_alpha_ordering_kept():
    g = gen(10)
    z_O = np.array([np.nan, 0.3, 1.2, 2.5])
    y = np.array([0, 1, 2, 3])
    for _ in range(500):
        a, w = update_alpha(z_O, y, (0.6, 2.0), g)
        assert 0 < a[0] < a[1]
        assert w[0] > 0 and w[1] > 0


# ------------------------------------------------------------ beta and theta

def single_cell_dataset(n_sites, v=1.0, y=0):
    adj = AdjacencyStructure(np.array([0, 0]), np.array([], dtype=np.int64))
    return Dataset(CellGrid(np.zeros((1, 2))), adj, np.array([[v]]), np.array([1.0]),
                   np.zeros(n_sites, int), np.full(n_sites, y))


def test_beta_one_site_conjugate():
    d = single_cell_dataset(1)
    mean, prec = beta_conditional(d, np.array([1.0]), np.zeros(1), HyperParams(prior_var_beta=100))
    assert mean[0] == pytest.approx(1 / 1.01, rel=1e-12)
    assert 1 / prec[0, 0] == pytest.approx(1 / 1.01, rel=1e-12)


def test_beta_prior_without_sites():
    d = single_cell_dataset(0)
    g = gen(11)
    b = np.array([update_beta(d, np.zeros(0), np.zeros(1), HyperParams(prior_var_beta=4.0), g)[0]
                  for _ in range(20_000)])
    assert stats.kstest(b, stats.norm(0, 2).cdf).pvalue > 0.01


def test_beta_two_covariates_moments():
    g = gen(12)
    coords = np.column_stack([np.arange(50.0), np.zeros(50)])
    X = g.normal(size=(50, 2))
    d = Dataset.from_arrays(coords, np.ones(50), X, np.arange(50), np.zeros(50, int))
    z = g.normal(size=50)
    h = HyperParams(prior_var_beta=2.0)
    Xs = d.X[d.site_cell]
    prec = Xs.T @ Xs + np.eye(2) / 2.0
    mean = np.linalg.solve(prec, Xs.T @ z)
    draws = np.array([update_beta(d, z, np.zeros(50), h, g) for _ in range(100_000)])
    cov = np.linalg.inv(prec)
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(0) - mean) < 4 * se)
    assert np.allclose(np.cov(draws.T), cov, rtol=0.03, atol=1e-5)


def star_dataset(k, n_center_sites):
    adj = AdjacencyStructure.from_edges(k + 1, [(0, j) for j in range(1, k + 1)])
    coords = np.column_stack([np.arange(k + 1.0), np.zeros(k + 1)])
    return Dataset(CellGrid(coords), adj, np.zeros((k + 1, 1)), np.ones(k + 1),
                   np.zeros(n_center_sites, int), np.zeros(n_center_sites, int))


def test_theta_conditional_unsampled():
    d = star_dataset(4, 0)
    theta = np.array([0.0, 0.2, 0.4, 0.6, 0.8])
    m, v = theta_conditional(0, d, np.zeros(0), [0.0], theta, HyperParams(car_scale=0.1))
    assert m == pytest.approx(0.5) and v == pytest.approx(0.025)


def test_theta_conditional_sampled():
    d = star_dataset(8, 1)
    theta = np.zeros(9)
    m, v = theta_conditional(0, d, np.array([1.0]), [0.0], theta, HyperParams(car_scale=0.1))
    assert 1 / v == pytest.approx(81)
    assert m == pytest.approx(1 / 81)


def test_two_cell_theta_stationary():
    adj = AdjacencyStructure.from_edges(2, [(0, 1)])
    sched = ThetaSchedule.build(adj, CellGrid(np.array([[0.0, 0], [1, 0]])), 1)
    n_sites = np.array([2.0, 1.0])
    resid = np.array([0.8, -0.5])
    eta2 = 0.3
    Q = np.diag(n_sites) + np.array([[1, -1], [-1, 1]]) / eta2
    cov = np.linalg.inv(Q)
    mean = cov @ resid
    theta = np.zeros(2)
    g = gen(13)
    n = 100_000
    draws = np.empty((n, 2))
    for t in range(n):
        run_theta_sweep(sched, theta, adj, resid, n_sites, eta2, g.standard_normal(2))
        draws[t] = theta
    assert np.allclose(draws.mean(0), mean, atol=0.02)
    assert np.allclose(np.cov(draws.T), cov, atol=0.02)


def test_center_theta():
    assert np.allclose(center_theta([1.0, 1.0, 1.0]), 0)
    assert np.array_equal(center_theta([1.0, -1.0]), [1.0, -1.0])
    x = gen(14).normal(3, 5, size=10_000)
    assert abs(center_theta(x).sum()) < 1e-12 * 10_000 * 5 + 1e-9


# ------------------------------------------------------------ z_T

def test_reconstruct_limits():
    z = np.array([0.5, 1.5, -0.4, 0.7])
    y = np.array([1, 2, 0, 0])
    case = np.array([POSITIVE, POSITIVE, ABSENT, TRANSFORMED])
    assert np.array_equal(reconstruct_z_T(y, z, case, 1.0, gen()), np.where(case == TRANSFORMED,
                                                                             left_tail_mean(z), z))
    y0 = np.zeros(4, int)
    case0 = np.array([ABSENT, TRANSFORMED, ABSENT, TRANSFORMED])
    z0 = np.array([-0.5, 1.5, -0.4, 0.7])
    assert np.allclose(reconstruct_z_T(y0, z0, case0, 0.0, gen()), left_tail_mean(z0))


def test_reconstruct_two_point_bayes():
    # z_P = 1, u = 0.5, observed z_O = 0.9 (a positive record).
    # Enumerate both branches of the model: the transformed branch puts z_O at
    # the point mass c(1) < 0, so its likelihood for z_O = 0.9 is zero.
    u, z_P, z_O = 0.5, 1.0, 0.9
    lik_untransformed = u * normal_pdf(z_O - z_P)
    lik_transformed = (1 - u) * float(np.isclose(z_O, left_tail_mean(z_P)))
    post = lik_transformed / (lik_untransformed + lik_transformed)
    p = transformed_probability(np.array([1]), np.array([POSITIVE]), u)
    assert p[0] == pytest.approx(post)
    assert reconstruct_z_T(np.array([1]), np.array([z_P]), np.array([POSITIVE]), u)[0] == z_P


def test_reconstruct_absent_posterior_mean():
    z = np.array([-0.3])
    m = reconstruct_z_T(np.array([0]), z, np.array([ABSENT]), 0.7)
    assert m[0] == pytest.approx(0.7 * z[0] + 0.3 * left_tail_mean(z[0]))
    assert m[0] <= z[0]


# ------------------------------------------------------------ sweeps

@pytest.fixture(scope="module")
def small_data():
    return simulate_dataset(SimConfig(nx=10, ny=8, seed=5, unsampled_fraction=0.3))[0]


def test_sweep_preserves_invariants(small_data):
    s = GibbsSampler(small_data, seed=3)
    st = initial_state(small_data)
    check_state(small_data, st.params, st.latents)
    for _ in range(200):
        rep = s.sweep(st)
        check_state(small_data, st.params, st.latents)
        assert 0 <= rep.mh_accept_rate <= 1
        assert abs(st.params.theta.sum()) < 1e-10
    assert st.sweep == 200


def test_sequential_parallel_identical(small_data):
    d = small_data
    out = []
    for mode, workers in (("sequential", 1), ("parallel", 3)):
        sched = ThetaSchedule.build(d.adj, d.grid, 4, mode, workers)
        s = GibbsSampler(d, seed=21, schedule=sched)
        ch = s.run(initial_state(d), 100)
        out.append(ch)
    assert np.array_equal(out[0].theta, out[1].theta)
    assert np.array_equal(out[0].beta, out[1].beta)
    assert np.array_equal(out[0].alpha, out[1].alpha)


def test_resume_reproduces_run(small_data):
    d = small_data
    s = GibbsSampler(d, seed=8)
    full = s.run(initial_state(d), 60, burn_in=10, thin=5)
    st = initial_state(d)
    first = s.run(st, 30, burn_in=10, thin=5)
    snapshot = st.copy()
    second = GibbsSampler(d, seed=8).run(snapshot, 60, burn_in=10, thin=5)
    both = first.extend(second)
    assert np.array_equal(both.sweeps, full.sweeps)
    assert np.array_equal(both.theta, full.theta)


def test_run_retention(small_data):
    ch = GibbsSampler(small_data, seed=1).run(initial_state(small_data), 40, burn_in=20, thin=5)
    assert list(ch.sweeps) == [25, 30, 35, 40]
    with pytest.raises(ValueError):
        GibbsSampler(small_data).run(initial_state(small_data), 10, thin=0)


def test_different_seeds_differ(small_data):
    a = GibbsSampler(small_data, seed=1).run(initial_state(small_data), 5)
    b = GibbsSampler(small_data, seed=2).run(initial_state(small_data), 5)
    assert not np.array_equal(a.theta, b.theta)
