"""Independent correctness oracles for the sampler.

* :func:`exact_tiny_posterior`: grid-normalised posterior of a one-site model.
* :func:`kernel_invariance_test`: start from an exact 1-D conditional (by
  quadrature and inverse CDF), apply one kernel step, KS-compare.
* :func:`joint_distribution_test`: marginal-conditional against
  successive-conditional simulation of parameters and data.
* :data:`FAULTS`: deliberately broken kernels each oracle should catch.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import integrate, linalg, special, stats

from .gibbs import (
    GibbsSampler,
    GibbsState,
    Kernels,
    beta_conditional,
    center_theta,
    mh_missed,
    sample_missed_exact,
    theta_conditional,
    update_alpha,
    update_site_positive,
    update_site_zero,
    zero_site_log_weights,
)
from .lattice import AdjacencyStructure, CellGrid, build_adjacency
from .model import (
    ABSENT,
    MISSED,
    POSITIVE,
    TRANSFORMED,
    Dataset,
    HyperParams,
    LatentState,
    ParameterState,
    cut_points,
)
from .parallel import ThetaSchedule, sweep_cells
from .simulate import simulate_covariates, simulate_latents, simulate_theta
from .stat_kernels import RngStream, log_orthant_prob, normal_pdf, normal_sf

__all__ = [
    "TinyModel",
    "TinyPosterior",
    "exact_tiny_posterior",
    "tiny_chain",
    "KERNEL_IDS",
    "kernel_invariance_test",
    "JointTestSetup",
    "joint_distribution_test",
    "FAULTS",
    "fault_kernels",
    "run_validation_suite",
]


# ---------------------------------------------------------------- tiny model

@dataclass(frozen=True)
class TinyModel:
    """One cell, one site, ``theta = 0``, fixed cut points, scalar beta."""

    alpha: tuple = (1.0, 2.0)
    u: float = 1.0
    v: float = 1.0
    prior_var_beta: float = 1.0


@dataclass
class TinyPosterior:
    beta: np.ndarray
    z_P: np.ndarray
    density: np.ndarray          # normalised on the grid, (n_beta, n_z)
    beta_marginal: np.ndarray    # density values on ``beta``
    contradiction: bool = False
    richardson_error: float = np.nan


def _tiny_site_likelihood(tm: TinyModel, y: int, z):
    """``P(y | z_P)`` with ``z_T`` and ``z_O`` integrated out."""
    cuts = cut_points(tm.alpha)
    nonneg = z >= 0
    if y > 0:
        band = special.ndtr(cuts[y + 1] - z) - special.ndtr(cuts[y] - z)
        return tm.u * np.where(nonneg, band, 0.0)
    return tm.u * np.where(nonneg, normal_sf(z), 1.0) + (1.0 - tm.u)


def _tiny_grid(tm: TinyModel, y: int, n: int, beta_range, z_range):
    b = np.linspace(*beta_range, n)
    z = np.linspace(*z_range, n)
    B, Z = np.meshgrid(b, z, indexing="ij")
    dens = (normal_pdf(B / np.sqrt(tm.prior_var_beta)) * normal_pdf(Z - B * tm.v)
            * _tiny_site_likelihood(tm, y, Z))
    return b, z, dens


def exact_tiny_posterior(tm: TinyModel, y: int, n_grid: int = 400,
                         beta_range=(-5.0, 5.0), z_range=(-7.0, 9.0)) -> TinyPosterior:
    """Posterior of ``(beta, z_P)`` on an ``n_grid`` square grid.

    The beta marginal is also computed on a grid twice as fine; the largest
    absolute difference between the two (interpolated) is reported as
    ``richardson_error``. An observation the model cannot produce (``y > 0``
    with ``u = 0``) gives zero mass and ``contradiction=True``.
    """
    b, z, dens = _tiny_grid(tm, y, n_grid, beta_range, z_range)
    total = integrate.trapezoid(integrate.trapezoid(dens, z, axis=1), b)
    if not total > 0:
        zero = np.zeros_like(dens)
        return TinyPosterior(b, z, zero, np.zeros(b.size), contradiction=True)
    dens = dens / total
    marg = integrate.trapezoid(dens, z, axis=1)
    b2, z2, d2 = _tiny_grid(tm, y, 2 * n_grid, beta_range, z_range)
    m2 = integrate.trapezoid(d2, z2, axis=1)
    m2 /= integrate.trapezoid(m2, b2)
    err = float(np.max(np.abs(np.interp(b, b2, m2) - marg)))
    return TinyPosterior(b, z, dens, marg, False, err)


def _fixed_alpha(z_O, y, alpha, rng, cap=None):
    return np.asarray(alpha, dtype=float), (0.0, 0.0)


def tiny_dataset(tm: TinyModel, y: int) -> Dataset:
    adj = AdjacencyStructure(np.array([0, 0]), np.array([], dtype=np.int64))
    return Dataset(CellGrid(np.zeros((1, 2))), adj, np.array([[tm.v]]), np.array([tm.u]),
                   np.array([0]), np.array([y]))


def tiny_chain(tm: TinyModel, y: int, n_iter: int, seed: int, kernels: Kernels = Kernels()):
    """Beta draws from the package sampler on the tiny model (cut points held
    fixed; centring a single cell keeps ``theta = 0``)."""
    data = tiny_dataset(tm, y)
    hyper = HyperParams(prior_var_beta=tm.prior_var_beta)
    sampler = GibbsSampler(data, hyper, seed=seed, kernels=kernels.replace(alpha=_fixed_alpha))
    pos = y > 0
    cuts = cut_points(tm.alpha)
    z_O = np.array([0.5 * (cuts[y] + min(cuts[y + 1], cuts[y] + 2.0))]) if pos else np.array([np.nan])
    z_P = np.array([max(z_O[0], 0.1)]) if pos else np.array([-0.5])
    case = np.array([POSITIVE if pos else ABSENT], dtype=np.int8)
    state = GibbsState(ParameterState(np.array(tm.alpha), [0.0], [0.0]),
                       LatentState(z_P, z_O, case))
    return sampler.run(state, n_iter).beta[:, 0]


def chi_square_vs_density(draws, grid, density, n_bins: int = 30):
    """Chi-square p-value of ``draws`` against a gridded density (equiprobable bins)."""
    cdf = integrate.cumulative_trapezoid(density, grid, initial=0.0)
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0, 1, n_bins + 1), cdf, grid)
    edges[0], edges[-1] = -np.inf, np.inf
    obs = np.histogram(draws, edges)[0]
    exp = np.full(n_bins, draws.size / n_bins)
    return float(stats.chisquare(obs, exp).pvalue)


# ---------------------------------------------------------------- 1-D kernels

_GRID_POINTS = 40001


class _GridDist:
    """Distribution given by an unnormalised density on a fine grid."""

    def __init__(self, lo, hi, density):
        self.x = np.linspace(lo, hi, _GRID_POINTS)
        f = density(self.x)
        c = integrate.cumulative_trapezoid(f, self.x, initial=0.0)
        self.cdf_values = c / c[-1]

    def cdf(self, q):
        return np.interp(q, self.x, self.cdf_values)

    def sample(self, n, gen):
        return np.interp(gen.random(n), self.cdf_values, self.x)


@dataclass(frozen=True)
class KernelCase:
    mu: float = 0.4
    u: float = 0.6
    alpha: tuple = (1.0, 2.2)
    y: int = 2
    car_scale: float = 0.1
    theta_cells: int = 5   # neighbours of the focal cell


KERNEL_IDS = ("case_i", "case_i_fresh", "case_ii", "case_iii", "zero_site", "positive",
              "alpha1", "alpha2", "theta_sampled", "theta_unsampled")


def _star_graph(k: int) -> AdjacencyStructure:
    return AdjacencyStructure.from_edges(k + 1, [(0, j) for j in range(1, k + 1)])


def kernel_invariance_test(kernel_id: str, n: int = 50_000, seed: int = 0,
                           kernels: Kernels = Kernels(), case: KernelCase = KernelCase()):
    """KS test that one application of a kernel preserves its exact conditional.

    Returns:
        (KS statistic, p-value)
    """
    gen = RngStream(seed, 7919).generator()
    mu, u = case.mu, case.u
    ks = stats.kstest

    if kernel_id in ("case_i", "case_i_fresh"):
        target = _GridDist(0.0, mu + 12.0, lambda z: normal_pdf(z - mu) * normal_sf(z))
        z0 = target.sample(n, gen)
        mus = np.full(n, mu)
        out = mh_missed(z0, mus, gen)[0] if kernel_id == "case_i" else sample_missed_exact(mus, gen)
        res = ks(out, target.cdf)
    elif kernel_id in ("case_ii", "case_iii", "zero_site"):
        # only the requested case is possible when the others get zero weight
        def weights(uu, mm, which=kernel_id):
            lw = kernels_weights(uu, mm)
            if which == "case_ii":
                lw[..., [0, 2]] = -np.inf
            elif which == "case_iii":
                lw[..., [0, 1]] = -np.inf
            return lw

        site_zero = kernels.site_zero
        kernels_weights = site_zero.keywords.get("log_weights", zero_site_log_weights) \
            if isinstance(site_zero, functools.partial) else zero_site_log_weights
        if kernel_id == "case_ii":
            dens = lambda z: normal_pdf(z - mu) * (z < 0)
        elif kernel_id == "case_iii":
            dens = lambda z: normal_pdf(z - mu) * (z > 0)
        else:
            dens = lambda z: normal_pdf(z - mu) * np.where(z > 0, u * normal_sf(z) + 1 - u, 1.0)
        target = _GridDist(mu - 12.0, mu + 12.0, dens)
        z0 = target.sample(n, gen)
        # exact case labels given z for the full mixture start
        p_missed = u * normal_sf(z0) / (u * normal_sf(z0) + 1 - u)
        prev = np.where(z0 < 0, ABSENT, np.where(gen.random(n) < p_missed, MISSED, TRANSFORMED))
        fn = site_zero.func if isinstance(site_zero, functools.partial) else site_zero
        kw = dict(site_zero.keywords) if isinstance(site_zero, functools.partial) else {}
        kw["log_weights"] = weights
        out = fn(np.full(n, u), np.full(n, mu), z0, prev, gen, **kw)[1]
        res = ks(out, target.cdf)
    elif kernel_id == "positive":
        cuts = cut_points(case.alpha)
        y = case.y
        dens = lambda z: normal_pdf(z - mu) * (z > 0) * (
            special.ndtr(cuts[y + 1] - z) - special.ndtr(cuts[y] - z))
        target = _GridDist(0.0, mu + 14.0, dens)
        z0 = target.sample(n, gen)
        out = kernels.site_positive(np.full(n, y), z0, np.full(n, mu), case.alpha, gen,
                                    truncate_potential=kernels.truncate_potential)[1]
        res = ks(out, target.cdf)
    elif kernel_id in ("alpha1", "alpha2"):
        z_O = np.array([0.2, 0.5, 0.9, 1.4, 2.6, 3.1])
        y = np.array([1, 1, 2, 2, 3, 3])
        a1 = np.empty(n)
        a2 = np.empty(n)
        for k in range(n):
            a, _ = kernels.alpha(z_O, y, (0.7, 2.0), gen, cap=20.0)
            a1[k], a2[k] = a
        if kernel_id == "alpha1":
            res = ks(a1, stats.uniform(0.5, 0.4).cdf)
        else:
            # given a1 < 0.9 < 1.4 the a2 interval is (1.4, 2.6) regardless of a1
            res = ks(a2, stats.uniform(1.4, 1.2).cdf)
    elif kernel_id in ("theta_sampled", "theta_unsampled"):
        k = case.theta_cells
        adj = _star_graph(k)
        nbr_end = adj.indptr[1:] if kernels.neighbor_end is None else kernels.neighbor_end(adj)
        nb_theta = np.linspace(-0.3, 0.5, k)
        n_i = 2.0 if kernel_id == "theta_sampled" else 0.0
        resid = 0.7 if n_i else 0.0
        prec = n_i + k / case.car_scale
        mean = (resid + nb_theta.sum() / case.car_scale) / prec
        sd = 1.0 / np.sqrt(prec)
        x0 = mean + sd * gen.standard_normal(n)
        out = np.empty(n)
        theta = np.concatenate([[0.0], nb_theta])
        res_sum = np.zeros(k + 1)
        res_sum[0] = resid
        n_sites = np.zeros(k + 1)
        n_sites[0] = n_i
        noise = gen.standard_normal((n, k + 1))
        cells = np.array([0])
        w = adj.n_neighbors.astype(float)
        for j in range(n):
            theta[0] = x0[j]
            sweep_cells(cells, adj.indptr[:-1], nbr_end, adj.indices, w, theta,
                        res_sum, n_sites, 1.0 / case.car_scale, noise[j])
            out[j] = theta[0]
        res = ks(out, stats.norm(mean, sd).cdf)
    else:
        raise ValueError(f"unknown kernel '{kernel_id}'")
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------- joint test

@dataclass(frozen=True)
class JointTestSetup:
    nx: int = 5
    ny: int = 5
    sites_per_cell: int = 3
    n_covariates: int = 2
    prior_var_beta: float = 0.03
    car_scale: float = 0.5
    alpha_cap: float = 4.0
    u_low: float = 0.3
    u_high: float = 1.0
    design_seed: int = 11


TRACKED = ("alpha1", "alpha2", "beta1", "beta2", "theta_center", "theta_corner",
           "mean_theta_sq", "beta1_sq")


class _JointModel:
    def __init__(self, setup: JointTestSetup):
        self.setup = setup
        grid = CellGrid.rectangle(setup.nx, setup.ny)
        adj = build_adjacency(grid, 1.5)
        gen = np.random.default_rng(setup.design_seed)
        X = simulate_covariates(grid, setup.n_covariates, gen)
        u = setup.u_low + (setup.u_high - setup.u_low) * gen.random(grid.size)
        site_cell = np.repeat(np.arange(grid.size), setup.sites_per_cell)
        self.data = Dataset(grid, adj, X, u, site_cell, np.zeros(site_cell.size, int))
        self.hyper = HyperParams(setup.prior_var_beta, setup.car_scale, setup.alpha_cap)
        self.center = (setup.ny // 2) * setup.nx + setup.nx // 2
        self.schedule = ThetaSchedule.build(adj, grid, 1)
        self.eig = linalg.eigh(adj.laplacian().toarray())

    def prior_draw(self, gen) -> ParameterState:
        s = self.setup
        alpha = np.sort(gen.uniform(0.0, s.alpha_cap, size=2))
        beta = np.sqrt(s.prior_var_beta) * gen.standard_normal(s.n_covariates)
        theta, _ = simulate_theta(self.data.adj, s.car_scale, gen, method="eigen", eig=self.eig)
        return ParameterState(alpha, beta, theta)

    def data_draw(self, p: ParameterState, gen):
        """Observations plus latents consistent with the sampler's state space."""
        d = self.data
        mu = d.site_mean(p.beta, p.theta)
        lat = simulate_latents(mu, d.site_u, p.alpha, gen)
        y, z_P = lat["y"], lat["z_P"]
        pos = y > 0
        case = np.where(pos, POSITIVE,
                        np.where(z_P < 0, ABSENT,
                                 np.where(lat["transformed"], TRANSFORMED, MISSED)))
        z_O = np.where(pos, lat["z_O"], np.nan)
        return y, LatentState(z_P, z_O, case.astype(np.int8))

    def scalars(self, p: ParameterState) -> np.ndarray:
        return np.array([p.alpha[0], p.alpha[1], p.beta[0], p.beta[1],
                         p.theta[self.center], p.theta[0], np.mean(p.theta ** 2),
                         p.beta[0] ** 2])


def _batch_means_var(x: np.ndarray, n_batches: int = 40) -> np.ndarray:
    """Variance of the mean of each column by non-overlapping batch means."""
    n = x.shape[0] // n_batches * n_batches
    b = x[:n].reshape(n_batches, -1, x.shape[1]).mean(axis=1)
    return b.var(axis=0, ddof=1) / n_batches


def joint_distribution_test(n_outer: int = 3000, sweep_count: int = 5, seed: int = 0,
                            kernels: Kernels = Kernels(),
                            setup: JointTestSetup = JointTestSetup()) -> pd.DataFrame:
    """Compare forward prior draws with a chain alternating data and posterior updates.

    Arm (a) draws ``n_outer`` independent parameter sets from the prior.
    Arm (b) starts from a prior draw and repeats: simulate data and latents,
    run ``sweep_count`` sampler sweeps, record. With ``sweep_count=0`` arm
    (b) redraws the parameters from the prior at every step (both arms are
    forward simulation). Both arms must have the same distribution; z-scores
    use batch means for arm (b).

    Returns:
        DataFrame with columns ``scalar, mean_forward, mean_chain, z``.
    """
    model = _JointModel(setup)
    gen_a = RngStream(seed, 1).generator()
    gen_b = RngStream(seed, 2).generator()
    fwd = np.array([model.scalars(model.prior_draw(gen_a)) for _ in range(n_outer)])

    chain = np.empty_like(fwd)
    params = model.prior_draw(gen_b)
    for t in range(n_outer):
        if sweep_count == 0:
            params = model.prior_draw(gen_b)
        else:
            y, lat = model.data_draw(params, gen_b)
            data = Dataset(model.data.grid, model.data.adj, model.data.X, model.data.u,
                           model.data.site_cell, y)
            sampler = GibbsSampler(data, model.hyper, seed=(seed << 24) + t,
                                   schedule=model.schedule, kernels=kernels)
            state = GibbsState(params, lat)
            for _ in range(sweep_count):
                sampler.sweep(state)
            params = state.params
        chain[t] = model.scalars(params)

    var_a = fwd.var(axis=0, ddof=1) / n_outer
    var_b = _batch_means_var(chain)
    z = (chain.mean(0) - fwd.mean(0)) / np.sqrt(var_a + var_b)
    return pd.DataFrame({"scalar": TRACKED, "mean_forward": fwd.mean(0),
                         "mean_chain": chain.mean(0), "z": z})


# ---------------------------------------------------------------- faults

def _beta_precision_doubled(data, z_P, theta, hyper, rng):
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    mean, precision = beta_conditional(data, z_P, theta, hyper)
    chol = np.linalg.cholesky(2.0 * precision)
    return mean + np.linalg.solve(chol.T, gen.standard_normal(mean.size))


def _weights_without_u(u, mu):
    lw = zero_site_log_weights(u, mu)
    lw[..., 0] = log_orthant_prob(np.asarray(mu, dtype=float))
    return lw


FAULTS = {
    "beta_precision_x2": dict(beta=_beta_precision_doubled),
    "dropped_positive_truncation": dict(truncate_potential=False),
    "missed_weight_without_u": dict(
        site_zero=functools.partial(update_site_zero, log_weights=_weights_without_u)),
    "no_centering": dict(center=lambda theta: np.asarray(theta, dtype=float).copy()),
    "swapped_truncation_sides": dict(
        site_zero=functools.partial(update_site_zero,
                                    halves=((0.0, np.inf), (-np.inf, 0.0)))),
    "neighbor_sum_off_by_one": dict(neighbor_end=lambda adj: adj.indptr[1:] - 1),
}


def fault_kernels(name: str) -> Kernels:
    return Kernels().replace(**FAULTS[name])


# ---------------------------------------------------------------- suite

def run_validation_suite(seeds=(0, 1, 2), n_kernel: int = 50_000, n_outer: int = 3000,
                         sweep_count: int = 5, faults: bool = True, log=print) -> pd.DataFrame:
    """Every oracle; one row per check with ``statistic, threshold, passed``."""
    rows = []

    def add(check, stat, threshold, passed):
        rows.append(dict(check=check, statistic=stat, threshold=threshold, passed=bool(passed)))
        log(f"{'PASS' if passed else 'FAIL'} {check}: {stat:.4g} (threshold {threshold})")

    for kid in KERNEL_IDS:
        for s in seeds:
            _, p = kernel_invariance_test(kid, n_kernel, s)
            add(f"ks_{kid}_seed{s}", p, "p>0.01", p > 0.01)

    tm = TinyModel(u=0.5)
    post = exact_tiny_posterior(tm, 0)
    add("tiny_richardson", post.richardson_error, "<1e-4", post.richardson_error < 1e-4)
    for s in seeds:
        draws = tiny_chain(tm, 0, 20_000, s)[::10]
        p = chi_square_vs_density(draws, post.beta, post.beta_marginal)
        add(f"tiny_beta_chisq_seed{s}", p, "p>0.01", p > 0.01)

    for s in seeds:
        res = joint_distribution_test(n_outer, sweep_count, s)
        zmax = float(np.max(np.abs(res.z)))
        add(f"joint_seed{s}", zmax, "max|z|<4", zmax < 4)

    if faults:
        # a fault counts as caught when either oracle flags it
        for name in FAULTS:
            kern = fault_kernels(name)
            p_min = min(kernel_invariance_test(kid, n_kernel, seeds[0], kern)[1]
                        for kid in KERNEL_IDS)
            res = joint_distribution_test(n_outer, sweep_count, seeds[0], kern)
            zmax = float(np.max(np.abs(res.z)))
            log(f"     fault {name}: min KS p {p_min:.3g}, joint max|z| {zmax:.3g}")
            add(f"fault_{name}", zmax if zmax > 4 else p_min, "max|z|>4 or KS p<1e-3",
                zmax > 4 or p_min < 1e-3)
    return pd.DataFrame(rows)
