"""Full-conditional updates and the Gibbs sweep.

Sweep order: positive-site latents, zero-site latents, cut points, beta, the
spatial effects (through :mod:`abundmap.parallel`), then re-centring of the
spatial effects. Every random draw of sweep ``t`` comes from a counter-based
stream keyed by ``(seed, t, phase)`` so a chain is reproducible from any
checkpoint and independent of the spatial-effect schedule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, special

from .lattice import partition_stripes
from .model import (
    ABSENT,
    MISSED,
    POSITIVE,
    TRANSFORMED,
    Dataset,
    HyperParams,
    InvariantError,
    LatentState,
    ParameterState,
    check_state,
    cut_points,
)
from .parallel import ThetaSchedule, run_theta_sweep
from .stat_kernels import (
    RngStream,
    left_tail_mean,
    log_orthant_prob,
    normal_pdf,
    normal_sf,
    sample_truncnorm,
)

__all__ = [
    "SweepReport",
    "Kernels",
    "GibbsState",
    "Chain",
    "GibbsSampler",
    "update_site_positive",
    "zero_site_log_weights",
    "update_site_zero",
    "mh_missed",
    "sample_missed_exact",
    "target_density_case1",
    "update_alpha",
    "update_beta",
    "beta_conditional",
    "theta_conditional",
    "update_theta_cell",
    "center_theta",
    "transformed_probability",
    "reconstruct_z_T",
    "initial_state",
]

# per-sweep stream phases
_PH_POSITIVE, _PH_ZERO, _PH_ALPHA, _PH_BETA, _PH_THETA = range(5)
_PHASES = 8

_HALF_SQRT = np.sqrt(0.5)
_MISSED_MAX_TRIES = 100


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------- sites, y > 0

def update_site_positive(y, z_P, mu, alpha, rng, *, truncate_potential: bool = True):
    """Refresh ``(z_O, z_P)`` for sites with a positive record.

    ``z_O ~ N(z_P, 1)`` restricted to the site's class interval, then
    ``z_P ~ N((z_O + mu) / 2, 1/2)``. A positive record is only possible
    from an untransformed location with ``z_P >= 0``, so by default the
    second draw is restricted to ``z_P > 0``; ``truncate_potential=False``
    drops that restriction.
    """
    gen = _gen(rng)
    y = np.asarray(y)
    cuts = cut_points(alpha)
    z_O = sample_truncnorm(z_P, cuts[y], cuts[y + 1], gen)
    centre = 0.5 * (z_O + np.asarray(mu, dtype=float))
    if truncate_potential:
        z_new = sample_truncnorm(centre, 0.0, np.inf, gen, scale=_HALF_SQRT)
    else:
        z_new = centre + _HALF_SQRT * gen.standard_normal(np.shape(centre))
    return z_O, z_new


# ---------------------------------------------------------------- sites, y == 0

def zero_site_log_weights(u, mu):
    """Log prior weights of the three ways to record a zero, shape ``(..., 3)``.

    MISSED: ``u P(z_P >= 0, z_O <= 0)``; ABSENT: ``1 - Phi(mu)``;
    TRANSFORMED: ``(1 - u) Phi(mu)``.
    """
    u = np.asarray(u, dtype=float)
    mu = np.asarray(mu, dtype=float)
    uniq, inv = np.unique(mu, return_inverse=True)
    log_orth = log_orthant_prob(uniq)[inv].reshape(mu.shape)
    with np.errstate(divide="ignore"):
        lw = np.stack([
            np.log(u) + log_orth,
            special.log_ndtr(-mu),
            np.log1p(-u) + special.log_ndtr(mu),
        ], axis=-1)
    return lw


def target_density_case1(z, mu):
    """Unnormalised ``phi(z - mu) (1 - Phi(z))`` on ``z > 0``, zero elsewhere."""
    z = np.asarray(z, dtype=float)
    out = normal_pdf(z - mu) * normal_sf(z)
    return np.where(z > 0, out, 0.0)


def mh_missed(z_cur, mu, rng):
    """Independence Metropolis-Hastings step for a MISSED site.

    Proposal ``N(mu, 1)`` restricted to ``(0, inf)``; the Gaussian factors of
    target and proposal cancel, leaving acceptance
    ``min(1, (1 - Phi(z*)) / (1 - Phi(z_cur)))``.

    Returns:
        (new z, accepted mask)
    """
    gen = _gen(rng)
    mu = np.asarray(mu, dtype=float)
    z_cur = np.asarray(z_cur, dtype=float)
    prop = sample_truncnorm(mu, 0.0, np.inf, gen)
    log_ratio = special.log_ndtr(-prop) - special.log_ndtr(-z_cur)
    accept = np.log(gen.random(np.shape(prop))) < log_ratio
    return np.where(accept, prop, z_cur), accept


def sample_missed_exact(mu, rng):
    """Independent draws from ``phi(z - mu)(1 - Phi(z))`` on ``z > 0``.

    Rejection sampling: ``phi(z - mu) phi(z)`` is proportional to a
    ``N(mu/2, 1/2)`` density and the remaining Mills-ratio factor
    ``(1 - Phi(z)) / phi(z)`` is maximal at ``z = 0``, so proposals from
    ``N(mu/2, 1/2)`` on ``(0, inf)`` are accepted with probability
    ``erfcx(z / sqrt 2)``. After 100 rejections the last proposal is kept.
    """
    gen = _gen(rng)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    out = np.empty(mu.shape)
    pending = np.arange(mu.size)
    for attempt in range(_MISSED_MAX_TRIES):
        prop = sample_truncnorm(0.5 * mu[pending], 0.0, np.inf, gen, scale=_HALF_SQRT)
        ok = gen.random(pending.size) < special.erfcx(prop * _HALF_SQRT)
        if attempt == _MISSED_MAX_TRIES - 1:
            ok[:] = True
        out[pending[ok]] = prop[ok]
        pending = pending[~ok]
        if not pending.size:
            break
    return out


_HALVES = ((-np.inf, 0.0), (0.0, np.inf))


def update_site_zero(u, mu, z_P, prev_case, rng, *, log_weights=zero_site_log_weights,
                     halves=_HALVES):
    """Refresh ``(mix_case, z_P)`` for sites recording a zero.

    The case is drawn from its posterior weights (see
    :func:`zero_site_log_weights`), then ``z_P`` given the case: ABSENT and
    TRANSFORMED are truncated normals on the negative / positive half-line;
    MISSED uses :func:`mh_missed` when the site was already MISSED and
    otherwise starts from an exact draw (:func:`sample_missed_exact`).
    ``log_weights`` and ``halves`` (negative, positive half-line) exist so
    tests can substitute alternatives.

    Returns:
        (mix_case, z_P, n_mh_proposals, n_mh_accepted)

    Raises:
        FloatingPointError: if all three weights vanish (``mu`` out of range).
    """
    gen = _gen(rng)
    u = np.asarray(u, dtype=float)
    mu = np.asarray(mu, dtype=float)
    z_P = np.asarray(z_P, dtype=float).copy()
    lw = log_weights(u, mu)
    top = lw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise FloatingPointError("zero-site mixture weights underflow; mu out of range")
    w = np.exp(lw - top)
    cum = np.cumsum(w, axis=-1)
    draw = gen.random(mu.shape)[..., None] * cum[..., -1:]
    case = (1 + np.sum(draw >= cum[..., :-1], axis=-1)).astype(np.int8)

    direct = case != MISSED
    if np.any(direct):
        neg = case[direct] == ABSENT
        lo = np.where(neg, halves[0][0], halves[1][0])
        hi = np.where(neg, halves[0][1], halves[1][1])
        z_P[direct] = sample_truncnorm(mu[direct], lo, hi, gen)
    missed = case == MISSED
    chain = missed & (np.asarray(prev_case) == MISSED) & (z_P > 0)
    fresh = missed & ~chain
    n_acc = 0
    if np.any(chain):
        z_P[chain], acc = mh_missed(z_P[chain], mu[chain], gen)
        n_acc = int(acc.sum())
    if np.any(fresh):
        z_P[fresh] = sample_missed_exact(mu[fresh], gen)
    return case, z_P, int(chain.sum()), n_acc


# ---------------------------------------------------------------- parameters

def update_alpha(z_O, y, alpha, rng, cap: float = 20.0):
    """Draw ``alpha_1`` then ``alpha_2`` from their uniform full conditionals.

    ``alpha_h ~ U(max(alpha_{h-1}, max z_O[y=h]), min(alpha_{h+1}, min z_O[y=h+1]))``
    with ``alpha_0 = 0`` and ``alpha_3`` replaced by ``cap``. When both
    classes are present this is exactly the gap between the class-``h`` and
    class-``h+1`` latents.

    Raises:
        InvariantError: if an interval is empty (latents inconsistent with cuts).
    """
    gen = _gen(rng)
    z_O = np.asarray(z_O, dtype=float)
    y = np.asarray(y)
    a1, a2 = np.asarray(alpha, dtype=float)

    def bounds(h, lower_cut, upper_cut):
        here, above = z_O[y == h], z_O[y == h + 1]
        lo = max(lower_cut, here.max()) if here.size else lower_cut
        hi = min(upper_cut, above.min()) if above.size else upper_cut
        if not lo < hi:
            raise InvariantError(f"empty interval ({lo}, {hi}) for alpha_{h}")
        return lo, hi

    lo, hi = bounds(1, 0.0, a2)
    a1 = lo + (hi - lo) * gen.random()
    lo2, hi2 = bounds(2, a1, cap)
    a2 = lo2 + (hi2 - lo2) * gen.random()
    return np.array([a1, a2]), (hi - lo, hi2 - lo2)


def beta_conditional(data: Dataset, z_P, theta, hyper: HyperParams):
    """Mean and precision of the Gaussian full conditional of beta."""
    n = data.n_sites_per_cell.astype(float)
    X = data.X
    precision = (X * n[:, None]).T @ X + np.eye(X.shape[1]) / hyper.prior_var_beta
    r = np.asarray(z_P) - np.asarray(theta)[data.site_cell]
    rhs = X.T @ np.bincount(data.site_cell, weights=r, minlength=data.n_cells)
    mean = linalg.cho_solve(linalg.cho_factor(precision, lower=True), rhs)
    return mean, precision


def update_beta(data: Dataset, z_P, theta, hyper: HyperParams, rng):
    """Conjugate draw of beta given the potential-abundance latents.

    Raises:
        numpy.linalg.LinAlgError: if the precision is not positive definite.
    """
    gen = _gen(rng)
    mean, precision = beta_conditional(data, z_P, theta, hyper)
    chol = np.linalg.cholesky(precision)
    z = gen.standard_normal(mean.size)
    return mean + linalg.solve_triangular(chol.T, z, lower=False)


def theta_conditional(i, data: Dataset, z_P, beta, theta, hyper: HyperParams):
    """Mean and variance of ``theta_i`` given everything else.

    Unsampled cells get the CAR conditional ``N(mean of neighbours,
    car_scale / w_{i+})``; sampled cells combine it with their sites.
    """
    nb = data.adj.neighbors(i)
    w = nb.size
    s = float(np.sum(np.asarray(theta)[nb]))
    sites = data.site_cell == i
    n_i = int(np.count_nonzero(sites))
    resid = float(np.sum(np.asarray(z_P)[sites] - data.X[i] @ np.asarray(beta)))
    precision = n_i + w / hyper.car_scale
    return (resid + s / hyper.car_scale) / precision, 1.0 / precision


def update_theta_cell(i, data: Dataset, z_P, beta, theta, hyper: HyperParams, rng):
    gen = _gen(rng)
    mean, var = theta_conditional(i, data, z_P, beta, theta, hyper)
    return mean + np.sqrt(var) * gen.standard_normal()


def center_theta(theta):
    """Subtract the mean (returns a new array)."""
    theta = np.asarray(theta, dtype=float)
    return theta - theta.mean()


# ---------------------------------------------------------------- z_T

def transformed_probability(y, mix_case, u):
    """Posterior probability that a site's ``z_T`` is the transformed value ``c(z_P)``.

    Given ``z_P`` and the record: a positive record or a MISSED zero needs an
    untransformed location (probability 0); TRANSFORMED is 1; for ABSENT both
    branches give a zero record equally, so the prior ``1 - u`` stands.
    """
    y = np.asarray(y)
    case = np.asarray(mix_case)
    u = np.broadcast_to(np.asarray(u, dtype=float), y.shape)
    p = np.zeros(y.shape)
    p[case == TRANSFORMED] = 1.0
    absent = (case == ABSENT) & (y == 0)
    p[absent] = 1.0 - u[absent]
    return p


def reconstruct_z_T(y, z_P, mix_case, u, rng=None):
    """Draw ``z_T in {z_P, c(z_P)}`` from its posterior; with ``rng=None``
    return the posterior mean instead."""
    z_P = np.asarray(z_P, dtype=float)
    p = transformed_probability(y, mix_case, u)
    c = left_tail_mean(z_P)
    if rng is None:
        return (1 - p) * z_P + p * c
    flip = _gen(rng).random(z_P.shape) < p
    return np.where(flip, c, z_P)


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class Kernels:
    """The update functions a sweep calls; swap entries to test alternatives."""

    site_positive: object = update_site_positive
    site_zero: object = update_site_zero
    alpha: object = update_alpha
    beta: object = update_beta
    center: object = center_theta
    neighbor_end: object = None  # callable(adj) -> per-cell neighbour end offsets
    truncate_potential: bool = True

    def replace(self, **kw) -> "Kernels":
        return replace(self, **kw)


@dataclass
class SweepReport:
    sweep: int
    mh_accept_rate: float
    alpha_interval_widths: tuple
    theta_center_shift: float
    n_missed_chained: int = 0
    seconds: float = 0.0


@dataclass
class GibbsState:
    params: ParameterState
    latents: LatentState
    sweep: int = 0

    def copy(self) -> "GibbsState":
        return GibbsState(self.params.copy(), self.latents.copy(), self.sweep)


def initial_state(data: Dataset, alpha=(1.0, 2.0), beta=None, theta=None) -> GibbsState:
    """A valid starting point: latents at class midpoints, zeros absent."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.zeros(data.n_covariates) if beta is None else np.asarray(beta, float)
    theta = np.zeros(data.n_cells) if theta is None else np.asarray(theta, float)
    cuts = cut_points(alpha)
    y = data.y
    z_O = np.full(y.shape, np.nan)
    pos = y > 0
    lo, hi = cuts[y[pos]], cuts[y[pos] + 1]
    z_O[pos] = np.where(np.isfinite(hi), 0.5 * (lo + hi), lo + 0.5)
    z_P = np.where(pos, np.nan_to_num(z_O, nan=0.0), -0.5)
    case = np.where(pos, POSITIVE, ABSENT).astype(np.int8)
    return GibbsState(ParameterState(alpha, beta, theta), LatentState(z_P, z_O, case), 0)


@dataclass
class Chain:
    """Retained draws; rows are sweeps."""

    sweeps: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    reports: list = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.sweeps.size

    def extend(self, other: "Chain") -> "Chain":
        return Chain(np.concatenate([self.sweeps, other.sweeps]),
                     np.concatenate([self.alpha, other.alpha]),
                     np.concatenate([self.beta, other.beta]),
                     np.concatenate([self.theta, other.theta]),
                     self.reports + other.reports)


class GibbsSampler:
    """Runs sweeps of the full-conditional updates on one dataset.

    Args:
        data, hyper: the dataset and prior settings.
        seed: root seed of all random streams.
        schedule: spatial-effect schedule; defaults to one sequential block.
        kernels: update functions (see :class:`Kernels`).
        check_every: assert all state invariants every this many sweeps
            (0 disables).
    """

    def __init__(self, data: Dataset, hyper: HyperParams = HyperParams(), seed: int = 0,
                 schedule: ThetaSchedule | None = None, kernels: Kernels = Kernels(),
                 check_every: int = 0):
        self.data = data
        self.hyper = hyper
        self.seed = int(seed)
        if schedule is None:
            schedule = ThetaSchedule(partition_stripes(data.adj, data.grid, 1))
        schedule.validate(data.adj)
        self.schedule = schedule
        self.kernels = kernels
        self.check_every = check_every
        self._pos = np.flatnonzero(data.y > 0)
        self._zero = np.flatnonzero(data.y == 0)
        self._n_cell = data.n_sites_per_cell.astype(float)
        self._nbr_end = None if kernels.neighbor_end is None else kernels.neighbor_end(data.adj)

    def stream(self, sweep: int, phase: int) -> RngStream:
        return RngStream(self.seed, sweep * _PHASES + phase)

    def sweep(self, state: GibbsState) -> SweepReport:
        """Advance ``state`` by one sweep in place."""
        t0 = time.perf_counter()
        d, k, t = self.data, self.kernels, state.sweep
        p, lat = state.params, state.latents
        mu = d.site_mean(p.beta, p.theta)

        if self._pos.size:
            ip = self._pos
            z_O, z_P = k.site_positive(d.y[ip], lat.z_P[ip], mu[ip], p.alpha,
                                       self.stream(t, _PH_POSITIVE),
                                       truncate_potential=k.truncate_potential)
            lat.z_O[ip], lat.z_P[ip] = z_O, z_P
        n_prop = n_acc = 0
        if self._zero.size:
            iz = self._zero
            case, z_P, n_prop, n_acc = k.site_zero(d.site_u[iz], mu[iz], lat.z_P[iz],
                                                   lat.mix_case[iz], self.stream(t, _PH_ZERO))
            lat.mix_case[iz], lat.z_P[iz] = case, z_P

        p.alpha, widths = k.alpha(lat.z_O, d.y, p.alpha, self.stream(t, _PH_ALPHA),
                                  cap=self.hyper.alpha_cap)
        p.beta = k.beta(d, lat.z_P, p.theta, self.hyper, self.stream(t, _PH_BETA))

        resid = np.bincount(d.site_cell, weights=lat.z_P - (d.X @ p.beta)[d.site_cell],
                            minlength=d.n_cells)
        noise = self.stream(t, _PH_THETA).generator().standard_normal(d.n_cells)
        theta = p.theta.copy()
        run_theta_sweep(self.schedule, theta, d.adj, resid, self._n_cell,
                        self.hyper.car_scale, noise, nbr_end=self._nbr_end)
        shift = float(theta.mean())
        p.theta = k.center(theta)

        state.sweep += 1
        if self.check_every and state.sweep % self.check_every == 0:
            check_state(d, p, lat)
        rate = n_acc / n_prop if n_prop else 1.0
        return SweepReport(t, rate, widths, shift, n_prop, time.perf_counter() - t0)

    def run(self, state: GibbsState, iterations: int, burn_in: int = 0, thin: int = 1,
            callback=None) -> Chain:
        """Sweep until ``state.sweep == iterations``, keeping every ``thin``-th
        draw after ``burn_in`` (counted in absolute sweep numbers, so a resumed
        run retains the same sweeps as an uninterrupted one)."""
        if burn_in < 0 or thin < 1:
            raise ValueError("need burn_in >= 0 and thin >= 1")
        keep_s, keep_a, keep_b, keep_t, reports = [], [], [], [], []
        while state.sweep < iterations:
            rep = self.sweep(state)
            reports.append(rep)
            s = state.sweep
            if s > burn_in and (s - burn_in) % thin == 0:
                keep_s.append(s)
                keep_a.append(state.params.alpha.copy())
                keep_b.append(state.params.beta.copy())
                keep_t.append(state.params.theta.copy())
            if callback is not None:
                callback(state, rep)
        P, n = self.data.n_covariates, self.data.n_cells
        return Chain(
            np.asarray(keep_s, dtype=np.int64),
            np.asarray(keep_a).reshape(-1, 2),
            np.asarray(keep_b).reshape(-1, P),
            np.asarray(keep_t).reshape(-1, n),
            reports,
        )
