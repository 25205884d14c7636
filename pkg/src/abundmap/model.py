"""Data, parameter and latent-state containers for the latent abundance model.

Three latent layers per sampling site: the potential abundance ``z_P``,
the land-transformation-degraded ``z_T`` (reconstructed after the fact) and
the observed-scale ``z_O`` whose interval between cut points gives the
recorded ordinal class ``y``. The parameters are the cut points ``alpha``
(with ``alpha_0 = 0`` fixed), regression coefficients ``beta`` and one CAR
spatial effect ``theta_i`` per cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .lattice import AdjacencyStructure, CellGrid, build_adjacency
from .stat_kernels import left_tail_mean

__all__ = [
    "N_CATEGORIES",
    "POSITIVE",
    "MISSED",
    "ABSENT",
    "TRANSFORMED",
    "DataError",
    "InvariantError",
    "Standardization",
    "standardize",
    "Dataset",
    "HyperParams",
    "ParameterState",
    "LatentState",
    "cut_points",
    "interval_masses",
    "check_state",
    "log_unnormalized_posterior",
]

N_CATEGORIES = 4

# mix_case codes; the three zero-observation cases keep the numbering of the
# multinomial indicator they are drawn from
POSITIVE = 0     # y > 0, no mixture
MISSED = 1       # untransformed, potentially present, recorded absent
ABSENT = 2       # potentially absent
TRANSFORMED = 3  # potentially present but the land is transformed

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class DataError(ValueError):
    """Malformed input data."""


class InvariantError(RuntimeError):
    """A model state violates one of its structural invariants."""


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray
    names: tuple

    def to_raw_coefficients(self, beta):
        """Coefficients per unit of the raw covariate (intercept shift dropped)."""
        return np.asarray(beta) / self.scale


def standardize(raw, names=None):
    """Centre and scale each column to mean 0, sample sd 1.

    Returns:
        (standardized array, Standardization record)

    Raises:
        DataError: naming the first constant (or non-finite) column.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    names = tuple(names) if names is not None else tuple(f"v{k}" for k in range(raw.shape[1]))
    if not np.all(np.isfinite(raw)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(raw), axis=0))[0])
        raise DataError(f"covariate column '{names[bad]}' has non-finite values")
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0, ddof=1) if raw.shape[0] > 1 else np.zeros(raw.shape[1])
    for k, s in enumerate(scale):
        if not s > 0:
            raise DataError(f"covariate column '{names[k]}' is constant")
    return (raw - mean) / scale, Standardization(mean, scale, names)


@dataclass(frozen=True)
class HyperParams:
    """Prior settings.

    prior_var_beta: variance of the independent normal prior on each beta.
    car_scale: CAR conditional variance scale (a cell's conditional variance
        is ``car_scale / w_{i+}``).
    alpha_cap: stand-in for ``alpha_3 = inf`` when bounding the top cut point;
        equivalently the upper end of the flat prior on ``0 < a1 < a2 < cap``.
    """

    prior_var_beta: float = 100.0
    car_scale: float = 0.1
    alpha_cap: float = 20.0

    def __post_init__(self):
        if not self.prior_var_beta > 0:
            raise ValueError("prior_var_beta must be positive")
        if not self.car_scale > 0:
            raise ValueError("car_scale must be positive")
        if not self.alpha_cap > 0:
            raise ValueError("alpha_cap must be positive")


@dataclass
class Dataset:
    """Cells, covariates and site observations.

    Cells are stored with sampled cells first (internal index ``0..m-1``);
    ``grid.cell_id`` keeps the external ids. Sites are sorted by cell.
    """

    grid: CellGrid
    adj: AdjacencyStructure
    X: np.ndarray
    u: np.ndarray
    site_cell: np.ndarray
    y: np.ndarray
    standardization: Standardization = None
    covariate_names: tuple = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.u = np.asarray(self.u, dtype=float)
        self.site_cell = np.asarray(self.site_cell, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        n = self.grid.size
        if self.adj.size != n or self.X.shape[0] != n or self.u.shape != (n,):
            raise DataError("grid, adjacency, covariates and u disagree on cell count")
        if np.any(~((self.u >= 0) & (self.u <= 1))):
            bad = int(np.flatnonzero(~((self.u >= 0) & (self.u <= 1)))[0])
            raise DataError(f"u outside [0, 1] at cell {self.grid.cell_id[bad]}")
        if self.site_cell.shape != self.y.shape:
            raise DataError("site_cell and y must have equal length")
        if np.any((self.y < 0) | (self.y >= N_CATEGORIES)):
            raise DataError("observations must lie in {0, 1, 2, 3}")
        if self.site_cell.size and (self.site_cell.min() < 0 or self.site_cell.max() >= n):
            raise DataError("site refers to an unknown cell")
        if not self.covariate_names:
            self.covariate_names = tuple(f"v{k}" for k in range(self.X.shape[1]))
        counts = self.n_sites_per_cell
        m = int(np.count_nonzero(counts))
        if np.any(counts[:m] == 0) or np.any(np.diff(self.site_cell) < 0):
            raise InvariantError("cells must be ordered sampled-first and sites sorted by cell")

    @property
    def n_cells(self) -> int:
        return self.grid.size

    @property
    def n_sites(self) -> int:
        return self.y.size

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]

    @property
    def n_sites_per_cell(self) -> np.ndarray:
        return np.bincount(self.site_cell, minlength=self.n_cells)

    @property
    def m(self) -> int:
        return int(np.count_nonzero(self.n_sites_per_cell))

    @property
    def site_u(self) -> np.ndarray:
        return self.u[self.site_cell]

    @classmethod
    def from_arrays(
        cls,
        coords,
        u,
        covariates,
        site_cell_ids,
        y,
        *,
        cell_id=None,
        threshold: float = 1.5,
        names=None,
        standardize_covariates: bool = True,
        adj: AdjacencyStructure | None = None,
    ) -> "Dataset":
        """Build a dataset from external arrays, re-indexing cells sampled-first.

        ``site_cell_ids`` refer to ``cell_id`` values (or row positions when
        ``cell_id`` is omitted). The adjacency is built from ``threshold``
        unless one is supplied in the caller's row order.
        """
        grid = CellGrid(coords, cell_id)
        u = np.asarray(u, dtype=float)
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if standardize_covariates:
            X, record = standardize(covariates, names)
        else:
            X, record = covariates, None
        lookup = {int(c): k for k, c in enumerate(grid.cell_id)}
        site_cell_ids = np.asarray(site_cell_ids, dtype=np.int64)
        try:
            rows = np.fromiter((lookup[int(c)] for c in site_cell_ids), dtype=np.int64,
                               count=site_cell_ids.size)
        except KeyError as exc:
            raise DataError(f"site refers to unknown cell_id {exc.args[0]}") from None
        if adj is None:
            adj = build_adjacency(grid, threshold)
        sampled = np.bincount(rows, minlength=grid.size) > 0
        order = np.concatenate([np.flatnonzero(sampled), np.flatnonzero(~sampled)])
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        new_site_cell = inverse[rows]
        site_order = np.argsort(new_site_cell, kind="stable")
        names = tuple(names) if names is not None else (record.names if record else ())
        return cls(
            grid=grid.subset(order),
            adj=adj.permute(order),
            X=X[order],
            u=u[order],
            site_cell=new_site_cell[site_order],
            y=np.asarray(y, dtype=np.int64)[site_order],
            standardization=record,
            covariate_names=names,
        )

    def site_mean(self, beta, theta) -> np.ndarray:
        """``v_i^T beta + theta_i`` expanded to sites."""
        return (self.X @ np.asarray(beta) + np.asarray(theta))[self.site_cell]


@dataclass
class ParameterState:
    """``alpha`` holds the free cut points ``(alpha_1, alpha_2)``."""

    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).copy()
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        self.theta = np.asarray(self.theta, dtype=float).copy()

    def copy(self) -> "ParameterState":
        return ParameterState(self.alpha, self.beta, self.theta)


@dataclass
class LatentState:
    """Per-site latents. ``z_O`` is NaN for zero observations (never materialised)."""

    z_P: np.ndarray
    z_O: np.ndarray
    mix_case: np.ndarray = field(default=None)

    def __post_init__(self):
        self.z_P = np.asarray(self.z_P, dtype=float).copy()
        self.z_O = np.asarray(self.z_O, dtype=float).copy()
        if self.mix_case is None:
            self.mix_case = np.zeros(self.z_P.shape, dtype=np.int8)
        self.mix_case = np.asarray(self.mix_case, dtype=np.int8).copy()

    def copy(self) -> "LatentState":
        return LatentState(self.z_P, self.z_O, self.mix_case)


def cut_points(alpha) -> np.ndarray:
    """``(alpha_-1, ..., alpha_3) = (-inf, 0, a1, a2, inf)``; category ``h`` spans
    ``(cuts[h], cuts[h+1])``."""
    a1, a2 = np.asarray(alpha, dtype=float)
    return np.array([-np.inf, 0.0, a1, a2, np.inf])


def interval_masses(alpha, mu) -> np.ndarray:
    """Masses of the four category intervals under ``N(mu, 1)``; last axis is the class."""
    cuts = cut_points(alpha)
    mu = np.asarray(mu, dtype=float)[..., None]
    return np.diff(special.ndtr(cuts - mu), axis=-1)


def check_state(data: Dataset, params: ParameterState, latents: LatentState) -> None:
    """Raise :class:`InvariantError` if any structural or support invariant fails."""
    a = params.alpha
    if a.shape != (2,) or not (0 < a[0] < a[1]):
        raise InvariantError(f"cut points must satisfy 0 < a1 < a2, got {a}")
    if params.beta.shape != (data.n_covariates,) or params.theta.shape != (data.n_cells,):
        raise InvariantError("parameter dimensions do not match the dataset")
    if not (np.all(np.isfinite(params.beta)) and np.all(np.isfinite(params.theta))):
        raise InvariantError("non-finite beta or theta")
    zp, zo, case, y = latents.z_P, latents.z_O, latents.mix_case, data.y
    if zp.shape != y.shape or zo.shape != y.shape or case.shape != y.shape:
        raise InvariantError("latent arrays must have one entry per site")
    if not np.all(np.isfinite(zp)):
        raise InvariantError("non-finite z_P")
    pos = y > 0
    cuts = cut_points(a)
    lo, hi = cuts[y[pos]], cuts[y[pos] + 1]
    inside = (zo[pos] > lo) & (zo[pos] < hi)
    if not np.all(inside):
        k = np.flatnonzero(pos)[np.flatnonzero(~inside)[0]]
        raise InvariantError(f"site {k}: z_O={zo[k]} outside its class interval")
    if np.any(case[pos] != POSITIVE):
        raise InvariantError("positive sites must carry mix_case POSITIVE")
    zero = ~pos
    zc, zz = case[zero], zp[zero]
    ok = ((zc == ABSENT) & (zz < 0)) | (((zc == MISSED) | (zc == TRANSFORMED)) & (zz > 0))
    if not np.all(ok):
        k = np.flatnonzero(zero)[np.flatnonzero(~ok)[0]]
        raise InvariantError(f"site {k}: z_P={zp[k]} inconsistent with mix_case {case[k]}")


def _log_phi(x):
    return -0.5 * x * x - _LOG_SQRT_2PI


def log_unnormalized_posterior(
    data: Dataset, params: ParameterState, latents: LatentState, hyper: HyperParams
) -> float:
    """Log joint density of latents and parameters given the data, up to a constant.

    Site terms follow the marginal ``f(z_O | z_P)`` with ``z_T`` integrated
    out: a positive record contributes ``log u + log phi(z_O - z_P)`` and
    needs ``z_P >= 0``; a zero record contributes through its mixture case
    (MISSED: ``log u + log(1 - Phi(z_P))`` with ``z_O < 0`` integrated out;
    ABSENT: ``log 1``; TRANSFORMED: ``log(1 - u)``). Each site adds
    ``log phi(z_P - mu)``; then the normal prior on beta and the intrinsic
    CAR kernel ``-(1 / (2 car_scale)) sum_{i<j} w_ij (theta_i - theta_j)^2``.
    The cut points have a flat prior on ``0 < a1 < a2``.

    Support violations (a latent outside its indicator region) return
    ``-inf``; dimension or ordering errors raise :class:`InvariantError`.
    """
    a = params.alpha
    if a.shape != (2,) or params.beta.shape != (data.n_covariates,) \
            or params.theta.shape != (data.n_cells,):
        raise InvariantError("parameter dimensions do not match the dataset")
    if latents.z_P.shape != data.y.shape:
        raise InvariantError("latent arrays must have one entry per site")
    if not (0 < a[0] < a[1]):
        return -np.inf
    y, zp, zo, case = data.y, latents.z_P, latents.z_O, latents.mix_case
    u = data.site_u
    mu = data.site_mean(params.beta, params.theta)
    total = float(np.sum(_log_phi(zp - mu)))

    pos = y > 0
    if np.any(pos):
        cuts = cut_points(a)
        lo, hi = cuts[y[pos]], cuts[y[pos] + 1]
        if not np.all((zo[pos] > lo) & (zo[pos] < hi)) or np.any(zp[pos] < 0):
            return -np.inf
        with np.errstate(divide="ignore"):
            total += float(np.sum(np.log(u[pos]) + _log_phi(zo[pos] - zp[pos])))

    zero = ~pos
    zc, zz, uz = case[zero], zp[zero], u[zero]
    missed, absent, transformed = zc == MISSED, zc == ABSENT, zc == TRANSFORMED
    if not np.all(missed | absent | transformed):
        raise InvariantError("zero sites need a mixture case")
    if np.any(zz[missed] <= 0) or np.any(zz[transformed] <= 0) or np.any(zz[absent] >= 0):
        return -np.inf
    with np.errstate(divide="ignore"):
        total += float(np.sum(np.log(uz[missed]) + special.log_ndtr(-zz[missed])))
        total += float(np.sum(np.log1p(-uz[transformed])))

    total += float(-0.5 * np.sum(params.beta ** 2) / hyper.prior_var_beta)
    e = data.adj.edges()
    diff = params.theta[e[:, 0]] - params.theta[e[:, 1]]
    total += float(-0.5 * np.sum(diff * diff) / hyper.car_scale)
    return total


def expected_transformed(z_P, u):
    """``E[z_T | z_P] = u z_P + (1 - u) c(z_P)``."""
    z_P = np.asarray(z_P, dtype=float)
    return u * z_P + (1.0 - u) * left_tail_mean(z_P)
