"""Forward simulation of synthetic abundance surveys from the latent model."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import spsolve

from .lattice import AdjacencyStructure, CellGrid, build_adjacency
from .model import Dataset, cut_points, standardize
from .parallel import sweep_cells
from .stat_kernels import RngStream, left_tail_mean

__all__ = [
    "SimConfig",
    "Truth",
    "simulate_theta",
    "simulate_covariates",
    "simulate_u",
    "simulate_latents",
    "simulate_dataset",
]

EIGEN_MAX_CELLS = 2500


@dataclass
class SimConfig:
    """Settings for one synthetic dataset.

    ``u_spec`` is ``"constant"`` (value ``u_low``), ``"gradient"`` (linear in
    x from ``u_low`` to ``u_high``), ``"smooth"`` (a low-frequency field
    rescaled onto ``[u_low, u_high]``) or ``"file"`` (``u_file`` CSV with
    columns ``cell_id,u``). Sites per cell are fixed at ``sites_per_cell`` or,
    when ``sites_poisson`` is set, Poisson with that mean. A fraction
    ``unsampled_fraction`` of cells then has its sites removed.
    """

    nx: int = 30
    ny: int = 30
    alpha: tuple = (1.0, 2.0)
    beta: tuple = (1.0, -0.5)
    car_scale: float = 0.1
    u_spec: str = "smooth"
    u_low: float = 0.3
    u_high: float = 1.0
    u_file: str | None = None
    sites_per_cell: int = 3
    sites_poisson: bool = False
    unsampled_fraction: float = 0.0
    covariate_noise: float = 0.3
    threshold: float = 1.5
    seed: int = 0

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        self.beta = tuple(float(b) for b in self.beta)
        if len(self.alpha) != 2 or not 0 < self.alpha[0] < self.alpha[1]:
            raise ValueError("alpha must satisfy 0 < a1 < a2")
        if not 0 <= self.u_low <= 1 or not 0 <= self.u_high <= 1:
            raise ValueError("u values must lie in [0, 1]")
        if self.u_spec not in ("constant", "gradient", "smooth", "file"):
            raise ValueError(f"unknown u_spec '{self.u_spec}'")
        if not 0 <= self.unsampled_fraction < 1:
            raise ValueError("unsampled_fraction must be in [0, 1)")
        if self.nx < 1 or self.ny < 1 or self.sites_per_cell < 0:
            raise ValueError("grid dimensions and site counts must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Truth:
    """Generating values, all in external cell-id order (``cell_id = row``)."""

    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    masked: np.ndarray
    site_cell: np.ndarray
    z_P: np.ndarray
    z_T: np.ndarray
    z_O: np.ndarray
    transformed: np.ndarray
    y: np.ndarray
    theta_method: str = ""
    meta: dict = field(default_factory=dict)


def simulate_theta(adj: AdjacencyStructure, car_scale: float, rng, method: str = "auto",
                   gibbs_sweeps: int = 2000, eig=None):
    """Draw from the intrinsic CAR prior restricted to ``sum(theta) = 0``.

    ``"eigen"`` diagonalises the graph Laplacian (default up to 2500 cells).
    ``"solve"`` draws ``b ~ N(0, Q)`` through the edge-incidence factor of
    ``Q = Lap / car_scale`` and returns the centred solution of ``Q x = b``,
    which has covariance ``Q^+`` exactly (default above 2500 cells).
    ``"gibbs"`` runs ``gibbs_sweeps`` prior sweeps with centring; approximate.
    ``eig`` may carry a precomputed ``(eigenvalues, eigenvectors)`` of the
    Laplacian for repeated eigen draws.

    Returns:
        (theta, method used)

    Raises:
        ValueError: if the adjacency graph is disconnected.
    """
    if eig is None and not adj.is_connected():
        raise ValueError("intrinsic CAR needs a connected adjacency graph")
    gen = rng.generator() if isinstance(rng, RngStream) else np.random.default_rng(rng) \
        if not isinstance(rng, np.random.Generator) else rng
    n = adj.size
    if method == "auto":
        method = "eigen" if n <= EIGEN_MAX_CELLS else "solve"
    if method == "eigen":
        lam, vec = linalg.eigh(adj.laplacian().toarray()) if eig is None else eig
        keep = lam > 1e-9 * lam.max()
        z = gen.standard_normal(int(keep.sum()))
        theta = vec[:, keep] @ (z * np.sqrt(car_scale / lam[keep]))
    elif method == "solve":
        e = adj.edges()
        k = e.shape[0]
        inc = sparse.csr_matrix(
            (np.concatenate([np.ones(k), -np.ones(k)]),
             (np.tile(np.arange(k), 2), np.concatenate([e[:, 0], e[:, 1]]))),
            shape=(k, n),
        )
        b = inc.T @ gen.standard_normal(k) / np.sqrt(car_scale)
        Q = (adj.laplacian() / car_scale).tocsc()
        theta = np.zeros(n)
        theta[1:] = spsolve(Q[1:, 1:], b[1:])
    elif method == "gibbs":
        theta = np.zeros(n)
        start, end = adj.indptr[:-1], adj.indptr[1:]
        w = adj.n_neighbors.astype(float)
        cells = np.arange(n)
        zeros = np.zeros(n)
        for _ in range(gibbs_sweeps):
            sweep_cells(cells, start, end, adj.indices, w, theta, zeros, zeros,
                        1.0 / car_scale, gen.standard_normal(n))
            theta -= theta.mean()
    else:
        raise ValueError(f"unknown method '{method}'")
    return theta - theta.mean(), method


def simulate_covariates(grid: CellGrid, n_cov: int, rng, noise: float = 0.3):
    """Smooth fields: two random low-frequency sinusoids each, plus white noise,
    standardised."""
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    xy = grid.coords
    span = np.ptp(xy, axis=0)
    span[span == 0] = 1.0
    s = (xy - xy.min(axis=0)) / span
    cols = []
    for _ in range(n_cov):
        f = np.zeros(grid.size)
        for _ in range(2):
            kx, ky = gen.uniform(0.5, 2.0, size=2)
            ph = gen.uniform(0, 2 * np.pi)
            f += np.sin(2 * np.pi * (kx * s[:, 0] + ky * s[:, 1]) + ph)
        cols.append(f + noise * gen.standard_normal(grid.size))
    return standardize(np.column_stack(cols))[0]


def simulate_u(cfg: SimConfig, grid: CellGrid, rng):
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    lo, hi = cfg.u_low, cfg.u_high
    if cfg.u_spec == "constant":
        return np.full(grid.size, lo)
    if cfg.u_spec == "file":
        import pandas as pd

        tab = pd.read_csv(cfg.u_file).set_index("cell_id")["u"]
        return tab.reindex(grid.cell_id).to_numpy(dtype=float)
    x = grid.coords[:, 0]
    if cfg.u_spec == "gradient":
        t = (x - x.min()) / (np.ptp(x) or 1.0)
        return lo + (hi - lo) * t
    f = simulate_covariates(grid, 1, gen, noise=0.0)[:, 0]
    f = (f - f.min()) / (np.ptp(f) or 1.0)
    return lo + (hi - lo) * f


def simulate_latents(mu, u, alpha, rng):
    """One forward pass of the three latent stages per site.

    ``z_P ~ N(mu, 1)``; with probability ``1 - u`` the site is transformed
    and ``z_T = z_O = c(z_P) < 0``; otherwise ``z_T = z_P`` and
    ``z_O ~ N(z_P, 1)`` when ``z_P > 0``, ``z_O = z_P`` when not. The record
    ``y`` is the class of ``z_O`` under the cut points.

    Returns:
        dict with ``z_P, z_T, z_O, transformed, y``
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    mu = np.asarray(mu, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), mu.shape)
    z_P = mu + gen.standard_normal(mu.shape)
    transformed = gen.random(mu.shape) >= u
    noise = gen.standard_normal(mu.shape)
    z_T = np.where(transformed, left_tail_mean(z_P), z_P)
    z_O = np.where(z_T > 0, z_T + noise, z_T)
    y = np.searchsorted(cut_points(alpha)[1:-1], z_O, side="left").astype(np.int64)
    y = np.where(z_T > 0, y, 0)
    return dict(z_P=z_P, z_T=z_T, z_O=z_O, transformed=transformed, y=y)


def simulate_dataset(cfg: SimConfig, theta_method: str = "auto"):
    """Simulate a full survey on an ``nx`` by ``ny`` unit grid.

    Returns:
        (Dataset, Truth). The dataset excludes sites in masked cells; truth
        keeps every site so held-out cells can be scored.
    """
    root = RngStream(cfg.seed)
    grid = CellGrid.rectangle(cfg.nx, cfg.ny)
    adj = build_adjacency(grid, cfg.threshold)
    X = simulate_covariates(grid, len(cfg.beta), root.child(1).generator(), cfg.covariate_noise)
    u = simulate_u(cfg, grid, root.child(2).generator())
    theta, method = simulate_theta(adj, cfg.car_scale, root.child(3), theta_method)
    mu_cell = X @ np.asarray(cfg.beta) + theta

    gen = root.child(4).generator()
    if cfg.sites_poisson:
        counts = gen.poisson(cfg.sites_per_cell, size=grid.size)
    else:
        counts = np.full(grid.size, cfg.sites_per_cell)
    n_mask = int(round(cfg.unsampled_fraction * grid.size))
    masked = np.zeros(grid.size, dtype=bool)
    masked[gen.choice(grid.size, size=n_mask, replace=False)] = True
    site_cell = np.repeat(np.arange(grid.size), counts)
    lat = simulate_latents(mu_cell[site_cell], u[site_cell], cfg.alpha, root.child(5))

    keep = ~masked[site_cell]
    data = Dataset.from_arrays(
        grid.coords, u, X, site_cell[keep], lat["y"][keep], cell_id=grid.cell_id,
        threshold=cfg.threshold, names=[f"v{k + 1}" for k in range(X.shape[1])],
        standardize_covariates=False, adj=adj,
    )
    truth = Truth(
        alpha=np.asarray(cfg.alpha), beta=np.asarray(cfg.beta), theta=theta, mu=mu_cell,
        u=u, masked=masked, site_cell=site_cell, theta_method=method,
        meta=dict(cfg.as_dict(), theta_method=method), **lat,
    )
    return data, truth
