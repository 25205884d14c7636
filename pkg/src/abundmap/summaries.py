"""Posterior summaries: category probabilities, grouped means, latent surfaces."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .model import Dataset, interval_masses
from .stat_kernels import left_tail_mean

__all__ = [
    "DEFAULT_MIDPOINTS",
    "category_probs",
    "transformed_probs",
    "grouped_mean",
    "coefficient_table",
    "latent_mean_surfaces",
    "CellSummary",
    "summarize_chain",
    "write_summary_csvs",
]

DEFAULT_MIDPOINTS = (0.0, 5.0, 50.0, 150.0)


def category_probs(alpha, mu):
    """Potential-abundance class probabilities ``p_ih = Phi(a_h - mu) - Phi(a_{h-1} - mu)``.

    ``alpha`` may be ``(2,)`` or ``(D, 2)`` with ``mu`` of shape ``(D, I)``; the
    class axis is appended last.
    """
    alpha = np.asarray(alpha, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if alpha.ndim == 1:
        return interval_masses(alpha, mu)
    out = np.empty(mu.shape + (4,))
    for d in range(alpha.shape[0]):
        out[d] = interval_masses(alpha[d], mu[d])
    return out


def transformed_probs(p, u):
    """``r = (1 - u + u p_0, u p_1, u p_2, u p_3)``."""
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)[..., None]
    r = u * p
    r[..., 0] += 1.0 - u[..., 0]
    return r


def grouped_mean(probs, midpoints=DEFAULT_MIDPOINTS):
    """Expected abundance ``sum_h midpoint_h prob_h`` over the last axis."""
    mid = np.asarray(midpoints, dtype=float)
    if mid.shape != (4,) or mid[0] != 0 or np.any(np.diff(mid) < 0):
        raise ValueError("midpoints must be 4 nondecreasing values starting at 0")
    return np.asarray(probs, dtype=float) @ mid


def coefficient_table(draws, names=None) -> pd.DataFrame:
    """Posterior mean, 95% equal-tail interval and its width per coefficient.

    ``significant`` marks intervals that exclude zero; ``display`` renders
    ``mean (width)``.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < 100:
        raise ValueError("need at least 100 retained draws")
    names = list(names) if names is not None else [f"beta{k + 1}" for k in range(draws.shape[1])]
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    mean = draws.mean(axis=0)
    tab = pd.DataFrame({
        "name": names, "mean": mean, "lo95": lo, "hi95": hi, "width": hi - lo,
        "significant": (lo > 0) | (hi < 0),
    })
    tab["display"] = [f"{m:.3f} ({w:.3f})" for m, w in zip(mean, hi - lo)]
    return tab


def latent_mean_surfaces(beta_draws, theta_draws, X, u):
    """Posterior means of ``mu_i = v_i^T beta + theta_i`` and of
    ``u_i mu_i + (1 - u_i) c(mu_i)`` per cell, plus the per-draw arrays."""
    mu = np.asarray(beta_draws) @ np.asarray(X).T + np.asarray(theta_draws)
    zt = u * mu + (1.0 - u) * left_tail_mean(mu)
    return mu.mean(axis=0), zt.mean(axis=0), mu, zt


class CellSummary:
    """Per-draw and summarised products for every cell.

    Attributes hold draw arrays of shape ``(D, I, 4)`` for ``p`` and ``r`` and
    ``(D, I)`` for the grouped means and latent surfaces.
    """

    def __init__(self, data: Dataset, alpha, beta, theta, midpoints=DEFAULT_MIDPOINTS):
        self.data = data
        self.midpoints = tuple(midpoints)
        _, _, self.mu, self.z_T = latent_mean_surfaces(beta, theta, data.X, data.u)
        self.theta = np.asarray(theta)
        self.p = category_probs(alpha, self.mu)
        self.r = transformed_probs(self.p, data.u)
        self.mean_p = grouped_mean(self.p, midpoints)
        self.mean_r = grouped_mean(self.r, midpoints)

    @property
    def n_draws(self) -> int:
        return self.mu.shape[0]

    def check(self, tol: float = 1e-10) -> dict:
        """Evaluate the per-draw invariants; returns one boolean per check."""
        u = self.data.u
        return {
            "p_simplex": bool(np.all(np.abs(self.p.sum(-1) - 1) <= tol)),
            "r_simplex": bool(np.all(np.abs(self.r.sum(-1) - 1) <= tol)),
            "r0_floor": bool(np.all(self.r[..., 0] >= 1 - u - tol)),
            "grouped_dominance": bool(np.all(self.mean_r <= self.mean_p + tol)),
            "latent_dominance": bool(np.all(self.z_T.mean(0) <= self.mu.mean(0) + tol)),
        }

    def products(self) -> dict:
        """``name -> (D, I)`` draw arrays for every exported product."""
        out = {}
        for h in range(4):
            out[f"p{h}"] = self.p[..., h]
            out[f"r{h}"] = self.r[..., h]
        out["grouped_mean_p"] = self.mean_p
        out["grouped_mean_r"] = self.mean_r
        out["mean_zP"] = self.mu
        out["mean_zT"] = self.z_T
        out["theta"] = self.theta
        return out


def _frame(data: Dataset, draws) -> pd.DataFrame:
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    tab = pd.DataFrame({
        "cell_id": data.grid.cell_id, "x": data.grid.coords[:, 0], "y": data.grid.coords[:, 1],
        "value": draws.mean(axis=0), "lo95": lo, "hi95": hi,
    })
    return tab.sort_values("cell_id", kind="stable").reset_index(drop=True)


def summarize_chain(data: Dataset, alpha, beta, theta, midpoints=DEFAULT_MIDPOINTS):
    """Returns ``(CellSummary, {product: DataFrame}, coefficient table)``."""
    cs = CellSummary(data, alpha, beta, theta, midpoints)
    frames = {name: _frame(data, arr) for name, arr in cs.products().items()}
    coef = coefficient_table(beta, data.covariate_names)
    alpha_tab = coefficient_table(alpha, ["alpha1", "alpha2"])
    return cs, frames, pd.concat([coef, alpha_tab], ignore_index=True)


def write_summary_csvs(frames: dict, coef: pd.DataFrame, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, tab in frames.items():
        path = out_dir / f"summary_{name}.csv"
        tab.to_csv(path, index=False, float_format="%.10g")
        paths.append(path)
    path = out_dir / "coefficients.csv"
    coef.to_csv(path, index=False, float_format="%.10g")
    paths.append(path)
    return paths
