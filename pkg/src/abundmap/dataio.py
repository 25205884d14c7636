"""CSV interchange, INI run configuration and chain persistence.

File formats
------------
cells.csv   ``cell_id,x,y,u,<covariate columns>``
sites.csv   ``cell_id,y``
chain.csv   ``sweep,alpha1,alpha2,<beta names>,theta_<cell_id>...``; one row
            per retained sweep, beta on the standardised covariate scale.
sweeps.csv  one row per sweep: ``sweep,mh_accept_rate,alpha1_width,
            alpha2_width,theta_center_shift,n_missed_chained,seconds``.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .gibbs import Chain, GibbsState
from .model import DataError, Dataset, LatentState, ParameterState
from .simulate import SimConfig, Truth

__all__ = [
    "ConfigError",
    "RunConfig",
    "BenchConfig",
    "load_config",
    "write_config",
    "read_dataset",
    "write_dataset",
    "write_truth",
    "write_chain",
    "read_chain",
    "write_sweep_log",
    "save_checkpoint",
    "load_checkpoint",
]


class ConfigError(DataError):
    """Unknown key, bad value or missing section in a run configuration."""


@dataclass
class RunConfig:
    """Fitting settings; defaults are the reference analysis settings."""

    cells: str = "cells.csv"
    sites: str = "sites.csv"
    out_dir: str = "fit_out"
    iterations: int = 12500
    burn_in: int = 7500
    thin: int = 5
    prior_var_beta: float = 100.0
    car_scale: float = 0.1
    alpha_cap: float = 20.0
    threshold: float = 1.5
    L: int = 1
    workers: int = 1
    mode: str = "sequential"
    seed: int = 0
    check_every: int = 100
    checkpoint_every: int = 1000
    midpoints: tuple = (0.0, 5.0, 50.0, 150.0)

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.mode not in ("sequential", "parallel"):
            raise ConfigError("mode must be sequential or parallel")
        if self.L < 1 or self.workers < 1:
            raise ConfigError("L and workers must be >= 1")


@dataclass
class BenchConfig:
    nx: int = 200
    ny: int = 185
    L_values: tuple = (1, 2, 4, 6, 8, 11, 16)
    workers: tuple = (1, 2, 4)
    repetitions: int = 20
    sites: int = 30000
    car_scale: float = 0.1
    seed: int = 0
    out: str = "bench.csv"


_SECTIONS = {"simulate": SimConfig, "fit": RunConfig, "bench": BenchConfig}


def _coerce(cls, key: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigError(f"unknown key '{key}' for section of {cls.__name__}")
    default = fields[key].default
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            kind = float if any(isinstance(v, float) for v in default) else int
            return tuple(kind(v) for v in raw.replace(",", " ").split())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if default is None or isinstance(default, str):
            return raw.strip() or None if default is None else raw.strip()
    except ValueError:
        raise ConfigError(f"bad value '{raw}' for '{key}'") from None
    return raw


def load_config(path) -> dict:
    """Parse an INI file into ``{section: dataclass instance}``.

    Only sections present in the file are returned; relative paths in
    ``[fit]`` resolve against the config file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys such as L are case-sensitive
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = _SECTIONS[name]
        kw = {k: _coerce(cls, k, v) for k, v in parser.items(name)}
        try:
            out[name] = cls(**kw)
        except ValueError as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    base = path.resolve().parent
    if "fit" in out:
        fit = out["fit"]
        for key in ("cells", "sites", "out_dir"):
            val = Path(getattr(fit, key))
            if not val.is_absolute():
                setattr(fit, key, str(base / val))
    return out


def _fmt(v):
    if isinstance(v, tuple):
        return " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return "" if v is None else str(v)


def write_config(sections: dict, path) -> None:
    """Write fully resolved settings (defaults filled) as INI."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for name, obj in sections.items():
        parser[name] = {k: _fmt(v) for k, v in dataclasses.asdict(obj).items()}
    with open(path, "w") as fh:
        parser.write(fh)


# ---------------------------------------------------------------- datasets

def read_dataset(cells_path, sites_path, threshold: float = 1.5) -> Dataset:
    """Load cells and sites CSVs; covariates are standardised on load.

    Raises:
        DataError: with the offending file line for missing columns, non-finite
            covariates, ``u`` outside ``[0, 1]``, duplicate cells or unknown
            ``cell_id`` references.
    """
    try:
        cells = pd.read_csv(cells_path, float_precision="round_trip")
        sites = pd.read_csv(sites_path)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(str(exc)) from None
    need = ["cell_id", "x", "y", "u"]
    missing = [c for c in need if c not in cells.columns]
    if missing:
        raise DataError(f"{cells_path}: missing columns {missing}")
    if list(sites.columns[:2]) != ["cell_id", "y"]:
        raise DataError(f"{sites_path}: expected columns cell_id,y")
    covs = [c for c in cells.columns if c not in need]
    if not covs:
        raise DataError(f"{cells_path}: no covariate columns")

    def line(idx):  # header is line 1
        return int(idx) + 2

    num = cells[need[1:] + covs].apply(pd.to_numeric, errors="coerce").to_numpy(float)
    bad = np.flatnonzero(~np.all(np.isfinite(num), axis=1))
    if bad.size:
        raise DataError(f"{cells_path}:{line(bad[0])}: non-finite coordinate, u or covariate")
    u = num[:, 2]
    bad = np.flatnonzero((u < 0) | (u > 1))
    if bad.size:
        raise DataError(f"{cells_path}:{line(bad[0])}: u={u[bad[0]]} outside [0, 1]")
    ids = cells["cell_id"].to_numpy()
    dup = np.flatnonzero(pd.Series(ids).duplicated().to_numpy())
    if dup.size:
        raise DataError(f"{cells_path}:{line(dup[0])}: duplicate cell_id {ids[dup[0]]}")
    known = set(ids.tolist())
    site_ids = sites["cell_id"].to_numpy()
    for k, c in enumerate(site_ids):
        if c not in known:
            raise DataError(f"{sites_path}:{line(k)}: unknown cell_id {c}")
    y = pd.to_numeric(sites["y"], errors="coerce").to_numpy()
    bad = np.flatnonzero(~np.isin(y, [0, 1, 2, 3]))
    if bad.size:
        raise DataError(f"{sites_path}:{line(bad[0])}: y must be 0, 1, 2 or 3")
    return Dataset.from_arrays(num[:, :2], u, num[:, 3:], site_ids, y.astype(int),
                               cell_id=ids, threshold=threshold, names=covs)


def write_dataset(data: Dataset, out_dir, covariates=None) -> tuple:
    """Write ``cells.csv`` and ``sites.csv`` (cells in external id order)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = np.argsort(data.grid.cell_id, kind="stable")
    cov = data.X if covariates is None else covariates
    cells = pd.DataFrame({"cell_id": data.grid.cell_id[order],
                          "x": data.grid.coords[order, 0], "y": data.grid.coords[order, 1],
                          "u": data.u[order]})
    for k, name in enumerate(data.covariate_names):
        cells[name] = cov[order, k]
    sites = pd.DataFrame({"cell_id": data.grid.cell_id[data.site_cell], "y": data.y})
    sites = sites.sort_values("cell_id", kind="stable")
    cp, sp = out_dir / "cells.csv", out_dir / "sites.csv"
    cells.to_csv(cp, index=False, float_format="%.17g")
    sites.to_csv(sp, index=False)
    return cp, sp


def write_truth(truth: Truth, out_dir) -> list:
    out_dir = Path(out_dir)
    n = truth.theta.size
    params = [("alpha1", truth.alpha[0]), ("alpha2", truth.alpha[1])]
    params += [(f"beta{k + 1}", b) for k, b in enumerate(truth.beta)]
    paths = [out_dir / "truth_params.csv", out_dir / "truth_cells.csv", out_dir / "truth_sites.csv"]
    pd.DataFrame(params, columns=["name", "value"]).to_csv(paths[0], index=False,
                                                           float_format="%.17g")
    pd.DataFrame({"cell_id": np.arange(n), "theta": truth.theta, "mu": truth.mu,
                  "u": truth.u, "masked": truth.masked.astype(int)}).to_csv(
        paths[1], index=False, float_format="%.17g")
    pd.DataFrame({"cell_id": truth.site_cell, "z_P": truth.z_P, "z_T": truth.z_T,
                  "z_O": truth.z_O, "transformed": truth.transformed.astype(int),
                  "y": truth.y}).to_csv(paths[2], index=False, float_format="%.17g")
    meta = out_dir / "metadata.json"
    meta.write_text(json.dumps(truth.meta, indent=2, default=list))
    return paths + [meta]


# ---------------------------------------------------------------- chains

def _chain_columns(data: Dataset):
    return (["sweep", "alpha1", "alpha2"] + list(data.covariate_names)
            + [f"theta_{c}" for c in data.grid.cell_id])


def write_chain(chain: Chain, data: Dataset, path) -> None:
    body = np.column_stack([chain.sweeps, chain.alpha, chain.beta, chain.theta])
    tab = pd.DataFrame(body, columns=_chain_columns(data))
    tab["sweep"] = chain.sweeps
    tab.to_csv(path, index=False, float_format="%.17g")


def read_chain(path, data: Dataset) -> Chain:
    """Load a chain written by :func:`write_chain`, mapping theta columns to the
    dataset's internal cell order.

    Raises:
        DataError: if the columns do not match the dataset.
    """
    tab = pd.read_csv(path, float_precision="round_trip")
    cols = _chain_columns(data)
    if sorted(tab.columns) != sorted(cols):
        raise DataError(f"{path}: chain columns do not match the dataset "
                        f"({tab.shape[1]} columns, expected {len(cols)})")
    P = data.n_covariates
    return Chain(
        tab["sweep"].to_numpy(np.int64),
        tab[["alpha1", "alpha2"]].to_numpy(float),
        tab[list(data.covariate_names)].to_numpy(float).reshape(-1, P),
        tab[cols[3 + P:]].to_numpy(float),
    )


def write_sweep_log(reports, path, append: bool = False) -> None:
    rows = [(r.sweep, r.mh_accept_rate, r.alpha_interval_widths[0], r.alpha_interval_widths[1],
             r.theta_center_shift, r.n_missed_chained, r.seconds) for r in reports]
    tab = pd.DataFrame(rows, columns=["sweep", "mh_accept_rate", "alpha1_width", "alpha2_width",
                                      "theta_center_shift", "n_missed_chained", "seconds"])
    tab.to_csv(path, index=False, mode="a" if append else "w", header=not append,
               float_format="%.10g")


def save_checkpoint(path, state: GibbsState, chain: Chain) -> None:
    """Binary state plus retained draws so far (``.npz``)."""
    tmp = Path(str(path) + ".tmp.npz")
    np.savez(tmp, sweep=state.sweep, alpha=state.params.alpha, beta=state.params.beta,
             theta=state.params.theta, z_P=state.latents.z_P, z_O=state.latents.z_O,
             mix_case=state.latents.mix_case, c_sweeps=chain.sweeps, c_alpha=chain.alpha,
             c_beta=chain.beta, c_theta=chain.theta)
    tmp.replace(path)


def load_checkpoint(path):
    with np.load(path) as z:
        state = GibbsState(ParameterState(z["alpha"], z["beta"], z["theta"]),
                           LatentState(z["z_P"], z["z_O"], z["mix_case"]), int(z["sweep"]))
        chain = Chain(z["c_sweeps"], z["c_alpha"], z["c_beta"], z["c_theta"])
    return state, chain
