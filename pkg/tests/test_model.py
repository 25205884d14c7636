import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from abundmap.lattice import AdjacencyStructure, CellGrid
from abundmap.model import (
    ABSENT,
    MISSED,
    POSITIVE,
    TRANSFORMED,
    DataError,
    Dataset,
    HyperParams,
    InvariantError,
    LatentState,
    ParameterState,
    check_state,
    expected_transformed,
    interval_masses,
    log_unnormalized_posterior,
    standardize,
)


def test_standardize_triple():
    z, rec = standardize(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(z[:, 0], [-1, 0, 1])
    assert rec.mean[0] == 2 and rec.scale[0] == 1


def test_standardize_idempotent():
    x = np.random.default_rng(0).normal(size=(50, 3))
    z, _ = standardize(x)
    z2, _ = standardize(z)
    assert np.allclose(z, z2, atol=1e-12)


def test_standardize_columnwise():
    x = np.random.default_rng(1).normal(3, 2, size=(40, 2))
    z, _ = standardize(x)
    for k in range(2):
        zk, _ = standardize(x[:, k])
        assert np.allclose(z[:, k], zk[:, 0])


def test_standardize_constant_named():
    with pytest.raises(DataError, match="'elev'"):
        standardize(np.array([[1.0, 5.0], [2.0, 5.0]]), names=["rain", "elev"])


def test_coefficients_back_to_raw_scale():
    _, rec = standardize(np.array([[0.0], [2.0], [4.0]]))
    assert rec.to_raw_coefficients([1.0])[0] == pytest.approx(0.5)


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(-20, 20))
def test_interval_masses_simplex(a1, gap, mu):
    m = interval_masses((a1, a1 + gap), mu)
    assert abs(m.sum() - 1) < 1e-12
    assert np.all(m >= 0)


def toy():
    grid = CellGrid(np.array([[0.0, 0.0], [1.0, 0.0]]))
    adj = AdjacencyStructure.from_edges(2, [(0, 1)])
    X = np.array([[0.5], [-1.0]])
    return Dataset(grid, adj, X, np.array([0.8, 0.4]), np.array([0, 0, 1, 1]),
                   np.array([1, 0, 0, 3]))


def test_log_posterior_termwise():
    d = toy()
    h = HyperParams(prior_var_beta=10.0, car_scale=0.2)
    p = ParameterState((0.7, 1.9), [0.3], [0.25, -0.25])
    lat = LatentState([0.4, 0.6, -0.2, 2.0], [0.3, np.nan, np.nan, 2.4],
                      [POSITIVE, MISSED, ABSENT, POSITIVE])
    mu = np.array([0.5 * 0.3 + 0.25] * 2 + [-0.3 - 0.25] * 2)
    lp = stats.norm.logpdf
    hand = sum(lp(z - m) for z, m in zip(lat.z_P, mu))
    hand += np.log(0.8) + lp(0.3 - 0.4)            # positive site in cell 0
    hand += np.log(0.8) + stats.norm.logsf(0.6)    # missed site
    hand += 0.0                                    # absent site
    hand += np.log(0.4) + lp(2.4 - 2.0)            # positive site in cell 1
    hand += -0.5 * 0.3 ** 2 / 10.0
    hand += -0.5 * (0.5 ** 2) / 0.2
    assert log_unnormalized_posterior(d, p, lat, h) == pytest.approx(hand, rel=1e-12)


def test_log_posterior_transformed_weight_and_zero_car():
    d = toy()
    h = HyperParams()
    p = ParameterState((0.7, 1.9), [0.0], [0.0, 0.0])
    base = LatentState([0.4, 0.6, -0.2, 2.0], [0.3, np.nan, np.nan, 2.4],
                       [POSITIVE, TRANSFORMED, ABSENT, POSITIVE])
    lp = stats.norm.logpdf
    hand = sum(lp(z) for z in base.z_P) + np.log(0.8) + lp(-0.1) + np.log(0.2) \
        + np.log(0.4) + lp(0.4)
    assert log_unnormalized_posterior(d, p, base, h) == pytest.approx(hand, rel=1e-12)


def test_log_posterior_support():
    d = toy()
    h = HyperParams()
    p = ParameterState((0.7, 1.9), [0.0], [0.0, 0.0])
    ok = LatentState([0.4, 0.6, -0.2, 2.0], [0.3, np.nan, np.nan, 2.4],
                     [POSITIVE, MISSED, ABSENT, POSITIVE])
    assert np.isfinite(log_unnormalized_posterior(d, p, ok, h))
    bad = ok.copy()
    bad.z_O[0] = 0.9   # y=1 needs z_O in (0, 0.7)
    assert log_unnormalized_posterior(d, p, bad, h) == -np.inf
    bad = ok.copy()
    bad.z_P[2] = 0.1   # ABSENT needs z_P < 0
    assert log_unnormalized_posterior(d, p, bad, h) == -np.inf
    bad = ok.copy()
    bad.z_P[0] = -0.1  # positive record needs z_P >= 0
    assert log_unnormalized_posterior(d, p, bad, h) == -np.inf
    with pytest.raises(InvariantError):
        log_unnormalized_posterior(d, ParameterState((0.7, 1.9), [0.0, 1.0], [0, 0]), ok, h)


def test_check_state():
    d = toy()
    p = ParameterState((0.7, 1.9), [0.0], [0.0, 0.0])
    lat = LatentState([0.4, 0.6, -0.2, 2.0], [0.3, np.nan, np.nan, 2.4],
                      [POSITIVE, MISSED, ABSENT, POSITIVE])
    check_state(d, p, lat)
    lat.mix_case[1] = ABSENT
    with pytest.raises(InvariantError, match="site 1"):
        check_state(d, p, lat)
    with pytest.raises(InvariantError):
        check_state(d, ParameterState((1.9, 0.7), [0.0], [0.0, 0.0]), LatentState(
            [0.4, 0.6, -0.2, 2.0], [0.3, np.nan, np.nan, 2.4], [0, 1, 2, 0]))


def test_dataset_reindexes_sampled_first():
    coords = np.array([[0, 0], [1, 0], [2, 0], [3, 0]], float)
    d = Dataset.from_arrays(coords, [1, 1, 1, 1], np.arange(4.0), [30, 10, 30], [1, 0, 2],
                            cell_id=[10, 20, 30, 40])
    assert list(d.grid.cell_id[:2]) == [10, 30]
    assert d.m == 2
    assert list(d.site_cell) == [0, 1, 1]
    assert list(d.y) == [0, 1, 2]
    # adjacency follows the permutation: cells 10 and 30 are not neighbours
    assert 1 not in d.adj.neighbors(0)


def test_dataset_errors():
    coords = np.array([[0, 0], [1, 0]], float)
    with pytest.raises(DataError, match="unknown cell_id 99"):
        Dataset.from_arrays(coords, [1, 1], [0.0, 1.0], [99], [0])
    with pytest.raises(DataError, match="u outside"):
        Dataset.from_arrays(coords, [1.2, 1], [0.0, 1.0], [0], [0])
    with pytest.raises(DataError):
        Dataset.from_arrays(coords, [1, 1], [0.0, 1.0], [0], [4])


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        HyperParams(prior_var_beta=0)
    with pytest.raises(ValueError):
        HyperParams(car_scale=-1)


def test_expected_transformed_bounds():
    z = np.linspace(-5, 5, 11)
    assert np.allclose(expected_transformed(z, 1.0), z)
    assert np.all(expected_transformed(z, 0.3) < z)
