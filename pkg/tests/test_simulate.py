import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addinfer.simulate import (
    PowerGrid,
    SimConfig,
    gen_sim_data,
    m1_beta,
    null_scaled_statistics,
    power_curve,
    sim_covariates,
    sim_errors,
    wilks_experiment,
)
from addinfer.bootstrap import replicate_rng


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(theta=1.5)
    with pytest.raises(ValueError):
        SimConfig(error="cauchy")


def test_covariates_law():
    X = sim_covariates(replicate_rng(0, 1), 20000)
    assert np.all(np.abs(X) < 1)
    Z = np.tan(np.pi * X / 2)
    C = np.corrcoef(Z.T)
    off = C[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off - 0.6) < 0.03)
    np.testing.assert_allclose(Z.std(axis=0), 1, atol=0.03)


@pytest.mark.parametrize("kind", ["normal", "t5", "chisq5", "chisq10"])
def test_errors_standardised(kind):
    e = sim_errors(replicate_rng(1, 2), 200_000, kind)
    assert abs(e.mean()) < 0.02
    assert abs(e.std() - 1) < 0.03


def test_m1_beta():
    x = np.linspace(-1, 1, 11)
    m1 = 0.5 - x**2 + 3 * x**3
    np.testing.assert_array_equal(m1_beta(x, 0.0), m1)
    np.testing.assert_allclose(m1_beta(x, 1.5), (1 + 1.5 * m1.std()) * m1)


def test_gen_sim_data_reproducible():
    a = gen_sim_data(SimConfig(n=50, theta=0.3, seed=4, key=(2,)))
    b = gen_sim_data(SimConfig(n=50, theta=0.3, seed=4, key=(2,)))
    np.testing.assert_array_equal(a.y, b.y)
    c = gen_sim_data(SimConfig(n=50, theta=0.3, seed=4, key=(3,)))
    assert not np.array_equal(a.y, c.y)


@settings(max_examples=20, deadline=None)
@given(theta=st.floats(0, 1), seed=st.integers(0, 1000))
def test_theta_enters_only_through_x2(theta, seed):
    base = gen_sim_data(SimConfig(n=40, theta=0.0, seed=seed))
    alt = gen_sim_data(SimConfig(n=40, theta=theta, seed=seed))
    np.testing.assert_allclose(alt.y - base.y, theta * np.sin(np.pi * base.X[:, 1]), atol=1e-12)


H = (0.3, 0.3, 0.3, 0.3)


def test_wilks_small(tmp_path):
    res = wilks_experiment(6, n=60, h_opt=H, seed=1, workers=1, grid_points=16)
    assert res.labels == ("h1x0.3333", "h1x1", "h1x1.5", "beta-1.5", "beta+0", "beta+1.5")
    # β = 0 and factor 1 are the same setting on shared draws
    np.testing.assert_allclose(res.samples["h1x1"]["glr_scaled"], res.samples["beta+0"]["glr_scaled"],
                               rtol=1e-10)
    files = res.write(tmp_path)
    manifest = json.loads(open([f for f in files if f.endswith(".json")][0]).read())
    assert manifest["config"]["n_sim"] == 6
    again = wilks_experiment(6, n=60, h_opt=H, seed=1, workers=3, grid_points=16)
    for lab in res.labels:
        for s, v in res.samples[lab].items():
            assert v.tobytes() == again.samples[lab][s].tobytes()


def test_null_scaled_statistics_small():
    out = null_scaled_statistics(5, n=60, h=H, seed=0, workers=1)
    assert set(out) >= {"glr_scaled", "lf_scaled", "df_glr", "df_lf"}
    assert out["glr_scaled"].shape == (5,)
    assert np.all(out["df_glr"] > 0)


def test_power_small(tmp_path):
    grid = PowerGrid(thetas=(0.0, 1.0), alphas=(0.05,), n_sim=4, B=40, n=60)
    res = power_curve(grid, seed=0, workers=1)
    assert res.rejection(1.0, "glr", 0.05) >= res.rejection(0.0, "glr", 0.05)
    assert len(res.table()) == 2 * 1 * 5
    files = res.write(tmp_path)
    assert any(f.endswith("power_table.csv") for f in files)
    again = power_curve(grid, seed=0, workers=2)
    for th in grid.thetas:
        for s in grid.statistics:
            assert res.pvalues[th][s].tobytes() == again.pvalues[th][s].tobytes()


def test_power_grid_validation():
    with pytest.raises(ValueError):
        PowerGrid(bandwidth="silverman")
    with pytest.raises(ValueError):
        PowerGrid(thetas=())
