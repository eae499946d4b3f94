import math
import warnings

import numpy as np
import pytest

from addinfer.backfit import ModelSpec
from addinfer.bandwidth import (
    BandwidthSearch,
    WilksWindowWarning,
    aicc,
    aicc_univariate,
    check_wilks_window,
    select_bandwidths_cv,
    wilks_window,
)
from addinfer.bandwidth import testing_bandwidth as rate_bandwidth
from addinfer.bandwidth import testing_bandwidths as rate_bandwidths
from addinfer.data import Dataset
from addinfer.exceptions import BandwidthGridTooSmallError
from addinfer.simulate import SimConfig, gen_sim_data
from addinfer.smoother import SmootherConfig, build_smoother


def test_aicc_formula():
    assert aicc(50.0, 5.0, 100) == pytest.approx(math.log(0.5) + 1 + 12 / 93)
    assert aicc(1.0, 98.0, 100) == math.inf


def test_search_validation():
    with pytest.raises(ValueError):
        BandwidthSearch(grid=(0.3, 0.2))
    with pytest.raises(ValueError):
        BandwidthSearch(grid=())


def test_aicc_univariate_matches_brute_force():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=120)
    r = np.sin(6 * x) + 0.3 * rng.standard_normal(120)
    grid = (0.03, 0.06, 0.1, 0.2, 0.4)
    res = aicc_univariate(x, r, 1, grid=grid)
    vals = []
    for h in grid:
        H = build_smoother(x, SmootherConfig(p=1, h=h)).H
        e = r - H @ r
        vals.append(aicc(e @ e, np.trace(H), 120))
    np.testing.assert_allclose(res.values, vals, rtol=1e-12)
    assert res.h == grid[int(np.argmin(vals))]


def test_aicc_grid_too_small():
    x = np.linspace(0, 1, 12)
    with pytest.raises(BandwidthGridTooSmallError):
        aicc_univariate(x, np.sin(x), 3, grid=(0.001,))


def test_select_bandwidths_cv_runs():
    data = gen_sim_data(SimConfig(n=100, theta=1.0, seed=2))
    search = BandwidthSearch(grid=tuple(np.geomspace(0.05, 1, 8).tolist()), max_cycles=4)
    sel = select_bandwidths_cv(data, ModelSpec(p=1), search)
    assert len(sel.h) == 4 and all(h in search.grid for h in sel.h)
    np.testing.assert_allclose(sel.h_raw, np.asarray(sel.h) * data.span)
    assert sel.history[0] == (0.3,) * 4
    d = sel.to_dict()
    assert d["cycles"] == sel.cycles and len(d["aicc_traces"]) == 4 * sel.cycles


def test_testing_bandwidth_rule():
    for n in (50, 100, 400, 6000):
        assert rate_bandwidth(1.0, n, 1) == n ** (-2 / 17)
        assert rate_bandwidth(2.5, n, 0) == 2.5 * n ** (-2 / 9)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 2))
    data = Dataset(y=rng.normal(size=80), X=X)
    h = rate_bandwidths(data, 1)
    np.testing.assert_allclose(np.asarray(h) * data.span, X.std(axis=0, ddof=1) * 80 ** (-2 / 17), rtol=1e-15)


def test_wilks_window():
    assert wilks_window(256, 1) == pytest.approx(256 ** (-1 / 8))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_wilks_window([0.2, 0.3], 100, 1)
    with pytest.warns(WilksWindowWarning):
        assert not check_wilks_window([0.2, 0.9], 100, 1)
