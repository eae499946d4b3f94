import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import cross_val_score

from addinfer.estimator import ComponentTest, SmoothBackfitRegressor, parse_null
from addinfer.simulate import SimConfig, gen_sim_data


@pytest.fixture(scope="module")
def data():
    return gen_sim_data(SimConfig(n=120, theta=1.0, seed=9))


def test_params_roundtrip():
    est = SmoothBackfitRegressor(p=2, bandwidth=0.3)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(bandwidth=0.4)
    assert c.bandwidth == 0.4 and est.bandwidth == 0.3
    assert clone(ComponentTest(tested=2, B=10)).get_params()["tested"] == 2


def test_regressor(data):
    est = SmoothBackfitRegressor(bandwidth=0.3).fit(data.X, data.y)
    np.testing.assert_allclose(est.predict(data.X), est.fit_.fitted, atol=1e-8)
    assert est.bandwidths_ == (0.3,) * 4
    assert est.n_features_in_ == 4
    assert est.score(data.X, data.y) > 0.5
    bf = SmoothBackfitRegressor(bandwidth=0.3, method="backfitting").fit(data.X, data.y)
    np.testing.assert_allclose(bf.predict(data.X), est.predict(data.X), atol=1e-6)
    with pytest.raises(ValueError):
        est.predict(data.X[:, :3])


def test_regressor_in_cross_validation(data):
    scores = cross_val_score(SmoothBackfitRegressor(bandwidth="testing"), data.X, data.y, cv=3)
    assert scores.shape == (3,) and np.all(np.isfinite(scores))


def test_component_test(data):
    ct = ComponentTest(tested=1, B=100, bandwidth=0.3, workers=1).fit(data.X, data.y)
    assert ct.pvalues_["glr"] < 0.05
    ct0 = ComponentTest(tested=1, B=0, bandwidth=0.3, null="linear").fit(data.X, data.y)
    assert ct0.report_.null_form == "linear" and ct0.report_.p_boot is None


def test_parse_null():
    assert parse_null("omit") is None
    assert parse_null("linear") == 1
    assert parse_null("polynomial:2") == 2
    for bad in ("quadratic", "polynomial:7"):
        with pytest.raises(ValueError):
            parse_null(bad)
