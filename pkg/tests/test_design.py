import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addinfer.design import build_design, build_projections, projection
from addinfer.exceptions import DegenerateDesignError
from addinfer.smoother import SmootherConfig, build_smoother


def test_design_columns():
    ds = build_design(np.array([[0.0], [0.5], [1.0]]), 1)
    np.testing.assert_array_equal(ds.X_full, [[1, 0], [1, 0.5], [1, 1]])
    X = np.random.default_rng(0).uniform(size=(20, 2))
    ds = build_design(X, (1, 2))
    assert ds.X_full.shape[1] == 4
    np.testing.assert_array_equal(ds.X_full[:, 3], X[:, 1] ** 2)
    assert ds.X_full[:, 0] @ ds.X_full[:, 0] == 20


def test_minus_zero_and_tested():
    X = np.random.default_rng(1).uniform(size=(30, 3))
    ds = build_design(X, 2, tested=1)
    assert ds.X_minus_d.shape[1] == 1 + 2 * 2
    assert not np.any(np.all(np.isclose(ds.X_minus_d[:, :, None], X[:, 1][:, None, None]), axis=0))
    ds_lin = build_design(X, 2, tested=1, null_degree=1)
    assert ds_lin.X_minus_d.shape[1] == 1 + 2 * 2 + 1


def test_degenerate_design():
    X = np.column_stack([np.linspace(0, 1, 10), np.full(10, 0.3)])
    with pytest.raises(DegenerateDesignError):
        build_design(X, 1)


def test_projection_examples():
    n = 12
    np.testing.assert_allclose(projection(np.ones((n, 1))), np.full((n, n), 1 / n), atol=1e-14)
    A = np.random.default_rng(2).standard_normal((50, 5))
    P = projection(A)
    np.testing.assert_allclose(P @ A, A, atol=1e-10)
    oracle = A @ np.linalg.solve(A.T @ A, A.T)
    np.testing.assert_allclose(P, oracle, atol=1e-10)
    np.testing.assert_allclose(projection(np.column_stack([A, A[:, :1]])), P, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 3), p=st.integers(0, 3), tested=st.integers(0, 2))
def test_projection_identities(seed, d, p, tested):
    tested = tested % d
    X = np.random.default_rng(seed).uniform(size=(40, d))
    ds = build_design(X, p, tested=tested)
    ps = build_projections(ds)
    n = X.shape[0]
    for P in (ps.G, ps.G_minus_d, ps.P_resid_d, *ps.G_j):
        np.testing.assert_allclose(P @ P, P, atol=1e-9)
        np.testing.assert_allclose(P, P.T, atol=1e-9)
    np.testing.assert_allclose(ps.G @ ds.X_full, ds.X_full, atol=1e-9)
    Gperp = np.eye(n) - ps.G
    for Gj in ps.G_j:
        np.testing.assert_allclose(Gj @ Gperp, 0, atol=1e-9)
    Xc = ds.X_full[:, 1:] - ds.X_full[:, 1:].mean(axis=0)
    alt = np.full((n, n), 1 / n) + (projection(Xc) if Xc.shape[1] else 0)
    np.testing.assert_allclose(ps.G, alt, atol=1e-9)
    np.testing.assert_allclose(ps.G_minus_d + ps.P_resid_d, ps.G, atol=1e-9)
    np.testing.assert_allclose((np.eye(n) - ps.G_minus_d) @ ds.X_minus_d, 0, atol=1e-9)


@pytest.mark.parametrize("p", [0, 1, 2, 3])
def test_smoother_fixes_polynomial_projection(p):
    x = np.random.default_rng(p).uniform(size=80)
    Xs = x[:, None]
    Gj = build_projections(build_design(Xs, p)).G_j[0]
    H = build_smoother(x, SmootherConfig(p=p, h=0.25)).H
    np.testing.assert_allclose(H @ Gj, Gj, atol=1e-7)
