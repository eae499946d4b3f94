import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from addinfer.backfit import ModelSpec, SmootherBank, fit_explicit
from addinfer.exceptions import DegenerateTestError, IncompatibleFitsError, LossOverflowError
from addinfer.inference import (
    LossSpec,
    TestProblem,
    are_lf_glr,
    asymptotic_pvalues,
    f_statistics,
    glr_statistic,
    lf_statistic,
    linex,
    sb_statistic,
    sb_weights,
    scaling_constants,
    test_matrices as make_test_matrices,
    write_null_overlay,
)
from addinfer.simulate import SimConfig, gen_sim_data
from oracles import are_ratio_oracle

SPEC = ModelSpec(p=1, h=0.25)


@pytest.fixture(scope="module")
def problem():
    data = gen_sim_data(SimConfig(n=120, theta=0.3, seed=11))
    return TestProblem(data, SPEC, 1)


def test_glr_forms():
    assert glr_statistic(12.0, 10.0, 100) == pytest.approx(50 * math.log(1.2))
    assert glr_statistic(12.0, 10.0, 100, form="ratio") == pytest.approx(10.0)
    assert glr_statistic(5.0, 5.0, 10) == 0.0
    with pytest.raises(ValueError):
        glr_statistic(1.0, 1.0, 10, form="exp")


def test_linex_limits():
    z = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(linex(LossSpec(0.0, 1.0), z), z**2 / 2)
    np.testing.assert_allclose(linex(LossSpec(0.0, 3.0), z), 1.5 * z**2)
    s = 0.7
    np.testing.assert_allclose(linex(LossSpec(s, 2.0), z), 2 / s**2 * (np.exp(s * z) - 1 - s * z), rtol=1e-12)
    # series branch agrees with the closed form near zero
    assert linex(LossSpec(1e-6, 1.0), 0.5) == pytest.approx(0.125, rel=1e-6)
    assert LossSpec(0.3, 4.0).M == 2.0
    with pytest.raises(LossOverflowError):
        linex(LossSpec(50.0, 1.0), np.array([0.0, 30.0]))
    with pytest.raises(ValueError):
        LossSpec(0.0, -1.0)


@settings(max_examples=50, deadline=None)
@given(s=st.floats(-2, 2), t=st.floats(0.1, 5), z=st.floats(-3, 3))
def test_linex_nonnegative_with_zero_at_origin(s, t, z):
    loss = LossSpec(s, t)
    assert linex(loss, z) >= 0
    assert linex(loss, 0.0) == 0


def test_rss_difference_identity_and_f_consistency(problem):
    y = problem.data.y
    st_ = problem.statistics(y)
    tm = problem.tm
    assert abs((st_.rss0 - st_.rss1) - y @ tm.C @ y) < 1e-8 * st_.rss1
    assert y @ tm.D @ y == pytest.approx(st_.rss1, rel=1e-10)
    n = len(y)
    assert st_.f_lambda == pytest.approx(2 * st_.glr_ratio * tm.trace_D / (n * tm.trace_C), rel=1e-12)
    f_l, f_q = f_statistics(y, tm)
    assert f_l == pytest.approx(st_.f_lambda, rel=1e-8)
    assert f_q == pytest.approx(st_.f_q, rel=1e-8)


def test_test_matrix_shapes():
    with pytest.raises(IncompatibleFitsError):
        make_test_matrices(np.eye(3), np.eye(4))
    tm = make_test_matrices(np.eye(3), np.eye(3))
    with pytest.raises(DegenerateTestError):
        f_statistics(np.ones(3), tm)


def test_lf_matches_fits(problem):
    data = problem.data
    bank = problem.bank
    f1 = fit_explicit(data, SPEC.for_dims(4), bank=bank)
    f0 = fit_explicit(data, SPEC.for_dims(4).null(1), bank=bank)
    loss = LossSpec(0.5, 2.0)
    expected = np.sum(linex(loss, f1.fitted - f0.fitted)) / (f1.rss / data.n)
    assert lf_statistic(f1, f0, loss) == pytest.approx(expected, rel=1e-12)
    p2 = TestProblem(data, SPEC, 1, loss=loss, bank=bank)
    assert p2.statistics(data.y).lf == pytest.approx(expected, rel=1e-10)
    assert p2.statistics(data.y).glr == pytest.approx(
        glr_statistic(f0.rss, f1.rss, data.n), rel=1e-10)


def test_scaling_constants_from_definitions(problem):
    C, E = problem.tm.C, problem.tm.E
    sc = problem.constants
    off = C - np.diag(np.diag(C))
    assert sc.mu_n == pytest.approx(np.trace(C) / 2)
    assert sc.sigma_n2 == pytest.approx(0.5 * np.sum(off**2))
    EtE = E.T @ E
    offE = EtE - np.diag(np.diag(EtE))
    assert sc.nu_n == pytest.approx(np.trace(EtE))
    assert sc.delta_n2 == pytest.approx(np.sum(offE**2))
    assert sc.r_k == pytest.approx(2 * sc.mu_n / sc.sigma_n2)
    assert sc.s_k == pytest.approx(2 * sc.nu_n / sc.delta_n2)
    assert sc.M == 0.5


def test_asymptotic_pvalues(problem):
    st_ = problem.statistics(problem.data.y)
    sc, tm = problem.constants, problem.tm
    p = asymptotic_pvalues(st_, sc, tm)
    assert p["glr"] == pytest.approx(stats.chi2.sf(sc.r_k * st_.glr, sc.r_k * sc.mu_n))
    assert p["f_lambda"] == pytest.approx(stats.f.sf(st_.f_lambda, tm.trace_C, tm.trace_D))
    assert p["sb"] is None
    assert all(0 <= v <= 1 for k, v in p.items() if v is not None)


def test_report(problem):
    rep = problem.report()
    d = rep.to_dict()
    assert set(d["statistics"]) >= {"lambda_n", "q_n", "F_lambda", "F_q", "S_n"}
    assert d["null_form"] == "omit" and d["tested"] == [1]
    assert d["df"]["chi2_glr"] == pytest.approx(rep.constants.r_k * rep.constants.mu_n)


def test_batched_statistics_match_single(problem):
    rng = np.random.default_rng(0)
    Y = problem.data.y[:, None] + 0.1 * rng.standard_normal((problem.data.n, 3))
    batch = problem.statistics(Y)
    for k in range(3):
        single = problem.statistics(Y[:, k])
        for name in ("glr", "lf", "f_lambda", "f_q", "sb"):
            assert batch[name][k] == pytest.approx(single.get(name), rel=1e-12)


def test_identical_models_are_degenerate(problem):
    tm = make_test_matrices(problem.W, problem.W)
    with pytest.raises(DegenerateTestError):
        scaling_constants(tm)
    with pytest.raises(DegenerateTestError):
        f_statistics(problem.data.y, tm)


def test_sb_weights_riemann():
    x = np.array([0.3, 0.1, 0.7, 0.4])
    w = sb_weights(x, density=np.ones(4))
    np.testing.assert_allclose(w, [0.2, 0.0, 0.3, 0.1])
    # Riemann sum of m² against the uniform density
    x = np.sort(np.random.default_rng(1).uniform(size=2000))
    val = sb_statistic(x, np.sin(np.pi * x), density=np.ones_like(x))
    assert val == pytest.approx(0.5, abs=5e-3)
    with pytest.raises(ValueError):
        sb_weights(x)


def test_null_overlay(problem, tmp_path):
    from addinfer.bootstrap import BootstrapPlan, bootstrap_problem

    res = bootstrap_problem(problem, BootstrapPlan(B=50, seed=1, workers=1))
    path = tmp_path / "overlay.csv"
    write_null_overlay(path, problem, res, grid_points=20)
    lines = path.read_text().splitlines()
    assert lines[0] == "statistic,x,bootstrap_density,chi2_density,chi2_df"
    assert len(lines) == 1 + 40


# -- efficiency of the loss-function test ------------------------------------------

@pytest.mark.slow
def test_are_gaussian_matches_oracles():
    omega = 0.1
    val = are_lf_glr("gaussian", omega)
    assert val > 1
    closed = (4 * math.sqrt(2) - 8 / math.sqrt(3) + 1) ** (1 / (2 - 3 * omega))
    assert val == pytest.approx(closed, abs=1e-6)
    assert val == pytest.approx(are_ratio_oracle() ** (1 / (2 - 3 * omega)), abs=1e-4)


@pytest.mark.parametrize("kernel", ["epanechnikov", "uniform"])
def test_are_compact_kernels(kernel):
    lo = are_lf_glr(kernel, 0.01)
    hi = are_lf_glr(kernel, 0.15)
    assert 1 < lo < hi


def test_are_domain():
    with pytest.raises(ValueError):
        are_lf_glr("gaussian", 0.25)


def test_sb_edge_cases():
    rng = np.random.default_rng(4)
    x = rng.uniform(0.2, 0.9, size=300)
    assert sb_statistic(x, np.zeros_like(x), density_bandwidth=0.1) == 0.0
    width = np.ptp(x)
    assert sb_statistic(x, np.ones_like(x), density=np.full_like(x, 1 / width)) == pytest.approx(1.0)
    assert sb_statistic(x, np.ones_like(x), density=np.ones_like(x)) == pytest.approx(width)
    # a duplicated covariate value with the same component value adds a zero-width term
    m = np.sin(4 * x)
    base = sb_statistic(x, m, density=np.ones_like(x))
    dup = sb_statistic(np.append(x, x[10]), np.append(m, m[10]), density=np.ones(x.size + 1))
    assert dup == pytest.approx(base, abs=1e-15)


def test_matrix_identities(problem):
    tm = problem.tm
    y = problem.data.y
    np.testing.assert_allclose(tm.C, tm.C.T, atol=1e-9)
    bank = problem.bank
    f1 = fit_explicit(problem.data, SPEC.for_dims(4), bank=bank)
    f0 = fit_explicit(problem.data, SPEC.for_dims(4).null(1), bank=bank)
    assert np.max(np.abs(tm.E @ y - (f1.fitted - f0.fitted))) < 1e-10


@pytest.fixture(scope="module")
def selected_problem():
    from addinfer.bandwidth import select_bandwidths_cv

    # bandwidths chosen on the signal model; the test runs on the null draw with the same X
    h = select_bandwidths_cv(gen_sim_data(SimConfig(n=200, theta=1.0, seed=21)), ModelSpec(p=1)).h
    data = gen_sim_data(SimConfig(n=200, theta=0.0, seed=21))
    return TestProblem(data, ModelSpec(p=1, h=h), 1)


def test_quadratic_form_and_trace_D(selected_problem):
    tm = selected_problem.tm
    n = tm.D.shape[0]
    assert 0.7 < tm.trace_D / n < 1.0
    Y = np.random.default_rng(3).standard_normal((n, 100))
    q = np.einsum("ij,ij->j", Y, tm.C @ Y)
    assert np.all(q >= -1e-8 * np.sum(Y**2, axis=0))


def test_constants_track_each_other(selected_problem):
    sc = selected_problem.constants
    assert abs(sc.r_k / sc.s_k - 1) < 0.25
    assert abs(sc.mu_n / sc.nu_n - 1) < 0.25


def test_halving_tested_bandwidth_doubles_mu():
    data = gen_sim_data(SimConfig(n=200, theta=0.0, seed=22))
    h = np.array([0.2, 0.2, 0.3, 0.3])
    mu = []
    for hd in (0.2, 0.1):
        h[1] = hd
        mu.append(TestProblem(data, ModelSpec(p=1, h=tuple(h)), 1).constants.mu_n)
    assert 1.5 <= mu[1] / mu[0] <= 2.5


def test_pvalue_anchors(selected_problem):
    from dataclasses import replace

    pb = selected_problem
    st_ = pb.statistics(pb.data.y)
    sc, tm = pb.constants, pb.tm
    at_mean = replace(st_, glr=sc.mu_n, lf=sc.M * sc.nu_n)
    p = asymptotic_pvalues(at_mean, sc, tm)
    assert abs(p["glr"] - 0.5) < 0.1 and abs(p["lf"] - 0.5) < 0.1
    zero = replace(st_, glr=0.0, lf=0.0, f_lambda=0.0, f_q=0.0)
    p0 = asymptotic_pvalues(zero, sc, tm)
    assert p0["glr"] == p0["lf"] == p0["f_lambda"] == p0["f_q"] == 1.0


@settings(max_examples=40, deadline=None)
@given(s=st.floats(-1.5, 1.5), t=st.floats(0.05, 10), z=st.floats(-2, 2))
def test_linex_scale_equivariance(s, t, z):
    assert linex(LossSpec(s, t), z) / t == pytest.approx(linex(LossSpec(s, 1.0), z), rel=1e-12, abs=1e-300)


def test_linex_small_s_matches_quadratic():
    z = np.linspace(-1, 1, 11)
    np.testing.assert_allclose(linex(LossSpec(1e-7, 2.0), z), z**2, rtol=1e-6, atol=1e-15)
    assert linex(LossSpec(1.0, 1.0), 1.0) == pytest.approx(math.e - 2)
    assert linex(LossSpec(0.0, 2.0), 3.0) == pytest.approx(9.0)


@pytest.mark.slow
def test_null_means_match_chi2_at_n100():
    from addinfer.simulate import null_scaled_statistics, pilot_bandwidths

    out = null_scaled_statistics(n_sim=500, n=100, h=pilot_bandwidths(100, seed=0), seed=3)
    assert abs(out["glr_scaled"].mean() / out["df_glr"].mean() - 1) < 0.15
    assert abs(out["lf_scaled"].mean() / out["df_lf"].mean() - 1) < 0.15


@pytest.mark.slow
def test_f_mean_and_asymptotic_size_at_n200():
    from addinfer.simulate import null_scaled_statistics, pilot_bandwidths

    out = null_scaled_statistics(n_sim=300, n=200, h=pilot_bandwidths(200, seed=0), seed=4)
    assert abs(out["f_lambda"].mean() - 1) < 0.2
    p = stats.chi2.sf(out["glr_scaled"], out["df_glr"])
    assert 0.02 <= np.mean(p < 0.05) <= 0.10
