import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sabias.engine import SAConfig
from sabias.errors import SingularSigma, TooFewReplicas
from sabias.inference import clt_diagnostic, mse_decomposition, qq_correlation, rr_extrapolate, run_rr


def test_rr_cancels_linear_bias():
    ts = np.array([1.0, -2.0])
    b = np.array([0.3, 0.7])
    a = 0.05
    np.testing.assert_allclose(rr_extrapolate(ts + a * b, ts + 2 * a * b), ts, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3),
       st.lists(st.floats(-100, 100), min_size=3, max_size=3),
       st.floats(-5, 5), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_rr_affine_equivariance(x, y, s, shift):
    x, y, shift = np.array(x), np.array(y), np.array(shift)
    lhs = rr_extrapolate(s * x + shift, s * y + shift)
    np.testing.assert_allclose(lhs, s * rr_extrapolate(x, y) + shift, atol=1e-9)


def test_mse_deterministic_replicas():
    e = np.array([0.3, -0.4])
    reps = np.tile(np.array([1.0, 1.0]) + e, (40, 1))
    out = mse_decomposition(reps, [1.0, 1.0])
    assert out.bias_sq == pytest.approx(0.25)
    assert out.variance == pytest.approx(0.0, abs=1e-28)
    assert out.total == pytest.approx(0.25)


def test_mse_sampling_variance():
    rng = np.random.default_rng(0)
    S = np.diag([2.0, 0.5])
    m = 100
    reps = rng.multivariate_normal([0, 0], S / m, size=4000)
    out = mse_decomposition(reps, [0.0, 0.0])
    assert out.variance == pytest.approx(2.5 / m, rel=0.05)
    assert out.bias_sq < 1e-4


def test_mse_too_few():
    with pytest.raises(TooFewReplicas):
        mse_decomposition(np.zeros((10, 1)), [0.0])


def test_qq_correlation_controls():
    rng = np.random.default_rng(4)
    assert qq_correlation(rng.standard_normal(500)) >= 0.99
    assert qq_correlation(rng.standard_t(2, 500)) < 0.98


def test_clt_exact_gaussian_tail_averages():
    rng = np.random.default_rng(12)
    n = 10000
    Sigma = np.array([[1.0, 0.3], [0.3, 0.5]])
    x = rng.multivariate_normal([0.5, -0.5], Sigma / n, size=500)
    rep = clt_diagnostic(x, [0.5, -0.5], Sigma, n)
    assert np.all(rep.qq_corr >= 0.98)
    assert np.all(rep.normal)
    assert np.all((rep.cover95 >= 0.92) & (rep.cover95 <= 0.98))
    assert np.all((rep.cover90 >= 0.86) & (rep.cover90 <= 0.94))
    pooled = clt_diagnostic(x, None, Sigma, n)
    assert pooled.pooled_reference
    np.testing.assert_allclose(pooled.reference_mean, x.mean(axis=0))


def test_clt_flags_heavy_tails():
    rng = np.random.default_rng(13)
    x = rng.standard_t(2, size=(500, 1))
    rep = clt_diagnostic(x, None, np.eye(1), 1)
    assert not rep.normal[0]


def test_clt_singular_sigma():
    with pytest.raises(SingularSigma):
        clt_diagnostic(np.zeros((50, 2)), None, np.zeros((2, 2)), 10)


def test_run_rr_shares_data_stream(canonical):
    cfg = SAConfig(alpha=0.04, horizon=6000, burn_in=2000, replicas=6, seed=31, batch_count=8)
    rr, e1, e2 = run_rr(cfg, canonical.model, canonical.chain, canonical.noise)
    np.testing.assert_allclose(rr.theta_tilde, 2 * e1.tail_averages - e2.tail_averages)
    assert rr.sigma_rr.shape == (1, 1)
    assert rr.sigma_rr[0, 0] > 0
    assert rr.cov("theta_tilde").shape == (1, 1)
    np.testing.assert_allclose(rr.bias("theta_bar_alpha"), e1.tail_mean - rr.theta_star)
