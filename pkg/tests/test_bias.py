import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sabias import fixtures
from sabias.bias import (
    check_hurwitz,
    compute_bias,
    fit_coefficients,
    hessian_contract,
    kronecker_solve,
    local_monotonicity,
    lyapunov_apply,
    mc_bias_slope,
    min_burn_in,
)
from sabias.drift import LogisticModel, Observation, augment_glm_chain, solve_theta_star
from sabias.engine import SAConfig
from sabias.errors import IllConditionedFit, InsufficientBurnIn, NotHurwitz, ShapeMismatch
from sabias.markov import stationary_info, validate_chain
from sabias.noise import NoiseField


def random_hurwitz(rng, d):
    A = rng.normal(size=(d, d))
    shift = np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 2.0)
    return A - shift * np.eye(d)


def test_lyapunov_identity_example():
    S = lyapunov_apply(-np.eye(3), -2 * np.eye(3))
    np.testing.assert_allclose(S, np.eye(3), atol=1e-14)


def test_lyapunov_scalar():
    np.testing.assert_allclose(lyapunov_apply([[-0.5]], [[3.0]]), [[-3.0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_lyapunov_matches_kronecker(d, seed):
    rng = np.random.default_rng(seed)
    J = random_hurwitz(rng, d)
    M = rng.normal(size=(d, d))
    M = M + M.T
    S = lyapunov_apply(J, M)
    K = kronecker_solve(J, M)
    assert np.linalg.norm(S - K) <= 1e-9 * np.linalg.norm(K)
    np.testing.assert_allclose(S, S.T, atol=1e-10 * (1 + np.abs(S).max()))


def test_lyapunov_rejects_unstable_and_shapes():
    with pytest.raises(NotHurwitz):
        lyapunov_apply(np.eye(2), np.eye(2))
    with pytest.raises(NotHurwitz):
        check_hurwitz(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    with pytest.raises(ShapeMismatch):
        lyapunov_apply(-np.eye(2), np.eye(3))
    with pytest.raises(ShapeMismatch):
        hessian_contract(np.zeros((2, 2, 2)), np.eye(3))


def test_linear_model_has_no_noise_or_compound_term():
    P = np.array([[0.7, 0.3, 0.0], [0.1, 0.6, 0.3], [0.4, 0.0, 0.6]])
    A = np.array([[[-1.0, 0.2], [0.0, -0.5]], [[-2.0, 0.0], [0.3, -1.0]], [[-0.5, -0.1], [0.1, -0.8]]])
    c = np.array([[1.0, 0.0], [-1.0, 2.0], [0.5, 0.5]])
    fx = fixtures.linear_markov(A, c, P)
    dec = compute_bias(fx.model, fx.chain, noise=NoiseField.gaussian(np.eye(2)))
    assert np.abs(dec.b_n).max() <= 1e-12
    assert np.abs(dec.b_c).max() <= 1e-12
    assert np.abs(dec.b_m).max() > 1e-3


def test_iid_chain_has_no_markov_or_compound_term():
    pi = np.array([0.2, 0.5, 0.3])
    ch = augment_glm_chain(np.tile(pi, (3, 1)), np.array([-1.0, 1.0, 6.0]), [0.5])
    dec = compute_bias(LogisticModel(1, 0.2), ch, noise=NoiseField.gaussian([[0.01]]))
    assert np.abs(dec.b_m).max() <= 1e-12
    assert np.abs(dec.b_c).max() <= 1e-12
    assert np.abs(dec.b_n).max() > 1e-3


def test_additive_markov_noise_linear_has_no_bias():
    P = np.array([[0.9, 0.1], [0.3, 0.7]])
    A = np.tile(-np.eye(2), (2, 1, 1))
    c = np.array([[1.0, -1.0], [2.0, 0.5]])
    fx = fixtures.linear_markov(A, c, P)
    dec = compute_bias(fx.model, fx.chain)
    assert np.abs(dec.b_total).max() <= 1e-12


def test_scalar_hand_formula(canonical, canonical_info):
    dec = compute_bias(canonical.model, canonical.chain, canonical_info, canonical.noise)
    pi = canonical_info.pi
    j = dec.Jbar[0, 0]
    t = dec.Tbar[0, 0, 0]
    G, H = dec.G[:, 0], dec.H[:, 0]
    Js = np.array([canonical.model.jacobian(dec.theta_star, o)[0, 0] for o in canonical.chain.observations])
    m_n = pi @ G ** 2 + 0.01
    m_c = 2 * pi @ (G * H)
    np.testing.assert_allclose(dec.b_m, [-(pi @ (Js * H)) / j], rtol=1e-12)
    np.testing.assert_allclose(dec.b_n, [t * m_n / (4 * j * j)], rtol=1e-12)
    np.testing.assert_allclose(dec.b_c, [t * m_c / (4 * j * j)], rtol=1e-12)
    np.testing.assert_allclose(dec.b_total, dec.b_m + dec.b_n + dec.b_c, rtol=1e-14)


def test_canonical_components_nonzero(canonical):
    dec = compute_bias(canonical.model, canonical.chain, noise=canonical.noise)
    for v in (dec.b_m, dec.b_n, dec.b_c):
        assert np.abs(v).max() > 1e-3


def test_compound_term_sensitivity(canonical):
    base = compute_bias(canonical.model, canonical.chain, noise=canonical.noise).b_c
    slow = fixtures.canonical(rho=0.8)
    other_lam = fixtures.canonical(lam=0.4)
    b_slow = compute_bias(slow.model, slow.chain, noise=slow.noise).b_c
    b_lam = compute_bias(other_lam.model, other_lam.chain, noise=other_lam.noise).b_c
    assert abs(b_slow[0] - base[0]) > 1e-3
    assert abs(b_lam[0] - base[0]) > 1e-4


def test_state_permutation_invariance():
    rng = np.random.default_rng(5)
    PW = rng.random((3, 3)) + 0.1
    PW /= PW.sum(axis=1, keepdims=True)
    W = np.array([[1.0, 0.0], [0.5, 1.0], [-1.0, 2.0]])
    ch = augment_glm_chain(PW, W, [0.3, -0.4])
    m = LogisticModel(2, 0.1)
    noise = NoiseField.gaussian(np.diag([0.02, 0.01]))
    dec = compute_bias(m, ch, noise=noise)
    perm = rng.permutation(ch.n_states)
    P2 = ch.transition[np.ix_(perm, perm)]
    ch2 = validate_chain(P2, [ch.observations[i] for i in perm])
    dec2 = compute_bias(m, ch2, noise=noise)
    np.testing.assert_allclose(dec2.b_total, dec.b_total, atol=1e-12)
    np.testing.assert_allclose(dec2.b_c, dec.b_c, atol=1e-12)


def test_bias_json_roundtrip(canonical):
    import json

    dec = compute_bias(canonical.model, canonical.chain, noise=canonical.noise)
    out = json.loads(dec.to_json())
    np.testing.assert_allclose(out["b_total"], dec.b_total)


def test_local_monotonicity_and_burn_in(canonical, canonical_info):
    ts = solve_theta_star(canonical.model, canonical.chain, canonical_info)
    mu = local_monotonicity(canonical.model, canonical.chain, canonical_info, ts)
    assert mu > 0.2
    assert min_burn_in(0.1, 5, 1.0) == int(np.ceil(5 + np.log(2) / 0.1))
    assert min_burn_in(0.5, 4, 1.0) == 4


def test_fit_coefficients_recovers_polynomial():
    a = np.array([0.02, 0.04, 0.08, 0.16])
    C = fit_coefficients(a)
    y = 0.7 * a - 3.0 * a ** 2
    np.testing.assert_allclose(C @ y, [0.7, -3.0], rtol=1e-10)
    C15 = fit_coefficients(a, nuisance_power=1.5)
    np.testing.assert_allclose(C15 @ (0.7 * a + 2 * a ** 1.5), [0.7, 2.0], rtol=1e-10)
    with pytest.raises(IllConditionedFit):
        fit_coefficients([0.1, 0.1, 0.1])


def test_mc_slope_zero_for_unbiased_linear():
    P = np.full((2, 2), 0.5)
    fx = fixtures.linear_markov(np.tile(-np.eye(1), (2, 1, 1)), np.array([[1.0], [-1.0]]), P)
    noise = NoiseField.gaussian([[0.2]])
    cfg = SAConfig(alpha=0.05, horizon=20000, burn_in=2000, replicas=48, seed=21)
    fit = mc_bias_slope(fx.model, fx.chain, noise, [0.05, 0.1, 0.2], cfg)
    assert abs(fit.slope[0]) <= 2.5 * fit.stderr[0]


def test_mc_slope_burn_in_check(canonical):
    cfg = SAConfig(alpha=0.02, horizon=2000, burn_in=10, replicas=2)
    with pytest.raises(InsufficientBurnIn):
        mc_bias_slope(canonical.model, canonical.chain, canonical.noise, [0.02, 0.04, 0.08], cfg)
    with pytest.raises(ValueError):
        mc_bias_slope(canonical.model, canonical.chain, canonical.noise, [0.02, 0.04], cfg)
