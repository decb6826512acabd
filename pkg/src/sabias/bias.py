"""Leading-order stationary bias of constant-stepsize SA on a finite chain.

With J = mean Jacobian at theta*, T = mean Hessian at theta*, G/H the drift
and its Poisson correction per state, and ``lyapunov_apply`` solving
``J S + S J^T = M``:

    b_m = -J^{-1} E_pi[g'(theta*, x) h(x)]
    b_n = 1/2 J^{-1} T : S(E_pi[g g^T] + C(theta*))
    b_c = 1/2 J^{-1} T : S(E_pi[g h^T + h g^T])

so that E[theta_inf] - theta* = alpha (b_m + b_n + b_c) + O(alpha^1.5).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .drift import DriftModel, bar_jacobian, solve_theta_star, state_values
from .errors import IllConditionedFit, InsufficientBurnIn, NotHurwitz, ShapeMismatch, SingularKroneckerSum
from .markov import FiniteChain, StationaryInfo, compute_h, mixing_time, stationary_info
from .noise import NoiseField, covariance_at


def check_hurwitz(J: np.ndarray) -> float:
    """Largest real part of the spectrum; raises ``NotHurwitz`` unless negative."""
    lead = float(np.max(np.linalg.eigvals(J).real))
    if not lead < 0:
        raise NotHurwitz(f"Jacobian has an eigenvalue with real part {lead:.6g} >= 0")
    return lead


def lyapunov_apply(J, M) -> np.ndarray:
    """Solve ``J S + S J^T = M`` for S (the inverse Kronecker sum applied to M)."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if J.shape[0] != J.shape[1] or M.shape != J.shape:
        raise ShapeMismatch(f"J {J.shape} and M {M.shape} must be square and equal")
    check_hurwitz(J)
    from scipy.linalg import solve_continuous_lyapunov

    S = solve_continuous_lyapunov(J, M)
    res = np.linalg.norm(J @ S + S @ J.T - M)
    if not np.all(np.isfinite(S)) or res > 1e-9 * (1 + np.linalg.norm(M)):
        raise SingularKroneckerSum(f"Lyapunov residual {res:.3g} too large")
    return S


def kronecker_solve(J, M) -> np.ndarray:
    """Dense solve of (J kron I + I kron J) vec(S) = vec(M); row-major vec."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = J.shape[0]
    I = np.eye(d)
    K = np.kron(J, I) + np.kron(I, J)
    try:
        return np.linalg.solve(K, M.reshape(-1)).reshape(d, d)
    except np.linalg.LinAlgError as e:
        raise SingularKroneckerSum(str(e)) from None


def hessian_contract(T, S) -> np.ndarray:
    """v_i = sum_jk T[i, j, k] S[j, k]."""
    T = np.asarray(T, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if T.ndim != 3 or T.shape[1:] != S.shape or T.shape[0] != S.shape[0]:
        raise ShapeMismatch(f"cannot contract tensor {T.shape} with matrix {S.shape}")
    return np.einsum("ijk,jk->i", T, S)


@dataclass
class BiasDecomposition:
    theta_star: np.ndarray
    b_m: np.ndarray
    b_n: np.ndarray
    b_c: np.ndarray
    b_total: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Jbar: np.ndarray
    Tbar: np.ndarray
    M_g: np.ndarray
    M_xi: np.ndarray
    M_gh: np.ndarray
    S_n: np.ndarray
    S_c: np.ndarray
    pi: np.ndarray

    def to_json(self) -> str:
        return json.dumps({k: np.asarray(v).tolist() for k, v in asdict(self).items()}, indent=2)


def compute_bias(model: DriftModel, chain: FiniteChain, info: StationaryInfo | None = None,
                 noise: NoiseField | None = None, theta_star=None) -> BiasDecomposition:
    """Exact finite-chain evaluation of the three bias components."""
    if info is None:
        info = stationary_info(chain)
    if theta_star is None:
        theta_star = solve_theta_star(model, chain, info)
    theta_star = np.asarray(theta_star, dtype=float).reshape(model.dim)
    d = model.dim
    pi = info.pi
    G, Js, Ts = state_values(model, chain, theta_star)
    H = compute_h(info, G)
    Jbar = np.tensordot(pi, Js, axes=1)
    Tbar = np.tensordot(pi, Ts, axes=1)
    check_hurwitz(Jbar)

    M_g = np.einsum("s,si,sj->ij", pi, G, G)
    M_xi = covariance_at(noise, theta_star) if noise is not None else np.zeros((d, d))
    gh = np.einsum("s,si,sj->ij", pi, G, H)
    M_gh = gh + gh.T
    S_n = lyapunov_apply(Jbar, M_g + M_xi)
    S_c = lyapunov_apply(Jbar, M_gh)

    jh = np.einsum("s,sij,sj->i", pi, Js, H)
    b_m = -np.linalg.solve(Jbar, jh)
    b_n = 0.5 * np.linalg.solve(Jbar, hessian_contract(Tbar, S_n))
    b_c = 0.5 * np.linalg.solve(Jbar, hessian_contract(Tbar, S_c))
    return BiasDecomposition(theta_star, b_m, b_n, b_c, b_m + b_n + b_c, G, H, Jbar, Tbar,
                             M_g, M_xi, M_gh, S_n, S_c, pi)


def local_monotonicity(model, chain, info, theta_star) -> float:
    """Smallest eigenvalue of -(J + J^T)/2 at theta*."""
    J = bar_jacobian(model, chain, info, theta_star)
    return float(np.linalg.eigvalsh(-(J + J.T) / 2).min())


def min_burn_in(alpha: float, tau_alpha: int, mu: float) -> int:
    """tau_alpha + log(1 / (alpha tau_alpha)) / (alpha mu), rounded up, at least tau_alpha."""
    extra = np.log(1.0 / (alpha * tau_alpha)) / (alpha * mu)
    return int(np.ceil(tau_alpha + max(extra, 0.0)))


@dataclass
class SlopeFit:
    slope: np.ndarray
    curvature: np.ndarray
    stderr: np.ndarray
    alphas: np.ndarray
    residual_means: np.ndarray      # (m, d): pooled E[theta_bar] - theta*
    residual_stderr: np.ndarray     # (m, d)
    per_replica_slopes: np.ndarray  # (R, d)
    linear_only_slope: np.ndarray
    ensembles: list


def fit_coefficients(alphas, weights=None, nuisance_power: float = 2.0) -> np.ndarray:
    """Rows give the alpha and alpha^p coefficients as linear maps of the residuals."""
    a = np.asarray(alphas, dtype=float)
    X = np.stack([a, a ** nuisance_power], axis=1)
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    XtW = X.T * w
    N = XtW @ X
    if np.linalg.cond(N) > 1e12:
        raise IllConditionedFit(f"normal matrix condition number {np.linalg.cond(N):.3g}")
    return np.linalg.solve(N, XtW)


def mc_bias_slope(model, chain, noise, alpha_grid, cfg, info=None, theta_star=None,
                  threads: int = 1, shared_noise: bool = False, check_burn_in: bool = True,
                  nuisance_power: float = 2.0, checkpoints=None, use_numba=None) -> SlopeFit:
    """Monte-Carlo estimate of the O(alpha) bias coefficient.

    For every stepsize the ensemble's per-replica tail averages give
    residuals ``theta_bar - theta*``; a weighted least-squares fit on the
    design (alpha, alpha^p) is applied replica by replica and the slopes
    are averaged, so the standard error is valid even though all grid
    points share one data stream. Weights are inverse residual variances.
    ``cfg.alpha`` is ignored; each grid point gets its own.

    ``nuisance_power`` defaults to 2: on smooth finite-state problems the
    stationary mean is analytic in alpha, and the alpha^1.5 term (the
    generic remainder bound) over-corrects the slope. Pass 1.5 to use it.
    """
    from .engine import run_ensemble

    alphas = np.asarray(sorted(alpha_grid), dtype=float)
    if len(alphas) < 3:
        raise ValueError("alpha_grid needs at least three stepsizes")
    if info is None:
        info = stationary_info(chain)
    if theta_star is None:
        theta_star = solve_theta_star(model, chain, info)
    theta_star = np.asarray(theta_star, dtype=float)
    if check_burn_in:
        mu = local_monotonicity(model, chain, info, theta_star)
        for a in alphas:
            tau = mixing_time(chain, min(a, 0.5), pi=info.pi)
            need = min_burn_in(a, tau, mu)
            if cfg.burn_in < need:
                raise InsufficientBurnIn(f"burn-in {cfg.burn_in} < {need} required at alpha={a}")
    ens = []
    for i, a in enumerate(alphas):
        c = cfg.with_alpha(float(a), noise_stream=0 if shared_noise else i)
        ens.append(run_ensemble(c, model, chain, noise, checkpoints=[] if checkpoints is None else checkpoints,
                                theta_star=theta_star,
                                info=info, threads=threads, use_numba=use_numba))
    Y = np.stack([e.tail_averages - theta_star for e in ens])  # (m, R, d)
    R = Y.shape[1]
    var = Y.var(axis=1, ddof=1).sum(axis=1)
    weights = 1.0 / np.maximum(var, np.finfo(float).tiny)
    coef = fit_coefficients(alphas, weights, nuisance_power)
    per_rep = np.einsum("m,mrd->rd", coef[0], Y)
    curv = np.einsum("m,mrd->rd", coef[1], Y).mean(axis=0)
    slope = per_rep.mean(axis=0)
    stderr = per_rep.std(axis=0, ddof=1) / np.sqrt(R)
    ybar = Y.mean(axis=1)
    lin = (alphas @ ybar) / (alphas @ alphas)
    return SlopeFit(slope, curv, stderr, alphas, ybar, Y.std(axis=1, ddof=1) / np.sqrt(R),
                    per_rep, lin, ens)
