"""Tail averaging, Richardson-Romberg extrapolation and CLT diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .engine import EnsembleStats, SAConfig, pooled_batch_covariance, run_ensemble
from .errors import SingularSigma, TooFewReplicas


def rr_extrapolate(bar_alpha, bar_2alpha) -> np.ndarray:
    """2 * bar_alpha - bar_2alpha; works row-wise on replica arrays."""
    return 2.0 * np.asarray(bar_alpha, dtype=float) - np.asarray(bar_2alpha, dtype=float)


@dataclass
class RRResult:
    theta_bar_alpha: np.ndarray     # (R, d)
    theta_bar_2alpha: np.ndarray    # (R, d)
    theta_tilde: np.ndarray         # (R, d)
    theta_star: np.ndarray
    window: tuple[int, int]
    sigma_rr: np.ndarray | None = None

    def pooled(self, which: str) -> np.ndarray:
        return getattr(self, which).mean(axis=0)

    def cov(self, which: str) -> np.ndarray:
        x = getattr(self, which)
        return np.atleast_2d(np.cov(x.T, ddof=1))

    def bias(self, which: str) -> np.ndarray:
        return self.pooled(which) - self.theta_star

    @property
    def improvement_ratio(self) -> float:
        """|bias(RR)| / |bias(PR at alpha)|."""
        return float(np.linalg.norm(self.bias("theta_tilde")) / np.linalg.norm(self.bias("theta_bar_alpha")))


def run_rr(cfg: SAConfig, model, chain, noise, theta_star=None, info=None, threads: int = 1,
           use_numba=None) -> tuple[RRResult, EnsembleStats, EnsembleStats]:
    """Run stepsizes alpha and 2 alpha on the same data stream (separate noise streams)."""
    e1 = run_ensemble(cfg.with_alpha(cfg.alpha, noise_stream=0), model, chain, noise, checkpoints=[],
                      theta_star=theta_star, info=info, threads=threads, use_numba=use_numba)
    e2 = run_ensemble(cfg.with_alpha(2 * cfg.alpha, noise_stream=1), model, chain, noise, checkpoints=[],
                      theta_star=e1.theta_star, info=info, threads=threads, use_numba=use_numba)
    tilde = rr_extrapolate(e1.tail_averages, e2.tail_averages)
    sigma = None
    if e1.batch_means is not None:
        sigma = pooled_batch_covariance(rr_extrapolate(e1.batch_means, e2.batch_means), e1.window)
    res = RRResult(e1.tail_averages, e2.tail_averages, tilde, e1.theta_star, e1.window, sigma)
    return res, e1, e2


class MSEDecomposition(NamedTuple):
    bias_sq: float
    variance: float
    total: float


def mse_decomposition(tail_averages, theta_star, min_replicas: int = 30) -> MSEDecomposition:
    """Squared bias of the pooled mean, trace of the across-replica covariance, and mean squared error."""
    x = np.asarray(tail_averages, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < min_replicas:
        raise TooFewReplicas(f"{x.shape[0]} replicas < {min_replicas}")
    e = x - np.asarray(theta_star, dtype=float).reshape(1, -1)
    m = e.mean(axis=0)
    var = float(np.trace(np.atleast_2d(np.cov(x.T, ddof=1))))
    return MSEDecomposition(float(m @ m), var, float(np.mean((e * e).sum(axis=1))))


@dataclass
class CLTReport:
    qq_corr: np.ndarray
    cover90: np.ndarray
    cover95: np.ndarray
    standardized: np.ndarray
    reference_mean: np.ndarray
    pooled_reference: bool
    threshold: float = 0.98

    @property
    def normal(self) -> np.ndarray:
        return self.qq_corr >= self.threshold


def _inv_sqrt(S):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    if vals.min() <= 1e-14 * max(1.0, abs(vals).max()):
        raise SingularSigma(f"covariance estimate has eigenvalue {vals.min():.3g}")
    return (vecs / np.sqrt(vals)) @ vecs.T


def qq_correlation(z) -> float:
    """Correlation between sorted values and standard normal quantiles (Blom positions)."""
    z = np.sort(np.asarray(z, dtype=float))
    m = z.shape[0]
    q = stats.norm.ppf((np.arange(1, m + 1) - 0.375) / (m + 0.25))
    return float(np.corrcoef(z, q)[0, 1])


def clt_diagnostic(tail_averages, reference_mean, sigma_hat, n_window: int,
                   threshold: float = 0.98) -> CLTReport:
    """Standardise sqrt(n) Sigma^{-1/2} (theta_bar - ref) per replica and test normality.

    ``reference_mean=None`` centres at the pooled replica mean.
    """
    x = np.asarray(tail_averages, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    pooled = reference_mean is None
    ref = x.mean(axis=0) if pooled else np.asarray(reference_mean, dtype=float).reshape(-1)
    W = _inv_sqrt(sigma_hat)
    z = np.sqrt(n_window) * (x - ref) @ W.T
    qq = np.array([qq_correlation(z[:, j]) for j in range(z.shape[1])])
    a = np.abs(z)
    c90 = (a <= stats.norm.ppf(0.95)).mean(axis=0)
    c95 = (a <= stats.norm.ppf(0.975)).mean(axis=0)
    return CLTReport(qq, c90, c95, z, ref, pooled, threshold)
