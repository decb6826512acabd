"""Constant-stepsize stochastic approximation with Markovian data: simulation,
closed-form leading bias on finite chains, and Monte-Carlo diagnostics."""

__version__ = "0.1.0"

from .errors import SABiasError
from .markov import FiniteChain, StationaryInfo, validate_chain, stationary_distribution, time_reversal, \
    mixing_time, stationary_info, compute_h
from .drift import LinearModel, LogisticModel, SoftPlusModel, TabulatedModel, Observation, bar_g, \
    solve_theta_star, verify_assumptions, augment_glm_chain
from .noise import NoiseField, sample_noise, covariance_at
from .engine import SAConfig, EnsembleStats, CoupledLog, step, run_ensemble, run_coupled, tail_average, \
    batch_means_covariance
from .bias import BiasDecomposition, lyapunov_apply, hessian_contract, compute_bias, mc_bias_slope
from .inference import rr_extrapolate, run_rr, mse_decomposition, clt_diagnostic
