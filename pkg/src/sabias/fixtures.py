"""Ready-made experiment fixtures.

The canonical fixture is a 3-state covariate chain ``P_W = rho I + (1 - rho) 1 pi_W^T``
(second eigenvalue ``rho``) augmented with Bernoulli responses, a scalar
L2-regularised logistic model and small constant Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drift import LinearModel, LogisticModel, Observation, augment_glm_chain
from .markov import FiniteChain, validate_chain
from .noise import NoiseField

CANONICAL_COVARIATES = (-1.0, 1.0, 6.0)
CANONICAL_THETA_TRUE = 0.5
CANONICAL_LAMBDA = 0.2
CANONICAL_NOISE_VAR = 0.01
CANONICAL_RHO = 0.3


def lazy_covariate_chain(rho: float, pi_w) -> np.ndarray:
    pi_w = np.asarray(pi_w, dtype=float)
    n = pi_w.shape[0]
    return rho * np.eye(n) + (1 - rho) * np.tile(pi_w, (n, 1))


@dataclass(frozen=True)
class Fixture:
    chain: FiniteChain
    model: object
    noise: NoiseField
    covariate_transition: np.ndarray | None = None


def canonical(rho: float = CANONICAL_RHO, lam: float = CANONICAL_LAMBDA,
              noise_var: float = CANONICAL_NOISE_VAR, covariates=CANONICAL_COVARIATES,
              theta_true: float = CANONICAL_THETA_TRUE, pi_w=(1 / 3, 1 / 3, 1 / 3)) -> Fixture:
    PW = lazy_covariate_chain(rho, pi_w)
    chain = augment_glm_chain(PW, np.asarray(covariates, dtype=float), [theta_true])
    return Fixture(chain, LogisticModel(1, lam), NoiseField.gaussian([[noise_var]]), PW)


def linear_markov(A_states, c_states, transition) -> Fixture:
    """Linear drift ``A(x) theta + c(x)`` with per-state payloads on the given chain."""
    A_states = np.asarray(A_states, dtype=float)
    c_states = np.asarray(c_states, dtype=float)
    obs = [Observation(A=A_states[i], c=c_states[i]) for i in range(len(A_states))]
    chain = validate_chain(transition, obs)
    d = A_states.shape[1]
    return Fixture(chain, LinearModel(d), NoiseField.none(d))
