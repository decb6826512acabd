"""Zero-mean Gaussian random fields xi(theta) driven by caller-supplied draws.

The standard normal vector is passed in rather than drawn here, so two
coupled trajectories can feed the same draw to both copies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NONE, GAUSSIAN_CONSTANT, GAUSSIAN_SCALED = 0, 1, 2


def _sym_sqrt(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    if vals.min() < -1e-12 * max(1.0, abs(vals).max()):
        raise ValueError("covariance must be positive semi-definite")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass(frozen=True)
class NoiseField:
    """``xi(theta) = scale(theta) * sqrt(Sigma0) @ z`` with ``scale = a0 + a1 tanh(|theta - theta_ref|)``.

    The constant variant is ``a0 = 1, a1 = 0``; the ``none`` variant is
    identically zero.
    """

    variant: int
    base_covariance: np.ndarray
    sqrt_covariance: np.ndarray
    a0: float = 1.0
    a1: float = 0.0
    theta_ref: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.base_covariance.shape[0]

    @classmethod
    def none(cls, dim: int) -> "NoiseField":
        Z = np.zeros((dim, dim))
        return cls(NONE, Z, Z, 0.0, 0.0)

    @classmethod
    def gaussian(cls, covariance) -> "NoiseField":
        S = np.atleast_2d(np.asarray(covariance, dtype=float))
        S = 0.5 * (S + S.T)
        return cls(GAUSSIAN_CONSTANT, S, _sym_sqrt(S), 1.0, 0.0)

    @classmethod
    def gaussian_scaled(cls, covariance, a0: float, a1: float, theta_ref=None) -> "NoiseField":
        if a0 < 0 or a1 < 0:
            raise ValueError("a0 and a1 must be non-negative")
        S = np.atleast_2d(np.asarray(covariance, dtype=float))
        S = 0.5 * (S + S.T)
        ref = np.zeros(S.shape[0]) if theta_ref is None else np.asarray(theta_ref, dtype=float).reshape(-1)
        return cls(GAUSSIAN_SCALED, S, _sym_sqrt(S), float(a0), float(a1), ref)

    def scale(self, theta) -> float:
        if self.variant == NONE:
            return 0.0
        if self.variant == GAUSSIAN_CONSTANT:
            return 1.0
        return self.a0 + self.a1 * np.tanh(np.linalg.norm(np.asarray(theta, dtype=float) - self.theta_ref))

    def kernel_params(self) -> tuple[int, np.ndarray, float, float, np.ndarray]:
        ref = self.theta_ref if self.theta_ref is not None else np.zeros(self.dim)
        return self.variant, self.sqrt_covariance, self.a0, self.a1, ref


def sample_noise(field: NoiseField, theta, base_draw) -> np.ndarray:
    if field.variant == NONE:
        return np.zeros(field.dim)
    z = np.asarray(base_draw, dtype=float).reshape(field.dim)
    return field.scale(theta) * (field.sqrt_covariance @ z)


def covariance_at(field: NoiseField, theta=None) -> np.ndarray:
    if field.variant == NONE:
        return np.zeros((field.dim, field.dim))
    if field.variant == GAUSSIAN_CONSTANT:
        return field.base_covariance.copy()
    return field.scale(theta) ** 2 * field.base_covariance
