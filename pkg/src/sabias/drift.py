"""Drift families g(theta, x) with analytic first and second derivatives.

Each model evaluates on a single state payload (an :class:`Observation`).
Derivative conventions: ``jacobian[i, j] = d g_i / d theta_j`` and
``hessian[i, j, k] = d^2 g_i / d theta_j d theta_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import NoConvergence, ShapeMismatch, SingularJacobian, UnsafeModel
from .markov import FiniteChain, StationaryInfo, validate_chain

LINEAR, LOGISTIC, SOFTPLUS, TABULATED = 0, 1, 2, 3
SOFTPLUS_GUARD = 30.0


@dataclass(frozen=True)
class Observation:
    """Per-state payload. GLMs read ``w``/``y``; the linear family reads ``A``/``c``."""

    w: np.ndarray | None = None
    y: float | None = None
    A: np.ndarray | None = None
    c: np.ndarray | None = None


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _vec(theta, d):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != d:
        raise ShapeMismatch(f"theta has length {theta.shape[0]}, model dimension is {d}")
    return theta


class DriftModel:
    """Base class. Subclasses implement ``drift``, ``jacobian`` and ``hessian``."""

    family: str = ""
    code: int = -1

    def __init__(self, dim: int, mu_hint: float = 0.0, l1_hint: float | None = None):
        self.dim = int(dim)
        self.mu_hint = float(mu_hint)
        self.l1_hint = l1_hint

    def drift(self, theta, obs) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta, obs) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, theta, obs) -> np.ndarray:
        raise NotImplementedError

    def kernel_tables(self, observations: Sequence[Any]) -> dict | None:
        """Dense per-state arrays for the compiled simulation kernels."""
        return None

    def drift_batch(self, theta: np.ndarray, states: np.ndarray, observations) -> np.ndarray:
        """Drift for many (theta_r, state_r) pairs; rows of ``theta`` are replicas."""
        return np.stack([self.drift(theta[r], observations[s]) for r, s in enumerate(states)])

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class LinearModel(DriftModel):
    """g(theta, x) = A(x) theta + c(x)."""

    family = "linear"
    code = LINEAR

    def _check(self, obs):
        A = np.asarray(obs.A, dtype=float)
        c = np.asarray(obs.c, dtype=float).reshape(-1)
        if A.shape != (self.dim, self.dim) or c.shape != (self.dim,):
            raise ShapeMismatch(f"linear payload shapes {A.shape}, {c.shape} do not match d={self.dim}")
        return A, c

    def drift(self, theta, obs):
        A, c = self._check(obs)
        return A @ _vec(theta, self.dim) + c

    def jacobian(self, theta, obs):
        _vec(theta, self.dim)
        return self._check(obs)[0].copy()

    def hessian(self, theta, obs):
        _vec(theta, self.dim)
        self._check(obs)
        return np.zeros((self.dim,) * 3)

    def kernel_tables(self, observations):
        A = np.stack([self._check(o)[0] for o in observations])
        C = np.stack([self._check(o)[1] for o in observations])
        return dict(A=A, C=C)

    def drift_batch(self, theta, states, observations):
        t = self.kernel_tables(observations)
        return np.einsum("rij,rj->ri", t["A"][states], theta) + t["C"][states]


class _GLM(DriftModel):
    def __init__(self, dim, lam, mu_hint=None, l1_hint=None):
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        super().__init__(dim, lam if mu_hint is None else mu_hint, l1_hint)
        self.lam = float(lam)

    def _wy(self, obs):
        w = np.asarray(obs.w, dtype=float).reshape(-1)
        if w.shape[0] != self.dim or obs.y is None:
            raise ShapeMismatch(f"GLM payload needs w of length {self.dim} and a response y")
        return w, float(obs.y)

    def kernel_tables(self, observations):
        W = np.stack([self._wy(o)[0] for o in observations])
        Y = np.array([self._wy(o)[1] for o in observations])
        return dict(W=W, Y=Y)


class LogisticModel(_GLM):
    """L2-regularised logistic regression score: g = -w (sigma(w.theta) - y) - lam theta.

    The sign inside sigma is the one that makes g the negative gradient of
    the regularised negative log-likelihood; ``sigma(-z) = 1 - sigma(z)``
    relates it to the form ``-w (sigma(-z) - y)``, which corresponds to the
    relabelled response ``1 - y`` with the opposite drift direction.
    """

    family = "logistic"
    code = LOGISTIC

    def drift(self, theta, obs):
        theta = _vec(theta, self.dim)
        w, y = self._wy(obs)
        return -w * (sigmoid(w @ theta) - y) - self.lam * theta

    def jacobian(self, theta, obs):
        theta = _vec(theta, self.dim)
        w, _ = self._wy(obs)
        s = sigmoid(w @ theta)
        return -s * (1 - s) * np.outer(w, w) - self.lam * np.eye(self.dim)

    def hessian(self, theta, obs):
        theta = _vec(theta, self.dim)
        w, _ = self._wy(obs)
        s = sigmoid(w @ theta)
        s2 = s * (1 - s) * (1 - 2 * s)
        return -s2 * np.einsum("i,j,k->ijk", w, w, w)

    def drift_batch(self, theta, states, observations):
        t = self.kernel_tables(observations)
        W, Y = t["W"][states], t["Y"][states]
        z = np.einsum("ri,ri->r", W, theta)
        return -W * (sigmoid(z) - Y)[:, None] - self.lam * theta


class SoftPlusModel(_GLM):
    """Smooth ReLU regression: g = -(w (softplus_iota(w.theta) - y) + lam theta)."""

    family = "softplus"
    code = SOFTPLUS

    def __init__(self, dim, lam, iota=1.0, mu_hint=None, l1_hint=None):
        if iota <= 0:
            raise ValueError("iota must be positive")
        super().__init__(dim, lam, mu_hint, l1_hint)
        self.iota = float(iota)

    def _softplus(self, z):
        u = self.iota * np.asarray(z, dtype=float)
        big = u > SOFTPLUS_GUARD
        safe = np.where(big, 0.0, u)
        return np.where(big, u + np.log1p(np.exp(-np.abs(u))), np.log1p(np.exp(safe))) / self.iota

    def drift(self, theta, obs):
        theta = _vec(theta, self.dim)
        w, y = self._wy(obs)
        return -(w * (self._softplus(w @ theta) - y) + self.lam * theta)

    def jacobian(self, theta, obs):
        theta = _vec(theta, self.dim)
        w, _ = self._wy(obs)
        s = sigmoid(self.iota * (w @ theta))
        return -(s * np.outer(w, w) + self.lam * np.eye(self.dim))

    def hessian(self, theta, obs):
        theta = _vec(theta, self.dim)
        w, _ = self._wy(obs)
        s = sigmoid(self.iota * (w @ theta))
        return -self.iota * s * (1 - s) * np.einsum("i,j,k->ijk", w, w, w)

    def drift_batch(self, theta, states, observations):
        t = self.kernel_tables(observations)
        W, Y = t["W"][states], t["Y"][states]
        z = np.einsum("ri,ri->r", W, theta)
        return -(W * (self._softplus(z) - Y)[:, None] + self.lam * theta)


class TabulatedModel(DriftModel):
    """Arbitrary drift given by user callables ``f(theta, payload)``.

    Meant for counterexamples. Root finding refuses it unless either
    ``unsafe=True`` or a sampled monotonicity check passes.
    """

    family = "tabulated"
    code = TABULATED

    def __init__(self, dim, drift_fn: Callable, jacobian_fn: Callable, hessian_fn: Callable | None = None,
                 mu_hint=0.0, l1_hint=None, unsafe=False):
        super().__init__(dim, mu_hint, l1_hint)
        self._f, self._j, self._h = drift_fn, jacobian_fn, hessian_fn
        self.unsafe = unsafe

    def drift(self, theta, obs):
        return np.asarray(self._f(_vec(theta, self.dim), obs), dtype=float).reshape(self.dim)

    def jacobian(self, theta, obs):
        return np.asarray(self._j(_vec(theta, self.dim), obs), dtype=float).reshape(self.dim, self.dim)

    def hessian(self, theta, obs):
        if self._h is None:
            return np.zeros((self.dim,) * 3)
        return np.asarray(self._h(_vec(theta, self.dim), obs), dtype=float).reshape((self.dim,) * 3)


# module-level spellings


def eval_drift(model: DriftModel, theta, state) -> np.ndarray:
    return model.drift(theta, state)


def eval_jacobian(model: DriftModel, theta, state) -> np.ndarray:
    return model.jacobian(theta, state)


def eval_hessian(model: DriftModel, theta, state) -> np.ndarray:
    return model.hessian(theta, state)


def state_values(model: DriftModel, chain: FiniteChain, theta):
    """Drift, Jacobian and Hessian at every state: shapes (n,d), (n,d,d), (n,d,d,d)."""
    obs = chain.observations
    G = np.stack([model.drift(theta, o) for o in obs])
    J = np.stack([model.jacobian(theta, o) for o in obs])
    T = np.stack([model.hessian(theta, o) for o in obs])
    return G, J, T


def bar_g(model: DriftModel, chain: FiniteChain, info: StationaryInfo, theta) -> np.ndarray:
    G = np.stack([model.drift(theta, o) for o in chain.observations])
    return info.pi @ G


def bar_jacobian(model, chain, info, theta) -> np.ndarray:
    J = np.stack([model.jacobian(theta, o) for o in chain.observations])
    return np.tensordot(info.pi, J, axes=1)


def bar_hessian(model, chain, info, theta) -> np.ndarray:
    T = np.stack([model.hessian(theta, o) for o in chain.observations])
    return np.tensordot(info.pi, T, axes=1)


@dataclass
class AssumptionReport:
    mu_hat: float
    l1_hat: float
    g0_sup: float
    hessian_sup: float
    third_derivative_sup: float
    passed: bool
    messages: list[str] = field(default_factory=list)


def verify_assumptions(model: DriftModel, chain: FiniteChain, box_radius: float = 1.0,
                       n_samples: int = 200, info: StationaryInfo | None = None,
                       seed: int = 0) -> AssumptionReport:
    """Sampled estimates of the monotonicity and Lipschitz constants on a box.

    Never raises on a failed check; the outcome is in ``passed``/``messages``.
    """
    from .markov import stationary_info

    if box_radius <= 0:
        raise ValueError("box_radius must be positive")
    if info is None:
        info = stationary_info(chain)
    rng = np.random.default_rng(seed)
    d = model.dim
    obs = chain.observations
    mu_hat = np.inf
    l1_hat = 0.0
    hess_sup = 0.0
    third_sup = 0.0
    for _ in range(n_samples):
        a = rng.uniform(-box_radius, box_radius, d)
        b = rng.uniform(-box_radius, box_radius, d)
        diff = a - b
        nd = float(diff @ diff)
        if nd == 0.0:
            continue
        ga = np.stack([model.drift(a, o) for o in obs])
        gb = np.stack([model.drift(b, o) for o in obs])
        gbar_diff = info.pi @ (ga - gb)
        mu_hat = min(mu_hat, -float(diff @ gbar_diff) / nd)
        l1_hat = max(l1_hat, float(np.max(np.linalg.norm(ga - gb, axis=1))) / np.sqrt(nd))
        for o in obs:
            Ta = model.hessian(a, o)
            hess_sup = max(hess_sup, float(np.linalg.norm(Ta)))
            third_sup = max(third_sup, float(np.linalg.norm(Ta - model.hessian(b, o))) / np.sqrt(nd))
    g0_sup = float(max(np.linalg.norm(model.drift(np.zeros(d), o)) for o in obs))
    messages = []
    if not mu_hat > 0:
        messages.append(f"not strongly monotone on the box: mu_hat = {mu_hat:.6g}")
    if model.mu_hint > 0 and mu_hat < model.mu_hint - 1e-6:
        messages.append(f"mu_hat {mu_hat:.6g} below claimed mu {model.mu_hint:.6g}")
    if model.l1_hint is not None and l1_hat > model.l1_hint + 1e-6:
        messages.append(f"Lipschitz estimate {l1_hat:.6g} above claimed L1 {model.l1_hint:.6g}")
    return AssumptionReport(float(mu_hat), l1_hat, g0_sup, hess_sup, third_sup, not messages, messages)


def solve_theta_star(model: DriftModel, chain: FiniteChain, info: StationaryInfo,
                     theta0=None, tol: float = 1e-12, max_iter: int = 50,
                     return_iterations: bool = False):
    """Damped Newton on the stationary mean drift, halving the step until the residual drops."""
    if isinstance(model, TabulatedModel) and not model.unsafe:
        rep = verify_assumptions(model, chain, info=info)
        if not rep.passed:
            raise UnsafeModel("; ".join(rep.messages) + " (pass unsafe=True to bypass)")
    theta = np.zeros(model.dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    res = bar_g(model, chain, info, theta)
    rnorm = np.linalg.norm(res)
    it = 0
    while rnorm > tol:
        if it >= max_iter:
            raise NoConvergence(f"Newton stopped at residual {rnorm:.3g} after {max_iter} iterations")
        J = bar_jacobian(model, chain, info, theta)
        try:
            direction = np.linalg.solve(J, res)
        except np.linalg.LinAlgError as e:
            raise SingularJacobian(str(e)) from None
        step = 1.0
        while True:
            cand = theta - step * direction
            cres = bar_g(model, chain, info, cand)
            cnorm = np.linalg.norm(cres)
            if cnorm < rnorm or step < 1e-10:
                break
            step *= 0.5
        it += 1
        if not cnorm < rnorm:
            # stalled at rounding level
            if rnorm <= 1e-10:
                break
            raise NoConvergence(f"line search stalled at residual {rnorm:.3g}")
        theta, res, rnorm = cand, cres, cnorm
    return (theta, it) if return_iterations else theta


def augment_glm_chain(covariate_transition, covariates, theta_true) -> FiniteChain:
    """Covariate chain times Bernoulli responses, as one finite chain.

    State ``2*i + y`` carries covariate ``covariates[i]`` and response ``y``;
    moving to covariate j draws y' ~ Bernoulli(sigmoid(w_j . theta_true))
    independently of the past.
    """
    PW = np.asarray(covariate_transition, dtype=float)
    Wc = np.asarray(covariates, dtype=float)
    if Wc.ndim == 1:
        Wc = Wc[:, None]
    theta_true = np.asarray(theta_true, dtype=float).reshape(-1)
    p1 = sigmoid(Wc @ theta_true)
    resp = np.stack([1 - p1, p1], axis=1)  # (n, 2)
    n = PW.shape[0]
    P = (PW[:, None, :, None] * resp[None, None, :, :]) * np.ones((1, 2, 1, 1))
    P = P.reshape(2 * n, 2 * n)
    obs = [Observation(w=Wc[i].copy(), y=float(y)) for i in range(n) for y in (0, 1)]
    return validate_chain(P, obs)
