"""Inner simulation loops.

Two interchangeable backends advance a block of replicas through a chunk of
pre-drawn randomness: a numba-compiled loop and a numpy loop vectorised over
replicas. Setting ``SABIAS_DISABLE_NUMBA=1`` (or running without numba)
selects the numpy path. Both consume identical inputs, so they agree up to
libm rounding.

Kernel contract, per replica r and local step t:

    traj[r, t] = theta                      # iterate before the step
    theta      = proj(theta + alpha * (g(theta, x) + xi(theta, z[r, t])))
    x          = next_state(x, u[r, t])     # inverse CDF on the transition row

The return value is ``(-1, -1)`` on success or ``(replica, step)`` of the
first non-finite iterate.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .drift import LINEAR, LOGISTIC, SOFTPLUS, SOFTPLUS_GUARD, sigmoid
from .noise import GAUSSIAN_CONSTANT, GAUSSIAN_SCALED, NONE

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    flag = os.environ.get("SABIAS_DISABLE_NUMBA", "").strip().lower()
    return HAVE_NUMBA and flag not in ("1", "true", "yes", "on")


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _drift_nb(theta, s, code, W, Y, A, C, lam, iota, out):
        d = theta.shape[0]
        if code == LINEAR:
            for i in range(d):
                acc = C[s, i]
                for j in range(d):
                    acc += A[s, i, j] * theta[j]
                out[i] = acc
        else:
            z = 0.0
            for j in range(d):
                z += W[s, j] * theta[j]
            if code == LOGISTIC:
                if z >= 0:
                    f = 1.0 / (1.0 + math.exp(-z))
                else:
                    e = math.exp(z)
                    f = e / (1.0 + e)
            else:
                u = iota * z
                if u > SOFTPLUS_GUARD:
                    f = (u + math.log1p(math.exp(-u))) / iota
                else:
                    f = math.log1p(math.exp(u)) / iota
            r = f - Y[s]
            for i in range(d):
                out[i] = -W[s, i] * r - lam * theta[i]

    @numba.njit(cache=True, nogil=True)
    def _chunk_nb(theta, state, u, z, traj, alpha, beta, cum,
                  code, W, Y, A, C, lam, iota,
                  ncode, L, a0, a1, ref):
        R, c = u.shape
        d = theta.shape[1]
        n = cum.shape[1]
        g = np.empty(d)
        xi = np.empty(d)
        for r in range(R):
            th = theta[r]
            s = state[r]
            for t in range(c):
                for i in range(d):
                    traj[r, t, i] = th[i]
                _drift_nb(th, s, code, W, Y, A, C, lam, iota, g)
                if ncode == NONE:
                    for i in range(d):
                        xi[i] = 0.0
                else:
                    sc = 1.0
                    if ncode == GAUSSIAN_SCALED:
                        nn = 0.0
                        for i in range(d):
                            nn += (th[i] - ref[i]) ** 2
                        sc = a0 + a1 * math.tanh(math.sqrt(nn))
                    for i in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc += L[i, j] * z[r, t, j]
                        xi[i] = sc * acc
                nrm = 0.0
                for i in range(d):
                    th[i] = th[i] + alpha * (g[i] + xi[i])
                    nrm += th[i] * th[i]
                nrm = math.sqrt(nrm)
                if nrm > beta:
                    f = beta / nrm
                    for i in range(d):
                        th[i] *= f
                if not math.isfinite(nrm):
                    state[r] = s
                    return r, t
                # next state: number of cumulative entries <= u, clipped
                uu = u[r, t]
                k = 0
                while k < n - 1 and cum[s, k] <= uu:
                    k += 1
                s = k
            state[r] = s
        return -1, -1


# ---------------------------------------------------------------- numpy path


def make_numpy_drift(code, W, Y, A, C, lam, iota):
    """Vectorised drift ``f(theta[R, d], states[R]) -> [R, d]`` for the built-in families."""
    if code == LINEAR:
        def f(theta, s):
            return np.einsum("rij,rj->ri", A[s], theta) + C[s]
    elif code == LOGISTIC:
        def f(theta, s):
            Ws = W[s]
            zz = np.einsum("ri,ri->r", Ws, theta)
            return -Ws * (sigmoid(zz) - Y[s])[:, None] - lam * theta
    elif code == SOFTPLUS:
        def f(theta, s):
            Ws = W[s]
            uu = iota * np.einsum("ri,ri->r", Ws, theta)
            big = uu > SOFTPLUS_GUARD
            sp = np.where(big, uu + np.log1p(np.exp(-np.abs(uu))), np.log1p(np.exp(np.where(big, 0.0, uu)))) / iota
            return -Ws * (sp - Y[s])[:, None] - lam * theta
    else:
        raise ValueError(f"no vectorised drift for family code {code}")
    return f


def chunk_numpy(theta, state, u, z, traj, alpha, beta, cum, drift, ncode, L, a0, a1, ref):
    R, c = u.shape
    n = cum.shape[1]
    rows = np.arange(R)
    for t in range(c):
        traj[:, t, :] = theta
        g = drift(theta, state)
        if ncode == NONE:
            step = g
        else:
            xi = z[:, t, :] @ L.T
            if ncode == GAUSSIAN_SCALED:
                sc = a0 + a1 * np.tanh(np.sqrt(((theta - ref) ** 2).sum(axis=1)))
                xi = xi * sc[:, None]
            step = g + xi
        theta += alpha * step
        nrm = np.sqrt((theta * theta).sum(axis=1))
        over = nrm > beta
        if over.any():
            theta[over] *= (beta / nrm[over])[:, None]
        bad = ~np.isfinite(nrm)
        if bad.any():
            return int(np.flatnonzero(bad)[0]), t
        k = (cum[state, :] <= u[:, t, None]).sum(axis=1)
        state[:] = np.minimum(k, n - 1)
    return -1, -1


class Kernel:
    """Bundles model/noise tables and dispatches a chunk to the selected backend."""

    def __init__(self, model, chain, noise, alpha, beta, use_numba=None):
        self.alpha = float(alpha)
        self.beta = float(beta) if beta is not None else math.inf
        cum = np.cumsum(chain.transition, axis=1)
        cum[:, -1] = 1.0
        self.cum = np.ascontiguousarray(cum)
        n, d = chain.n_states, model.dim
        tables = model.kernel_tables(chain.observations)
        self.ncode, L, a0, a1, ref = noise.kernel_params()
        self.noise = (self.ncode, np.ascontiguousarray(L, dtype=float), float(a0), float(a1),
                      np.ascontiguousarray(ref, dtype=float))
        if tables is None:
            self.code = model.code
            obs = chain.observations
            self.numpy_drift = lambda theta, s: model.drift_batch(theta, s, obs)
            self.use_numba = False
            return
        self.code = model.code
        W = np.ascontiguousarray(tables.get("W", np.zeros((n, d))), dtype=float)
        Y = np.ascontiguousarray(tables.get("Y", np.zeros(n)), dtype=float)
        A = np.ascontiguousarray(tables.get("A", np.zeros((n, d, d))), dtype=float)
        C = np.ascontiguousarray(tables.get("C", np.zeros((n, d))), dtype=float)
        lam = float(getattr(model, "lam", 0.0))
        iota = float(getattr(model, "iota", 1.0))
        self.tables = (self.code, W, Y, A, C, lam, iota)
        self.numpy_drift = make_numpy_drift(*self.tables)
        self.use_numba = numba_enabled() if use_numba is None else (use_numba and HAVE_NUMBA)

    def run(self, theta, state, u, z):
        """Advance in place; returns the trajectory and the failure location."""
        R, c = u.shape
        traj = np.empty((R, c, theta.shape[1]))
        if self.use_numba:
            bad = _chunk_nb(theta, state, u, z, traj, self.alpha, self.beta, self.cum,
                            *self.tables, *self.noise)
        else:
            bad = chunk_numpy(theta, state, u, z, traj, self.alpha, self.beta, self.cum,
                              self.numpy_drift, *self.noise)
        return traj, (int(bad[0]), int(bad[1]))
