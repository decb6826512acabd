"""Finite-state Markov chains: validation, stationary analysis, time reversal,
mixing times and the Poisson-type correction ``h``.

Everything here works with dense matrices; chains are expected to be small
(a hundred states or fewer), so exact matrix powers and direct solves are used
throughout instead of spectral shortcuts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    NotConverged,
    Periodic,
    Reducible,
    RowNotStochastic,
    SingularFundamental,
    SolveFailed,
    ZeroMass,
)

ROW_TOL = 1e-12
DEFAULT_EPSILONS = (0.25, 0.1, 0.01)


@dataclass(frozen=True)
class FiniteChain:
    """A validated, irreducible and aperiodic finite-state chain.

    ``observations`` holds one payload per state. This module never looks
    inside them; drift models decide what a payload means.
    """

    transition: np.ndarray
    observations: tuple[Any, ...] = ()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class StationaryInfo:
    pi: np.ndarray
    reversal: np.ndarray
    fundamental: np.ndarray
    ergodicity_fit: tuple[float, float]
    mixing_table: dict[float, int] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def projector(self) -> np.ndarray:
        """Rank-one matrix whose rows all equal ``pi``."""
        return np.tile(self.pi, (self.n_states, 1))


def _period(support: np.ndarray) -> int:
    # gcd of level[u] + 1 - level[v] over all edges of a BFS tree labelling
    n = support.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(support[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u, v in zip(*np.nonzero(support)):
        g = math.gcd(g, int(abs(level[u] + 1 - level[v])))
    return g


def validate_chain(transition, observations: Sequence[Any] | None = None) -> FiniteChain:
    """Check a transition matrix and wrap it in a :class:`FiniteChain`.

    Raises ``RowNotStochastic``, ``Reducible`` or ``Periodic``.
    """
    P = np.array(transition, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise RowNotStochastic(f"transition must be a non-empty square matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise RowNotStochastic("transition has negative or non-finite entries")
    dev = np.abs(P.sum(axis=1) - 1.0)
    if np.any(dev > ROW_TOL):
        i = int(np.argmax(dev))
        raise RowNotStochastic(f"row {i} sums to {P[i].sum()!r}")
    support = P > 0
    n_comp, _ = connected_components(support.astype(np.int8), directed=True, connection="strong")
    if n_comp != 1:
        raise Reducible(f"support graph has {n_comp} communicating classes")
    period = _period(support)
    if period != 1:
        raise Periodic(f"chain has period {period}")
    obs = tuple(observations) if observations is not None else tuple(range(P.shape[0]))
    if len(obs) != P.shape[0]:
        raise ValueError(f"expected {P.shape[0]} observations, got {len(obs)}")
    P.setflags(write=False)
    return FiniteChain(P, obs)


def stationary_distribution(chain: FiniteChain) -> np.ndarray:
    """Solve pi (P - I) = 0, sum(pi) = 1 as one augmented least-squares system."""
    P = chain.transition
    n = P.shape[0]
    M = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
    if rank < n or not np.all(np.isfinite(pi)):
        raise SolveFailed(f"augmented stationary system has rank {rank} < {n}")
    # one refinement step pulls the residual down to rounding level
    r = rhs - M @ pi
    pi = pi + np.linalg.lstsq(M, r, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    if np.max(np.abs(pi @ P - pi)) > ROW_TOL:
        raise SolveFailed("stationary residual above 1e-12")
    return pi


def time_reversal(chain: FiniteChain, pi: np.ndarray) -> np.ndarray:
    """P*_ij = pi_j P_ji / pi_i."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise ZeroMass("time reversal needs a strictly positive stationary law")
    Pstar = (chain.transition.T * pi[None, :]) / pi[:, None]
    # renormalise rows against rounding; the exact rows already sum to one
    return Pstar / Pstar.sum(axis=1, keepdims=True)


def tv_curve(chain: FiniteChain, k_max: int, pi: np.ndarray | None = None) -> np.ndarray:
    """Worst-case total variation ``max_x ||P^k(x,.) - pi||_TV`` for k = 0..k_max."""
    if pi is None:
        pi = stationary_distribution(chain)
    P = chain.transition
    Pk = np.eye(P.shape[0])
    out = np.empty(k_max + 1)
    for k in range(k_max + 1):
        out[k] = 0.5 * np.abs(Pk - pi[None, :]).sum(axis=1).max()
        Pk = Pk @ P
    return out


def mixing_time(chain: FiniteChain, epsilon: float, cap: int = 10**6,
                pi: np.ndarray | None = None, return_curve: bool = False):
    """Smallest k >= 1 with worst-case TV distance to pi at most ``epsilon``.

    With ``return_curve=True`` also returns the TV values for k = 0..tau.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if pi is None:
        pi = stationary_distribution(chain)
    P = chain.transition
    Pk = np.eye(P.shape[0])
    curve = [0.5 * np.abs(Pk - pi[None, :]).sum(axis=1).max()]
    for k in range(1, cap + 1):
        Pk = Pk @ P
        tv = 0.5 * np.abs(Pk - pi[None, :]).sum(axis=1).max()
        curve.append(tv)
        if tv <= epsilon:
            return (k, np.array(curve)) if return_curve else k
    raise NotConverged(f"TV distance still {curve[-1]:.3g} > {epsilon} after {cap} steps")


def fit_ergodicity(curve: np.ndarray) -> tuple[float, float]:
    """Least-squares fit of log TV(k) = log R + k log r over k >= 1."""
    k = np.arange(len(curve))[1:]
    tv = curve[1:]
    keep = tv > 0
    if keep.sum() < 2:
        return float(curve[0]), 0.0
    slope, intercept = np.polyfit(k[keep], np.log(tv[keep]), 1)
    return float(np.exp(intercept)), float(np.exp(slope))


def fundamental_matrix(reversal: np.ndarray, pi: np.ndarray) -> np.ndarray:
    n = pi.shape[0]
    M = np.eye(n) - reversal + np.tile(pi, (n, 1))
    if np.linalg.cond(M) > 1e12:
        raise SingularFundamental("I - P* + Pi is numerically singular")
    return np.linalg.inv(M)


def stationary_info(chain: FiniteChain, epsilons: Sequence[float] = DEFAULT_EPSILONS) -> StationaryInfo:
    pi = stationary_distribution(chain)
    Pstar = time_reversal(chain, pi)
    F = fundamental_matrix(Pstar, pi)
    tau01, curve = mixing_time(chain, 0.01, pi=pi, return_curve=True)
    table = {float(e): mixing_time(chain, e, pi=pi) for e in epsilons}
    table[0.01] = tau01
    for a in (pi, Pstar, F):
        a.setflags(write=False)
    return StationaryInfo(pi, Pstar, F, fit_ergodicity(curve), table)


def compute_h(info: StationaryInfo, G) -> np.ndarray:
    """H = (I - P* + Pi)^{-1} (P* - Pi) G, one row per state.

    ``G`` is n x d with row i holding the drift at state i.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if G.shape[0] != info.n_states:
        raise ValueError(f"G has {G.shape[0]} rows, chain has {info.n_states} states")
    return info.fundamental @ ((info.reversal - info.projector) @ G)
