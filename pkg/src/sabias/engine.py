"""Constant-stepsize projected stochastic approximation.

Replicas are simulated in blocks; the iterates of each chunk are reduced
into streaming accumulators immediately, so memory does not grow with the
horizon unless thinned iterates are requested.

RNG streams: replica ``r`` of a run seeded with ``seed`` draws its
transition uniforms from ``SeedSequence(seed, spawn_key=(r, ROLE_X))`` and
its standard normals from ``SeedSequence(seed, spawn_key=(r, ROLE_NOISE + j))``
where ``j`` is the run's noise-stream index. Runs that differ only in the
stepsize therefore see bit-identical data sequences.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import Kernel
from .errors import EmptyWindow, NonFiniteIterate, TooFewBatches
from .markov import FiniteChain, StationaryInfo, stationary_info

log = logging.getLogger(__name__)

ROLE_X = 0
ROLE_NOISE = 1
CHUNK = 4096


def stream(seed: int, replica: int, role: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=(int(replica), int(role)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SAConfig:
    alpha: float
    horizon: int
    burn_in: int = 0
    replicas: int = 1
    seed: int = 0
    beta: float = math.inf
    p_max: int = 3
    thinning: int = 0
    batch_count: int = 0
    theta0: tuple | None = None
    x0: int | None = None
    noise_stream: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.burn_in >= self.horizon:
            raise ValueError("burn_in must be smaller than horizon")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")

    def with_alpha(self, alpha, noise_stream=None) -> "SAConfig":
        return replace(self, alpha=alpha,
                       noise_stream=self.noise_stream if noise_stream is None else noise_stream)


@dataclass
class EnsembleStats:
    checkpoints: np.ndarray           # (m,)
    means: np.ndarray                 # (m, d)
    second_moments: np.ndarray        # (m, d, d) about theta*
    m2p: np.ndarray                   # (m, p_max): E|theta_k - theta*|^(2p)
    tail_averages: np.ndarray         # (R, d)
    tail_mean: np.ndarray             # (d,)
    tail_cov: np.ndarray              # (d, d)
    steady_m2p: np.ndarray            # (p_max,) time-and-replica averages over the window
    final: np.ndarray                 # (R, d)
    theta_star: np.ndarray
    window: tuple[int, int]
    batch_means: np.ndarray | None = None   # (R, B, d)
    iterates: np.ndarray | None = None      # (R, n_kept, d) when thinning > 0
    replica_count: int = 0
    extra: dict = field(default_factory=dict)

    def batch_covariance(self) -> np.ndarray:
        """Long-run covariance pooled over replicas from per-replica batch means."""
        if self.batch_means is None:
            raise TooFewBatches("run was not configured with batch_count")
        return pooled_batch_covariance(self.batch_means, self.window)


def pooled_batch_covariance(batch_means: np.ndarray, window: tuple[int, int]) -> np.ndarray:
    R, B, d = batch_means.shape
    blen = (window[1] - window[0]) // B
    centred = batch_means - batch_means.mean(axis=1, keepdims=True)
    per_rep = np.einsum("rbi,rbj->rij", centred, centred) / (B - 1)
    return blen * per_rep.mean(axis=0)


def project(v, beta):
    """Radial projection onto the centred ball of radius ``beta``."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n > beta:
        return v * (beta / n)
    return v.copy()


def step(theta, state_index: int, cfg: SAConfig, model, noise, base_draw, chain: FiniteChain | None = None):
    """One projected update from ``theta`` using the payload of ``state_index``."""
    from .noise import sample_noise

    theta = np.asarray(theta, dtype=float)
    obs = chain.observations[state_index] if chain is not None else state_index
    pre = theta + cfg.alpha * (model.drift(theta, obs) + sample_noise(noise, theta, base_draw))
    if not np.all(np.isfinite(pre)):
        raise NonFiniteIterate("non-finite iterate in single step")
    return project(pre, cfg.beta)


def default_checkpoints(horizon: int) -> list[int]:
    ks = [0]
    k = 1
    while k <= horizon:
        ks.append(k)
        k *= 2
    if ks[-1] != horizon:
        ks.append(horizon)
    return ks


def _initial_state(cfg, chain, pi, rng_x):
    if cfg.x0 is not None:
        return int(cfg.x0)
    # the first uniform of the data stream picks x0 from pi
    cum = np.cumsum(pi)
    cum[-1] = 1.0
    return int(min(np.searchsorted(cum, rng_x.random(), side="right"), len(pi) - 1))


class _Block:
    """Accumulators for one block of replicas."""

    def __init__(self, R, d, cfg, theta_star, checkpoints):
        K, k0 = cfg.horizon, cfg.burn_in
        self.ck = {int(k): None for k in checkpoints}
        self.tail_sum = np.zeros((R, d))
        self.m2p_sum = np.zeros(cfg.p_max)
        self.theta_star = theta_star
        self.p_max = cfg.p_max
        self.k0, self.K = k0, K
        B = cfg.batch_count
        self.B = B
        if B:
            self.blen = (K - k0) // B
            self.batch_sum = np.zeros((R, B, d))
        self.thin = cfg.thinning
        self.kept = [] if self.thin else None

    def absorb(self, traj, k_start):
        c = traj.shape[1]
        k_end = k_start + c
        for k in self.ck:
            if k_start <= k < k_end:
                self.ck[k] = traj[:, k - k_start].copy()
        lo, hi = max(k_start, self.k0), min(k_end, self.K)
        if lo < hi:
            win = traj[:, lo - k_start:hi - k_start]
            self.tail_sum += win.sum(axis=1)
            sq = ((win - self.theta_star) ** 2).sum(axis=2)
            pw = sq.copy()
            for p in range(self.p_max):
                self.m2p_sum[p] += pw.sum()
                pw *= sq
            if self.B:
                idx = (np.arange(lo, hi) - self.k0) // self.blen
                ok = idx < self.B
                if ok.any():
                    ids = idx[ok]
                    for b in np.unique(ids):
                        self.batch_sum[:, b] += win[:, ok][:, ids == b].sum(axis=1)
        if self.thin:
            ks = np.arange(k_start, k_end)
            sel = (ks % self.thin) == 0
            if sel.any():
                self.kept.append(traj[:, sel].copy())


def _run_block(replica_ids, cfg, kernel, chain, pi, theta_star, checkpoints, theta0):
    d = theta_star.shape[0]
    R = len(replica_ids)
    rx = [stream(cfg.seed, r, ROLE_X) for r in replica_ids]
    rn = [stream(cfg.seed, r, ROLE_NOISE + cfg.noise_stream) for r in replica_ids]
    theta = np.tile(np.asarray(theta0, dtype=float), (R, 1))
    state = np.array([_initial_state(cfg, chain, pi, g) for g in rx], dtype=np.int64)
    acc = _Block(R, d, cfg, theta_star, checkpoints)
    K = cfg.horizon
    k = 0
    while k < K:
        c = min(CHUNK, K - k)
        u = np.stack([g.random(c) for g in rx])
        z = np.stack([g.standard_normal((c, d)) for g in rn])
        traj, bad = kernel.run(theta, state, u, z)
        if bad[0] >= 0:
            raise NonFiniteIterate(
                f"non-finite iterate in replica {replica_ids[bad[0]]} at step {k + bad[1]}",
                replica=replica_ids[bad[0]], step=k + bad[1])
        acc.absorb(traj, k)
        k += c
    if K in acc.ck:
        acc.ck[K] = theta.copy()
    return acc, theta


def _blocks(R, threads):
    threads = max(1, int(threads))
    size = max(1, math.ceil(R / threads))
    return [list(range(i, min(R, i + size))) for i in range(0, R, size)]


def _check_config(cfg, theta_star):
    if math.isfinite(cfg.beta) and cfg.beta < 2 * np.linalg.norm(theta_star):
        warnings.warn(f"projection radius {cfg.beta} is below 2|theta*| = {2 * np.linalg.norm(theta_star):.4g}",
                      stacklevel=3)


def run_ensemble(cfg: SAConfig, model, chain: FiniteChain, noise, checkpoints=None,
                 theta_star=None, info: StationaryInfo | None = None, threads: int = 1,
                 use_numba=None) -> EnsembleStats:
    """Simulate ``cfg.replicas`` independent trajectories and reduce them.

    Statistics are merged in replica order, so the result depends only on the
    configuration and seed, not on ``threads``.
    """
    from .drift import solve_theta_star

    if info is None:
        info = stationary_info(chain)
    if theta_star is None:
        theta_star = solve_theta_star(model, chain, info)
    theta_star = np.asarray(theta_star, dtype=float).reshape(model.dim)
    _check_config(cfg, theta_star)
    if checkpoints is None:
        checkpoints = default_checkpoints(cfg.horizon)
    checkpoints = sorted(set(int(k) for k in checkpoints if 0 <= k <= cfg.horizon))
    theta0 = np.zeros(model.dim) if cfg.theta0 is None else np.asarray(cfg.theta0, dtype=float)
    if cfg.batch_count and cfg.batch_count < 8:
        raise TooFewBatches(f"batch_count {cfg.batch_count} < 8")
    kernel = Kernel(model, chain, noise, cfg.alpha, cfg.beta, use_numba=use_numba)
    blocks = _blocks(cfg.replicas, threads)
    args = (cfg, kernel, chain, info.pi, theta_star, checkpoints, theta0)
    if len(blocks) == 1:
        results = [_run_block(blocks[0], *args)]
    else:
        with ThreadPoolExecutor(len(blocks)) as ex:
            results = list(ex.map(lambda b: _run_block(b, *args), blocks))
    return _merge(results, cfg, checkpoints, theta_star)


def _merge(results, cfg, checkpoints, theta_star):
    R = cfg.replicas
    n_win = cfg.horizon - cfg.burn_in
    d = theta_star.shape[0]
    m = len(checkpoints)
    means = np.empty((m, d))
    seconds = np.empty((m, d, d))
    m2p = np.empty((m, cfg.p_max))
    for i, k in enumerate(checkpoints):
        th = np.concatenate([acc.ck[k] for acc, _ in results])
        means[i] = th.mean(axis=0)
        e = th - theta_star
        seconds[i] = e.T @ e / R
        sq = (e * e).sum(axis=1)
        m2p[i] = [np.mean(sq ** p) for p in range(1, cfg.p_max + 1)]
    tails = np.concatenate([acc.tail_sum for acc, _ in results]) / n_win
    m2p_tot = np.zeros(cfg.p_max)
    for acc, _ in results:
        m2p_tot += acc.m2p_sum
    steady = m2p_tot / (n_win * R)
    final = np.concatenate([th for _, th in results])
    bm = None
    if cfg.batch_count:
        blen = results[0][0].blen
        bm = np.concatenate([acc.batch_sum for acc, _ in results]) / blen
    its = None
    if cfg.thinning:
        its = np.concatenate([np.concatenate(acc.kept, axis=1) for acc, _ in results])
    tail_cov = np.cov(tails.T, ddof=1).reshape(d, d) if R > 1 else np.zeros((d, d))
    return EnsembleStats(np.array(checkpoints), means, seconds, m2p, tails, tails.mean(axis=0),
                         tail_cov, steady, final, theta_star, (cfg.burn_in, cfg.horizon), bm, its, R)


# ------------------------------------------------------------------ coupling


@dataclass
class CoupledLog:
    mean_sq_diff: np.ndarray    # (K + 1,) indexed by k
    rho: float
    intercept: float
    fit_range: tuple[int, int]
    degenerate: bool = False


FLOOR = 1e-20


def fit_geometric(msd: np.ndarray, k_lo: int = 0, k_hi: int | None = None) -> tuple[float, float, tuple[int, int], bool]:
    """Least squares of log msd_k = log c + k log rho over k in [k_lo, k_hi].

    Points that hit zero or fall below ``FLOOR * msd[0]`` (where float
    cancellation dominates) are dropped. Fewer than two usable points is a
    degenerate fit and reports rho = 0.
    """
    if k_hi is None:
        k_hi = len(msd) - 1
    ks = np.arange(k_lo, k_hi + 1)
    vals = msd[k_lo:k_hi + 1]
    floor = FLOOR * msd[0] if msd[0] > 0 else 0.0
    keep = vals > floor
    # stop at the first unusable point; later ones are rounding noise
    if not keep.all():
        stop = int(np.argmin(keep))
        ks, vals = ks[:stop], vals[:stop]
    if len(ks) < 2:
        return 0.0, 0.0, (k_lo, k_lo), True
    slope, intercept = np.polyfit(ks, np.log(vals), 1)
    return float(np.exp(slope)), float(np.exp(intercept)), (int(ks[0]), int(ks[-1])), False


def run_coupled(cfg: SAConfig, model, chain: FiniteChain, noise, theta0_a, theta0_b,
                info: StationaryInfo | None = None, fit_start: int | None = None,
                use_numba=None) -> CoupledLog:
    """Two copies driven by the same data and the same noise draws.

    The fit starts at the mixing time ``tau_alpha`` unless ``fit_start`` is given.
    """
    from .markov import mixing_time

    if info is None:
        info = stationary_info(chain)
    d = model.dim
    R = cfg.replicas
    kernel = Kernel(model, chain, noise, cfg.alpha, cfg.beta, use_numba=use_numba)
    rx = [stream(cfg.seed, r, ROLE_X) for r in range(R)]
    rn = [stream(cfg.seed, r, ROLE_NOISE + cfg.noise_stream) for r in range(R)]
    a = np.tile(np.asarray(theta0_a, dtype=float).reshape(d), (R, 1))
    b = np.tile(np.asarray(theta0_b, dtype=float).reshape(d), (R, 1))
    theta = np.concatenate([a, b])
    s0 = np.array([_initial_state(cfg, chain, info.pi, g) for g in rx], dtype=np.int64)
    state = np.concatenate([s0, s0])
    K = cfg.horizon
    msd = np.empty(K + 1)
    k = 0
    while k < K:
        c = min(CHUNK, K - k)
        u = np.stack([g.random(c) for g in rx])
        z = np.stack([g.standard_normal((c, d)) for g in rn])
        traj, bad = kernel.run(theta, state, np.concatenate([u, u]), np.concatenate([z, z]))
        if bad[0] >= 0:
            raise NonFiniteIterate(f"non-finite coupled iterate at step {k + bad[1]}",
                                   replica=bad[0] % R, step=k + bad[1])
        diff = traj[:R] - traj[R:]
        msd[k:k + c] = (diff ** 2).sum(axis=2).mean(axis=0)
        k += c
    msd[K] = ((theta[:R] - theta[R:]) ** 2).sum(axis=1).mean()
    if fit_start is None:
        fit_start = mixing_time(chain, min(cfg.alpha, 0.5), pi=info.pi)
    fit_start = min(fit_start, K - 1)
    rho, c0, rng, degenerate = fit_geometric(msd, fit_start, K)
    return CoupledLog(msd, rho, c0, rng, degenerate)


# ------------------------------------------------------------- post-processing


def tail_average(iterates, k0: int, k: int) -> np.ndarray:
    """Mean of ``iterates[k0:k]`` (iterates indexed by time along axis 0)."""
    if not k > k0:
        raise EmptyWindow(f"empty averaging window [{k0}, {k})")
    it = np.asarray(iterates, dtype=float)
    if k > it.shape[0] or k0 < 0:
        raise EmptyWindow(f"window [{k0}, {k}) outside stored range 0..{it.shape[0]}")
    return it[k0:k].mean(axis=0)


def batch_means_covariance(iterates, k0: int, batch_count: int, tau: int | None = None) -> np.ndarray:
    """Batch-means long-run covariance: batch length times the covariance of batch means.

    The window ``iterates[k0:]`` is truncated at the end to a multiple of
    ``batch_count``.
    """
    if batch_count < 8:
        raise TooFewBatches(f"batch_count {batch_count} < 8")
    x = np.asarray(iterates, dtype=float)[k0:]
    scalar = x.ndim == 1
    if scalar:
        x = x[:, None]
    blen = x.shape[0] // batch_count
    if blen < 1:
        raise TooFewBatches("window shorter than the number of batches")
    if tau is not None and blen < 2 * tau:
        warnings.warn(f"batch length {blen} is below 2*tau = {2 * tau}", stacklevel=2)
    bm = x[:blen * batch_count].reshape(batch_count, blen, -1).mean(axis=1)
    c = bm - bm.mean(axis=0)
    return blen * (c.T @ c) / (batch_count - 1)
