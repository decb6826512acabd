"""Compare the numba and pure-numpy SA kernels on the canonical fixture.

    python benchmarks/bench_kernels.py --replicas 64 --steps 20000
"""

import argparse
import time

import numpy as np

from sabias import fixtures
from sabias.engine import SAConfig, run_ensemble
from sabias.markov import stationary_info


def time_backend(cfg, fx, info, use_numba, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        st = run_ensemble(cfg, fx.model, fx.chain, fx.noise, checkpoints=[], info=info, use_numba=use_numba)
        best = min(best, time.perf_counter() - t0)
    return best, st


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicas", type=int, default=64)
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    fx = fixtures.canonical()
    info = stationary_info(fx.chain)
    cfg = SAConfig(alpha=0.04, horizon=args.steps, burn_in=args.steps // 10, replicas=args.replicas, seed=0)
    # warm-up compiles (or loads the cached) numba kernel
    run_ensemble(SAConfig(alpha=0.04, horizon=100, replicas=1), fx.model, fx.chain, fx.noise,
                 checkpoints=[], info=info, use_numba=True)
    steps = args.replicas * args.steps
    t_nb, a = time_backend(cfg, fx, info, True, args.repeats)
    t_np, b = time_backend(cfg, fx, info, False, args.repeats)
    gap = float(np.abs(a.tail_averages - b.tail_averages).max())
    print(f"{'backend':<8} {'seconds':>9} {'Msteps/s':>9}")
    print(f"{'numba':<8} {t_nb:9.3f} {steps / t_nb / 1e6:9.2f}")
    print(f"{'numpy':<8} {t_np:9.3f} {steps / t_np / 1e6:9.2f}")
    print(f"speedup {t_np / t_nb:.2f}x, max tail-average difference {gap:.2e}")


if __name__ == "__main__":
    main()
