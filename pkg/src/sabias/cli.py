"""Command line entry point: ``sabias run --config cfg.json --out results/``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import numba_enabled
from .bias import check_hurwitz, compute_bias, local_monotonicity, mc_bias_slope
from .config import ExperimentConfig, load_config
from .drift import bar_jacobian, solve_theta_star, verify_assumptions
from .engine import run_coupled, run_ensemble
from .errors import ConfigInvalid, MissingArtifacts, SABiasError
from .inference import clt_diagnostic, run_rr
from .markov import mixing_time, stationary_info
from .report import emit_report, write_bias, write_clt, write_coupling, write_moments, write_rr

log = logging.getLogger("sabias")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def stepsize_warnings(cfg: ExperimentConfig, info, theta_star, assumptions) -> tuple[list[str], dict]:
    """Compare alpha * tau_alpha * L^2 against mu for every stepsize in use."""
    noise = cfg.noise
    l2 = noise.a1 * float(np.linalg.norm(noise.sqrt_covariance, 2)) if noise.variant == 2 else 0.0
    L = max(1.0, assumptions.l1_hat + l2, assumptions.g0_sup)
    mu = local_monotonicity(cfg.model, cfg.chain, info, theta_star)
    beta = cfg.sa.beta
    out, detail = [], {"L": L, "mu": mu, "checks": []}
    alphas = sorted(set(cfg.alpha_grid) | {cfg.sa.alpha})
    for a in alphas:
        tau = mixing_time(cfg.chain, min(a, 0.5), pi=info.pi)
        lhs = a * tau * L ** 2
        conservative = mu / (940 + 96 * beta) if np.isfinite(beta) else 0.0
        detail["checks"].append({"alpha": a, "tau_alpha": tau, "alpha_tau_L2": lhs,
                                 "within_mu": lhs <= mu, "within_conservative": a * tau <= conservative})
        if lhs > mu:
            out.append(f"stepsize constraint alpha*tau_alpha*L^2 <= mu violated at alpha={a:g}: "
                       f"{lhs:.4g} > {mu:.4g} (tau_alpha={tau}, L={L:.4g})")
    return out, detail


def run_experiment(config_path, out_dir, threads: int | None = None) -> int:
    t0 = time.time()
    try:
        cfg = load_config(config_path)
    except ConfigInvalid as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir or cfg.output or "results")
    threads = threads or os.cpu_count() or 1
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = _run(cfg, out, threads)
    except SABiasError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest["wall_time_s"] = time.time() - t0
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n")
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(type(x))


def _run(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    import numba

    chain, model, noise, sa = cfg.chain, cfg.model, cfg.noise, cfg.sa
    info = stationary_info(chain)
    theta_star = solve_theta_star(model, chain, info)
    # a root of a non-contracting mean field is a repeller; every study needs contraction
    check_hurwitz(bar_jacobian(model, chain, info, theta_star))
    radius = max(1.0, 2 * float(np.linalg.norm(theta_star)))
    assumptions = verify_assumptions(model, chain, radius, 200, info=info, seed=sa.seed)
    warns, step_detail = stepsize_warnings(cfg, info, theta_star, assumptions)
    warns += [f"assumption check: {m}" for m in assumptions.messages]
    for w in warns:
        print(f"WARN: {w}", file=sys.stderr)
    manifest = {
        "config_sha256": cfg.digest,
        "seed": sa.seed,
        "study": cfg.study,
        "versions": {"sabias": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "numba": numba.__version__},
        "backend": "numba" if numba_enabled() else "numpy",
        "theta_star": theta_star,
        "pi": info.pi,
        "mixing_table": {str(k): v for k, v in info.mixing_table.items()},
        "ergodicity_fit": list(info.ergodicity_fit),
        "assumptions": {"mu_hat": assumptions.mu_hat, "l1_hat": assumptions.l1_hat,
                        "g0_sup": assumptions.g0_sup, "hessian_sup": assumptions.hessian_sup,
                        "third_derivative_sup": assumptions.third_derivative_sup,
                        "passed": assumptions.passed},
        "stepsize": step_detail,
        "warnings": warns,
        "files": [],
    }
    study = cfg.study
    want = {study} if study != "all" else {"bias", "rr", "coupling", "clt", "moments"}
    files = manifest["files"]

    if "bias" in want:
        dec = compute_bias(model, chain, info, noise, theta_star)
        fit = mc_bias_slope(model, chain, noise, cfg.alpha_grid, sa, info=info, theta_star=theta_star,
                            threads=threads, checkpoints=cfg.checkpoints)
        write_bias(out, dec, fit)
        files += ["bias.csv", "bias.json"]
        manifest["bias"] = {"b_total": dec.b_total, "mc_slope": fit.slope, "mc_stderr": fit.stderr,
                            "alphas": fit.alphas, "residual_means": fit.residual_means}
        ens = next((e for a, e in zip(fit.alphas, fit.ensembles) if a == sa.alpha), fit.ensembles[0])
        write_moments(out / "moments.csv", ens)
        files.append("moments.csv")
        log.info("b_total=%s mc_slope=%s +- %s", dec.b_total, fit.slope, fit.stderr)
    elif "moments" in want:
        ens = run_ensemble(sa, model, chain, noise, checkpoints=cfg.checkpoints, theta_star=theta_star,
                           info=info, threads=threads)
        write_moments(out / "moments.csv", ens)
        files.append("moments.csv")

    e_alpha = None
    if "rr" in want:
        rr, e_alpha, _ = run_rr(sa, model, chain, noise, theta_star, info, threads=threads)
        write_rr(out / "rr.csv", rr)
        files.append("rr.csv")
        manifest["rr"] = {"bias_pr": rr.bias("theta_bar_alpha"), "bias_rr": rr.bias("theta_tilde"),
                          "ratio": rr.improvement_ratio}

    if "clt" in want:
        if e_alpha is None:
            e_alpha = run_ensemble(sa, model, chain, noise, checkpoints=[], theta_star=theta_star,
                                   info=info, threads=threads)
        if sa.batch_count < 8:
            raise ConfigInvalid("config: field sa.batch_count must be >= 8 for the clt study")
        rep = clt_diagnostic(e_alpha.tail_averages, None, e_alpha.batch_covariance(),
                             sa.horizon - sa.burn_in)
        write_clt(out / "clt.csv", rep)
        files.append("clt.csv")

    if "coupling" in want:
        cc = cfg.coupling
        d = model.dim
        ta = np.asarray(cc.get("theta0_a", np.zeros(d)), dtype=float)
        tb = np.asarray(cc.get("theta0_b", theta_star + 1.0), dtype=float)
        ccfg = sa
        if "K" in cc or "replicas" in cc:
            from dataclasses import replace
            K = int(cc.get("K", sa.horizon))
            ccfg = replace(sa, horizon=K, burn_in=min(sa.burn_in, K - 1),
                           replicas=int(cc.get("replicas", sa.replicas)))
        logc = run_coupled(ccfg, model, chain, noise, ta, tb, info=info)
        write_coupling(out / "coupling.csv", logc)
        files.append("coupling.csv")
        mu_hat = assumptions.mu_hat
        manifest["coupling"] = {"rho": logc.rho, "intercept": logc.intercept, "fit_range": list(logc.fit_range),
                                "degenerate": logc.degenerate, "mu_hat": mu_hat,
                                "reference": 1 - sa.alpha * mu_hat}
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sabias", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the study described by a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--threads", type=int, default=None, help="replica parallelism (default: all cores)")
    p_run.add_argument("--verbose", "-v", action="store_true")
    p_rep = sub.add_parser("report", help="write report.md from a results directory")
    p_rep.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return run_experiment(args.config, args.out, args.threads)
    try:
        text = emit_report(args.out)
    except MissingArtifacts as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(text)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
