"""JSON experiment configuration: validation and construction of runtime objects.

Validation happens before any computation and rejects unknown keys, so a
typo fails fast with the offending field named.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .drift import LinearModel, LogisticModel, Observation, SoftPlusModel, augment_glm_chain
from .engine import SAConfig
from .errors import ConfigInvalid, SABiasError
from .markov import validate_chain
from .noise import NoiseField

STUDIES = ("bias", "rr", "coupling", "clt", "moments", "all")

_TOP = {"chain", "model", "noise", "sa", "study", "output", "coupling"}
_REQUIRED = ("chain", "model", "sa")
_CHAIN = {"transition", "observations"}
_MODEL = {"family", "lambda", "iota", "theta_true", "A", "c", "mu_hint", "l1_hint"}
_NOISE = {"variant", "covariance", "a0", "a1", "theta_ref"}
_SA = {"alpha", "alpha_grid", "beta", "K", "k0", "replicas", "seed", "p_max", "batch_count",
       "theta0", "x0", "thinning", "checkpoints"}
_COUPLING = {"theta0_a", "theta0_b", "K", "replicas"}


def _fail(msg):
    raise ConfigInvalid(f"config: {msg}")


def _check_keys(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        _fail(f"field {where} must be an object")
    for k in block:
        if k not in allowed:
            _fail(f"unknown field {where + '.' if where else ''}{k}")


def _number(block, key, where, positive=False, default=None, integer=False):
    if key not in block:
        if default is None:
            _fail(f"missing field {where}.{key}")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"field {where}.{key} must be a number")
    if integer and (not float(v).is_integer()):
        _fail(f"field {where}.{key} must be an integer")
    if positive and not v > 0:
        _fail(f"field {where}.{key} must be positive")
    return int(v) if integer else float(v)


@dataclass
class ExperimentConfig:
    raw: dict
    chain: Any
    model: Any
    noise: NoiseField
    sa: SAConfig
    alpha_grid: list[float]
    study: str
    output: str | None
    coupling: dict
    checkpoints: list[int] | None

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _build_chain_model(chain_cfg, model_cfg):
    _check_keys(chain_cfg, _CHAIN, "chain")
    _check_keys(model_cfg, _MODEL, "model")
    if "transition" not in chain_cfg:
        _fail("missing field chain.transition")
    if "family" not in model_cfg:
        _fail("missing field model.family")
    family = model_cfg["family"]
    P = chain_cfg["transition"]
    obs_cfg = chain_cfg.get("observations")
    try:
        if family in ("logistic", "softplus"):
            if obs_cfg is None:
                _fail("missing field chain.observations")
            lam = _number(model_cfg, "lambda", "model", default=0.0)
            if not isinstance(obs_cfg, list) or len(obs_cfg) != len(P):
                _fail("field chain.observations must have one entry per chain state")
            W = [np.asarray(o["w"], dtype=float).reshape(-1) for o in obs_cfg]
            d = W[0].shape[0]
            if family == "logistic":
                model = LogisticModel(d, lam, mu_hint=model_cfg.get("mu_hint"), l1_hint=model_cfg.get("l1_hint"))
            else:
                model = SoftPlusModel(d, lam, _number(model_cfg, "iota", "model", positive=True, default=1.0),
                                      mu_hint=model_cfg.get("mu_hint"), l1_hint=model_cfg.get("l1_hint"))
            has_y = all("y" in o for o in obs_cfg)
            if has_y:
                obs = [Observation(w=w, y=float(o["y"])) for w, o in zip(W, obs_cfg)]
                chain = validate_chain(P, obs)
            elif "theta_true" in model_cfg:
                chain = augment_glm_chain(P, np.stack(W), model_cfg["theta_true"])
            else:
                _fail("GLM observations need field y, or model.theta_true to draw responses")
        elif family == "linear":
            for key in ("A", "c"):
                if key not in model_cfg:
                    _fail(f"missing field model.{key}")
            n = len(P)
            A = np.asarray(model_cfg["A"], dtype=float)
            c = np.asarray(model_cfg["c"], dtype=float)
            if A.ndim == 2:
                A = np.broadcast_to(A, (n,) + A.shape)
            if c.ndim == 1:
                c = np.broadcast_to(c, (n,) + c.shape)
            if A.shape[0] != n or c.shape[0] != n:
                _fail("model.A / model.c must give one entry per chain state")
            obs = [Observation(A=A[i].copy(), c=c[i].copy()) for i in range(n)]
            chain = validate_chain(P, obs)
            model = LinearModel(A.shape[1], mu_hint=model_cfg.get("mu_hint", 0.0), l1_hint=model_cfg.get("l1_hint"))
        else:
            _fail(f"field model.family must be one of logistic, softplus, linear (got {family!r})")
    except ConfigInvalid:
        raise
    except (SABiasError, ValueError, KeyError, TypeError, IndexError) as e:
        _fail(f"field chain/model: {type(e).__name__}: {e}")
    return chain, model


def _build_noise(noise_cfg, d):
    if noise_cfg is None:
        return NoiseField.none(d)
    _check_keys(noise_cfg, _NOISE, "noise")
    variant = noise_cfg.get("variant", "none")
    if variant == "none":
        return NoiseField.none(d)
    if variant != "gaussian":
        _fail(f"field noise.variant must be none or gaussian (got {variant!r})")
    if "covariance" not in noise_cfg:
        _fail("missing field noise.covariance")
    cov = np.asarray(noise_cfg["covariance"], dtype=float).reshape(d, d)
    a1 = _number(noise_cfg, "a1", "noise", default=0.0)
    a0 = _number(noise_cfg, "a0", "noise", default=1.0)
    try:
        if a1 == 0.0 and a0 == 1.0:
            return NoiseField.gaussian(cov)
        return NoiseField.gaussian_scaled(cov, a0, a1, noise_cfg.get("theta_ref"))
    except ValueError as e:
        _fail(f"field noise: {e}")


def parse_config(raw: dict, seed_override: str | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        _fail("top level must be an object")
    _check_keys(raw, _TOP, "")
    for key in _REQUIRED:
        if key not in raw:
            _fail(f"missing field {key}")
    study = raw.get("study", "all")
    if study not in STUDIES:
        _fail(f"field study must be one of {', '.join(STUDIES)} (got {study!r})")
    chain, model = _build_chain_model(raw["chain"], raw["model"])
    noise = _build_noise(raw.get("noise"), model.dim)

    sa = raw["sa"]
    _check_keys(sa, _SA, "sa")
    if "alpha" not in sa and "alpha_grid" not in sa:
        _fail("missing field sa.alpha")
    if "alpha_grid" in sa:
        grid = sa["alpha_grid"]
        if not isinstance(grid, list) or len(grid) < 1 or any(
                isinstance(a, bool) or not isinstance(a, (int, float)) or a <= 0 for a in grid):
            _fail("field sa.alpha_grid must be a list of positive numbers")
        grid = sorted(float(a) for a in grid)
    else:
        grid = None
    alpha = _number(sa, "alpha", "sa", positive=True, default=grid[0] if grid else None)
    if grid is None:
        grid = [alpha, 2 * alpha, 4 * alpha]
    K = _number(sa, "K", "sa", positive=True, integer=True)
    k0 = _number(sa, "k0", "sa", integer=True, default=K // 2)
    if not 0 <= k0 < K:
        _fail("field sa.k0 must satisfy 0 <= k0 < K")
    beta = sa.get("beta", None)
    beta = math.inf if beta is None else _number(sa, "beta", "sa", positive=True)
    seed = _number(sa, "seed", "sa", integer=True, default=0)
    if seed_override not in (None, ""):
        try:
            seed = int(seed_override)
        except ValueError:
            _fail(f"SABIAS_SEED must be an integer (got {seed_override!r})")
    theta0 = sa.get("theta0")
    if theta0 is not None:
        theta0 = tuple(float(v) for v in np.asarray(theta0, dtype=float).reshape(model.dim))
    x0 = sa.get("x0")
    if x0 is not None and not (isinstance(x0, int) and 0 <= x0 < chain.n_states):
        _fail("field sa.x0 must be a valid state index")
    cfg = SAConfig(alpha=alpha, horizon=K, burn_in=k0,
                   replicas=_number(sa, "replicas", "sa", positive=True, integer=True, default=1),
                   seed=seed, beta=beta,
                   p_max=_number(sa, "p_max", "sa", positive=True, integer=True, default=3),
                   thinning=_number(sa, "thinning", "sa", integer=True, default=0),
                   batch_count=_number(sa, "batch_count", "sa", integer=True, default=32),
                   theta0=theta0, x0=x0)
    coupling = raw.get("coupling", {})
    _check_keys(coupling, _COUPLING, "coupling")
    ck = sa.get("checkpoints")
    return ExperimentConfig(raw, chain, model, noise, cfg, grid, study, raw.get("output"), coupling,
                            None if ck is None else [int(k) for k in ck])


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigInvalid(f"config: cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"config: invalid JSON: {e}") from None
    return parse_config(raw, os.environ.get("SABIAS_SEED"))
