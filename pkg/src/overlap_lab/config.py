"""Experiment configuration: YAML file, strict schema, typed sections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .model import BaseChannelSpec, GeneralizedPerturbSpec, InvalidParameter, Model, PriorSpec
from .scaling import SSchedule


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class ModelConfig:
    K: int = 1
    prior_atoms: tuple | None = None      # None: Rademacher on {-1, 1}^K
    prior_weights: tuple | None = None
    base_kind: str = "spiked-wigner"
    base_p: int = 2
    base_snr: float = 1.0
    s_n: float = 0.5
    gen_p: int | None = 1
    gen_lambda_vec: tuple | None = None   # None: all ones
    gen_beta: float | str = 1.5           # a number in [1, 2] or "uniform"
    n: int = 4

    def prior(self) -> PriorSpec:
        if self.prior_atoms is None:
            return PriorSpec.rademacher(self.K)
        return PriorSpec(np.array(self.prior_atoms, float), np.array(self.prior_weights, float))

    def gen_spec(self, beta: float | None = None) -> GeneralizedPerturbSpec | None:
        if self.gen_p is None:
            return None
        lam = np.ones(self.K) if self.gen_lambda_vec is None else np.array(self.gen_lambda_vec)
        b = beta if beta is not None else (1.5 if self.gen_beta == "uniform" else self.gen_beta)
        return GeneralizedPerturbSpec.from_beta(self.gen_p, lam, self.s_n, float(b))

    def build(self, n: int | None = None, with_gen: bool = False) -> Model:
        """Model without an SNR matrix (it is drawn per run) and, unless asked, without gen."""
        kind = self.base_kind
        base = BaseChannelSpec(kind, self.base_p if kind == "tensor-p" else 2, self.base_snr)
        return Model(self.prior(), base, self.n if n is None else n,
                     gen=self.gen_spec() if with_gen else None)


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    draws: int = 10_000
    lambda_draws: int = 16
    n_grid: tuple = (2, 4, 8)
    gg_n_grid: tuple = (4, 6, 8)
    nishimori_n: tuple = (4, 6)
    quadrature_n: tuple = (1, 2)
    schedule: str = "fixed"
    s: float = 0.5
    beta_s: float = 0.1
    beta_draws: int = 0
    chains: int = 100
    sweeps: int = 300
    burn_in: int = 100
    tol_z: float = 3.0
    slope_q: float = -0.25
    slope_l: float = -0.5
    cf_ratio: float = 2.0
    n_rep_grid: tuple = (8, 16, 32)
    fe_draws: int = 1000

    def schedule_spec(self) -> SSchedule:
        return SSchedule(self.schedule, self.s, self.beta_s if self.schedule == "power" else 0.0)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=list)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_MODEL_SCHEMA = {
    "n": int,
    "prior": {"kind": str, "K": int, "atoms": list, "weights": list},
    "base": {"kind": str, "p": int, "snr": (int, float)},
    "pert": {"s_n": (int, float), "K": int},
    "gen": {"p": int, "lambda_vec": list, "beta": (int, float, str), "enabled": bool},
}
_RUN_KEYS = {f: type(v) for f, v in asdict(RunConfig()).items()}
_OUTPUT_KEYS = {"dir": str}


def _check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _typed(value, types, where):
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{where}: expected {types}, got a boolean")
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {'/'.join(t.__name__ for t in types)}, "
                          f"got {type(value).__name__}")
    return value


def parse_config(data: dict | None) -> ExperimentConfig:
    """Validate a parsed YAML document; every key is checked before use."""
    data = {} if data is None else data
    _check_keys(data, ("model", "run", "output"), "config")
    m = data.get("model", {}) or {}
    _check_keys(m, _MODEL_SCHEMA, "model")
    kw = {}
    for sec, schema in _MODEL_SCHEMA.items():
        if sec not in m:
            continue
        if isinstance(schema, dict):
            _check_keys(m[sec], schema, f"model.{sec}")
            for key, val in m[sec].items():
                _typed(val, schema[key], f"model.{sec}.{key}")
        else:
            _typed(m[sec], schema, f"model.{sec}")
    prior = m.get("prior", {})
    K = prior.get("K", m.get("pert", {}).get("K", 1))
    if "atoms" in prior:
        atoms = np.array(prior["atoms"], float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        kw["prior_atoms"] = tuple(map(tuple, atoms.tolist()))
        kw["prior_weights"] = tuple(prior.get("weights", [1 / len(atoms)] * len(atoms)))
        K = atoms.shape[1]
    elif prior.get("kind", "rademacher") != "rademacher":
        raise ConfigError("model.prior: give atoms/weights or kind: rademacher")
    pert = m.get("pert", {})
    if "K" in pert and pert["K"] != K:
        raise ConfigError(f"model.pert.K = {pert['K']} does not match prior dimension {K}")
    kw["K"] = K
    base = m.get("base", {})
    for src, dst in (("kind", "base_kind"), ("p", "base_p"), ("snr", "base_snr")):
        if src in base:
            kw[dst] = base[src]
    if "s_n" in pert:
        kw["s_n"] = float(pert["s_n"])
    gen = m.get("gen", {})
    if gen.get("enabled", True) is False:
        kw["gen_p"] = None
    else:
        if "p" in gen:
            kw["gen_p"] = gen["p"]
        if "lambda_vec" in gen:
            kw["gen_lambda_vec"] = tuple(float(v) for v in gen["lambda_vec"])
        if "beta" in gen:
            b = gen["beta"]
            if isinstance(b, str) and b != "uniform":
                raise ConfigError("model.gen.beta must be a number in [1, 2] or 'uniform'")
            kw["gen_beta"] = b if isinstance(b, str) else float(b)
    if "n" in m:
        kw["n"] = m["n"]
    model_cfg = ModelConfig(**kw)

    r = data.get("run", {}) or {}
    _check_keys(r, _RUN_KEYS, "run")
    rkw = {}
    for key, val in r.items():
        default = getattr(RunConfig(), key)
        if isinstance(default, tuple):
            _typed(val, list, f"run.{key}")
            val = tuple(val)
        elif isinstance(default, float):
            val = float(_typed(val, (int, float), f"run.{key}"))
        elif key == "seed":
            if val is not None:
                _typed(val, int, "run.seed")
        else:
            _typed(val, type(default), f"run.{key}")
        rkw[key] = val
    run_cfg = RunConfig(**rkw)

    o = data.get("output", {}) or {}
    _check_keys(o, _OUTPUT_KEYS, "output")
    for key, val in o.items():
        _typed(val, _OUTPUT_KEYS[key], f"output.{key}")
    cfg = ExperimentConfig(model_cfg, run_cfg, OutputConfig(**o))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    """Build every object once so that domain errors surface before any run."""
    m, r = cfg.model, cfg.run
    try:
        cfg.model.build(with_gen=True)
        SSchedule(r.schedule, r.s, r.beta_s)
    except (InvalidParameter, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not 0 < m.s_n <= 1:
        raise ConfigError("model.pert.s_n must lie in (0, 1]")
    if list(r.n_grid) != sorted(r.n_grid) or min(r.n_grid) < 1:
        raise ConfigError("run.n_grid must be positive and nondecreasing")
    for key in ("draws", "lambda_draws", "chains", "sweeps", "fe_draws"):
        if getattr(r, key) < 2:
            raise ConfigError(f"run.{key} must be >= 2")
    if not 0 <= r.burn_in < r.sweeps:
        raise ConfigError("run.burn_in must lie in [0, sweeps)")
    if r.tol_z <= 0:
        raise ConfigError("run.tol_z must be positive")
    if r.seed is not None and not 0 <= r.seed < 2**64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(data)


DEFAULT_CONFIG_YAML = """\
model:
  n: 4
  prior: {kind: rademacher, K: 1}
  base: {kind: spiked-wigner, snr: 1.0}
  pert: {s_n: 0.5, K: 1}
  gen: {p: 1, lambda_vec: [1.0], beta: 1.5}
run:
  seed: 0
  draws: 10000
  lambda_draws: 16
  n_grid: [2, 4, 8]
  schedule: fixed
  s: 0.5
output:
  dir: results
"""
