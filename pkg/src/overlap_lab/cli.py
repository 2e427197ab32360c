"""Command-line driver: ``overlap-lab <subcommand> [--config FILE] ...``.

Each subcommand writes one data file plus ``manifest.json`` into the output
directory.  Exit codes: 0 all checks pass, 1 a check failed, 2 bad
configuration (nothing is written), 3 an enumeration budget was exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import DEFAULT_CONFIG_YAML, ConfigError, ExperimentConfig, load_config, parse_config
from .identities import (DEFAULT_Z_MAX, IdentityReport, check_fluctuation_split, check_gg_identity,
                         check_l_gradient, check_l_q_relation, check_mmse_identity, check_nishimori,
                         check_sampler, constant_functional, nishimori_functionals, q01_functional,
                         write_jsonl)
from .model import PriorSpec, as_seed_sequence, sample_snr_matrix
from .parallel import default_jobs
from .posterior import Enumeration, ResourceLimit
from .scaling import (ScalingRun, decomposition_gap, free_energy_constant, free_energy_gap,
                      run_l_scan, run_thermal_scan, run_total_scan)
from .symmetry import (ReplicaOverlapArray, analyze_array, extract_constants, orient_tournament,
                       planted_asymmetry_array, random_tournament, replica_symmetric_array,
                       solve_offdiagonal, synthetic_array)

SEED_ENV = "OVERLAP_LAB_SEED"

# name, anchor, subcommand
CATALOG = (
    ("sampler", "Gibbs sampler against exact enumeration", "identities"),
    ("nishimori", "nishimori (signal/replica exchange identity)", "identities"),
    ("l_q_relation", "l_q (E<L> = diag(E<Q>)/2 - E<Q>)", "identities"),
    ("l_gradient", "l_gradient (L as the lambda-gradient of H_lambda / n)", "identities"),
    ("mmse", "mmse (MMSE = E||X_1||^2 - Tr E<Q>, matrix-MMSE up to O(1/n))", "mmse"),
    ("gg", "gg (Ghirlanda-Guerra identity for generalized overlaps)", "gg-scan"),
    ("fluctuation_split", "fluctuation_split (thermal and quenched parts of Q^(p)_01)", "gg-scan"),
    ("thermal_scan", "thermal_scan (E_lam E<||Q - <Q>||^2> decay)", "thermal-scan"),
    ("total_scan", "total_scan (E_lam E<||Q - E<Q>||^2> decay and n Var F_n)", "total-scan"),
    ("l_scan", "l_scan (thermal and quenched L fluctuations)", "l-scan"),
    ("free_energy_gap", "free_energy_gap (|f_0 - f| <= S^2 (2K+1) K^2 s_n)", "total-scan"),
    ("symmetry", "symmetry (tournament argument for b = c)", "symmetry"),
)


def list_checks() -> list:
    return [f"{name}: {anchor} [{sub}]" for name, anchor, sub in CATALOG]


def _child(seed, i: int) -> np.random.SeedSequence:
    return as_seed_sequence(seed).spawn(i + 1)[i]


# --------------------------------------------------------------------------
# suites; each returns (records, checks)
# --------------------------------------------------------------------------


def run_identities(cfg: ExperimentConfig, seed, jobs: int, tol_z: float):
    mc, r = cfg.model, cfg.run
    reports: list[IdentityReport] = []
    K = mc.K
    fns = nishimori_functionals(K)
    for i, n in enumerate(r.quadrature_n):
        lam = sample_snr_matrix(K, mc.s_n, _child(seed, 100 + i))
        model = mc.build(n).replace(lam=lam)
        for name, g in fns.items():
            reports.append(check_nishimori(g, model, mode="quadrature", name=f"nishimori[{name}]"))
    for i, n in enumerate(r.nishimori_n):
        lam = sample_snr_matrix(K, mc.s_n, _child(seed, 200 + i))
        model = mc.build(n).replace(lam=lam)
        for j, (name, g) in enumerate(fns.items()):
            reports.append(check_nishimori(g, model, draws=r.draws, seed=_child(seed, 300 + 10 * i + j),
                                           name=f"nishimori[{name}]", z_max=tol_z))
    base = mc.build()
    reports.append(check_l_q_relation(base, mc.s_n, r.lambda_draws, r.draws, _child(seed, 1),
                                      jobs=jobs, z_max=tol_z))
    reports.append(check_l_gradient(base, mc.s_n, seed=_child(seed, 2)))
    lam = sample_snr_matrix(K, mc.s_n, _child(seed, 3))
    reports.extend(check_mmse_identity(base.replace(lam=lam), r.draws, _child(seed, 4), tol_z))
    if mc.gen_p is not None:
        gm = mc.build(with_gen=True)
        reports.append(check_gg_identity(constant_functional, 1, gm, r.draws, _child(seed, 5),
                                         s_n=mc.s_n, beta_draws=_beta_draws(cfg),
                                         name="gg[f=1,A=1]", z_max=tol_z))
        reports.append(check_fluctuation_split(gm, r.draws, _child(seed, 6), tol_z).cross)
    reports.append(check_sampler(base, _child(seed, 7), chains=r.chains, sweeps=r.sweeps,
                                 burn_in=r.burn_in, z_max=tol_z))
    checks = {f"{i:02d}:{rep.name}": rep.passed for i, rep in enumerate(reports)}
    return [rep.to_record() for rep in reports], checks


def _beta_draws(cfg):
    if cfg.model.gen_beta == "uniform":
        return cfg.run.beta_draws or 8
    return None


def run_mmse(cfg, seed, jobs, tol_z):
    mc = cfg.model
    lam = sample_snr_matrix(mc.K, mc.s_n, _child(seed, 0))
    reps = check_mmse_identity(mc.build().replace(lam=lam), cfg.run.draws, _child(seed, 1), tol_z)
    return [r.to_record() for r in reps], {r.name: r.passed for r in reps}


def _scan_kwargs(cfg, seed, jobs):
    return dict(schedule=cfg.run.schedule_spec(), lambda_draws=cfg.run.lambda_draws,
                draws=cfg.run.draws, seed=seed, jobs=jobs)


def run_thermal(cfg, seed, jobs, tol_z):
    run = run_thermal_scan(cfg.model.build(), cfg.run.n_grid, **_scan_kwargs(cfg, seed, jobs))
    checks = {
        "q_thermal_decreasing": run.decreasing("q_thermal", tol_z),
        "q_thermal_slope": run.slope("q_thermal") <= cfg.run.slope_q,
        "q_replica_gap_decreasing": run.decreasing("q_replica_gap", tol_z),
        "nonnegative": run.nonnegative(tol_z),
    }
    return run, checks


def run_total(cfg, seed, jobs, tol_z):
    model = cfg.model.build()
    run = run_total_scan(model, cfg.run.n_grid, **_scan_kwargs(cfg, seed, jobs))
    fe = free_energy_constant(run)
    gap = free_energy_gap(model, cfg.model.s_n, cfg.run.lambda_draws, cfg.run.fe_draws,
                          _child(seed, 1), jobs)
    checks = {
        "q_total_decreasing": run.decreasing("q_total", tol_z),
        "decomposition": all(abs(g) <= tol_z * s for g, s in decomposition_gap(run, "q")),
        "c_f_stable": fe["ratio"] <= cfg.run.cf_ratio,
        "free_energy_gap": gap["passed"],
        "nonnegative": run.nonnegative(tol_z),
    }
    for key, val in (("c_f", fe["c_f"]), ("c_f_ratio", fe["ratio"]), ("fe_gap", gap["gap"]),
                     ("fe_gap_se", gap["se"]), ("fe_gap_bound", gap["bound"])):
        run.rows.append(dict(n=model.n, s_n=cfg.model.s_n, observable=key, estimate=float(val),
                             se=0.0, draws_lambda=run.draws_lambda,
                             draws_disorder=cfg.run.fe_draws if "gap" in key else run.draws_disorder))
    return run, checks


def run_l(cfg, seed, jobs, tol_z):
    run = run_l_scan(cfg.model.build(), cfg.run.n_grid, **_scan_kwargs(cfg, seed, jobs))
    checks = {
        "l_thermal_decreasing": run.decreasing("l_thermal", tol_z),
        "l_thermal_slope": run.slope("l_thermal") <= cfg.run.slope_l,
        "l_quenched_decreasing": run.decreasing("l_quenched", tol_z),
        "decomposition": all(abs(g) <= tol_z * s for g, s in decomposition_gap(run, "l")),
        "nonnegative": run.nonnegative(tol_z),
    }
    return run, checks


def run_gg(cfg, seed, jobs, tol_z):
    mc, r = cfg.model, cfg.run
    if mc.gen_p is None:
        raise ConfigError("gg-scan needs model.gen")
    records, ones, q01, braces, cross = [], [], [], [], []
    lam = mc.gen_spec().lambda_vec
    for i, n in enumerate(r.gg_n_grid):
        gm = mc.build(n, with_gen=True)
        kw = dict(draws=r.draws, s_n=mc.s_n, beta_draws=_beta_draws(cfg), z_max=tol_z)
        one = check_gg_identity(constant_functional, 1, gm, seed=_child(seed, 3 * i), name="gg[f=1,A=1]", **kw)
        fq = check_gg_identity(q01_functional(mc.gen_p, lam), 1, gm, seed=_child(seed, 3 * i + 1),
                               name="gg[f=Q01,A=1]", **kw)
        split = check_fluctuation_split(gm, r.draws, _child(seed, 3 * i + 2), tol_z)
        records += [one.to_record(), fq.to_record(), dict(name="fluctuation_split", **split.to_record())]
        ones.append(one.passed)
        q01.append(abs(fq.lhs))
        braces.append(split.brace_sum)
        cross.append(split.cross.passed)
    checks = {
        "gg_constant_all_n": all(ones),
        "cross_identity_all_n": all(cross),
        "brace_sum_decreasing": bool(all(b < a for a, b in zip(braces, braces[1:]))),
        "gg_q01_decreasing": bool(all(b < a for a, b in zip(q01, q01[1:]))),
    }
    return records, checks


def run_symmetry(cfg, seed, jobs, tol_z):
    records, checks = [], {}
    rng = np.random.default_rng(_child(seed, 0))
    # round trip on a random synthetic array
    orient = random_tournament(10, rng)
    a, b, c, d = rng.uniform(-1, 1, 4)
    arr = synthetic_array(a, b, c, d, orient)
    const = extract_constants(arr, 0, 1)
    r_, q_ = solve_offdiagonal(const["x"], const["y"])
    back = orient_tournament(arr, 0, 1, r_, q_)
    flip = b < c   # r >= q, so a pattern with b < c comes back transposed
    checks["round_trip"] = bool(np.allclose([const["a"], const["d"]], [a, d], atol=1e-12)
                                and np.allclose(sorted([r_, q_]), sorted([b, c]), atol=1e-10)
                                and np.array_equal(back.edges, orient.edges ^ flip
                                                   & ~np.eye(10, dtype=bool)))
    # replica-symmetric array
    n_max = max(cfg.run.n_rep_grid)
    rs = analyze_array(replica_symmetric_array(0.8, 0.3, 0.5, n_max))
    records.append(dict(case="replica_symmetric", n_rep=n_max, **json.loads(rs.to_json())))
    checks["rs_gaps"] = max(rs.gap_u, rs.gap_w, rs.cross_gap, rs.bc_gap) <= 1e-10
    gaps = []
    for i, n_rep in enumerate(cfg.run.n_rep_grid):
        arr, h = planted_asymmetry_array(n_rep, seed=_child(seed, 10 + i))
        rep = analyze_array(arr)
        records.append(dict(case="planted", n_rep=n_rep, h=h, **json.loads(rep.to_json())))
        gaps.append(rep.cross_gap)
        checks[f"planted_bounds[{n_rep}]"] = rep.bounds_ok
    checks["planted_cross_gap_shrinks"] = bool(all(y < x for x, y in zip(gaps, gaps[1:])))
    # sampled: posterior replicas at n = 6, K = 2
    mc = cfg.model
    model = mc.build(6).replace(prior=PriorSpec.rademacher(2), gen=None)
    model = model.replace(lam=sample_snr_matrix(2, mc.s_n, _child(seed, 1)))
    from .model import generate_disorder_batch
    d = generate_disorder_batch(model, 1, _child(seed, 2))
    post = Enumeration(model).posterior(d)
    picks = post.sample_indices(np.random.default_rng(_child(seed, 3)), 12)[0]
    sampled = ReplicaOverlapArray.from_replicas(post.configs[picks])
    rep = analyze_array(sampled, constant_tol=np.inf, m_target=None)
    records.append(dict(case="sampled", n=6, K=2, n_rep=12, **json.loads(rep.to_json())))
    return records, checks


SUITES = {
    "identities": (run_identities, "identities.jsonl"),
    "mmse": (run_mmse, "mmse.jsonl"),
    "gg-scan": (run_gg, "gg_scan.jsonl"),
    "symmetry": (run_symmetry, "symmetry.jsonl"),
    "thermal-scan": (run_thermal, "thermal_scan.csv"),
    "total-scan": (run_total, "total_scan.csv"),
    "l-scan": (run_l, "l_scan.csv"),
}


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_seed(cli_seed, cfg: ExperimentConfig) -> int:
    if cli_seed is not None:
        return cli_seed
    if cfg.run.seed is not None:
        return cfg.run.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0


def _write_manifest(out: Path, payload: dict):
    (out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def execute(sub: str, cfg: ExperimentConfig, seed: int, jobs: int, tol_z: float, out: Path) -> int:
    fn, fname = SUITES[sub]
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    manifest = dict(subcommand=sub, config_hash=cfg.digest(), config=json.loads(cfg.canonical_json()),
                    seed=seed, jobs=jobs, tol_z=tol_z, started_at=started,
                    versions=dict(overlap_lab=__version__, python=platform.python_version(),
                                  numpy=np.__version__, scipy=scipy.__version__))
    code, checks, files = 0, {}, []
    try:
        result, checks = fn(cfg, seed, jobs, tol_z)
        path = out / fname
        if isinstance(result, ScalingRun):
            result.write_csv(path)
            manifest["slopes"] = result.slopes()
            manifest["notes"] = result.notes
        else:
            write_jsonl(path, result)
        files.append(path)
        code = 0 if all(checks.values()) else 1
        status = "ok" if code == 0 else "check-failure"
    except ResourceLimit as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        code, status = 3, "resource-limit"
    for name, ok in checks.items():
        if not ok:
            print(f"check failed: {sub}/{name}", file=sys.stderr)
    manifest.update(status=status, exit_code=code, checks=checks,
                    wall_time_s=time.perf_counter() - t0,
                    files={p.name: _sha256(p) for p in files})
    _write_manifest(out, manifest)
    return code


def _synth(args, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "rs":
        arr, extra = replica_symmetric_array(args.a, args.b, args.d, args.n_rep), {}
    elif args.kind == "planted":
        arr, h = planted_asymmetry_array(args.n_rep, seed=args.seed or 0)
        extra = dict(h=h)
    else:
        o = random_tournament(args.n_rep, args.seed or 0)
        arr, extra = synthetic_array(args.a, args.b, args.c, args.d, o), dict(edges=o.edges.astype(int).tolist())
    payload = dict(kind=args.kind, n_rep=args.n_rep, blocks=arr.blocks.tolist(), **extra)
    (out / f"synthetic_{args.kind}.json").write_text(json.dumps(payload, sort_keys=True) + "\n")
    return 0


SUITE_HELP = {
    "identities": "sampler, Nishimori, L-Q and gradient checks",
    "mmse": "matrix and scalar MMSE identities",
    "gg-scan": "generalized-overlap identity and fluctuation split over n",
    "symmetry": "tournament, subset and barycentre checks on overlap arrays",
    "thermal-scan": "thermal overlap fluctuation versus n",
    "total-scan": "total overlap fluctuation and free energy versus n",
    "l-scan": "thermal L fluctuation versus n",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (default: built-in)")
    common.add_argument("--seed", type=int, help=f"root seed; falls back to the config, then ${SEED_ENV}")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--tol-z", type=float, default=None,
                        help=f"z threshold for checks (default: run.tol_z, {DEFAULT_Z_MAX})")
    p = argparse.ArgumentParser(prog="overlap-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in SUITE_HELP.items():
        sub.add_parser(name, parents=[common], help=text)
    sub.add_parser("list-checks", help="print the check catalog")
    sub.add_parser("default-config", help="print the built-in config")
    s = sub.add_parser("synth-array", parents=[common], help="write a synthetic overlap array")
    s.add_argument("--kind", choices=("rs", "planted", "alternating"), default="planted")
    s.add_argument("--n-rep", type=int, default=16)
    for key, val in (("a", 0.8), ("b", 0.3), ("c", 0.1), ("d", 0.5)):
        s.add_argument(f"--{key}", type=float, default=val)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-checks":
        for line in list_checks():
            print(line)
        return 0
    if args.command == "default-config":
        sys.stdout.write(DEFAULT_CONFIG_YAML)
        return 0
    try:
        cfg = load_config(args.config) if args.config else parse_config(None)
        seed = _resolve_seed(args.seed, cfg)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.tol_z is None:
            args.tol_z = cfg.run.tol_z
        if args.tol_z <= 0:
            raise ConfigError("--tol-z must be positive")
        jobs = default_jobs() if args.jobs is None else args.jobs
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.output.dir)
    if args.command == "synth-array":
        args.seed = seed
        return _synth(args, out)
    return execute(args.command, cfg, seed, jobs, args.tol_z, out)


if __name__ == "__main__":
    sys.exit(main())
