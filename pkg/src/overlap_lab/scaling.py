"""Fluctuation magnitudes across system sizes, averaged over the SNR ensemble.

Every estimate is a nested Monte Carlo average: uniform SNR matrices outside,
disorder realizations inside, exact posterior brackets innermost.  Each grid
point gets its own seed stream (shapes differ across n, so common random
numbers are not possible there).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .identities import _chunk_for
from .model import Model, as_seed_sequence, generate_disorder_batch, lambda_streams, rebuild
from .observables import l_values_batch, q_values
from .parallel import ordered_map
from .posterior import Enumeration

CSV_COLUMNS = ("n", "s_n", "observable", "estimate", "se", "draws_lambda", "draws_disorder")


@dataclass(frozen=True)
class SSchedule:
    """s_n = s (``fixed``) or s_n = s * n**(-beta_s) (``power``)."""

    kind: str = "fixed"
    s: float = 0.5
    beta_s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "power"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if not 0 < self.s <= 1:
            raise ValueError("s must lie in (0, 1]")

    def at(self, n: int) -> float:
        return self.s if self.kind == "fixed" else self.s * n ** (-self.beta_s)


@dataclass
class ScalingRun:
    name: str
    n_grid: list
    schedule: SSchedule
    draws_lambda: int
    draws_disorder: int
    rows: list = field(default_factory=list)
    notes: str = ("finite-n estimates; fitted exponents are indicative only, the "
                  "asymptotic regime s_n -> 0 with s_n^4 n -> infinity is out of reach")

    def add(self, n, observable, estimate, se):
        self.rows.append(dict(n=int(n), s_n=float(self.schedule.at(n)), observable=observable,
                              estimate=float(estimate), se=float(se),
                              draws_lambda=self.draws_lambda, draws_disorder=self.draws_disorder))

    @property
    def observables(self) -> list:
        return list(dict.fromkeys(r["observable"] for r in self.rows))

    def series(self, observable):
        """(n, estimate, se) arrays for one observable, in grid order."""
        rows = [r for r in self.rows if r["observable"] == observable]
        return tuple(np.array([r[k] for r in rows]) for k in ("n", "estimate", "se"))

    def slope(self, observable) -> float:
        """Least-squares slope of log(estimate) against log(n)."""
        n, est, _ = self.series(observable)
        if len(n) < 2 or np.any(est <= 0):
            return float("nan")
        return float(np.polyfit(np.log(n), np.log(est), 1)[0])

    def decreasing(self, observable, z: float = 3.0) -> bool:
        """Each step down exceeds z combined standard errors."""
        _, est, se = self.series(observable)
        drops = est[:-1] - est[1:]
        return bool(np.all(drops > z * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)))

    def nonnegative(self, z: float = 3.0) -> bool:
        return all(r["estimate"] >= -z * r["se"] for r in self.rows)

    def slopes(self) -> dict:
        return {o: self.slope(o) for o in self.observables}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else v


# --------------------------------------------------------------------------
# nested averages
# --------------------------------------------------------------------------


def _functional_one(functional, model, lam, ss, draws):
    m = model.replace(lam=lam)
    enum = Enumeration(m)
    batch = generate_disorder_batch(m, draws, ss)
    vals = [np.asarray(functional(m, post), float) for post in enum.chunks(batch)]
    return np.concatenate(vals).mean(0)


def estimate_lambda_average(functional: Callable, model: Model, s_n: float,
                            lambda_draws: int = 64, draws: int = 10_000, seed=0,
                            jobs: int = 1):
    """E_lam E[functional] with its standard error.

    ``functional(model, post)`` returns per-disorder values (leading axis B)
    for the model carrying the drawn SNR matrix.  The standard error is the
    spread of the per-matrix means over sqrt(lambda_draws).
    """
    streams = lambda_streams(model.K, s_n, lambda_draws, seed)
    means = np.array(ordered_map(_functional_one,
                                 [(functional, model, lam, ss, draws) for lam, ss in streams],
                                 jobs))
    se = means.std(0, ddof=1) / np.sqrt(len(means)) if len(means) > 1 else np.zeros(means.shape[1:])
    return means.mean(0), se


def _per_disorder(model: Model, lam, ss, draws: int, want_l: bool, want_f: bool) -> dict:
    """Per-disorder bracket summaries for one SNR matrix."""
    m = model.replace(lam=lam)
    enum = Enumeration(m)
    batch = generate_disorder_batch(m, draws, ss)
    K = m.K
    acc = {k: [] for k in ("Q", "Q2", "Q12", "L", "L2", "F")}
    for post in enum.chunks(batch, _chunk_for(len(enum) * K * K)):
        qv = q_values(post)
        acc["Q"].append(post.bracket(qv))
        acc["Q2"].append(post.bracket(np.sum(qv**2, (-2, -1))))
        mean = post.mean()
        acc["Q12"].append(np.einsum("bik,bil->bkl", mean, mean) / m.n)
        if want_l:
            lv = l_values_batch(post, lam)
            acc["L"].append(post.bracket(lv))
            acc["L2"].append(post.bracket(np.sum(lv**2, (-2, -1))))
        if want_f:
            acc["F"].append(-post.log_z / m.n)
    return {k: np.concatenate(v) for k, v in acc.items() if v}


def _mean_se(v):
    v = np.asarray(v, float)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0


def _fluct(mean, sq):
    """Per-disorder thermal, total and quenched pieces for <M>, <||M||^2>."""
    bar = mean.mean(0)
    thermal = sq - np.sum(mean**2, (1, 2))
    # direct route: <||M - E<M>||^2> expanded around the disorder mean
    total = sq - 2 * np.einsum("bkl,kl->b", mean, bar) + np.sum(bar**2)
    B = len(mean)
    quenched = np.sum((mean - bar) ** 2, (1, 2)) * B / (B - 1)
    return dict(thermal=thermal, total=total, quenched=quenched)


def _per_lambda_stats(d: dict, n: int, want: tuple) -> dict:
    """Per-matrix (estimate, se) for every requested observable."""
    out = {}
    if "q" in want:
        for k, v in _fluct(d["Q"], d["Q2"]).items():
            out[f"q_{k}"] = _mean_se(v)
        A = d["Q12"]
        gap = d["Q2"] - 2 * np.einsum("bkl,bkl->b", d["Q"], A) + np.sum(A**2, (1, 2))
        out["q_replica_gap"] = _mean_se(gap)
    if "l" in want:
        for k, v in _fluct(d["L"], d["L2"]).items():
            out[f"l_{k}"] = _mean_se(v)
    if "f" in want:
        F = d["F"]
        dev = (F - F.mean()) ** 2 * len(F) / (len(F) - 1)
        out["n_var_f"] = tuple(n * x for x in _mean_se(dev))
    return out


def _scan_one(model, lam, ss, draws, want):
    d = _per_disorder(model, lam, ss, draws, "l" in want, "f" in want)
    return _per_lambda_stats(d, model.n, want)


def _run_scan(name: str, model: Model, n_grid, schedule: SSchedule, lambda_draws: int,
              draws: int, seed, jobs: int, want: tuple, keep: tuple | None) -> ScalingRun:
    if list(n_grid) != sorted(n_grid):
        raise ValueError("n_grid must be nondecreasing")
    run = ScalingRun(name, list(n_grid), schedule, lambda_draws, draws)
    for n, n_ss in zip(n_grid, as_seed_sequence(seed).spawn(len(n_grid))):
        m = model.replace(n=n, lam=None)
        s_n = schedule.at(n)
        streams = lambda_streams(m.K, s_n, lambda_draws, n_ss)
        per = ordered_map(_scan_one, [(m, lam, ss, draws, want) for lam, ss in streams], jobs)
        for obs in per[0]:
            if keep is not None and obs not in keep:
                continue
            est = np.array([p[obs][0] for p in per])
            within = np.array([p[obs][1] for p in per])
            if len(est) > 1:
                se = est.std(ddof=1) / np.sqrt(len(est))
            else:
                se = within[0]
            run.add(n, obs, est.mean(), se)
    return run


def run_thermal_scan(model: Model, n_grid, schedule: SSchedule = SSchedule(),
                     lambda_draws: int = 64, draws: int = 10_000, seed=0, jobs: int = 1) -> ScalingRun:
    """E_lam E<||Q - <Q>||^2> and E_lam E<||Q - <Q^(12)>||^2> per n."""
    return _run_scan("thermal", model, n_grid, schedule, lambda_draws, draws, seed, jobs,
                     ("q",), ("q_thermal", "q_replica_gap"))


def run_total_scan(model: Model, n_grid, schedule: SSchedule = SSchedule("power", 0.5, 0.1),
                   lambda_draws: int = 64, draws: int = 10_000, seed=0, jobs: int = 1) -> ScalingRun:
    """Total, thermal and quenched Q fluctuations and n Var(F_n) per n."""
    return _run_scan("total", model, n_grid, schedule, lambda_draws, draws, seed, jobs,
                     ("q", "f"), ("q_total", "q_thermal", "q_quenched", "n_var_f"))


def run_l_scan(model: Model, n_grid, schedule: SSchedule = SSchedule(),
               lambda_draws: int = 64, draws: int = 10_000, seed=0, jobs: int = 1) -> ScalingRun:
    """Thermal, quenched and total fluctuations of the L matrix per n."""
    return _run_scan("l", model, n_grid, schedule, lambda_draws, draws, seed, jobs,
                     ("l",), ("l_thermal", "l_quenched", "l_total"))


def decomposition_gap(run: ScalingRun, prefix: str):
    """Per n: (total - thermal - quenched, combined se)."""
    out = []
    for n in run.n_grid:
        vals = {r["observable"]: r for r in run.rows if r["n"] == n}
        t, th, qu = (vals[f"{prefix}_{k}"] for k in ("total", "thermal", "quenched"))
        out.append((t["estimate"] - th["estimate"] - qu["estimate"],
                    float(np.sqrt(t["se"] ** 2 + th["se"] ** 2 + qu["se"] ** 2))))
    return out


def free_energy_constant(run: ScalingRun) -> dict:
    """C_f estimate max_n n Var(F_n) and the spread ratio max/min over the grid."""
    _, est, _ = run.series("n_var_f")
    return dict(c_f=float(est.max()), ratio=float(est.max() / est.min()))


# --------------------------------------------------------------------------
# effect of the side channel on the free energy
# --------------------------------------------------------------------------


def _gap_one(model, lam, ss, draws):
    m = model.replace(lam=lam)
    m0 = model.replace(lam=None)
    batch = generate_disorder_batch(m, draws, ss)
    base = rebuild(m0, batch.X_index, batch.base_noise, batch.pert_noise, batch.gen_noise)
    f = np.concatenate([-p.log_z for p in Enumeration(m).chunks(batch)])
    f0 = np.concatenate([-p.log_z for p in Enumeration(m0).chunks(base)])
    return (f - f0) / model.n


def free_energy_gap(model: Model, s_n: float, lambda_draws: int = 16, draws: int = 1000,
                    seed=0, jobs: int = 1) -> dict:
    """f_n - f_{0,n} on common random numbers, with the bound S^2 (2K+1) K^2 s_n."""
    streams = lambda_streams(model.K, s_n, lambda_draws, seed)
    diffs = ordered_map(_gap_one, [(model, lam, ss, draws) for lam, ss in streams], jobs)
    per = np.array([d.mean() for d in diffs])
    gap = float(per.mean())
    se = float(per.std(ddof=1) / np.sqrt(len(per))) if len(per) > 1 else \
        float(diffs[0].std(ddof=1) / np.sqrt(len(diffs[0])))
    S, K = model.prior.bound, model.K
    bound = S**2 * (2 * K + 1) * K**2 * s_n
    return dict(gap=gap, se=se, bound=bound, n=model.n, s_n=s_n,
                passed=bool(abs(gap) <= bound + 3 * se))
