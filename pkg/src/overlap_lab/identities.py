"""Statistical and exact checks of the Bayes-optimal identities.

All checks use exact posterior brackets (enumeration over configurations)
and average over disorder either by Monte Carlo or, for the Nishimori
check at very small n, by a quadrature over the observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import (DisorderBatch, Model, as_seed_sequence, generate_disorder, generate_disorder_batch,
                    lambda_streams, pert_energy, sample_snr_matrix)
from .observables import (generalized_features, l_matrix, l_values_batch, lgen_values_batch,
                          mmse_batch, overlap, q_values)
from .parallel import ordered_map
from .posterior import _CHUNK_CELLS, Enumeration, ResourceLimit, gibbs_sample

DEFAULT_Z_MAX = 3.0
DEFAULT_ATOL = 1e-8
TUPLE_BUDGET = 2**20


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class IdentityReport:
    """Both sides of an identity with the standard error of their difference.

    ``lhs``, ``rhs`` and ``se`` may be scalars or arrays of equal shape; the
    check passes when every entry satisfies
    ``|lhs - rhs| <= max(z_max * se, atol) + slack``.  With ``combined`` the
    entries are pooled into one statistic ``||lhs - rhs|| / sqrt(sum se^2)``.
    """

    name: str
    lhs: object
    rhs: object
    se: object
    zscore: float
    passed: bool
    samples: int
    mode: str = "mc"
    z_max: float = DEFAULT_Z_MAX
    atol: float = DEFAULT_ATOL
    slack: float = 0.0
    details: dict = field(default_factory=dict)

    @classmethod
    def build(cls, name, lhs, rhs, se, samples, mode="mc", z_max=DEFAULT_Z_MAX,
              atol=DEFAULT_ATOL, slack=0.0, combined=False, details=None) -> "IdentityReport":
        lhs_a, rhs_a = np.asarray(lhs, float), np.asarray(rhs, float)
        se_a = np.broadcast_to(np.asarray(se, float), lhs_a.shape)
        diff = np.abs(lhs_a - rhs_a)
        if combined:
            d, s = float(np.sqrt(np.sum(diff**2))), float(np.sqrt(np.sum(se_a**2)))
            z = _ratio(d, s, atol)
            passed = d <= max(z_max * s, atol) + slack
        else:
            z = float(np.max(np.vectorize(_ratio)(diff, se_a, atol), initial=0.0))
            passed = bool(np.all(diff <= np.maximum(z_max * se_a, atol) + slack))
        return cls(name, _unwrap(lhs_a), _unwrap(rhs_a), _unwrap(se_a.copy()), z, bool(passed),
                   int(samples), mode, z_max, atol, slack, dict(details or {}))

    @classmethod
    def from_paired(cls, name, lhs_vals, rhs_vals, **kw) -> "IdentityReport":
        """Report from per-disorder values of the two sides (leading axis)."""
        lhs_vals = np.asarray(lhs_vals, float)
        rhs_vals = np.asarray(rhs_vals, float)
        B = lhs_vals.shape[0]
        se = (lhs_vals - rhs_vals).std(0, ddof=1) / np.sqrt(B) if B > 1 else np.zeros(lhs_vals.shape[1:])
        return cls.build(name, lhs_vals.mean(0), rhs_vals.mean(0), se, B, **kw)

    def to_record(self) -> dict:
        rec = {k: _jsonable(getattr(self, k)) for k in
               ("name", "mode", "lhs", "rhs", "se", "zscore", "passed", "samples",
                "z_max", "atol", "slack")}
        rec["details"] = _jsonable(self.details)
        return rec

    def summary(self) -> str:
        return (f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: z={self.zscore:.3g} "
                f"({self.mode}, {self.samples} samples)")


def _ratio(d: float, s: float, atol: float = DEFAULT_ATOL) -> float:
    # exact checks have no standard error; measure them in units of atol
    return float(d / s) if s > 0 else float(d / atol)


def _unwrap(a: np.ndarray):
    return float(a) if a.ndim == 0 else a


def write_jsonl(path, records, append: bool = False) -> None:
    """One JSON object per line; key order is fixed so output is reproducible."""
    with open(path, "a" if append else "w") as fh:
        for rec in records:
            if hasattr(rec, "to_record"):
                rec = rec.to_record()
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")


def _chunk_for(cells_per_disorder: int) -> int:
    return max(1, _CHUNK_CELLS // max(1, cells_per_disorder))


# --------------------------------------------------------------------------
# Nishimori identity
# --------------------------------------------------------------------------

_AX = "mnopq"


def kernel_tensor(g: Callable, configs: np.ndarray, replicas: int,
                  budget: int = TUPLE_BUDGET) -> np.ndarray:
    """g evaluated on every ``replicas``-tuple of configurations; shape (M,)*k."""
    M = configs.shape[0]
    if M**replicas > budget:
        raise ResourceLimit(f"{M}**{replicas} replica tuples exceed budget {budget}")
    args = []
    for a in range(replicas):
        shape = [1] * replicas
        shape[a] = M
        args.append(configs.reshape(tuple(shape) + configs.shape[1:]))
    return np.broadcast_to(np.asarray(g(*args), float), (M,) * replicas)


def _bracket_all(G: np.ndarray, w: np.ndarray) -> np.ndarray:
    """<g(x1..xk)> with every argument a replica; (B,)."""
    k = G.ndim
    subs = ",".join("b" + c for c in _AX[:k]) + "," + _AX[:k] + "->b"
    return np.einsum(subs, *([w] * k), G, optimize=True)


def _bracket_rest(G: np.ndarray, w: np.ndarray) -> np.ndarray:
    """<g(c, x2..xk)> for every configuration c in the first slot; (B, M)."""
    k = G.ndim
    if k == 1:
        return np.broadcast_to(G, w.shape)
    subs = ",".join("b" + c for c in _AX[1:k]) + "," + _AX[:k] + "->b" + _AX[0]
    return np.einsum(subs, *([w] * (k - 1)), G, optimize=True)


def check_nishimori(g: Callable, model: Model, replicas: int = 2, mode: str = "mc",
                    draws: int = 10_000, seed=0, name: str = "nishimori",
                    posterior_model: Model | None = None, z_max: float = DEFAULT_Z_MAX,
                    atol: float = DEFAULT_ATOL, quad_nodes: int = 2**16,
                    quad_order: int | None = None) -> IdentityReport:
    """E<g(x1, x2, ..)> against E<g(X, x2, ..)>.

    ``g`` takes ``replicas`` broadcastable config arrays.  Data are generated
    from ``model``; brackets use ``posterior_model`` (default: the same
    model, i.e. the Bayes posterior).  A mismatched posterior breaks the
    identity, which the tests use as a negative control.

    ``mode="quadrature"`` replaces the disorder average by a tensor
    Gauss-Hermite rule over the observations.  Both sides are then the same
    finite double sum, so they agree to rounding error exactly when the
    brackets are the true posterior; the disorder weights come from an
    explicit Gaussian likelihood, independent of the energy code.
    """
    pm = model if posterior_model is None else posterior_model
    enum = Enumeration(pm)
    G = kernel_tensor(g, enum.configs, replicas)
    if mode == "quadrature":
        return _nishimori_quadrature(G, model, enum, name, quad_nodes, quad_order)
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    batch = generate_disorder_batch(model, draws, seed)
    lhs, rhs = [], []
    for post in enum.chunks(batch, _chunk_for(len(enum) ** max(1, replicas - 1))):
        lhs.append(_bracket_all(G, post.weights))
        rest = _bracket_rest(G, post.weights)
        rhs.append(rest[np.arange(len(rest)), post.signal_pos])
    return IdentityReport.from_paired(name, np.concatenate(lhs), np.concatenate(rhs),
                                      z_max=z_max, atol=atol,
                                      details=dict(n=model.n, K=model.K, replicas=replicas))


def _channel_means(model: Model, configs: np.ndarray) -> np.ndarray:
    M = configs.shape[0]
    parts = [model.tensor_mean(configs), model.pert_mean(configs).reshape(M, -1),
             model.gen_mean(configs)]
    return np.concatenate(parts, axis=-1)


def _nishimori_quadrature(G, model, enum, name, max_nodes, order) -> IdentityReport:
    mu = _channel_means(model, model.prior.atoms[enum.index])
    M, D = mu.shape
    if order is None:
        order = int(min(24, max(2, np.floor(max_nodes ** (1.0 / max(D, 1)) + 1e-9))))
    if order**D > max_nodes:
        raise ResourceLimit(f"{order}**{D} quadrature nodes exceed {max_nodes}")
    t, wt = np.polynomial.hermite_e.hermegauss(order)
    wt = wt / np.sqrt(2 * np.pi)
    scale = 1.0 + float(np.max(np.abs(mu), initial=0.0))
    grid = np.array(np.meshgrid(*([np.arange(order)] * D), indexing="ij")).reshape(D, -1).T
    tq = t[grid]                                   # (Q, D)
    y = scale * tq
    # reweight the rule from N(0, scale^2) to the data density; 1/sqrt(2 pi) cancels
    log_omega = np.log(wt)[grid].sum(1) + D * np.log(scale) + 0.5 * np.sum(tq**2, 1)
    log_prior = model.prior.log_weights[enum.index].sum(1)
    Q = y.shape[0]
    batch = _observation_batch(model, y)
    # J[q, X] = omega_q P0(X) p(y_q | X), with an explicit Gaussian likelihood
    logJ = (log_omega[:, None] + log_prior[None]
            - 0.5 * np.sum((y[:, None, :] - mu[None]) ** 2, -1))
    log_shift = float(logJ.max())
    J = np.exp(logJ - log_shift)
    lhs_num = rhs_num = 0.0
    step = _chunk_for(M)
    for start in range(0, Q, step):
        sl = slice(start, start + step)
        w = enum.posterior(batch[sl]).weights
        lhs_num += float(J[sl].sum(1) @ _bracket_all(G, w))
        rhs_num += float(np.sum(J[sl] * _bracket_rest(G, w)))
    mass = float(J.sum())
    lhs, rhs = lhs_num / mass, rhs_num / mass
    return IdentityReport.build(name, lhs, rhs, 0.0, Q, mode="quadrature",
                                details=dict(n=model.n, K=model.K, order=order, dims=D,
                                             mass=mass * np.exp(log_shift)))


def _observation_batch(model: Model, y: np.ndarray) -> DisorderBatch:
    """Disorder batch carrying only observations (signal and noise unused)."""
    Q = y.shape[0]
    T = model.tensor_index.shape[0]
    Kp = model.K if model.lam is not None else 0
    P = model.n * Kp
    Gd = model.gen_index.shape[0] if model.gen is not None else 0
    zeros_x = np.zeros((Q, model.n, model.K))
    return DisorderBatch(
        X=zeros_x, X_index=np.zeros((Q, model.n), np.intp),
        base_noise=np.zeros((Q, T)), pert_noise=np.zeros((Q, model.n, Kp)),
        gen_noise=np.zeros((Q, Gd)),
        Y_base=y[:, :T], Y_pert=y[:, T:T + P].reshape(Q, model.n, Kp), Y_gen=y[:, T + P:],
    )


def nishimori_functionals(K: int, p: int = 2, lambda_vec=None) -> dict:
    """Standard two-replica test functions: overlap entries, ||R||^2, Q^(p)."""
    lam = np.ones(K) if lambda_vec is None else np.asarray(lambda_vec, float)
    out = {}
    for k in range(K):
        for kp in range(K):
            out[f"R[{k},{kp}]"] = (lambda a, b, k=k, kp=kp: overlap(a, b)[..., k, kp])
    out["|R|^2"] = lambda a, b: np.sum(overlap(a, b) ** 2, (-2, -1))
    out[f"Q^({p})"] = lambda a, b: np.einsum("k,...kl,l->...", lam, overlap(a, b) ** p, lam)
    return out


# --------------------------------------------------------------------------
# L <-> Q relation
# --------------------------------------------------------------------------


def _lq_one(model: Model, lam, dis_ss, draws: int):
    m = model.replace(lam=lam)
    enum = Enumeration(m)
    batch = generate_disorder_batch(m, draws, dis_ss)
    Ls, Qs = [], []
    K = m.K
    for post in enum.chunks(batch, _chunk_for(len(enum) * K * K)):
        Ls.append(post.bracket(l_values_batch(post, lam)))
        Qs.append(post.bracket(q_values(post)))
    L, Q = np.concatenate(Ls), np.concatenate(Qs)
    T = -Q.copy()
    diag = np.arange(K)
    T[:, diag, diag] = -0.5 * Q[:, diag, diag]
    diff = L - T
    return L.mean(0), T.mean(0), diff.var(0, ddof=1), len(diff)


def check_l_q_relation(model: Model, s_n: float, lambda_draws: int = 16, draws: int = 10_000,
                       seed=0, jobs: int = 1, z_max: float = DEFAULT_Z_MAX,
                       atol: float = DEFAULT_ATOL) -> IdentityReport:
    """E_lam E<L> against 1/2 diag(E<Q>) - E<Q>, entrywise.

    Outer average over ``lambda_draws`` uniform SNR matrices, inner over
    ``draws`` disorders per matrix.  The identity holds for each matrix, so
    the standard error pools the within-matrix variances.
    """
    streams = lambda_streams(model.K, s_n, lambda_draws, seed)
    res = ordered_map(_lq_one, [(model, lam, ss, draws) for lam, ss in streams], jobs)
    L = np.mean([r[0] for r in res], 0)
    T = np.mean([r[1] for r in res], 0)
    se = np.sqrt(sum(r[2] / r[3] for r in res)) / len(res)
    return IdentityReport.build("l_q_relation", L, T, se, sum(r[3] for r in res),
                                z_max=z_max, atol=atol,
                                details=dict(n=model.n, K=model.K, s_n=s_n,
                                             lambda_draws=lambda_draws, draws=draws))


def check_l_gradient(model: Model, s_n: float, instances: int = 100, eps: float = 1e-6,
                     seed=0, rtol: float = 1e-4) -> IdentityReport:
    """Per-realization check that L is (1/n) dH_lambda/dlambda, by central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    K, n = model.K, model.n
    for _ in range(instances):
        lam = sample_snr_matrix(K, s_n, rng)
        m = model.replace(lam=lam)
        d = generate_disorder(m, rng.integers(2**63))
        x = model.prior.atoms[rng.choice(model.prior.n_atoms, n, p=model.prior.weights)]
        L = l_matrix(x, d, lam)
        fd = np.zeros((K, K))
        for l in range(K):
            for lp in range(l, K):
                up = pert_energy(m, x, d, lam.perturbed(l, lp, eps))
                dn = pert_energy(m, x, d, lam.perturbed(l, lp, -eps))
                fd[l, lp] = fd[lp, l] = (up - dn) / (2 * eps * n)
        worst = max(worst, float(np.linalg.norm(L - fd) / max(np.linalg.norm(L), 1e-300)))
    return IdentityReport.build("l_gradient", worst, 0.0, 0.0, instances, mode="exact",
                                atol=rtol, details=dict(eps=eps, K=K, n=n))


# --------------------------------------------------------------------------
# MMSE identities
# --------------------------------------------------------------------------


def check_mmse_identity(model: Model, draws: int = 10_000, seed=0,
                        z_max: float = DEFAULT_Z_MAX, matrix_slack: float | None = None):
    """Scalar MMSE, MMSE matrix and matrix-MMSE against their overlap forms.

    The matrix-MMSE relation holds up to an O(1/n) term, absorbed by a
    slack of ``2/n`` unless given.
    """
    enum = Enumeration(model)
    batch = generate_disorder_batch(model, draws, seed)
    m2 = model.prior.second_moment()
    K = model.K
    acc = {k: [] for k in ("mmse", "mmse_matrix", "matrix_mmse", "Q", "Q2")}
    for post in enum.chunks(batch, _chunk_for(len(enum) * K * K)):
        mb = mmse_batch(post)
        qv = q_values(post)
        for k in ("mmse", "mmse_matrix", "matrix_mmse"):
            acc[k].append(mb[k])
        acc["Q"].append(post.bracket(qv))
        acc["Q2"].append(post.bracket(np.sum(qv**2, (-2, -1))))
    a = {k: np.concatenate(v) for k, v in acc.items()}
    Qs = 0.5 * (a["Q"] + np.swapaxes(a["Q"], 1, 2))
    slack = 2.0 / model.n if matrix_slack is None else matrix_slack
    info = dict(n=model.n, K=K)
    return [
        IdentityReport.from_paired("mmse", a["mmse"], np.trace(m2) - np.trace(a["Q"], axis1=1, axis2=2),
                                   z_max=z_max, details=info),
        IdentityReport.from_paired("mmse_matrix", a["mmse_matrix"], m2[None] - Qs,
                                   z_max=z_max, details=info),
        IdentityReport.from_paired("matrix_mmse", a["matrix_mmse"], np.sum(m2**2) - a["Q2"],
                                   z_max=z_max, slack=slack, details=info),
    ]


# --------------------------------------------------------------------------
# sampler against enumeration
# --------------------------------------------------------------------------


def check_sampler(model: Model, seed=0, disorders: int = 4, chains: int = 100,
                  sweeps: int = 300, burn_in: int = 100, z_max: float = DEFAULT_Z_MAX) -> IdentityReport:
    """Gibbs-estimated E<Q> against exact brackets on the same disorders.

    The entries are pooled into one z-statistic so that the check has a
    single false-alarm rate whatever K is.
    """
    root = as_seed_sequence(seed)
    enum = Enumeration(model)
    gibbs, exact, var = [], [], []
    rhat = 0.0
    for ss in root.spawn(disorders):
        d_ss, g_ss = ss.spawn(2)
        d = generate_disorder_batch(model, 1, d_ss).sample(0)
        rb = gibbs_sample(model, d, chains, sweeps, burn_in, g_ss)
        vals = overlap(d.X, rb.replicas)
        gibbs.append(vals.mean(0))
        var.append(vals.var(0, ddof=1) / chains)
        post = enum.posterior(d.as_batch())
        exact.append(post.bracket(q_values(post))[0])
        rhat = max(rhat, rb.diagnostics["rhat_max"])
    se = np.sqrt(np.sum(var, 0)) / disorders
    return IdentityReport.build("sampler_vs_exact", np.mean(gibbs, 0), np.mean(exact, 0), se,
                                disorders * chains, combined=True, z_max=z_max,
                                details=dict(n=model.n, K=model.K, snr=model.base.snr,
                                             chains=chains, sweeps=sweeps, rhat_max=rhat))


# --------------------------------------------------------------------------
# Ghirlanda-Guerra identity for generalized overlaps
# --------------------------------------------------------------------------


def constant_functional(x0, *xs):
    return np.ones(np.broadcast_shapes(*(a.shape[:-2] for a in (x0,) + xs)))


def q01_functional(p: int, lambda_vec):
    """f = Q^(p) between the signal and replica 1."""
    lam = np.asarray(lambda_vec, float)
    return lambda x0, x1, *rest: np.einsum("k,...kl,l->...", lam, overlap(x0, x1) ** p, lam)


@dataclass
class GGTerms:
    """Per-disorder pieces of the GG combination for one model."""

    main: np.ndarray    # T1 - T3 + T4
    q01: np.ndarray     # <Q01>
    f: np.ndarray       # <f>
    lf: np.ndarray      # <L f>
    l: np.ndarray       # <L>


def gg_terms(f: Callable, A: int, model: Model, draws: int, seed,
             budget: int = TUPLE_BUDGET) -> GGTerms:
    if A < 1:
        raise ValueError("A must be >= 1")
    gen = model.gen
    enum = Enumeration(model)
    C, M = enum.configs, len(enum)
    if M**A > budget:
        raise ResourceLimit(f"{M}**{A} replica tuples exceed budget {budget}")
    Phi = generalized_features(C, model)
    idx = np.array(np.meshgrid(*([np.arange(M)] * A), indexing="ij")).reshape(A, -1).T
    if A > 1:
        F = Phi @ Phi.T
        Fa = sum(F[idx[:, 0], idx[:, a]] for a in range(1, A))
    else:
        Fa = np.zeros(len(idx))
    xs = [C[idx[:, a]][None] for a in range(A)]
    batch = generate_disorder_batch(model, draws, seed)
    out = {k: [] for k in ("main", "q01", "f", "lf", "l")}
    for post in enum.chunks(batch, _chunk_for(len(idx))):
        w = post.weights
        W = np.prod([w[:, idx[:, a]] for a in range(A)], axis=0)
        fv = np.broadcast_to(np.asarray(f(post.disorder.X[:, None], *xs), float), W.shape)
        Wf = W * fv
        q01 = Phi[post.signal_pos] @ Phi.T
        Fw = (w @ Phi) @ Phi.T
        L = lgen_values_batch(post, model)
        first = idx[:, 0]
        t1 = (Wf @ Fa) / A
        t3 = np.sum(Wf * Fw[:, first], 1)
        t4 = 2.0 / A * np.sum(Wf * q01[:, first], 1)
        out["main"].append(t1 - t3 + t4)
        out["q01"].append(np.sum(w * q01, 1))
        out["f"].append(Wf.sum(1))
        out["lf"].append(np.sum(Wf * L[:, first], 1))
        out["l"].append(np.sum(w * L, 1))
    return GGTerms(**{k: np.concatenate(v) for k, v in out.items()})


def _gg_estimate(t: GGTerms, A: int, gamma: float):
    qb, fb = t.q01.mean(), t.f.mean()
    resid = t.main.mean() - qb * fb / A
    infl = t.main - (qb * t.f + fb * t.q01) / A
    se = infl.std(ddof=1) / np.sqrt(len(infl))
    ibp = -(t.lf.mean() - t.l.mean() * fb) / (gamma * A)
    return resid, se, ibp


def check_gg_identity(f: Callable, A: int, model: Model, draws: int = 10_000, seed=0,
                      s_n: float | None = None, beta_draws: int | None = None,
                      name: str = "gg", z_max: float = DEFAULT_Z_MAX,
                      atol: float = DEFAULT_ATOL) -> IdentityReport:
    """The four-term GG combination at the model's size n (target value 0).

    With ``beta_draws`` the strength is gamma = s_n * beta for beta drawn
    uniformly from [1, 2] and the signed residuals are averaged; otherwise
    the model's fixed gamma is used.  ``details['ibp_form']`` carries the
    same quantity computed as -Cov(L^(p), f) / (gamma A), which equals the
    combination exactly at every n.
    """
    if model.gen is None:
        raise ValueError("the generalized perturbation must be active")
    if beta_draws:
        if s_n is None:
            raise ValueError("s_n is required for beta averaging")
        rng = np.random.default_rng(as_seed_sequence(seed).spawn(1)[0])
        betas = rng.uniform(1.0, 2.0, beta_draws)
        seeds = as_seed_sequence(seed).spawn(beta_draws + 1)[1:]
        gens = [type(model.gen).from_beta(model.gen.p, model.gen.lambda_vec, s_n, b) for b in betas]
    else:
        betas, seeds, gens = None, [seed], [model.gen]
    est = []
    for gen, ss in zip(gens, seeds):
        m = model.replace(gen=gen)
        est.append(_gg_estimate(gg_terms(f, A, m, draws, ss), A, gen.gamma))
    k = len(est)
    resid = sum(e[0] for e in est) / k
    se = np.sqrt(sum(e[1] ** 2 for e in est)) / k
    ibp = sum(e[2] for e in est) / k
    return IdentityReport.build(name, resid, 0.0, se, draws * k, z_max=z_max, atol=atol,
                                details=dict(n=model.n, A=A, p=model.gen.p, ibp_form=ibp,
                                             abs_residual=abs(resid),
                                             betas=None if betas is None else betas.tolist()))


def gg_scan(f: Callable, A: int, models, **kw):
    """GG residuals over a list of models (usually increasing n).

    Returns ``(reports, decreasing)`` where ``decreasing`` says whether the
    absolute residual decreases strictly along the list.
    """
    reports = [check_gg_identity(f, A, m, **kw) for m in models]
    mags = [r.details["abs_residual"] for r in reports]
    return reports, bool(all(b < a for a, b in zip(mags, mags[1:])))


# --------------------------------------------------------------------------
# thermal / quenched split of the generalized overlap
# --------------------------------------------------------------------------


@dataclass
class FluctuationSplit:
    n: int
    total: float
    total_se: float
    thermal: float
    thermal_se: float
    brace_sum: float
    brace_sum_se: float
    cross: IdentityReport

    def to_record(self) -> dict:
        rec = {k: getattr(self, k) for k in
               ("n", "total", "total_se", "thermal", "thermal_se", "brace_sum", "brace_sum_se")}
        rec["cross"] = self.cross.to_record()
        return rec


def check_fluctuation_split(model: Model, draws: int = 10_000, seed=0,
                            z_max: float = DEFAULT_Z_MAX) -> FluctuationSplit:
    """Total and thermal variances of Q^(p)_{01} and the cross identity

    E<Q12 Q01> = E[<Q01>^2].
    """
    gen = model.gen
    enum = Enumeration(model)
    Phi = generalized_features(enum.configs, model)
    batch = generate_disorder_batch(model, draws, seed)
    qb, q2, cross = [], [], []
    for post in enum.chunks(batch):
        w = post.weights
        q01 = Phi[post.signal_pos] @ Phi.T
        qb.append(np.sum(w * q01, 1))
        q2.append(np.sum(w * q01**2, 1))
        cross.append(np.sum(w * q01 * ((w @ Phi) @ Phi.T), 1))
    qb, q2, cross = map(np.concatenate, (qb, q2, cross))
    B = len(qb)
    qbar = qb.mean()

    def est(phi, value):
        return float(value), float(phi.std(ddof=1) / np.sqrt(B))

    total = est(q2 - 2 * qbar * qb, q2.mean() - qbar**2)
    thermal = est(q2 - qb**2, q2.mean() - np.mean(qb**2))
    brace = est(2 * q2 - 2 * qbar * qb - qb**2, total[0] + thermal[0])
    rep = IdentityReport.from_paired("cross_identity", cross, qb**2, z_max=z_max,
                                     details=dict(n=model.n, p=gen.p))
    return FluctuationSplit(model.n, *total, *thermal, *brace, rep)
