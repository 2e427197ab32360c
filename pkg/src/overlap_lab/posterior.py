"""Posterior replicas: exact enumeration for small n, heat-bath Gibbs otherwise."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import DisorderBatch, DisorderSample, Model, as_seed_sequence, total_energy

DEFAULT_BUDGET = 2**24
# cap on (disorders x configurations) held in memory at once
_CHUNK_CELLS = 2**21


class ResourceLimit(RuntimeError):
    """Enumeration (or replica tuple) budget exceeded."""


def config_count(model: Model) -> int:
    return model.prior.n_atoms ** model.n


def enumerate_configs(model: Model, budget: int = DEFAULT_BUDGET):
    """All A**n atom assignments in lexicographic order.

    Returns ``(index, configs, log_prior)`` with shapes (M, n), (M, n, K), (M,).
    """
    A, n = model.prior.n_atoms, model.n
    M = A**n
    if M > budget:
        raise ResourceLimit(f"{M} configurations exceed the enumeration budget "
                            f"{budget}; use gibbs_sample instead")
    index = np.array(list(itertools.product(range(A), repeat=n)), dtype=np.intp).reshape(M, n)
    configs = model.prior.atoms[index]
    log_prior = model.prior.log_weights[index].sum(-1)
    return index, configs, log_prior


def config_position(model: Model, atom_index: np.ndarray) -> np.ndarray:
    """Row of the enumeration holding the config with the given atom indices."""
    A, n = model.prior.n_atoms, model.n
    powers = A ** np.arange(n - 1, -1, -1)
    return np.asarray(atom_index) @ powers


class Enumeration:
    """Configurations of a model with their channel mean maps precomputed.

    Energies of all configurations for a batch of disorders are then two or
    three matrix products.
    """

    def __init__(self, model: Model, budget: int = DEFAULT_BUDGET, _configs=None):
        self.model = model
        if _configs is None:
            _configs = enumerate_configs(model, budget)
        self.index, self.configs, self.log_prior = _configs
        c = self.configs
        M = c.shape[0]
        self.S_tensor = model.tensor_mean(c)
        self.S_pert = model.pert_mean(c).reshape(M, -1)
        self.S_gen = model.gen_unit_mean(c)
        self._half = (0.5 * np.sum(self.S_tensor**2, -1)
                      + 0.5 * np.sum(self.S_pert**2, -1))
        self._half_gen = 0.5 * np.sum(self.S_gen**2, -1)

    def __len__(self):
        return self.configs.shape[0]

    def with_model(self, model: Model) -> "Enumeration":
        """Same configurations, channels of ``model`` (same n and prior)."""
        if model.n != self.model.n or not np.array_equal(model.prior.atoms, self.model.prior.atoms):
            raise ValueError("models differ in n or prior atoms")
        return Enumeration(model, _configs=(self.index, self.configs, self.log_prior))

    def energies(self, d: DisorderBatch) -> np.ndarray:
        """(B, M) total energies of every configuration."""
        B = len(d)
        E = np.broadcast_to(self._half, (B, len(self))).copy()
        if self.S_tensor.shape[1]:
            E -= d.Y_base @ self.S_tensor.T
        if self.S_pert.shape[1]:
            E -= d.Y_pert.reshape(B, -1) @ self.S_pert.T
        if self.S_gen.shape[1]:
            g = self.model.gen.gamma
            E += g**2 * self._half_gen[None, :] - g * (d.Y_gen @ self.S_gen.T)
        return E

    def posterior(self, d: DisorderBatch) -> "ExactPosterior":
        logw = self.log_prior[None, :] - self.energies(d)
        log_z = logsumexp(logw, axis=1)
        w = np.exp(logw - log_z[:, None])
        return ExactPosterior(self, w, log_z, config_position(self.model, d.X_index), d)

    def chunks(self, d: DisorderBatch, chunk: int | None = None):
        """Yield :class:`ExactPosterior` objects over consecutive slices of d."""
        if chunk is None:
            chunk = max(1, _CHUNK_CELLS // len(self))
        for start in range(0, len(d), chunk):
            yield self.posterior(d[start:start + chunk])


@dataclass
class ExactPosterior:
    """Exact posterior weights over all configurations, for B disorders."""

    enum: Enumeration
    weights: np.ndarray          # (B, M)
    log_z: np.ndarray            # (B,)
    signal_pos: np.ndarray       # (B,) row of the signal in the enumeration
    disorder: DisorderBatch

    @property
    def configs(self):
        return self.enum.configs

    def bracket(self, values) -> np.ndarray:
        """<g> for per-config values of shape (M, ...) or (B, M, ...)."""
        values = np.asarray(values)
        if values.ndim >= 2 and values.shape[:2] == self.weights.shape:
            return np.einsum("bm,bm...->b...", self.weights, values)
        return np.tensordot(self.weights, values, axes=(1, 0))

    def mean(self) -> np.ndarray:
        """Posterior mean <x>, shape (B, n, K)."""
        return self.bracket(self.configs)

    def pair_bracket(self, kernel: np.ndarray, left=None, right=None) -> np.ndarray:
        """sum_{m,m'} w_m w_m' left_m kernel_{mm'} right_m' for each disorder.

        ``left``/``right`` are optional (B, M) factors.
        """
        wl = self.weights if left is None else self.weights * left
        wr = self.weights if right is None else self.weights * right
        return np.einsum("bm,bm->b", wl @ kernel, wr)

    def sample_indices(self, rng, size: int) -> np.ndarray:
        """Exact i.i.d. posterior draws (config rows), shape (B, size)."""
        cdf = np.cumsum(self.weights, axis=1)
        u = rng.random((self.weights.shape[0], size)) * cdf[:, -1:]
        return np.stack([np.searchsorted(c, uu, side="right") for c, uu in zip(cdf, u)])


# --------------------------------------------------------------------------
# single-disorder API
# --------------------------------------------------------------------------


@dataclass
class ReplicaBatch:
    """Replicas for one disorder realization.

    In exact mode ``replicas`` is every configuration and ``weights`` the
    exact posterior; in mcmc mode each replica is the final state of an
    independently seeded chain.
    """

    replicas: np.ndarray
    weights: np.ndarray | None
    mode: str
    log_z: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def bracket(self, values) -> np.ndarray:
        values = np.asarray(values)
        if self.mode == "exact":
            return np.tensordot(self.weights, values, axes=(0, 0))
        return values.mean(0)

    def bracket_se(self, values) -> np.ndarray:
        """Monte Carlo standard error of :meth:`bracket` (zero when exact)."""
        values = np.asarray(values)
        if self.mode == "exact":
            return np.zeros(values.shape[1:])
        return values.std(0, ddof=1) / np.sqrt(values.shape[0])


def enumerate_posterior(model: Model, d: DisorderSample, budget: int = DEFAULT_BUDGET) -> ReplicaBatch:
    post = Enumeration(model, budget).posterior(d.as_batch())
    return ReplicaBatch(post.configs, post.weights[0], "exact", float(post.log_z[0]))


@dataclass(frozen=True)
class FreeEnergySample:
    value: float
    n: int
    seed: int | None


def free_energy(model: Model, d: DisorderSample, budget: int = DEFAULT_BUDGET) -> FreeEnergySample:
    """-(1/n) ln Z_n for one realization, by exact log-sum-exp."""
    rb = enumerate_posterior(model, d, budget)
    return FreeEnergySample(-rb.log_z / model.n, model.n, d.seed)


# --------------------------------------------------------------------------
# Gibbs sampling
# --------------------------------------------------------------------------


def split_rhat(traces: np.ndarray) -> float:
    """Split-chain potential scale reduction for traces of shape (chains, draws)."""
    C, T = traces.shape
    half = T // 2
    if half < 2:
        return float("nan")
    parts = np.concatenate([traces[:, :half], traces[:, half:2 * half]], 0)
    means = parts.mean(1)
    W = parts.var(1, ddof=1).mean()
    B = half * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (half - 1) / half * W + B / half
    return float(np.sqrt(var_plus / W))


def gibbs_sample(model: Model, d: DisorderSample, chains: int, sweeps: int,
                 burn_in: int, seed) -> ReplicaBatch:
    """Single-site heat-bath sampler, ``chains`` independent chains in lockstep.

    Each site is resampled from its exact conditional over the prior atoms.
    The replica of a chain is its state after the last sweep; the energy trace
    after ``burn_in`` sweeps feeds the split-R-hat diagnostic.
    """
    if chains < 2:
        raise ValueError("at least two chains are required")
    if not 0 <= burn_in < sweeps:
        raise ValueError("burn_in must lie in [0, sweeps)")
    atoms, logp = model.prior.atoms, model.prior.log_weights
    A, n = model.prior.n_atoms, model.n
    root = as_seed_sequence(seed)
    init_ss, *chain_ss = root.spawn(chains + 1)
    init_rng = np.random.default_rng(init_ss)
    rngs = [np.random.default_rng(s) for s in chain_ss]
    state = init_rng.choice(A, size=(chains, n), p=model.prior.weights)
    trace = np.empty((chains, sweeps))
    for t in range(sweeps):
        for i in range(n):
            cand = np.repeat(state[:, None, :], A, axis=1)
            cand[:, :, i] = np.arange(A)
            logw = logp[None, :] - total_energy(model, atoms[cand], d)
            prob = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
            u = np.array([r.random() for r in rngs])
            state[:, i] = np.minimum((np.cumsum(prob, 1) < u[:, None]).sum(1), A - 1)
        trace[:, t] = total_energy(model, atoms[state], d)
    rhat = split_rhat(trace[:, burn_in:])
    diagnostics = dict(mode="mcmc", chains=chains, sweeps=sweeps, burn_in=burn_in,
                       rhat_max=rhat, non_mixing=bool(rhat > 1.1))
    if rhat > 1.1:
        warnings.warn(f"Gibbs chains may not have mixed (split R-hat {rhat:.3f})")
    return ReplicaBatch(atoms[state], None, "mcmc", None, diagnostics)
