"""Priors, Gaussian observation channels and the matrix-SNR side channel.

Every channel in this module is additive Gaussian: the observation is
``mean(X) + noise`` and the Hamiltonian of a configuration ``x`` is

    H(x) = sum_I  1/2 mean_I(x)**2 - obs_I * mean_I(x)

i.e. the negative log-likelihood with the x-independent ``1/2 obs**2`` term
dropped.  Three mean maps are provided:

* ``tensor``: ``snr * n**((1-p)/2) * sum_k x_{i1 k} ... x_{ip k}`` over ordered
  tuples ``i1 <= ... <= ip`` (p = 2 is the spiked Wigner model);
* ``pert``: ``x @ sqrt(lam)`` row by row, the vectorial side channel;
* ``gen``: ``gamma * n**((1-p)/2) * lam_vec . (x_{i1} * ... * x_{ip})`` over
  all tuples in ``{0..n-1}**p``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class InvalidParameter(ValueError):
    """Raised for inputs outside an operation's domain."""


class NumericalFailure(ArithmeticError):
    """Raised when a linear-algebra step cannot be carried out reliably."""


# --------------------------------------------------------------------------
# priors and channel specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Discrete prior on R^K, applied i.i.d. to the n rows of the signal."""

    atoms: np.ndarray
    weights: np.ndarray
    bound: float = field(default=None)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape[0] < 1:
            raise InvalidParameter("prior needs at least one atom")
        if weights.shape != (atoms.shape[0],):
            raise InvalidParameter("one weight per atom is required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidParameter("weights must be nonnegative and sum to 1")
        bound = float(np.max(np.abs(atoms))) if self.bound is None else float(self.bound)
        if np.max(np.abs(atoms)) > bound:
            raise InvalidParameter("atom coordinate exceeds the support bound S")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bound", bound)

    @classmethod
    def rademacher(cls, K: int = 1) -> "PriorSpec":
        atoms = np.array(list(itertools.product([-1.0, 1.0], repeat=K)))
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)), 1.0)

    @property
    def K(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @cached_property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def second_moment(self) -> np.ndarray:
        """E[X_1 X_1^T] under one row of the prior."""
        return np.einsum("a,ak,al->kl", self.weights, self.atoms, self.atoms)

    def mean_sq_norm(self) -> float:
        """E ||X_1||^2."""
        return float(np.trace(self.second_moment()))


@dataclass(frozen=True)
class BaseChannelSpec:
    kind: str = "none"
    p: int = 2
    snr: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "spiked-wigner", "tensor-p"):
            raise InvalidParameter(f"unknown base channel kind {self.kind!r}")
        if self.kind == "spiked-wigner":
            object.__setattr__(self, "p", 2)
        if self.kind != "none" and self.p < 2:
            raise InvalidParameter("tensor order p must be >= 2")
        if self.snr < 0:
            raise InvalidParameter("base SNR scale must be nonnegative")

    @property
    def active(self) -> bool:
        return self.kind != "none"


@dataclass(frozen=True)
class GeneralizedPerturbSpec:
    """Scalar side channel on order-p Hadamard products, strength gamma."""

    p: int
    lambda_vec: np.ndarray
    gamma: float

    def __post_init__(self):
        lam = np.asarray(self.lambda_vec, dtype=float).ravel()
        if not np.all(np.isin(lam, (-1.0, 0.0, 1.0))):
            raise InvalidParameter("lambda_vec components must lie in {-1, 0, 1}")
        if not 1 <= self.p <= 3:
            raise InvalidParameter("generalized perturbation order must be 1, 2 or 3")
        if not self.gamma > 0:
            raise InvalidParameter("gamma must be positive")
        lam.setflags(write=False)
        object.__setattr__(self, "lambda_vec", lam)

    @classmethod
    def from_beta(cls, p, lambda_vec, s_n, beta) -> "GeneralizedPerturbSpec":
        if not 1.0 <= beta <= 2.0:
            raise InvalidParameter("beta must lie in [1, 2]")
        return cls(p, lambda_vec, s_n * beta)


# --------------------------------------------------------------------------
# SNR matrix ensemble
# --------------------------------------------------------------------------


def principal_sqrt(M, tol: float = 1e-10) -> np.ndarray:
    """Principal square root of a symmetric positive semidefinite matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidParameter("square matrix expected")
    if np.max(np.abs(M - M.T), initial=0.0) > tol * max(1.0, np.max(np.abs(M))):
        raise InvalidParameter("matrix is not symmetric")
    evals, evecs = np.linalg.eigh((M + M.T) / 2)
    if evals.min() < -1e-12 * max(1.0, abs(evals).max()):
        raise InvalidParameter("matrix is not positive semidefinite")
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    return (root + root.T) / 2


def basis_matrix(K: int, l: int, lp: int) -> np.ndarray:
    """d lam / d lam_{l l'}: E_ll' + E_l'l off the diagonal, E_ll on it."""
    E = np.zeros((K, K))
    E[l, lp] = 1.0
    E[lp, l] = 1.0
    return E


def solve_sylvester_sym(root: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``root @ D + D @ root = rhs`` for symmetric positive definite root."""
    mu, V = np.linalg.eigh(root)
    denom = mu[:, None] + mu[None, :]
    if denom.min() <= 1e-14 * max(1.0, mu.max()):
        raise NumericalFailure("square root is singular")
    D = V @ ((V.T @ rhs @ V) / denom) @ V.T
    return D


def free_entries(K: int):
    """Upper-triangular index pairs (l, l') with l <= l'."""
    return [(l, lp) for l in range(K) for lp in range(l, K)]


@dataclass(frozen=True)
class SnrMatrix:
    """A member of the diagonally dominant SNR ensemble with its square root.

    ``sqrt_derivs[l, l']`` holds d sqrt(lam) / d lam_{l l'}; it is stored for
    both orderings of an off-diagonal pair.
    """

    entries: np.ndarray
    s_n: float
    sqrt: np.ndarray = field(init=False, repr=False)
    sqrt_derivs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lam = np.array(self.entries, dtype=float)
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise InvalidParameter("SNR matrix must be square")
        if not self.s_n > 0:
            raise InvalidParameter("s_n must be positive")
        K = lam.shape[0]
        root = principal_sqrt(lam)
        derivs = np.zeros((K, K, K, K))
        for l, lp in free_entries(K):
            D = solve_sylvester_sym(root, basis_matrix(K, l, lp))
            derivs[l, lp] = derivs[lp, l] = (D + D.T) / 2
        for arr in (lam, root, derivs):
            arr.setflags(write=False)
        object.__setattr__(self, "entries", lam)
        object.__setattr__(self, "sqrt", root)
        object.__setattr__(self, "sqrt_derivs", derivs)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    def in_ensemble(self) -> bool:
        """Membership of the open intervals defining the ensemble."""
        K, s = self.K, self.s_n
        off = ~np.eye(K, dtype=bool)
        diag = np.diag(self.entries)
        ok_diag = np.all((diag > 2 * K * s) & (diag < (2 * K + 1) * s))
        ok_off = np.all((self.entries[off] > s) & (self.entries[off] < 2 * s))
        return bool(ok_diag and ok_off and np.array_equal(self.entries, self.entries.T))

    def perturbed(self, l: int, lp: int, eps: float) -> "SnrMatrix":
        """Copy with the free entry (l, l') shifted by eps (symmetrically)."""
        return SnrMatrix(self.entries + eps * basis_matrix(self.K, l, lp), self.s_n)


def sample_snr_matrix(K: int, s_n: float, rng) -> SnrMatrix:
    """Uniform draw from the ensemble: independent uniform free entries."""
    if K < 1:
        raise InvalidParameter("K must be >= 1")
    if not 0 < s_n <= 1:
        raise InvalidParameter("s_n must lie in (0, 1]")
    rng = np.random.default_rng(rng)
    lam = np.empty((K, K))
    for l, lp in free_entries(K):
        if l == lp:
            lam[l, l] = rng.uniform(2 * K * s_n, (2 * K + 1) * s_n)
        else:
            lam[l, lp] = lam[lp, l] = rng.uniform(s_n, 2 * s_n)
    return SnrMatrix(lam, s_n)


def sqrt_derivative(lam: SnrMatrix, l: int, lp: int) -> np.ndarray:
    return np.array(lam.sqrt_derivs[l, lp])


# --------------------------------------------------------------------------
# index sets and mean maps
# --------------------------------------------------------------------------


def ordered_tuples(n: int, p: int) -> np.ndarray:
    """All i1 <= ... <= ip, shape (T, p)."""
    return np.array(list(itertools.combinations_with_replacement(range(n), p)),
                    dtype=np.intp).reshape(-1, p)


def all_tuples(n: int, p: int) -> np.ndarray:
    """All of {0..n-1}**p in lexicographic order, shape (n**p, p)."""
    return np.array(list(itertools.product(range(n), repeat=p)),
                    dtype=np.intp).reshape(-1, p)


def hadamard_rows(x: np.ndarray, tuples: np.ndarray) -> np.ndarray:
    """x_I = x_{i1} * ... * x_{ip} for each tuple I; shape (..., T, K)."""
    out = x[..., tuples[:, 0], :]
    for m in range(1, tuples.shape[1]):
        out = out * x[..., tuples[:, m], :]
    return out


@dataclass(frozen=True)
class Model:
    """Prior, base channel, optional side channels and system size."""

    prior: PriorSpec
    base: BaseChannelSpec
    n: int
    lam: SnrMatrix | None = None
    gen: GeneralizedPerturbSpec | None = None

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameter("n must be >= 1")
        if self.lam is not None and self.lam.K != self.prior.K:
            raise InvalidParameter("SNR matrix dimension does not match prior")
        if self.gen is not None and self.gen.lambda_vec.shape[0] != self.prior.K:
            raise InvalidParameter("lambda_vec length does not match prior")

    @property
    def K(self) -> int:
        return self.prior.K

    def replace(self, **changes) -> "Model":
        fields = dict(prior=self.prior, base=self.base, n=self.n, lam=self.lam, gen=self.gen)
        fields.update(changes)
        return Model(**fields)

    @cached_property
    def tensor_index(self) -> np.ndarray:
        p = self.base.p if self.base.active else 2
        return ordered_tuples(self.n, p) if self.base.active else np.zeros((0, p), np.intp)

    @cached_property
    def gen_index(self) -> np.ndarray:
        if self.gen is None:
            return np.zeros((0, 1), np.intp)
        return all_tuples(self.n, self.gen.p)

    # mean maps; all accept arbitrary leading axes on x

    def tensor_mean(self, x: np.ndarray) -> np.ndarray:
        if not self.base.active:
            return np.zeros(x.shape[:-2] + (0,))
        scale = self.base.snr * self.n ** ((1 - self.base.p) / 2)
        return scale * hadamard_rows(x, self.tensor_index).sum(-1)

    def pert_mean(self, x: np.ndarray) -> np.ndarray:
        if self.lam is None:
            return np.zeros(x.shape[:-2] + (self.n, 0))
        return x @ self.lam.sqrt

    def gen_unit_mean(self, x: np.ndarray) -> np.ndarray:
        """Generalized channel mean divided by gamma."""
        if self.gen is None:
            return np.zeros(x.shape[:-2] + (0,))
        scale = self.n ** ((1 - self.gen.p) / 2)
        return scale * hadamard_rows(x, self.gen_index) @ self.gen.lambda_vec

    def gen_mean(self, x: np.ndarray) -> np.ndarray:
        if self.gen is None:
            return np.zeros(x.shape[:-2] + (0,))
        return self.gen.gamma * self.gen_unit_mean(x)


# --------------------------------------------------------------------------
# disorder
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DisorderBatch:
    """B independent realizations; every array carries a leading batch axis.

    ``X_index`` holds the prior atom index of every signal row so that the
    signal can be located inside an enumeration of configurations.
    """

    X: np.ndarray
    X_index: np.ndarray
    base_noise: np.ndarray
    pert_noise: np.ndarray
    gen_noise: np.ndarray
    Y_base: np.ndarray
    Y_pert: np.ndarray
    Y_gen: np.ndarray
    seed: int | None = None

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, sl) -> "DisorderBatch":
        if isinstance(sl, (int, np.integer)):
            sl = slice(sl, sl + 1)
        return DisorderBatch(*(getattr(self, f)[sl] for f in _BATCH_FIELDS), seed=self.seed)

    def sample(self, b: int = 0) -> "DisorderSample":
        return DisorderSample(*(getattr(self, f)[b] for f in _BATCH_FIELDS), seed=self.seed)


@dataclass(frozen=True)
class DisorderSample:
    X: np.ndarray
    X_index: np.ndarray
    base_noise: np.ndarray
    pert_noise: np.ndarray
    gen_noise: np.ndarray
    Y_base: np.ndarray
    Y_pert: np.ndarray
    Y_gen: np.ndarray
    seed: int | None = None

    def as_batch(self) -> DisorderBatch:
        return DisorderBatch(*(getattr(self, f)[None] for f in _BATCH_FIELDS), seed=self.seed)


_BATCH_FIELDS = ("X", "X_index", "base_noise", "pert_noise", "gen_noise",
                 "Y_base", "Y_pert", "Y_gen")


def generate_disorder_batch(model: Model, size: int, seed) -> DisorderBatch:
    """Draw ``size`` realizations; fully determined by ``(model, size, seed)``."""
    rng = np.random.default_rng(seed)
    n, K = model.n, model.K
    X_index = rng.choice(model.prior.n_atoms, size=(size, n), p=model.prior.weights)
    X = model.prior.atoms[X_index]
    base_noise = rng.standard_normal((size, model.tensor_index.shape[0]))
    pert_noise = rng.standard_normal((size, n, K))
    gen_noise = rng.standard_normal((size, model.gen_index.shape[0] if model.gen else 0))
    return rebuild(model, X_index, base_noise, pert_noise, gen_noise,
                   seed=seed if isinstance(seed, (int, np.integer)) else None)


def rebuild(model: Model, X_index, base_noise, pert_noise, gen_noise, seed=None) -> DisorderBatch:
    """Observations for given signal indices and noises under ``model``.

    Used to evaluate several models (e.g. different SNR matrices, or with
    and without the side channel) on common random numbers.
    """
    X = model.prior.atoms[X_index]
    pert = pert_noise if model.lam is not None else pert_noise[..., :0]
    return DisorderBatch(
        X=X, X_index=np.asarray(X_index), base_noise=base_noise, pert_noise=pert,
        gen_noise=gen_noise,
        Y_base=model.tensor_mean(X) + base_noise,
        Y_pert=model.pert_mean(X) + pert,
        Y_gen=model.gen_mean(X) + gen_noise,
        seed=seed,
    )


def generate_disorder(model: Model, seed) -> DisorderSample:
    return generate_disorder_batch(model, 1, seed).sample(0)


# --------------------------------------------------------------------------
# energies
# --------------------------------------------------------------------------


def _channel_terms(model: Model, x: np.ndarray):
    return (model.tensor_mean(x), model.pert_mean(x).reshape(x.shape[:-2] + (-1,)),
            model.gen_mean(x))


def _check_config(model: Model, x: np.ndarray):
    x = np.asarray(x, dtype=float)
    if x.shape[-2:] != (model.n, model.K):
        raise InvalidParameter(f"config shape {x.shape[-2:]} != {(model.n, model.K)}")
    return x


def total_energy(model: Model, x, d: DisorderSample) -> np.ndarray:
    """H_0 + H_lambda + H_gen for configuration(s) x; constants in x dropped."""
    x = _check_config(model, x)
    obs = (d.Y_base, d.Y_pert.reshape(-1), d.Y_gen)
    out = 0.0
    for mean, y in zip(_channel_terms(model, x), obs):
        out = out + 0.5 * np.sum(mean**2, -1) - mean @ y
    return out


def residual_energy(model: Model, x, d: DisorderSample) -> np.ndarray:
    """Full Gaussian negative log-likelihood ``1/2 ||obs - mean(x)||^2``.

    Differs from :func:`total_energy` by an x-independent constant.
    """
    x = _check_config(model, x)
    obs = (d.Y_base, d.Y_pert.reshape(-1), d.Y_gen)
    return sum(0.5 * np.sum((y - mean) ** 2, -1)
               for mean, y in zip(_channel_terms(model, x), obs))


def pert_energy(model: Model, x, d: DisorderSample, lam: SnrMatrix | None = None) -> np.ndarray:
    """H_lambda(x) written with X and Z explicitly (Y = X sqrt(lam) + Z)."""
    lam = model.lam if lam is None else lam
    x = np.asarray(x, dtype=float)
    quad = 0.5 * np.einsum("...ik,kl,...il->...", x, lam.entries, x)
    signal = np.einsum("...ik,kl,il->...", x, lam.entries, d.X)
    noise = np.einsum("...ik,kl,il->...", x, lam.sqrt, d.pert_noise)
    return quad - signal - noise


def gen_energy(model: Model, x, d: DisorderSample, gamma: float | None = None) -> np.ndarray:
    """H_pert^(p)(x) with X and the tensor noise held fixed, at strength gamma."""
    gen = model.gen
    gamma = gen.gamma if gamma is None else gamma
    x = np.asarray(x, dtype=float)
    scale = model.n ** ((1 - gen.p) / 2)
    gx = scale * hadamard_rows(x, model.gen_index) @ gen.lambda_vec
    gX = scale * hadamard_rows(d.X, model.gen_index) @ gen.lambda_vec
    return -np.sum(gamma**2 * gX * gx + gamma * d.gen_noise * gx - 0.5 * gamma**2 * gx**2, -1)


def lambda_streams(K: int, s_n: float, count: int, seed):
    """``count`` independent (SnrMatrix, disorder seed) pairs from one root seed.

    Each draw gets its own spawned SeedSequence: the first child fixes the
    SNR matrix, the second seeds the inner disorder average.
    """
    out = []
    for child in as_seed_sequence(seed).spawn(count):
        lam_ss, dis_ss = child.spawn(2)
        out.append((sample_snr_matrix(K, s_n, np.random.default_rng(lam_ss)), dis_ss))
    return out


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
