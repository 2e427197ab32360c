"""Overlaps, generalized overlaps, the L matrix and error metrics."""

from __future__ import annotations

import numpy as np

from .model import DisorderSample, GeneralizedPerturbSpec, Model, SnrMatrix, hadamard_rows
from .posterior import ExactPosterior, ReplicaBatch


def overlap(a, b) -> np.ndarray:
    """(1/n) a^T b for n x K replicas; leading axes broadcast."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"shape mismatch {a.shape[-2:]} vs {b.shape[-2:]}")
    return np.einsum("...ik,...il->...kl", a, b) / a.shape[-2]


def generalized_overlap(a, b, p: int, lambda_vec) -> np.ndarray:
    """lambda^T (R_ab)^{o p} lambda with the Hadamard power of the overlap."""
    if p < 1:
        raise ValueError("p must be >= 1")
    lam = np.asarray(lambda_vec, dtype=float)
    return np.einsum("k,...kl,l->...", lam, overlap(a, b) ** p, lam)


def overlap_bound_ok(R: np.ndarray, S: float) -> bool:
    return bool(np.all(np.abs(R) <= S**2 + 1e-12))


def l_values(x, X, Z, lam: SnrMatrix) -> np.ndarray:
    """(1/n) dH_lambda/d lam_{ll'} for replica(s) x given signal X and noise Z.

    Off the diagonal the derivative is taken along E_ll' + E_l'l, so the
    quadratic term is x_l x_l'; on the diagonal it is x_l^2 / 2.  All leading
    axes of x, X and Z broadcast; the result has shape (..., K, K).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-2]
    G = overlap(x, x)
    C = np.einsum("...ik,...il->...kl", x, X) / n
    xZ = np.einsum("...ik,...il->...kl", x, Z) / n
    noise = np.einsum("lmab,...ab->...lm", lam.sqrt_derivs, xZ)
    L = G - C - np.swapaxes(C, -1, -2) - noise
    diag = np.arange(lam.K)
    L[..., diag, diag] = 0.5 * G[..., diag, diag] - C[..., diag, diag] - noise[..., diag, diag]
    return L


def l_matrix(x, d: DisorderSample, lam: SnrMatrix) -> np.ndarray:
    return l_values(x, d.X, d.pert_noise, lam)


def l_matrix_bound(d: DisorderSample, lam: SnrMatrix, S: float) -> float:
    """Entrywise bound on L valid for any configuration in [-S, S]^{n x K}.

    |L_ll'| <= S^2 + 2 S^2 + S * max_i sum_ab |D_ab| |Z_ib| (crude but exact).
    """
    absD = np.abs(lam.sqrt_derivs)
    noise = np.einsum("lmab,ib->lmi", absD, np.abs(d.pert_noise)).max(-1)
    return float(3 * S**2 + S * noise.max())


def l_generalized(x, d: DisorderSample, model: Model, gamma: float | None = None) -> np.ndarray:
    """(1/n) dH_pert^(p)/d gamma = gamma Q11 - 2 gamma Q01 - n^{-(1+p)/2} sum_I Z_I lam.x_I."""
    gen: GeneralizedPerturbSpec = model.gen
    gamma = gen.gamma if gamma is None else gamma
    x = np.asarray(x, dtype=float)
    n, p = model.n, gen.p
    q11 = generalized_overlap(x, x, p, gen.lambda_vec)
    q01 = generalized_overlap(d.X, x, p, gen.lambda_vec)
    contraction = hadamard_rows(x, model.gen_index) @ gen.lambda_vec @ d.gen_noise
    return gamma * q11 - 2 * gamma * q01 - n ** (-(1 + p) / 2) * contraction


# ------------------------------------------------------------------------
# per-configuration values for a batch of exact posteriors
# ------------------------------------------------------------------------


def q_values(post: ExactPosterior) -> np.ndarray:
    """Q(X_b, c_m) for every disorder b and configuration m; (B, M, K, K)."""
    return overlap(post.disorder.X[:, None], post.configs[None])


def l_values_batch(post: ExactPosterior, lam: SnrMatrix) -> np.ndarray:
    d = post.disorder
    return l_values(post.configs[None], d.X[:, None], d.pert_noise[:, None], lam)


def lgen_values_batch(post: ExactPosterior, model: Model) -> np.ndarray:
    """L^(p) for every disorder and configuration; (B, M)."""
    gen = model.gen
    d = post.disorder
    n, p = model.n, gen.p
    c = post.configs
    q11 = generalized_overlap(c, c, p, gen.lambda_vec)
    q01 = generalized_overlap(d.X[:, None], c[None], p, gen.lambda_vec)
    contraction = d.gen_noise @ (hadamard_rows(c, model.gen_index) @ gen.lambda_vec).T
    return gen.gamma * (q11[None] - 2 * q01) - n ** (-(1 + p) / 2) * contraction


def generalized_kernel(configs: np.ndarray, p: int, lambda_vec) -> np.ndarray:
    """Q^(p) between every pair of configurations; (M, M)."""
    return generalized_overlap(configs[:, None], configs[None], p, lambda_vec)


def generalized_features(configs: np.ndarray, model: Model) -> np.ndarray:
    """Phi with Phi @ Phi.T equal to the generalized kernel; (M, n^p).

    Row a holds n^{-p/2} sum_k lambda_k x^a_I,k over all p-tuples I, which
    keeps kernel products linear in M.
    """
    gen = model.gen
    return hadamard_rows(configs, model.gen_index) @ gen.lambda_vec / model.n ** (gen.p / 2)


def mmse_batch(post: ExactPosterior) -> dict:
    """Per-disorder ``mmse`` (B,), ``mmse_matrix`` (B,K,K), ``matrix_mmse`` (B,)."""
    X = post.disorder.X
    n = X.shape[1]
    err = X - post.mean()
    gram = post.bracket(np.einsum("mik,mjk->mij", post.configs, post.configs))
    true_gram = np.einsum("bik,bjk->bij", X, X)
    return dict(
        mmse=np.sum(err**2, (1, 2)) / n,
        mmse_matrix=np.einsum("bik,bil->bkl", err, err) / n,
        matrix_mmse=np.sum((true_gram - gram) ** 2, (1, 2)) / n**2,
    )


def mmse_metrics(batch: ReplicaBatch, d: DisorderSample) -> dict:
    """Per-disorder error contributions of the posterior-mean estimator.

    ``mmse``: (1/n) ||X - <x>||_F^2; ``mmse_matrix``: (1/n)(X-<x>)^T(X-<x>);
    ``matrix_mmse``: (1/n^2) sum_ij (X_i.X_j - <x_i.x_j>)^2.  Averaging over
    disorder is left to the caller.
    """
    X = d.X
    n = X.shape[0]
    mean = batch.bracket(batch.replicas)
    err = X - mean
    gram = np.einsum("rik,rjk->rij", batch.replicas, batch.replicas)
    mean_gram = batch.bracket(gram)
    return dict(
        mmse=float(np.sum(err**2) / n),
        mmse_matrix=err.T @ err / n,
        matrix_mmse=float(np.sum((X @ X.T - mean_gram) ** 2) / n**2),
    )
