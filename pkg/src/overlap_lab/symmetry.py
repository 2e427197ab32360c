"""From replica-symmetric generalized overlaps to a constant overlap matrix.

For one coordinate pair (k, k') the pipeline is: read the constants a, d, x, y
off three scalar overlaps, solve for the unordered pair {b, c}, orient a
tournament on the replicas according to which of the two admissible 2x2
blocks each pair realizes, find two equal-size vertex sets with every edge
between them pointing one way, and compare barycentres of a Gram embedding
of the array.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .observables import overlap


class NotReplicaSymmetric(ValueError):
    def __init__(self, msg, pair):
        super().__init__(msg)
        self.pair = pair


class InconsistentConstants(ValueError):
    pass


class NotPSD(ValueError):
    pass


@dataclass(frozen=True)
class ReplicaOverlapArray:
    """Blocks R[l, l'] (K x K) for every pair of replicas; R[l', l] = R[l, l']^T."""

    blocks: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        R = np.asarray(self.blocks, dtype=float)
        if R.ndim != 4 or R.shape[0] != R.shape[1] or R.shape[2] != R.shape[3]:
            raise ValueError("blocks must have shape (n_rep, n_rep, K, K)")
        if not np.allclose(R, np.transpose(R, (1, 0, 3, 2)), atol=1e-12):
            raise ValueError("blocks must satisfy R[l', l] = R[l, l']^T")
        object.__setattr__(self, "blocks", R)

    @property
    def n_rep(self) -> int:
        return self.blocks.shape[0]

    @property
    def K(self) -> int:
        return self.blocks.shape[2]

    def gram(self, k: int, kp: int) -> np.ndarray:
        """2 n_rep x 2 n_rep array of (u_l, u_l'), (u_l, w_l'), ... for coordinates k, k'."""
        R = self.blocks
        return np.block([[R[:, :, k, k], R[:, :, k, kp]],
                         [R[:, :, kp, k], R[:, :, kp, kp]]])

    def min_eigenvalue(self, k: int, kp: int) -> float:
        return float(np.linalg.eigvalsh(self.gram(k, kp)).min())

    @classmethod
    def from_replicas(cls, replicas: np.ndarray) -> "ReplicaOverlapArray":
        """Sampled array from replicas of shape (n_rep, n, K)."""
        x = np.asarray(replicas, float)
        return cls(overlap(x[:, None], x[None]), source="sampled")


def scalar_overlap(R: np.ndarray, p: int, lambda_vec) -> np.ndarray:
    """lambda^T R^{o p} lambda for blocks R (..., K, K)."""
    lam = np.asarray(lambda_vec, float)
    return np.einsum("k,...kl,l->...", lam, R**p, lam)


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------


def extract_constants(arr: ReplicaOverlapArray, k: int, kp: int, tol: float = 1e-8) -> dict:
    """a, d, x, y from the three generalized overlaps on pairs l != l'.

    Raises :class:`NotReplicaSymmetric` when any of them varies by more
    than ``tol``; the maximum deviations are returned under ``deviation``.
    """
    if arr.n_rep < 3:
        raise ValueError("at least three replicas are required")
    if k == kp:
        raise ValueError("k and k' must differ")
    K = arr.K
    ek, ekp = np.eye(K)[k], np.eye(K)[kp]
    off = ~np.eye(arr.n_rep, dtype=bool)
    R = arr.blocks[off]
    choices = {
        "a": scalar_overlap(R, 1, ek),
        "d": scalar_overlap(R, 1, ekp),
        "choice2": scalar_overlap(R, 1, ek + ekp),
        "choice3": scalar_overlap(R, 2, ek + ekp),
    }
    dev, means = {}, {}
    for name, v in choices.items():
        means[name] = float(v.mean())
        dev[name] = float(np.max(np.abs(v - v.mean())))
        if dev[name] > tol:
            i = int(np.argmax(np.abs(v - v.mean())))
            pair = tuple(int(t) for t in np.argwhere(off)[i])
            raise NotReplicaSymmetric(f"{name} varies by {dev[name]:.3g} (pair {pair})", pair)
    a, d = means["a"], means["d"]
    x = means["choice2"] - a - d
    y = means["choice3"] - a**2 - d**2
    return dict(a=a, d=d, x=x, y=y, deviation=dev)


def solve_offdiagonal(x: float, y: float, tol: float = 1e-10, strict: bool = True) -> tuple:
    """(r, q) with r + q = x, r^2 + q^2 = y and r >= q.

    A discriminant 2y - x^2 within ``tol`` of zero is taken as zero, since
    the square root would otherwise blow rounding error up to sqrt(tol).
    With ``strict=False`` negative discriminants are clipped silently.
    """
    disc = 2 * y - x * x
    if strict and disc < -tol:
        raise InconsistentConstants(f"2y - x^2 = {disc:.3g} < 0")
    root = np.sqrt(disc) if disc > tol else 0.0
    return (x + root) / 2, (x - root) / 2


# --------------------------------------------------------------------------
# tournaments
# --------------------------------------------------------------------------


@dataclass
class Orientation:
    """``edges[l, l']`` is True iff the edge points l -> l'; ``tied`` marks b = c pairs."""

    edges: np.ndarray
    tied: np.ndarray

    @property
    def n(self) -> int:
        return self.edges.shape[0]

    def __post_init__(self):
        E = np.asarray(self.edges, bool)
        n = E.shape[0]
        off = ~np.eye(n, dtype=bool)
        if np.any(np.diag(E)) or not np.array_equal(E[off], ~E.T[off]):
            raise ValueError("edges must orient every pair exactly once")
        self.edges = E
        self.tied = np.asarray(self.tied, bool)

    def out_masks(self) -> list:
        return [sum(1 << j for j in np.flatnonzero(row)) for row in self.edges]


def tournament_from_order(order) -> Orientation:
    """Transitive tournament: earlier in ``order`` beats later."""
    order = list(order)
    n = len(order)
    rank = np.empty(n, int)
    rank[order] = np.arange(n)
    E = rank[:, None] < rank[None, :]
    return Orientation(E, np.zeros((n, n), bool))


def random_tournament(n: int, rng) -> Orientation:
    rng = np.random.default_rng(rng)
    upper = np.triu(rng.random((n, n)) < 0.5, 1)
    lower = np.tril(~upper.T, -1)
    return Orientation(upper | lower, np.zeros((n, n), bool))


def orient_tournament(arr: ReplicaOverlapArray, k: int, kp: int, b: float, c: float,
                      tol: float = 1e-8) -> Orientation:
    """Orient l -> l' when R[l, l'] is nearer [[a,b],[c,d]] than [[a,c],[b,d]].

    Only the off-diagonal entries differ between the two options.  If
    |b - c| <= tol every pair is tied and oriented l -> l' for l < l'.
    """
    n = arr.n_rep
    rkkp = arr.blocks[:, :, k, kp]
    rkpk = arr.blocks[:, :, kp, k]
    d1 = (rkkp - b) ** 2 + (rkpk - c) ** 2
    d2 = (rkkp - c) ** 2 + (rkpk - b) ** 2
    upper = np.triu(np.ones((n, n), bool), 1)
    if abs(b - c) <= tol:
        tied = upper | upper.T
        forward = np.ones((n, n), bool)
    else:
        tied = np.zeros((n, n), bool)
        forward = d1 <= d2
    E = np.where(upper, forward, False)
    E = E | (~E.T & upper.T)
    return Orientation(E, tied)


@dataclass
class Subsets:
    V1: list
    V2: list
    m: int
    method: str


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _lowest(mask: int, m: int) -> list:
    out = []
    j = 0
    while mask and len(out) < m:
        if mask & 1:
            out.append(j)
        mask >>= 1
        j += 1
    return out


EXHAUSTIVE_MAX = 12


def find_one_directional_subsets(orientation: Orientation, m_target: int | None = None,
                                 method: str = "auto", restarts: int | None = None) -> Subsets:
    """Disjoint V1, V2 of equal size m with every edge V1 -> V2, m maximal.

    ``exhaustive`` scans all V1 (with the common out-neighbourhood of V1 as
    the pool for V2) and is exact; ``greedy`` grows V1 from each start
    vertex.  ``auto`` uses the exhaustive scan up to 12 vertices.
    """
    n = orientation.n
    if n < 2:
        raise ValueError("need at least two vertices")
    cap = n // 2 if m_target is None else int(m_target)
    if cap < 1 or n < 2 * cap:
        raise ValueError("n_rep must be at least 2 * m_target")
    if method == "auto":
        method = "exhaustive" if n <= EXHAUSTIVE_MAX else "greedy"
    out = orientation.out_masks()
    if method == "exhaustive":
        return _exhaustive(out, n, cap)
    if method == "greedy":
        return _greedy(out, n, cap, restarts)
    raise ValueError(f"unknown method {method!r}")


def _exhaustive(out, n, cap) -> Subsets:
    full = (1 << n) - 1
    common = [full] * (1 << n)
    best_m, best = 0, None
    for mask in range(1, 1 << n):
        low = mask & -mask
        v = low.bit_length() - 1
        common[mask] = common[mask ^ low] & out[v]
        size = _popcount(mask)
        if size > cap:
            continue
        pool = common[mask] & ~mask
        if size > best_m and _popcount(pool) >= size:
            best_m, best = size, (mask, pool)
    mask, pool = best
    return Subsets(_lowest(mask, best_m), _lowest(pool, best_m), best_m, "exhaustive")


def _greedy(out, n, cap, restarts) -> Subsets:
    full = (1 << n) - 1
    starts = sorted(range(n), key=lambda v: (-_popcount(out[v]), v))
    if restarts is not None:
        starts = starts[:restarts]
    best_m, best = 0, None
    for s in starts:
        V1, pool = 1 << s, out[s] & full
        while True:
            m = min(_popcount(V1), _popcount(pool))
            if m > best_m and m <= cap:
                best_m, best = m, (V1, pool)
            if _popcount(V1) >= cap:
                break
            cands = [(u, pool & out[u] & ~(1 << u)) for u in range(n) if not V1 >> u & 1]
            if not cands:
                break
            u, new_pool = max(cands, key=lambda t: (_popcount(t[1]), -t[0]))
            if _popcount(new_pool) <= _popcount(V1):
                break
            V1, pool = V1 | (1 << u), new_pool
    mask, pool = best
    return Subsets(_lowest(mask, best_m), _lowest(pool, best_m), best_m, "greedy")


def brute_force_subsets(orientation: Orientation) -> int:
    """Largest m by trying every assignment of vertices to V1, V2 or neither."""
    n = orientation.n
    E = orientation.edges
    best = 0
    for code in range(3**n):
        lab = []
        c = code
        for _ in range(n):
            lab.append(c % 3)
            c //= 3
        v1 = [i for i in range(n) if lab[i] == 1]
        v2 = [i for i in range(n) if lab[i] == 2]
        if len(v1) != len(v2) or len(v1) <= best:
            continue
        if all(E[i, j] for i in v1 for j in v2):
            best = len(v1)
    return best


# --------------------------------------------------------------------------
# Gram embedding and barycentres
# --------------------------------------------------------------------------


@dataclass
class TournamentReport:
    a: float
    d: float
    x: float
    y: float
    b: float
    c: float
    orientation: list
    ties: int
    V1: list
    V2: list
    m: int
    gap_u: float
    gap_w: float
    cross_gap: float
    bound_u: float
    bound_w: float
    bounds_ok: bool
    bc_gap: float
    verdict: bool
    min_eigenvalue: float
    deviation: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def gram_vectors(G: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Rows v_i with v_i . v_j = G_ij, after clipping eigenvalues at 0."""
    evals, evecs = np.linalg.eigh((G + G.T) / 2)
    scale = max(1.0, float(np.abs(evals).max(initial=0.0)))
    if evals.min(initial=0.0) < -tol * scale:
        raise NotPSD(f"eigenvalue {evals.min():.3g} below -{tol:g} * {scale:.3g}")
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def certify_b_equals_c(arr: ReplicaOverlapArray, k: int, kp: int, constants: dict,
                       b: float, c: float, orientation: Orientation, subsets: Subsets,
                       tol: float = 1e-8) -> TournamentReport:
    """Barycentre comparison on V1, V2 inside the Gram embedding of the array."""
    if subsets.m < 2:
        raise ValueError("subsets of size m >= 2 are required")
    n = arr.n_rep
    G = arr.gram(k, kp)
    vecs = gram_vectors(G, tol)
    u, w = vecs[:n], vecs[n:]
    U1, U2 = u[subsets.V1].mean(0), u[subsets.V2].mean(0)
    W1, W2 = w[subsets.V1].mean(0), w[subsets.V2].mean(0)
    a, d, m = constants["a"], constants["d"], subsets.m
    L = float(np.max(np.diag(G)))
    gap_u = float(np.sum((U1 - U2) ** 2))
    gap_w = float(np.sum((W1 - W2) ** 2))
    bound_u = 2 * (L + abs(a)) / m
    bound_w = 2 * (L + abs(d)) / m
    edges = [[int(i), int(j)] for i, j in zip(*np.nonzero(orientation.edges))]
    return TournamentReport(
        a=a, d=d, x=constants["x"], y=constants["y"], b=float(b), c=float(c),
        orientation=edges, ties=int(np.triu(orientation.tied, 1).sum()),
        V1=list(map(int, subsets.V1)), V2=list(map(int, subsets.V2)), m=m,
        gap_u=gap_u, gap_w=gap_w, cross_gap=float(abs(U1 @ W2 - W1 @ U2)),
        bound_u=bound_u, bound_w=bound_w,
        bounds_ok=bool(gap_u <= bound_u + tol and gap_w <= bound_w + tol),
        bc_gap=float(abs(b - c)), verdict=bool(abs(b - c) <= tol),
        min_eigenvalue=float(np.linalg.eigvalsh(G).min()),
        deviation=dict(constants.get("deviation", {})),
    )


def analyze_array(arr: ReplicaOverlapArray, k: int = 0, kp: int = 1, tol: float = 1e-8,
                  constant_tol: float | None = None, m_target: int | None = None,
                  method: str = "auto") -> TournamentReport:
    """Whole pipeline for one coordinate pair.

    ``constant_tol`` (default ``tol``) bounds the allowed spread of the
    generalized overlaps; pass ``np.inf`` for sampled arrays, where the
    spread is reported rather than enforced.
    """
    strict = constant_tol is None
    const = extract_constants(arr, k, kp, tol if strict else constant_tol)
    b, c = solve_offdiagonal(const["x"], const["y"], tol, strict=strict)
    orient = orient_tournament(arr, k, kp, b, c, tol)
    subsets = find_one_directional_subsets(orient, m_target, method)
    return certify_b_equals_c(arr, k, kp, const, b, c, orient, subsets, tol)


# --------------------------------------------------------------------------
# synthetic arrays
# --------------------------------------------------------------------------


def synthetic_array(a: float, b: float, c: float, d: float, orientation: Orientation,
                    self_block=None) -> ReplicaOverlapArray:
    """K = 2 array realizing [[a,b],[c,d]] on l -> l' and its transpose otherwise."""
    n = orientation.n
    opt1 = np.array([[a, b], [c, d]], float)
    R = np.where(orientation.edges[:, :, None, None], opt1, opt1.T)
    diag = np.array([[a, (b + c) / 2], [(b + c) / 2, d]]) if self_block is None else self_block
    R[np.arange(n), np.arange(n)] = diag
    return ReplicaOverlapArray(R, "synthetic")


def replica_symmetric_array(a: float, b: float, d: float, n_rep: int) -> ReplicaOverlapArray:
    """Every block, self-blocks included, equal to [[a,b],[b,d]]: an exact Gram array."""
    block = np.array([[a, b], [b, d]], float)
    if np.linalg.eigvalsh(block).min() < -1e-12:
        raise ValueError("[[a,b],[b,d]] must be positive semidefinite")
    return ReplicaOverlapArray(np.broadcast_to(block, (n_rep, n_rep, 2, 2)).copy(), "synthetic")


def planted_asymmetry_array(n_rep: int, orientation: Orientation | None = None,
                            self_norm: float = 1.0, m0: float = 0.5, seed=0,
                            margin: float = 1e-9):
    """PSD array with a = d = m0 and b, c = m0 +- h, h as large as PSD allows.

    With S the +-1 antisymmetric sign matrix of the tournament, the Gram
    array is m0 [[J,J],[J,J]] + [[alpha I, h S], [-h S, alpha I]] with
    alpha = self_norm - m0, which is PSD iff h <= alpha / ||S||_2.  Larger
    tournaments have larger ||S||_2 and so force b and c together.
    Returns ``(array, h)``.
    """
    if orientation is None:
        orientation = random_tournament(n_rep, seed)
    E = orientation.edges
    S = E.astype(float) - E.T.astype(float)
    alpha = self_norm - m0
    if alpha <= 0 or m0 < 0:
        raise ValueError("need 0 <= m0 < self_norm")
    h = alpha / np.linalg.norm(S, 2) * (1 - margin)
    arr = synthetic_array(m0, m0 + h, m0 - h, m0, orientation,
                          self_block=np.array([[self_norm, m0], [m0, self_norm]]))
    return arr, float(h)
