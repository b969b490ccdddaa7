"""Zero-eigenvalue Jordan structure by numerical rank of matrix powers.

The size N of the largest zero-eigenvalue Jordan block of M Pi^{-1} sets the
order of the exceptional point (N - 1) and the theta^{-N} divergence of the
linear response.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DecompositionError, PreconditionError

RANK_TOL = 1e-9
PI_COND_LIMIT = 1e12
P_COND_WARN = 1e8
RESIDUAL_LIMIT = 1e-8


class AmbiguousRankWarning(UserWarning):
    pass


class IllConditionedTransformWarning(UserWarning):
    pass


@dataclass(frozen=True)
class JordanProfile:
    block_sizes: tuple[int, ...]
    N_max: int
    rank_sequence: tuple[int, ...]
    tolerance_used: float
    warnings: tuple[str, ...] = ()

    @property
    def has_ep(self) -> bool:
        return self.N_max >= 2

    @property
    def ep_order(self) -> int:
        return max(self.N_max - 1, 0)


@dataclass(frozen=True)
class JordanDecomposition:
    P: np.ndarray = field(repr=False)
    Lambda: np.ndarray = field(repr=False)
    residual: float
    block_sizes: tuple[int, ...]
    cond_P: float

    def chain_head(self, block: int = 0) -> np.ndarray:
        """Column of P at the top of the given zero-eigenvalue Jordan chain."""
        if not self.block_sizes:
            raise PreconditionError("matrix has no zero-eigenvalue Jordan block")
        stop = int(np.sum(self.block_sizes[: block + 1]))
        return self.P[:, stop - 1].copy()


def _rank(A: np.ndarray, threshold: float) -> tuple[int, np.ndarray]:
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > threshold)), s


def _rank_sequence(A: np.ndarray, tol: float):
    n = A.shape[0]
    scale = np.linalg.norm(A, 2)
    ranks = [n]
    notes = []
    power = np.eye(n)
    for k in range(1, n + 1):
        power = power @ A
        threshold = tol * scale**k
        r, s = _rank(power, threshold)
        close = s[(s > threshold / 10) & (s < threshold * 10)]
        if close.size:
            notes.append(
                f"power {k}: singular value(s) {np.array2string(close, precision=3)} "
                f"within a factor 10 of threshold {threshold:.3e}"
            )
        ranks.append(r)
        if r == 0 or r == ranks[-2]:
            break
    return ranks, notes


def _blocks_from_ranks(ranks) -> list[int]:
    # number of blocks of size >= k is r_{k-1} - r_k
    at_least = [ranks[k - 1] - ranks[k] for k in range(1, len(ranks))]
    at_least.append(0)
    sizes = []
    for k in range(len(at_least) - 1, 0, -1):
        sizes += [k] * (at_least[k - 1] - at_least[k])
    return sizes


def jordan_profile(M, Pi=None, tol: float = RANK_TOL) -> JordanProfile:
    """Zero-eigenvalue Jordan block sizes of M Pi^{-1}.

    Rank of each power k is counted against tol * ||M Pi^{-1}||_2^k. Singular
    values within a factor of 10 of that threshold are reported as an
    ambiguity warning.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise PreconditionError(f"M must be square, got shape {M.shape}")
    if Pi is not None:
        Pi = np.asarray(Pi, dtype=float)
        cond = np.linalg.cond(Pi)
        if not np.isfinite(cond) or cond >= PI_COND_LIMIT:
            raise PreconditionError(f"Pi must be invertible (condition number {cond:.3e})")
        # M Pi^{-1} = (Pi^{-T} M^T)^T
        M = np.linalg.solve(Pi.T, M.T).T
    if not np.any(M):
        n = M.shape[0]
        return JordanProfile(tuple([1] * n), 1 if n else 0, (n, 0), tol)
    ranks, notes = _rank_sequence(M, tol)
    for note in notes:
        warnings.warn(note, AmbiguousRankWarning, stacklevel=2)
    sizes = _blocks_from_ranks(ranks)
    return JordanProfile(tuple(sizes), max(sizes, default=0), tuple(ranks), tol, tuple(notes))


def _null_space(A, threshold):
    u, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > threshold))
    return vt[rank:].T


def _sign_normalize(v):
    i = np.argmax(np.abs(v))
    return v if v[i] >= 0 else -v


def jordan_decompose(M, tol: float = RANK_TOL) -> JordanDecomposition:
    """Real P and Lambda with M = P Lambda P^{-1}.

    Zero-eigenvalue blocks come first, largest first, each as an upper Jordan
    block with its chain (M^{k-1} v, ..., M v, v) in P. Any remaining
    invertible part is kept as the restriction of M to range(M^index)
    without further reduction.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    profile = jordan_profile(M, tol=tol)
    scale = np.linalg.norm(M, 2)
    ranks = profile.rank_sequence
    index = len(ranks) - 1
    if ranks[-1] != 0 and len(ranks) > 1 and ranks[-1] == ranks[-2]:
        index -= 1

    powers = [np.eye(n)]
    for _ in range(index):
        powers.append(powers[-1] @ M)
    kernels = [np.zeros((n, 0))] + [
        _null_space(powers[k], tol * scale**k) if k else np.zeros((n, 0))
        for k in range(1, index + 1)
    ]

    count = {k: profile.block_sizes.count(k) for k in set(profile.block_sizes)}
    heads = {}  # block size -> list of chain heads
    for k in range(index, 0, -1):
        c = count.get(k, 0)
        if not c:
            continue
        # vectors already accounted for at level k: ker(M^{k-1}) plus the
        # level-k members of longer chains
        taken = [kernels[k - 1]]
        for size, hs in heads.items():
            for h in hs:
                taken.append((powers[size - k] @ h)[:, None])
        W = np.hstack(taken) if taken else np.zeros((n, 0))
        if W.shape[1]:
            Q, _ = np.linalg.qr(W)
            Q = Q[:, : np.linalg.matrix_rank(W, tol=tol * max(1.0, np.linalg.norm(W, 2)))]
        else:
            Q = np.zeros((n, 0))
        B = kernels[k]
        C = B - Q @ (Q.T @ B)
        _, _, vt = np.linalg.svd(C)
        new = B @ vt[:c].T
        heads[k] = [_sign_normalize(new[:, j] / np.linalg.norm(new[:, j])) for j in range(c)]

    columns, blocks = [], []
    for size in sorted(heads, reverse=True):
        for h in heads[size]:
            columns += [powers[size - 1 - j] @ h for j in range(size)]
            blocks.append(np.eye(size, k=1))
    rest = n - len(columns)
    if rest:
        U, s, _ = np.linalg.svd(powers[index])
        Qr = U[:, :rest]
        columns += list(Qr.T)
        blocks.append(Qr.T @ M @ Qr)
    P = np.column_stack(columns) if columns else np.zeros((n, 0))
    Lam = scipy.linalg.block_diag(*blocks) if blocks else np.zeros((n, n))

    cond = float(np.linalg.cond(P))
    if not np.isfinite(cond):
        raise DecompositionError(f"transformation P is singular; block sizes {profile.block_sizes}")
    recon = P @ Lam @ np.linalg.inv(P)
    denom = np.linalg.norm(M) or 1.0
    residual = float(np.linalg.norm(M - recon) / denom)
    if residual > RESIDUAL_LIMIT:
        raise DecompositionError(
            f"reconstruction residual {residual:.2e} exceeds {RESIDUAL_LIMIT:.0e} "
            f"(blocks {profile.block_sizes}, rank sequence {profile.rank_sequence}, cond(P) {cond:.2e})"
        )
    if cond > P_COND_WARN:
        warnings.warn(f"cond(P) = {cond:.2e}", IllConditionedTransformWarning, stacklevel=2)
    P.setflags(write=False)
    Lam.setflags(write=False)
    return JordanDecomposition(P, Lam, residual, profile.block_sizes, cond)


def jordan_block_matrix(N: int, dim: int | None = None) -> np.ndarray:
    """One nilpotent Jordan block of size N padded with zero 1x1 blocks."""
    dim = 2 * N if dim is None else dim
    L = np.zeros((dim, dim))
    L[:N, :N] = np.eye(N, k=1)
    return L


def random_transform(dim: int, seed: int = 0, max_cond: float = 10.0) -> np.ndarray:
    """Seeded real matrix with condition number at most ``max_cond``."""
    rng = np.random.default_rng(seed)
    Q1, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    Q2, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    s = rng.uniform(1.0, max_cond, dim)
    s[0], s[-1] = 1.0, max_cond
    return Q1 @ np.diag(s) @ Q2


def synth_jordan_model(N: int, P=None, seed: int = 0, dim: int | None = None) -> np.ndarray:
    """M = P Lambda_N P^{-1} with a single size-N zero-eigenvalue block.

    ``dim`` defaults to 2N. The default transform is seeded with condition
    number at most 100.
    """
    if N < 2:
        raise PreconditionError("N must be at least 2")
    dim = 2 * N if dim is None else dim
    if dim < N or dim % 2:
        raise PreconditionError(f"dim must be even and >= N, got {dim}")
    if P is None:
        P = random_transform(dim, seed, max_cond=100.0)
    P = np.asarray(P, dtype=float)
    if P.shape != (dim, dim):
        raise PreconditionError(f"P must be {dim}x{dim}")
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > P_COND_WARN:
        raise PreconditionError(f"P is ill-conditioned (condition number {cond:.3e})")
    return P @ jordan_block_matrix(N, dim) @ np.linalg.inv(P)
