"""Covariance assembly and dense / tile-low-rank Cholesky factors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CholeskyError, ValidationError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel ``K(x, x') = exp(-alpha * |x - x'|^2)``."""

    alpha: float
    family: str = "squared_exponential"

    def __post_init__(self):
        if self.family != "squared_exponential":
            raise ValidationError(f"unsupported kernel family {self.family!r}")
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")

    def __call__(self, x, x_prime):
        return kernel_eval(self, x, x_prime)

    def cross(self, A, B):
        """Kernel matrix between the rows of ``A`` (m, q) and ``B`` (k, q)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape[1] != B.shape[1]:
            raise ValidationError(
                f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
        sq = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * A @ B.T
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-self.alpha * sq)


def kernel_eval(spec: KernelSpec, x, x_prime) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValidationError(
            f"dimension mismatch: {x.shape[0]} vs {x_prime.shape[0]}")
    d = x - x_prime
    return float(np.exp(-spec.alpha * np.dot(d, d)))


def as_locations(points) -> np.ndarray:
    """Validate training locations and return them as an (n, q) float array.

    Duplicates are detected by exact coordinate equality.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValidationError(f"locations must be a non-empty (n, q) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("locations contain non-finite coordinates")
    _, first, counts = np.unique(X, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup_row = X[first[np.argmax(counts > 1)]]
        idx = np.flatnonzero(np.all(X == dup_row, axis=1))
        raise ValidationError(
            f"duplicate locations at indices ({idx[0]}, {idx[1]})")
    return X


def build_covariance(spec: KernelSpec, locs) -> np.ndarray:
    X = as_locations(locs)
    S = spec.cross(X, X)
    # exact symmetry and unit diagonal regardless of rounding in the expansion
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return S


def _check_symmetric(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {S.shape}")
    scale = np.max(np.abs(S)) if S.size else 0.0
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-12 * max(scale, 1.0):
        raise ValidationError("matrix is not symmetric")
    return S


def jitter_levels(S):
    """Diagonal jitter amounts tried in turn: 0, then 1e-10..1e-6 x mean(diag)."""
    base = float(np.mean(np.diag(S)))
    yield 0.0
    level = JITTER_START
    while level <= JITTER_MAX * (1 + 1e-12):
        yield level * base
        level *= 10.0


def cholesky_jitter(S):
    """Lower Cholesky factor of ``S`` and the diagonal jitter that was needed."""
    S = _check_symmetric(S)
    for jitter in jitter_levels(S):
        A = S if jitter == 0.0 else S + jitter * np.eye(S.shape[0])
        try:
            return np.linalg.cholesky(A), jitter
        except np.linalg.LinAlgError:
            continue
    raise CholeskyError(
        f"matrix of size {S.shape[0]} is not positive definite even with "
        f"jitter {JITTER_MAX:g} x mean(diag)")


def dense_cholesky(S) -> np.ndarray:
    return cholesky_jitter(S)[0]


def block_offsets(n: int, block_size: int) -> np.ndarray:
    """Block boundaries; the final block is ragged when block_size does not divide n."""
    if block_size < 1:
        raise ValidationError(f"block_size must be positive, got {block_size}")
    return np.append(np.arange(0, n, block_size), n)


@dataclass(frozen=True, eq=False)
class TlrMatrix:
    """Lower-triangular factor stored as dense diagonal tiles and low-rank
    off-diagonal tiles ``L[I, J] ~= U @ V.T`` (I > J)."""

    n: int
    block_size: int
    offsets: np.ndarray
    diagonal_tiles: list
    offdiag_tiles: dict
    truncation_tol: float
    jitter: float = 0.0
    _block_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        block_of = np.repeat(np.arange(self.n_blocks), np.diff(self.offsets))
        object.__setattr__(self, "_block_of", block_of)

    @property
    def n_blocks(self) -> int:
        return len(self.offsets) - 1

    def block_slice(self, I: int) -> slice:
        return slice(int(self.offsets[I]), int(self.offsets[I + 1]))

    def ranks(self) -> dict:
        return {key: U.shape[1] for key, (U, _) in self.offdiag_tiles.items()}

    def to_dense(self) -> np.ndarray:
        L = np.zeros((self.n, self.n))
        for I in range(self.n_blocks):
            sI = self.block_slice(I)
            L[sI, sI] = self.diagonal_tiles[I]
            for J in range(I):
                U, V = self.offdiag_tiles[I, J]
                L[sI, self.block_slice(J)] = U @ V.T
        return L

    def lowrank_prefix(self, I: int, Y) -> np.ndarray | None:
        """``sum_{J<I} L[I, J] @ Y[J]`` through the tile factors.

        ``Y`` holds one column per right-hand side.  Returns None for the
        first block, which has no off-diagonal tiles to its left.
        """
        if I == 0:
            return None
        sI = self.block_slice(I)
        out = np.zeros((sI.stop - sI.start,) + Y.shape[1:])
        for J in range(I):
            U, V = self.offdiag_tiles[I, J]
            if U.shape[1]:
                out += U @ (V.T @ Y[self.block_slice(J)])
        return out

    def solve_lower(self, b) -> np.ndarray:
        """Solve ``L x = b`` by block forward substitution."""
        b = np.asarray(b, dtype=float)
        x = np.empty_like(b)
        for I in range(self.n_blocks):
            sI = self.block_slice(I)
            rhs = b[sI]
            pre = self.lowrank_prefix(I, x)
            if pre is not None:
                rhs = rhs - pre
            x[sI] = solve_triangular(self.diagonal_tiles[I], rhs, lower=True)
        return x


def _compress(tile, tol):
    """Truncated SVD; keep the smallest rank whose Frobenius tail <= tol * s_max."""
    Uf, s, Vt = np.linalg.svd(tile, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        k = 0
    else:
        tail = np.sqrt(np.append(np.cumsum((s * s)[::-1])[::-1], 0.0))
        k = int(np.argmax(tail <= tol * s[0]))
    return Uf[:, :k] * s[:k], Vt[:k].T.copy()


def _tlr_factor(S, offsets, tol):
    nb = len(offsets) - 1
    sl = [slice(int(offsets[i]), int(offsets[i + 1])) for i in range(nb)]
    A = {(i, j): S[sl[i], sl[j]].copy() for i in range(nb) for j in range(i + 1)}
    diag, off = [], {}
    for k in range(nb):
        Lkk = np.linalg.cholesky(A.pop((k, k)))
        diag.append(Lkk)
        for i in range(k + 1, nb):
            Lik = solve_triangular(Lkk, A.pop((i, k)).T, lower=True).T
            off[i, k] = _compress(Lik, tol)
        for i in range(k + 1, nb):
            Ui, Vi = off[i, k]
            if not Ui.shape[1]:
                continue
            for j in range(k + 1, i + 1):
                Uj, Vj = off[j, k]
                if Uj.shape[1]:
                    A[i, j] -= Ui @ ((Vi.T @ Vj) @ Uj.T)
    return diag, off


def tlr_compress(S, block_size: int, tol: float) -> TlrMatrix:
    """Tile-low-rank block Cholesky of ``S``, compressing each off-diagonal
    factor tile by truncated SVD.  Follows the dense jitter policy on breakdown."""
    S = _check_symmetric(S)
    if tol < 0:
        raise ValidationError(f"tol must be non-negative, got {tol}")
    n = S.shape[0]
    offsets = block_offsets(n, int(block_size))
    for jitter in jitter_levels(S):
        A = S if jitter == 0.0 else S + jitter * np.eye(n)
        try:
            diag, off = _tlr_factor(A, offsets, tol)
        except np.linalg.LinAlgError:
            continue
        return TlrMatrix(n, int(block_size), offsets, diag, off, float(tol), jitter)
    raise CholeskyError(f"block Cholesky broke down for n={n}, block_size={block_size}")


def tlr_row_matvec(T: TlrMatrix, row: int, v) -> float:
    """Dot product of ``L[row, :row]`` with ``v[:row]`` (0-based ``row``)."""
    if not 0 <= row < T.n:
        raise IndexError(f"row {row} out of range for n={T.n}")
    v = np.asarray(v, dtype=float)
    if v.shape[0] < row:
        raise ValidationError(f"vector of length {v.shape[0]} shorter than row {row}")
    I = int(T._block_of[row])
    start = int(T.offsets[I])
    loc = row - start
    total = float(T.diagonal_tiles[I][loc, :loc] @ v[start:row])
    for J in range(I):
        U, V = T.offdiag_tiles[I, J]
        if U.shape[1]:
            total += float(U[loc] @ (V.T @ v[T.block_slice(J)]))
    return total
