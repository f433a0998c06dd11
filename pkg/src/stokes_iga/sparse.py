"""Sparse kernels: SpMV, reverse Cuthill-McKee, IC(0), direct Cholesky, dense eigensolvers.

CSR storage is scipy's ``csr_matrix``. The factorizations keep their own
permutation so callers always work in the original ordering.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
import numpy.typing as npt
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

DENSE_CAP = 4000


class CholeskyBreakdown(ArithmeticError):
    """Nonpositive pivot; ``row`` is the offending row in the factored ordering."""

    def __init__(self, row: int, kind: str) -> None:
        super().__init__(f"{kind} factorization broke down at row {row}")
        self.row = row


class AnalysisScaleError(ValueError):
    pass


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    if not A.has_sorted_indices:
        A = A.sorted_indices()
    return A


def spmv(A: sp.csr_matrix, x: npt.ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} times {x.shape}")
    return A @ x


def bandwidth(A) -> int:
    A = sp.coo_matrix(A)
    if A.nnz == 0:
        return 0
    return int(np.abs(A.row - A.col).max())


def permute(A, perm: npt.ArrayLike) -> sp.csr_matrix:
    """P A P^T, i.e. ``A[perm][:, perm]``."""
    perm = np.asarray(perm)
    return as_csr(sp.csr_matrix(A)[perm][:, perm])


# reordering ---------------------------------------------------------------------


def rcm_permutation(pattern) -> IntArray:
    """Reverse Cuthill-McKee ordering of a structurally symmetric matrix.

    Each component starts from its unvisited vertex of minimum degree (lowest
    index on ties); neighbours are queued by ascending degree, then index.
    ``perm[k]`` is the original index placed at position ``k``.
    """
    A = as_csr(pattern)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("pattern must be square")
    S = sp.csr_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)
    if (S != S.T).nnz:
        raise ValueError("pattern is not symmetric")
    indptr, indices = A.indptr, A.indices
    diag = np.zeros(n, dtype=np.int64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(diag, rows[indices == rows], 1)
    degree = np.diff(indptr) - diag
    visited = np.zeros(n, dtype=bool)
    order: list[int] = []
    by_degree = np.lexsort((np.arange(n), degree))
    cursor = 0
    while len(order) < n:
        while visited[by_degree[cursor]]:
            cursor += 1
        start = int(by_degree[cursor])
        visited[start] = True
        queue = deque([start])
        while queue:
            v = queue.popleft()
            order.append(v)
            nbrs = indices[indptr[v] : indptr[v + 1]]
            nbrs = nbrs[~visited[nbrs]]
            if nbrs.size:
                nbrs = nbrs[np.lexsort((nbrs, degree[nbrs]))]
                visited[nbrs] = True
                queue.extend(nbrs.tolist())
    return np.asarray(order[::-1], dtype=np.int64)


def is_permutation(perm: npt.ArrayLike, n: int) -> bool:
    perm = np.asarray(perm)
    return perm.shape == (n,) and np.array_equal(np.sort(perm), np.arange(n))


# factorizations -----------------------------------------------------------------


@nb.njit(cache=True)
def _ic0_kernel(indptr, indices, data, n):
    # data holds the lower triangle (diagonal last in each row); overwritten with L
    for i in range(n):
        r0, r1 = indptr[i], indptr[i + 1]
        for a in range(r0, r1 - 1):
            k = indices[a]
            # s = sum_{j < k} L[i, j] L[k, j] over the common pattern
            s = 0.0
            p, q = r0, indptr[k]
            qend = indptr[k + 1] - 1
            while p < a and q < qend:
                cp, cq = indices[p], indices[q]
                if cp == cq:
                    s += data[p] * data[q]
                    p += 1
                    q += 1
                elif cp < cq:
                    p += 1
                else:
                    q += 1
            data[a] = (data[a] - s) / data[indptr[k + 1] - 1]
        d = data[r1 - 1]
        for a in range(r0, r1 - 1):
            d -= data[a] * data[a]
        if not d > 0.0:
            return i
        data[r1 - 1] = np.sqrt(d)
    return -1


@nb.njit(cache=True)
def _lower_solve(indptr, indices, data, b):
    n = b.size
    x = b.copy()
    for i in range(n):
        s = x[i]
        r1 = indptr[i + 1] - 1
        for a in range(indptr[i], r1):
            s -= data[a] * x[indices[a]]
        x[i] = s / data[r1]
    return x


@nb.njit(cache=True)
def _upper_solve_transposed(indptr, indices, data, b):
    # solves L^T x = b given L in CSR
    n = b.size
    x = b.copy()
    for i in range(n - 1, -1, -1):
        r1 = indptr[i + 1] - 1
        x[i] /= data[r1]
        xi = x[i]
        for a in range(indptr[i], r1):
            x[indices[a]] -= data[a] * xi
    return x


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """A = P^T L L^T P with ``perm`` as returned by :func:`rcm_permutation`."""

    kind: str  # "complete" or "ic0"
    n: int
    perm: IntArray | None
    lower: sp.csr_matrix | None = None  # ic0 factor
    band: FloatArray | None = None  # complete factor, LAPACK lower banded storage

    @property
    def L(self) -> sp.csr_matrix:
        """Sparse lower factor in the permuted ordering."""
        if self.lower is not None:
            return self.lower
        kd, n = self.band.shape[0] - 1, self.n
        rows, cols, vals = [], [], []
        for d in range(kd + 1):
            j = np.arange(n - d)
            rows.append(j + d)
            cols.append(j)
            vals.append(self.band[d, : n - d])
        L = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        L.eliminate_zeros()
        return L

    @property
    def nnz(self) -> int:
        return self.L.nnz

    def solve(self, b: npt.ArrayLike) -> FloatArray:
        b = np.asarray(b, dtype=float)
        bp = b if self.perm is None else b[self.perm]
        if self.band is not None:
            xp = sla.cho_solve_banded((self.band, True), bp, check_finite=False)
        else:
            L = self.lower
            y = _lower_solve(L.indptr, L.indices, L.data, bp)
            xp = _upper_solve_transposed(L.indptr, L.indices, L.data, y)
        if self.perm is None:
            return xp
        x = np.empty_like(xp)
        x[self.perm] = xp
        return x


def _ordered(A, reorder: bool) -> tuple[sp.csr_matrix, IntArray | None]:
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not reorder:
        return A, None
    perm = rcm_permutation(A)
    return permute(A, perm), perm


def ic0(A, reorder: bool = True) -> CholeskyFactor:
    """Incomplete Cholesky with zero fill-in (no diagonal shift)."""
    Ap, perm = _ordered(A, reorder)
    n = Ap.shape[0]
    low = as_csr(sp.tril(Ap, format="csr"))
    if np.any(np.diff(low.indptr) == 0) or np.any(low.indices[low.indptr[1:] - 1] != np.arange(n)):
        raise CholeskyBreakdown(int(np.argmax(np.diff(low.indptr) == 0)), "IC(0)")
    data = low.data.astype(float).copy()
    row = _ic0_kernel(low.indptr.astype(np.int64), low.indices.astype(np.int64), data, n)
    if row >= 0:
        raise CholeskyBreakdown(int(row), "IC(0)")
    L = sp.csr_matrix((data, low.indices.copy(), low.indptr.copy()), shape=(n, n))
    return CholeskyFactor("ic0", n, perm, lower=L)


def complete_cholesky(A, reorder: bool = True) -> CholeskyFactor:
    """Exact Cholesky factorization, banded after RCM reordering (LAPACK pbtrf)."""
    Ap, perm = _ordered(A, reorder)
    n = Ap.shape[0]
    low = sp.tril(Ap, format="coo")
    kd = int((low.row - low.col).max(initial=0))
    band = np.zeros((kd + 1, n))
    band[low.row - low.col, low.col] = low.data
    try:
        cb = sla.cholesky_banded(band, lower=True, overwrite_ab=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        row = int(str(exc).split()[0]) - 1 if str(exc).split()[0].isdigit() else -1
        raise CholeskyBreakdown(row, "Cholesky") from exc
    return CholeskyFactor("complete", n, perm, band=cb)


def solve(factor: CholeskyFactor, b: npt.ArrayLike) -> FloatArray:
    return factor.solve(b)


def pattern_residual(A, factor: CholeskyFactor) -> float:
    """max |(L L^T - A)_ij| over the pattern of A, relative to max |A_ij| (permuted ordering)."""
    Ap = as_csr(A) if factor.perm is None else permute(A, factor.perm)
    L = factor.L
    LLt = as_csr(L @ L.T)
    coo = Ap.tocoo()
    diff = np.asarray(LLt[coo.row, coo.col]).ravel() - coo.data
    return float(np.abs(diff).max() / np.abs(coo.data).max())


# dense eigenvalue problems ------------------------------------------------------


def check_dense_size(n: int, cap: int = DENSE_CAP) -> None:
    if n > cap:
        raise AnalysisScaleError(
            f"dense eigen-analysis of size {n} exceeds the cap {cap}; use a coarser mesh"
        )


def _dense(A, cap: int) -> FloatArray:
    check_dense_size(A.shape[0], cap)
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def dense_sym_eig(A, cap: int = DENSE_CAP, vectors: bool = False):
    """Ascending eigenvalues of a symmetric matrix (and eigenvectors on request)."""
    Ad = _dense(A, cap)
    return sla.eigh(Ad, eigvals_only=not vectors)


def dense_gen_eig(A, M, cap: int = DENSE_CAP, vectors: bool = False):
    """Ascending eigenvalues of M^{-1} A for symmetric A and SPD M."""
    Ad, Md = _dense(A, cap), _dense(M, cap)
    return sla.eigh(Ad, Md, eigvals_only=not vectors)


# exchange format ----------------------------------------------------------------


def write_matrix_market(path: str | Path, A, symmetric: bool = False) -> None:
    scipy.io.mmwrite(
        str(path), sp.coo_matrix(A), symmetry="symmetric" if symmetric else "general", precision=17
    )


def read_matrix_market(path: str | Path) -> sp.csr_matrix:
    return as_csr(scipy.io.mmread(str(path)))
