"""Preconditioned MINRES and CG, and block-diagonal preconditioners for the Stokes system."""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from .sparse import CholeskyFactor, as_csr, complete_cholesky, ic0

FloatArray = npt.NDArray[np.float64]
Operator = Callable[[FloatArray], FloatArray]

STRATEGIES = (
    "Ideal(A,Q)",
    "PCG(A,Q)",
    "Ideal(A)+Diag(Q)",
    "PCG(A)+Diag(Q)",
    "Diag(A,Q)",
    "IC0-PCG(A,Q)",
)
STOP_NORMS = ("preconditioned", "euclidean")
OUTER_TOL = 1e-12
INNER_TOL = 1e-6


class IndefinitePreconditionerError(ArithmeticError):
    pass


class NotPositiveDefiniteError(ArithmeticError):
    pass


def _as_operator(A) -> Operator:
    if callable(A) and not sp.issparse(A) and not isinstance(A, np.ndarray):
        return A
    return lambda x: A @ x


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    history: list[float]  # relative residual in the M^{-1} norm; history[0] = 1
    wall_time: float = 0.0
    inner_top: float | None = None  # mean inner PCG iterations per application
    inner_bottom: float | None = None
    euclidean: list[float] | None = None  # relative ||b - A x||_2, when tracked


# MINRES -------------------------------------------------------------------------


def minres(
    A,
    b: npt.ArrayLike,
    precond=None,
    tol: float = OUTER_TOL,
    max_iter: int = 10_000,
    x0: npt.ArrayLike | None = None,
    track_euclidean: bool = False,
    stop: str = "preconditioned",
) -> tuple[FloatArray, SolveReport]:
    """Preconditioned MINRES (Lanczos short recurrence with Givens QR).

    With ``stop="preconditioned"`` the test is on the M^{-1}-norm of the
    residual relative to the initial one, the quantity MINRES minimizes.
    ``stop="euclidean"`` tests the true ||b - A x||_2 / ||b||_2 instead (one
    extra product per iteration). Singular ``A`` is fine as long as ``b`` is
    consistent.
    """
    if stop not in STOP_NORMS:
        raise ValueError(f"stop must be one of {STOP_NORMS}")
    track_euclidean = track_euclidean or stop == "euclidean"
    start = time.perf_counter()
    apply_A = _as_operator(A)
    apply_M = (lambda r: r.copy()) if precond is None else precond
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)

    def report(it, ok, hist, eucl):
        return SolveReport(
            it,
            ok,
            hist,
            time.perf_counter() - start,
            getattr(precond, "inner_top", None),
            getattr(precond, "inner_bottom", None),
            eucl,
        )

    r1 = b - apply_A(x)
    y = apply_M(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise IndefinitePreconditionerError(_diagnose(precond, r1, y))
    history = [1.0]
    bnorm = float(np.linalg.norm(b))
    eucl = [1.0] if track_euclidean else None
    if beta1 == 0.0:
        return x, report(0, True, history, eucl)
    beta1 = np.sqrt(beta1)

    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar, cs, sn = beta1, -1.0, 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        v = y / beta
        y = apply_A(v)
        if it >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = apply_M(r2)
        oldb = beta
        beta = float(r2 @ y)
        if beta < 0:
            raise IndefinitePreconditionerError(_diagnose(precond, r2, y))
        beta = np.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), np.finfo(float).eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        history.append(abs(phibar) / beta1)
        if eucl is not None:
            eucl.append(float(np.linalg.norm(b - apply_A(x))) / bnorm if bnorm else 0.0)
        if (eucl[-1] if stop == "euclidean" else history[-1]) <= tol:
            converged = True
            break
        if beta == 0.0:  # invariant subspace found; the last iterate is final
            break
    return x, report(it, converged, history, eucl)


def _diagnose(precond, r: FloatArray, z: FloatArray) -> str:
    name = getattr(precond, "locate_indefinite", None)
    where = name(r, z) if name is not None else "preconditioner"
    return f"indefinite preconditioner detected (<z, r> < 0) in the {where}"


# CG -----------------------------------------------------------------------------


def pcg(
    A,
    b: npt.ArrayLike,
    precond=None,
    tol: float = INNER_TOL,
    max_iter: int = 10_000,
) -> tuple[FloatArray, int]:
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops when sqrt(r^T M^{-1} r) / sqrt(b^T M^{-1} b) <= tol.
    """
    apply_A = _as_operator(A)
    apply_M = (lambda r: r.copy()) if precond is None else _as_operator(precond)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    r = b.copy()
    z = apply_M(r)
    rz = float(r @ z)
    if rz <= 0.0:
        if rz == 0.0:
            return x, 0
        raise NotPositiveDefiniteError("preconditioner is not positive definite")
    stop = tol * tol * rz
    p = z.copy()
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        curv = float(p @ Ap)
        if curv <= 0.0:
            raise NotPositiveDefiniteError(f"negative curvature p^T A p = {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        z = apply_M(r)
        rz_new = float(r @ z)
        if rz_new <= stop:
            return x, it
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


# block solvers ------------------------------------------------------------------


class ExactBlock:
    """M = the block itself, applied through a complete Cholesky factor."""

    label = "Ideal"

    def __init__(self, matrix=None, factor: CholeskyFactor | None = None) -> None:
        self.factor = factor if factor is not None else complete_cholesky(matrix)

    def __call__(self, r: FloatArray) -> FloatArray:
        return self.factor.solve(r)


class DenseBlock:
    """Exact solve with a dense SPD matrix (small systems and oracles)."""

    label = "Ideal"

    def __init__(self, matrix: FloatArray) -> None:
        import scipy.linalg as sla

        self._cho = sla.cho_factor(np.asarray(matrix, dtype=float), lower=True)
        self._solve = sla.cho_solve

    def __call__(self, r: FloatArray) -> FloatArray:
        return self._solve(self._cho, r)


class JacobiBlock:
    label = "Diag"

    def __init__(self, matrix) -> None:
        d = np.asarray(as_csr(matrix).diagonal(), dtype=float)
        if np.any(d <= 0):
            raise NotPositiveDefiniteError("nonpositive diagonal entry in Jacobi block")
        self.diag = d
        self.inv = 1.0 / d

    def __call__(self, r: FloatArray) -> FloatArray:
        return self.inv * r


class PcgBlock:
    """Approximate block inverse by inner PCG; keeps iteration statistics."""

    label = "PCG"

    def __init__(self, matrix, inner, tol: float = INNER_TOL, max_iter: int = 10_000) -> None:
        self.matrix = as_csr(matrix)
        self.inner = inner
        self.tol = tol
        self.max_iter = max_iter
        self.calls = 0
        self.iterations = 0

    def __call__(self, r: FloatArray) -> FloatArray:
        x, it = pcg(self.matrix, r, self.inner, self.tol, self.max_iter)
        self.calls += 1
        self.iterations += it
        return x

    @property
    def mean_iterations(self) -> float | None:
        return self.iterations / self.calls if self.calls else None

    def reset(self) -> None:
        self.calls = self.iterations = 0


class Ic0Inner:
    def __init__(self, matrix) -> None:
        self.factor = ic0(matrix)

    def __call__(self, r: FloatArray) -> FloatArray:
        return self.factor.solve(r)


@dataclass
class BlockDiagPreconditioner:
    """M = diag(M_A, M_Q); applying it means solving with each block."""

    name: str
    top: Callable[[FloatArray], FloatArray]
    bottom: Callable[[FloatArray], FloatArray]
    n_u: int
    labels: tuple[str, str] = field(default=("A", "Q"))

    def __call__(self, r: FloatArray) -> FloatArray:
        return np.concatenate([self.top(r[: self.n_u]), self.bottom(r[self.n_u :])])

    def locate_indefinite(self, r: FloatArray, z: FloatArray) -> str:
        n = self.n_u
        if float(r[:n] @ z[:n]) < 0:
            return f"top block M_{self.labels[0]} of {self.name}"
        return f"bottom block M_{self.labels[1]} of {self.name}"

    @property
    def inner_top(self) -> float | None:
        return getattr(self.top, "mean_iterations", None)

    @property
    def inner_bottom(self) -> float | None:
        return getattr(self.bottom, "mean_iterations", None)

    def reset(self) -> None:
        for blk in (self.top, self.bottom):
            if hasattr(blk, "reset"):
                blk.reset()


def make_strategy(name: str, system, inner_tol: float = INNER_TOL) -> BlockDiagPreconditioner:
    """Build one of the named block-diagonal preconditioners (Q block uses Q_nu)."""
    A, Qn = system.A, system.Q_nu
    if name == "Ideal(A,Q)":
        top, bottom = ExactBlock(A), ExactBlock(Qn)
    elif name == "PCG(A,Q)":
        top = PcgBlock(A, JacobiBlock(A), inner_tol)
        bottom = PcgBlock(Qn, JacobiBlock(Qn), inner_tol)
    elif name == "Ideal(A)+Diag(Q)":
        top, bottom = ExactBlock(A), JacobiBlock(Qn)
    elif name == "PCG(A)+Diag(Q)":
        top, bottom = PcgBlock(A, JacobiBlock(A), inner_tol), JacobiBlock(Qn)
    elif name == "Diag(A,Q)":
        top, bottom = JacobiBlock(A), JacobiBlock(Qn)
    elif name == "IC0-PCG(A,Q)":
        top = PcgBlock(A, Ic0Inner(A), inner_tol)
        bottom = PcgBlock(Qn, Ic0Inner(Qn), inner_tol)
    else:
        raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
    return BlockDiagPreconditioner(name, top, bottom, system.n_u)


def schur_complement(system) -> FloatArray:
    """Dense S = B A^{-1} B^T via a Cholesky factor of A."""
    fac = complete_cholesky(system.A)
    Bt = system.B.T.toarray()
    X = np.column_stack([fac.solve(Bt[:, k]) for k in range(Bt.shape[1])])
    S = system.B @ X
    return 0.5 * (S + S.T)


def exact_schur_preconditioner(system, S: FloatArray | None = None) -> BlockDiagPreconditioner:
    """diag(A, B A^{-1} B^T), with the pressure kernel mode lifted to keep it SPD.

    S is singular along k = ``system.pressure_kernel`` (the constants on the
    square), so S + k k^T / |k|^2 is used for the bottom block; on the
    complement of the kernel it acts exactly as S.
    """
    S = schur_complement(system) if S is None else S
    k = system.pressure_kernel
    k = k / np.linalg.norm(k)
    return BlockDiagPreconditioner(
        "Exact-Schur",
        ExactBlock(system.A),
        DenseBlock(S + np.outer(k, k)),
        system.n_u,
        labels=("A", "S"),
    )


# Stokes driver ------------------------------------------------------------------


def solve_stokes(
    system,
    precond: BlockDiagPreconditioner | str,
    tol: float = OUTER_TOL,
    inner_tol: float = INNER_TOL,
    max_iter: int = 10_000,
    track_euclidean: bool = False,
    stop: str = "preconditioned",
) -> tuple[FloatArray, FloatArray, SolveReport]:
    """Solve the saddle-point system; the pressure is filtered to zero mean."""
    t0 = time.perf_counter()
    if isinstance(precond, str):
        precond = make_strategy(precond, system, inner_tol)
    else:
        precond.reset()
    K = system.matrix()
    x, rep = minres(
        K, system.rhs(), precond, tol, max_iter, track_euclidean=track_euclidean, stop=stop
    )
    rep.wall_time = time.perf_counter() - t0
    u, p = x[: system.n_u], system.filter_pressure(x[system.n_u :])
    return u, p, rep


def write_residuals(path: str | Path, history: list[float]) -> None:
    """Two-column text (iteration, relative residual), gnuplot-ready."""
    data = np.column_stack([np.arange(len(history)), np.asarray(history)])
    np.savetxt(path, data, fmt=["%d", "%.16e"])
