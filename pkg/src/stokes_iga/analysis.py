"""Error norms, inf-sup and block bounds, preconditioned spectra and divergence checks."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from .assembly import StokesSystem, element_points, pressure_basis, velocity_basis
from .cases import ExactSolution
from .geometry import GeometricMap
from .krylov import schur_complement
from .sparse import DENSE_CAP, as_csr, check_dense_size, dense_gen_eig
from .spaces import DiscretePair

FloatArray = npt.NDArray[np.float64]

KERNEL_TOL = 1e-10  # relative threshold for the pressure kernel eigenvalue
UNIT_TOL = 1e-8  # eigenvalues this close to 1 form the unit cluster
CHUNK = 512


def _element_chunks(n: int, chunk: int = CHUNK):
    for start in range(0, n, chunk):
        yield np.arange(start, min(start + chunk, n))


def _fields_at(pair, gmap, u, p, elems, n_points):
    pts, w = element_points(pair, n_points, elems)
    vb = velocity_basis(pair, gmap, pts)
    coef = np.where(vb.glob >= 0, u[np.maximum(vb.glob, 0)], 0.0)
    uh = np.einsum("eqla,el->eqa", vb.v, coef)
    Duh = np.einsum("eqlab,el->eqab", vb.Dv, coef)
    div = np.einsum("eql,el->eq", vb.div, coef)
    ph = None
    if p is not None:
        _, q, pg = pressure_basis(pair, gmap, pts, det=vb.geo.det)
        ph = np.einsum("eql,el->eq", q, p[pg])
    wJ = w * vb.geo.det.reshape(w.shape)
    return vb.geo.x, wJ, uh, Duh, div, ph


# errors -------------------------------------------------------------------------


@dataclass
class ErrorReport:
    h: float
    h1_velocity: float  # |u - u_h|_{H^1}
    l2_velocity: float
    l2_pressure: float
    order_h1: float | None = None
    order_l2: float | None = None
    order_pressure: float | None = None


def error_norms(
    u: npt.ArrayLike,
    p: npt.ArrayLike,
    exact: ExactSolution,
    pair: DiscretePair,
    gmap: GeometricMap,
    quad_points: int | None = None,
) -> ErrorReport:
    """Velocity H1-seminorm and L2 errors and pressure L2 error.

    Integrals use two more Gauss points per direction than the assembly rule
    (``quad_points``, default degree + 1).
    """
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    nq = (pair.degree + 1 if quad_points is None else quad_points) + 2
    e_h1 = e_l2 = e_p = 0.0
    for elems in _element_chunks(pair.mesh.n_elements):
        X, wJ, uh, Duh, _, ph = _fields_at(pair, gmap, u, p, elems, nq)
        ue = exact.velocity(X).reshape(uh.shape)
        ge = exact.velocity_grad(X).reshape(Duh.shape)
        pe = exact.pressure(X).reshape(ph.shape)
        e_h1 += float(np.sum(wJ * ((ge - Duh) ** 2).sum(axis=(-1, -2))))
        e_l2 += float(np.sum(wJ * ((ue - uh) ** 2).sum(axis=-1)))
        e_p += float(np.sum(wJ * (pe - ph) ** 2))
    h = 1.0 / pair.n_elem
    return ErrorReport(h, math.sqrt(e_h1), math.sqrt(e_l2), math.sqrt(e_p))


def observed_order(e_coarse: float, e_fine: float, ratio: float = 2.0) -> float:
    return math.log(e_coarse / e_fine) / math.log(ratio)


def with_orders(reports: Sequence[ErrorReport]) -> list[ErrorReport]:
    """Fill in observed orders between consecutive levels (first level has none)."""
    out = []
    for i, r in enumerate(reports):
        r = ErrorReport(**asdict(r))
        if i > 0:
            prev = reports[i - 1]
            ratio = prev.h / r.h
            r.order_h1 = observed_order(prev.h1_velocity, r.h1_velocity, ratio)
            r.order_l2 = observed_order(prev.l2_velocity, r.l2_velocity, ratio)
            r.order_pressure = observed_order(prev.l2_pressure, r.l2_pressure, ratio)
        out.append(r)
    return out


# inf-sup and block bounds --------------------------------------------------------


@dataclass
class InfSup:
    beta0: float
    cb: float
    eigenvalues: FloatArray  # nonzero eigenvalues of (S, Q_nu), ascending

    @property
    def beta0_sq(self) -> float:
        return self.beta0**2

    @property
    def cb_sq(self) -> float:
        return self.cb**2


def infsup_constants(system: StokesSystem, cap: int = DENSE_CAP) -> InfSup:
    """beta0 and C_b from the generalized problem S p = mu Q_nu p, S = B A^{-1} B^T."""
    check_dense_size(system.n_p, cap)
    S = schur_complement(system)
    ev = dense_gen_eig(S, system.Q_nu, cap)
    ev = ev[ev > KERNEL_TOL * ev.max()]
    return InfSup(math.sqrt(ev[0]), math.sqrt(ev[-1]), ev)


def block_bounds(block, approx="jacobi", cap: int = DENSE_CAP) -> tuple[float, float]:
    """Extreme eigenvalues (gamma, Gamma) of M^{-1} X for a block X.

    ``approx`` is "jacobi", "exact", or an explicit SPD matrix M.
    """
    X = as_csr(block)
    if isinstance(approx, str):
        if approx == "jacobi":
            M = sp.diags(X.diagonal())
        elif approx == "exact":
            M = X
        else:
            raise ValueError(f"unsupported block approximation {approx!r}")
    else:
        M = approx
    ev = dense_gen_eig(X, M, cap)
    return float(ev[0]), float(ev[-1])


# spectra ------------------------------------------------------------------------


@dataclass
class Limits:
    neg_min: float
    neg_max: float
    pos_min: float
    pos_max: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.neg_min, self.neg_max, self.pos_min, self.pos_max


@dataclass
class Spectrum:
    eigenvalues: FloatArray  # all eigenvalues of M^{-1} K, ascending
    limits: Limits
    n_kernel: int
    n_unit: int


def _block_matrix(kind, block):
    if kind is None or kind == "identity":
        return sp.identity(block.shape[0], format="csr")
    if kind == "exact":
        return as_csr(block)
    if kind == "jacobi":
        return sp.diags(as_csr(block).diagonal()).tocsr()
    return as_csr(kind)


def preconditioned_spectrum(
    system: StokesSystem, M_A="exact", M_Q="exact", cap: int = DENSE_CAP
) -> Spectrum:
    """Eigenvalues of M^{-1} K with M = diag(M_A, M_Q) built on A and Q_nu.

    ``M_A``/``M_Q`` are "exact", "jacobi", "identity"/None or explicit
    matrices. The kernel eigenvalue and the cluster at 1 are excluded from
    the limiting values.
    """
    K = system.matrix()
    M = sp.block_diag([_block_matrix(M_A, system.A), _block_matrix(M_Q, system.Q_nu)])
    ev = dense_gen_eig(K, M, cap)
    scale = np.abs(ev).max()
    kernel = np.abs(ev) <= KERNEL_TOL * scale
    unit = np.abs(ev - 1.0) <= UNIT_TOL
    rest = ev[~kernel & ~unit]
    neg, pos = rest[rest < 0], rest[rest > 0]
    limits = Limits(
        float(neg.min()) if neg.size else math.nan,
        float(neg.max()) if neg.size else math.nan,
        float(pos.min()) if pos.size else math.nan,
        float(pos.max()) if pos.size else math.nan,
    )
    return Spectrum(ev, limits, int(kernel.sum()), int(unit.sum()))


def ideal_intervals(beta0_sq: float, cb_sq: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """Inclusion intervals for exact block preconditioning (plus the point 1)."""
    lo, hi = math.sqrt(1 + 4 * cb_sq), math.sqrt(1 + 4 * beta0_sq)
    return ((1 - lo) / 2, (1 - hi) / 2), ((1 + hi) / 2, (1 + lo) / 2)


def general_intervals(
    beta0_sq: float, cb_sq: float, gA: float, GA: float, gQ: float, GQ: float
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Negative and positive inclusion intervals for block-diagonal M with the given block bounds."""
    neg = (
        (gA - math.sqrt(gA**2 + 4 * cb_sq * GA * GQ)) / 2,
        (gA - math.sqrt(gA**2 + 4 * beta0_sq * gA * gQ)) / 2,
    )
    pos = (gA, (GA + math.sqrt(GA**2 + 4 * cb_sq * GA * GQ)) / 2)
    return neg, pos


def outside_intervals(
    eigenvalues: FloatArray,
    intervals: Iterable[tuple[float, float]],
    points: Iterable[float] = (),
    slack: float = 1e-8,
    exclude_kernel: bool = True,
) -> FloatArray:
    """Eigenvalues not covered by any interval or point (relative slack)."""
    ev = np.asarray(eigenvalues)
    if exclude_kernel:
        ev = ev[np.abs(ev) > KERNEL_TOL * np.abs(ev).max()]
    tol = slack * max(1.0, float(np.abs(ev).max()))
    covered = np.zeros(ev.shape, dtype=bool)
    for a, b in intervals:
        covered |= (ev >= a - tol) & (ev <= b + tol)
    for c in points:
        covered |= np.abs(ev - c) <= tol
    return ev[~covered]


# divergence ---------------------------------------------------------------------


@dataclass
class DivergenceCheck:
    max_div: float  # max |div u_h| over the quadrature points
    scale: float  # max |grad u_h| over the same points

    @property
    def relative(self) -> float:
        return self.max_div / self.scale if self.scale > 0 else 0.0


def divergence_free_check(
    u: npt.ArrayLike, pair: DiscretePair, gmap: GeometricMap, n_points: int | None = None
) -> DivergenceCheck:
    u = np.asarray(u, dtype=float)
    nq = pair.degree + 1 if n_points is None else n_points
    mdiv = scale = 0.0
    for elems in _element_chunks(pair.mesh.n_elements):
        _, _, _, Duh, div, _ = _fields_at(pair, gmap, u, None, elems, nq)
        mdiv = max(mdiv, float(np.abs(div).max()))
        scale = max(scale, float(np.sqrt((Duh**2).sum(axis=(-1, -2))).max()))
    return DivergenceCheck(mdiv, scale)


# CSV ----------------------------------------------------------------------------


def _row(obj) -> dict:
    if isinstance(obj, dict):
        return obj
    return {f.name: getattr(obj, f.name) for f in fields(obj) if not isinstance(getattr(obj, f.name), np.ndarray)}


def write_csv(path: str | Path, records: Sequence) -> Path:
    """Write dataclass records (or dicts) as CSV; array-valued fields are skipped."""
    rows = [_row(r) for r in records]
    if not rows:
        raise ValueError("nothing to write")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return path


def spectrum_rows(spectrum: Spectrum, label: str) -> list[dict]:
    return [{"preconditioner": label, "index": i, "eigenvalue": float(v)} for i, v in enumerate(spectrum.eigenvalues)]
