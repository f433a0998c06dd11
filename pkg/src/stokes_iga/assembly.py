"""Quadrature and assembly of the discrete Stokes operators.

The viscous block includes Nitsche's boundary terms for the tangential
(no-slip or prescribed) velocity; the normal component is removed strongly
from the velocity space.
"""

from __future__ import annotations

import warnings
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import SIDES, GeometricMap, PiolaData, geometry_at, push_vectors, side_quadrature
from .spaces import DiscretePair
from .splines import element_quadrature, eval_basis_many

FloatArray = npt.NDArray[np.float64]
VectorField = Callable[[FloatArray], FloatArray]
BoundaryField = Callable[[FloatArray, str], FloatArray]

CHUNK = 1024


@dataclass
class ProblemConfig:
    nu: float = 1.0
    c_pen: float | None = None  # default 5 (k' + 1)
    quad_points: int | None = None  # default p + 1
    dirichlet: BoundaryField | None = None  # tangential data g(x, side)
    body_force: VectorField | None = None

    def __post_init__(self) -> None:
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")
        if self.c_pen is not None and self.c_pen <= 0:
            raise ValueError("penalty constant must be positive")

    def penalty(self, pair: DiscretePair) -> float:
        return 5.0 * (pair.k_prime + 1) if self.c_pen is None else float(self.c_pen)

    def n_quad(self, pair: DiscretePair) -> int:
        nq = pair.degree + 1 if self.quad_points is None else int(self.quad_points)
        if nq < pair.degree + 1:
            warnings.warn(f"{nq} quadrature points is below degree + 1", stacklevel=3)
        return nq


@dataclass
class StokesSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    f: FloatArray
    Q: sp.csr_matrix
    nu: float
    pair: DiscretePair
    gmap: GeometricMap
    config: ProblemConfig = field(repr=False)
    pressure_weights: FloatArray = field(repr=False)  # parametric integrals of pressure basis

    @property
    def Q_nu(self) -> sp.csr_matrix:
        return (self.Q / (2.0 * self.nu)).tocsr()

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.Q.shape[0]

    def matrix(self) -> sp.csr_matrix:
        """Saddle-point matrix [[A, B^T], [B, 0]]."""
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")

    def rhs(self) -> FloatArray:
        return np.concatenate([self.f, np.zeros(self.n_p)])

    @cached_property
    def pressure_kernel(self) -> FloatArray:
        """Coefficients spanning Ker(B^T).

        div maps the velocity space onto the zero-mean parametric pressures, so
        q lies in the kernel iff the parametric L2 projection of q_hat / det DF
        is constant, i.e. Q k = w with w the parametric basis integrals. On the
        identity map Q is the parametric mass matrix and k is the vector of ones.
        """
        if getattr(self.gmap, "kind", None) == "identity":
            return np.ones(self.n_p)
        k = spla.spsolve(self.Q.tocsc(), self.pressure_weights)
        return k / np.dot(self.pressure_weights, k)

    def filter_pressure(self, p: FloatArray) -> FloatArray:
        """Remove the kernel component so the physical pressure has zero mean."""
        k = self.pressure_kernel
        w = self.pressure_weights
        return p - (np.dot(w, p) / np.dot(w, k)) * k


# basis evaluation ---------------------------------------------------------------


@dataclass
class VelocityBasis:
    geo: PiolaData  # flattened over (E, Q)
    v: FloatArray  # (E, Q, L, 2)
    Dv: FloatArray  # (E, Q, L, 2, 2)
    div: FloatArray  # (E, Q, L)
    glob: npt.NDArray[np.int64]  # (E, L), -1 for removed

    @property
    def sym_grad(self) -> FloatArray:
        return 0.5 * (self.Dv + np.swapaxes(self.Dv, -1, -2))


def _tables(space, coords: FloatArray, nd: int):
    E, Q = coords.shape
    tab, first = eval_basis_many(space, coords.ravel(), nd)
    return tab.reshape(E, Q, nd + 1, -1), first.reshape(E, Q)[:, 0]


def velocity_basis(pair: DiscretePair, gmap: GeometricMap, xh: FloatArray) -> VelocityBasis:
    """Physical velocity basis functions at points ``xh`` of shape (E, Q, 2).

    All points of row ``e`` must lie in the closure of one element.
    """
    E, Q, _ = xh.shape
    vx, vy = pair.vel_x, pair.vel_y
    hx, fhx = _tables(vx.space_x, xh[..., 0], 1)
    ly, fly = _tables(vx.space_y, xh[..., 1], 1)
    lx, flx = _tables(vy.space_x, xh[..., 0], 1)
    hy, fhy = _tables(vy.space_y, xh[..., 1], 1)
    p = pair.degree

    def tensor(X, Y):
        # value, d/ds, d/dt with local index lj * nX + li
        val = np.einsum("eqi,eqj->eqji", X[:, :, 0], Y[:, :, 0]).reshape(E, Q, -1)
        ds = np.einsum("eqi,eqj->eqji", X[:, :, 1], Y[:, :, 0]).reshape(E, Q, -1)
        dt = np.einsum("eqi,eqj->eqji", X[:, :, 0], Y[:, :, 1]).reshape(E, Q, -1)
        return val, ds, dt

    ax, ax_s, ax_t = tensor(hx, ly)
    ay, ay_s, ay_t = tensor(lx, hy)
    Lx, Ly = ax.shape[-1], ay.shape[-1]
    L = Lx + Ly
    vh = np.zeros((E, Q, L, 2))
    Dvh = np.zeros((E, Q, L, 2, 2))
    vh[:, :, :Lx, 0] = ax
    Dvh[:, :, :Lx, 0, 0] = ax_s
    Dvh[:, :, :Lx, 0, 1] = ax_t
    vh[:, :, Lx:, 1] = ay
    Dvh[:, :, Lx:, 1, 0] = ay_s
    Dvh[:, :, Lx:, 1, 1] = ay_t
    div_hat = Dvh[..., 0, 0] + Dvh[..., 1, 1]

    geo = geometry_at(gmap, xh.reshape(-1, 2))
    v, Dv = push_vectors(geo, vh.reshape(E * Q, L, 2), Dvh.reshape(E * Q, L, 2, 2))
    div = div_hat / geo.det.reshape(E, Q, 1)

    li_x, lj_x = np.arange(p + 1), np.arange(p)
    gx = (fly[:, None, None] + lj_x[:, None]) * vx.nx + (fhx[:, None, None] + li_x[None, :])
    li_y, lj_y = np.arange(p), np.arange(p + 1)
    gy = (fhy[:, None, None] + lj_y[:, None]) * vy.nx + (flx[:, None, None] + li_y[None, :])
    glob = np.hstack([pair.vx_map[gx.reshape(E, -1)], pair.vy_map[gy.reshape(E, -1)]])
    return VelocityBasis(geo, v.reshape(E, Q, L, 2), Dv.reshape(E, Q, L, 2, 2), div, glob)


def pressure_basis(
    pair: DiscretePair, gmap: GeometricMap, xh: FloatArray, det: FloatArray | None = None
) -> tuple[FloatArray, FloatArray, npt.NDArray[np.int64]]:
    """Parametric and physical pressure basis values (E, Q, L) and global indices (E, L)."""
    E, Q, _ = xh.shape
    ps = pair.pressure
    X, fx = _tables(ps.space_x, xh[..., 0], 0)
    Y, fy = _tables(ps.space_y, xh[..., 1], 0)
    qh = np.einsum("eqi,eqj->eqji", X[:, :, 0], Y[:, :, 0]).reshape(E, Q, -1)
    if det is None:
        det = geometry_at(gmap, xh.reshape(-1, 2)).det
    q = qh / det.reshape(E, Q, 1)
    n = ps.space_x.degree + 1
    li = np.arange(n)
    glob = (fy[:, None, None] + li[:, None]) * ps.nx + (fx[:, None, None] + li[None, :])
    return qh, q, glob.reshape(E, -1)


def element_points(pair: DiscretePair, n_points: int, elems: npt.ArrayLike):
    """Tensor Gauss points (E, Q, 2) and weights (E, Q) on the given elements."""
    elems = np.asarray(elems)
    sx, wx = element_quadrature(pair.vel_x.space_x, n_points)
    sy, wy = element_quadrature(pair.vel_x.space_y, n_points)
    nex = pair.mesh.n_elem_x
    ex, ey = elems % nex, elems // nex
    # point index q = qy * n + qx
    px = np.broadcast_to(sx[ex][:, None, :], (elems.size, n_points, n_points))
    py = np.broadcast_to(sy[ey][:, :, None], (elems.size, n_points, n_points))
    pts = np.stack([px, py], axis=-1).reshape(elems.size, -1, 2)
    w = (wy[ey][:, :, None] * wx[ex][:, None, :]).reshape(elems.size, -1)
    return pts, w


# sparse accumulation -------------------------------------------------------------


def _accumulate(
    rows: npt.NDArray[np.int64],
    cols: npt.NDArray[np.int64],
    vals: FloatArray,
    shape: tuple[int, int],
) -> sp.csr_matrix:
    """CSR from triplets, summing duplicates in input order; explicit zeros are kept."""
    keep = (rows >= 0) & (cols >= 0)
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size == 0:
        return sp.csr_matrix(shape)
    new = np.empty(rows.size, dtype=bool)
    new[0] = True
    new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    starts = np.flatnonzero(new)
    data = np.add.reduceat(vals, starts)
    r, c = rows[starts], cols[starts]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    indptr = np.cumsum(indptr)
    return sp.csr_matrix((data, c, indptr), shape=shape)


class _Triplets:
    def __init__(self) -> None:
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, row_idx, col_idx, local) -> None:
        E, m, n = local.shape
        self.rows.append(np.broadcast_to(row_idx[:, :, None], (E, m, n)).ravel())
        self.cols.append(np.broadcast_to(col_idx[:, None, :], (E, m, n)).ravel())
        self.vals.append(local.ravel())

    def matrix(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        return _accumulate(
            np.concatenate(self.rows), np.concatenate(self.cols), np.concatenate(self.vals), shape
        )


def _vector(idx, local, n) -> FloatArray:
    out = np.zeros(n)
    keep = idx >= 0
    np.add.at(out, idx[keep], local[keep])
    return out


# operators ----------------------------------------------------------------------


def _chunks(n: int):
    for start in range(0, n, CHUNK):
        yield np.arange(start, min(start + CHUNK, n))


def _nitsche_terms(pair, gmap, config, want_matrix=True, want_rhs=True):
    """Boundary contributions of Nitsche's method: local matrices and RHS per side."""
    nu, c_pen = config.nu, config.penalty(pair)
    nq = config.n_quad(pair)
    out = []
    for side in SIDES:
        sq = side_quadrature(gmap, pair.mesh, side, nq)
        vb = velocity_basis(pair, gmap, sq.points)
        eps_n = np.einsum("fqlab,fqb->fqla", vb.sym_grad, sq.normal)
        ds = sq.weights * sq.surface_jacobian
        pen = c_pen / sq.h_F[:, None]
        mat = rhs = None
        if want_matrix:
            cross = np.einsum("fq,fqia,fqja->fij", ds, eps_n, vb.v)
            mass = np.einsum("fq,fqia,fqja->fij", ds * pen, vb.v, vb.v)
            mat = 2.0 * nu * (-cross - np.swapaxes(cross, 1, 2) + mass)
        if want_rhs and config.dirichlet is not None:
            g = np.asarray(config.dirichlet(vb.geo.x, side))
            g = g.reshape(sq.points.shape)
            rhs = 2.0 * nu * (
                -np.einsum("fq,fqia,fqa->fi", ds, eps_n, g)
                + np.einsum("fq,fqia,fqa->fi", ds * pen, vb.v, g)
            )
        out.append((vb.glob, mat, rhs))
    return out


def assemble_viscous(pair: DiscretePair, gmap: GeometricMap, config: ProblemConfig) -> sp.csr_matrix:
    """A_h: symmetric-gradient viscous form minus Nitsche's boundary form."""
    nq = config.n_quad(pair)
    trip = _Triplets()
    for elems in _chunks(pair.mesh.n_elements):
        pts, w = element_points(pair, nq, elems)
        vb = velocity_basis(pair, gmap, pts)
        eps = vb.sym_grad
        wJ = w * vb.geo.det.reshape(w.shape)
        loc = 2.0 * config.nu * np.einsum("eq,eqiab,eqjab->eij", wJ, eps, eps)
        trip.add(vb.glob, vb.glob, 0.5 * (loc + np.swapaxes(loc, 1, 2)))
    for glob, mat, _ in _nitsche_terms(pair, gmap, config, want_rhs=False):
        trip.add(glob, glob, 0.5 * (mat + np.swapaxes(mat, 1, 2)))
    return trip.matrix((pair.n_u, pair.n_u))


def assemble_divergence(
    pair: DiscretePair, gmap: GeometricMap, config: ProblemConfig | None = None
) -> sp.csr_matrix:
    """B with [B]_kj = -(div Phi_j, phi_k)."""
    nq = (config or ProblemConfig()).n_quad(pair)
    trip = _Triplets()
    for elems in _chunks(pair.mesh.n_elements):
        pts, w = element_points(pair, nq, elems)
        vb = velocity_basis(pair, gmap, pts)
        _, q, pg = pressure_basis(pair, gmap, pts, vb.geo.det)
        wJ = w * vb.geo.det.reshape(w.shape)
        loc = -np.einsum("eq,eqk,eqj->ekj", wJ, q, vb.div)
        trip.add(pg, vb.glob, loc)
    return trip.matrix((pair.n_p, pair.n_u))


def assemble_pressure_mass(
    pair: DiscretePair, gmap: GeometricMap, config: ProblemConfig | None = None
) -> sp.csr_matrix:
    nq = (config or ProblemConfig()).n_quad(pair)
    trip = _Triplets()
    for elems in _chunks(pair.mesh.n_elements):
        pts, w = element_points(pair, nq, elems)
        geo = geometry_at(gmap, pts.reshape(-1, 2))
        _, q, pg = pressure_basis(pair, gmap, pts, geo.det)
        wJ = w * geo.det.reshape(w.shape)
        loc = np.einsum("eq,eqk,eql->ekl", wJ, q, q)
        trip.add(pg, pg, 0.5 * (loc + np.swapaxes(loc, 1, 2)))
    return trip.matrix((pair.n_p, pair.n_p))


def assemble_rhs(pair: DiscretePair, gmap: GeometricMap, config: ProblemConfig) -> FloatArray:
    """Body-force load plus Nitsche's boundary functional for the data g."""
    nq = config.n_quad(pair)
    f = np.zeros(pair.n_u)
    if config.body_force is not None:
        for elems in _chunks(pair.mesh.n_elements):
            pts, w = element_points(pair, nq, elems)
            vb = velocity_basis(pair, gmap, pts)
            fx = np.asarray(config.body_force(vb.geo.x)).reshape(w.shape + (2,))
            wJ = w * vb.geo.det.reshape(w.shape)
            loc = np.einsum("eq,eqa,eqla->el", wJ, fx, vb.v)
            f += _vector(vb.glob, loc, pair.n_u)
    if config.dirichlet is not None:
        for glob, _, rhs in _nitsche_terms(pair, gmap, config, want_matrix=False):
            f += _vector(glob, rhs, pair.n_u)
    return f


def pressure_integrals(pair: DiscretePair) -> FloatArray:
    """Parametric integrals of the pressure basis (= physical integrals of its pushforward)."""
    ps = pair.pressure
    deg = ps.space_x.degree
    # integral of B_i^p is (xi_{i+p+1} - xi_i) / (p + 1)
    kx = ps.space_x.knot_vector.knots
    wx = (kx[deg + 1 :] - kx[: -deg - 1]) / (deg + 1)
    ky = ps.space_y.knot_vector.knots
    wy = (ky[deg + 1 :] - ky[: -deg - 1]) / (deg + 1)
    return np.kron(wy, wx)


def assemble_system(pair: DiscretePair, gmap: GeometricMap, config: ProblemConfig) -> StokesSystem:
    return StokesSystem(
        A=assemble_viscous(pair, gmap, config),
        B=assemble_divergence(pair, gmap, config),
        f=assemble_rhs(pair, gmap, config),
        Q=assemble_pressure_mass(pair, gmap, config),
        nu=config.nu,
        pair=pair,
        gmap=gmap,
        config=config,
        pressure_weights=pressure_integrals(pair),
    )


def dump_blocks(system: StokesSystem, directory: str | Path) -> list[Path]:
    """Write A, B, Q (Matrix Market) and f (one value per line) into ``directory``."""
    from .sparse import write_matrix_market

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, mat, symmetric in (("A", system.A, True), ("B", system.B, False), ("Q", system.Q, True)):
        path = directory / f"{name}.mtx"
        write_matrix_market(path, mat, symmetric=symmetric)
        paths.append(path)
    path = directory / "f.txt"
    np.savetxt(path, system.f, fmt="%.17g")
    paths.append(path)
    return paths
