"""Tensor-product spline spaces and the divergence-conforming velocity-pressure pair."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .splines import (
    UnivariateSpace,
    element_quadrature,
    eval_full,
    lower_degree_space,
    uniform_space,
)

IntArray = npt.NDArray[np.int64]

REMOVED = -1


@dataclass(frozen=True, eq=False)
class ParametricMesh:
    breaks_x: npt.NDArray[np.float64]
    breaks_y: npt.NDArray[np.float64]

    @property
    def n_elem_x(self) -> int:
        return self.breaks_x.size - 1

    @property
    def n_elem_y(self) -> int:
        return self.breaks_y.size - 1

    @property
    def n_elements(self) -> int:
        return self.n_elem_x * self.n_elem_y

    def element(self, e: int) -> tuple[int, int]:
        """(ex, ey) of flat element index ``e = ey * n_elem_x + ex``."""
        if not 0 <= e < self.n_elements:
            raise IndexError(f"element {e} out of range")
        return e % self.n_elem_x, e // self.n_elem_x

    def extents(self, e: int) -> tuple[tuple[float, float], tuple[float, float]]:
        ex, ey = self.element(e)
        return (
            (self.breaks_x[ex], self.breaks_x[ex + 1]),
            (self.breaks_y[ey], self.breaks_y[ey + 1]),
        )

    @property
    def h(self) -> float:
        hx, hy = np.diff(self.breaks_x), np.diff(self.breaks_y)
        return float(np.sqrt(hx.max() ** 2 + hy.max() ** 2))

    @property
    def shape_ratio(self) -> float:
        """Worst ratio of smallest edge to diameter over all elements."""
        hx, hy = np.meshgrid(np.diff(self.breaks_x), np.diff(self.breaks_y))
        return float(np.min(np.minimum(hx, hy) / np.hypot(hx, hy)))


@dataclass(frozen=True, eq=False)
class TensorSpace:
    space_x: UnivariateSpace
    space_y: UnivariateSpace

    @property
    def nx(self) -> int:
        return self.space_x.n

    @property
    def ny(self) -> int:
        return self.space_y.n

    @property
    def dim(self) -> int:
        return self.nx * self.ny

    @property
    def degrees(self) -> tuple[int, int]:
        return self.space_x.degree, self.space_y.degree

    def flatten(self, i: npt.ArrayLike, j: npt.ArrayLike) -> npt.ArrayLike:
        return np.asarray(j) * self.nx + np.asarray(i)

    def unflatten(self, k: npt.ArrayLike) -> tuple[npt.ArrayLike, npt.ArrayLike]:
        k = np.asarray(k)
        return k % self.nx, k // self.nx

    def local_indices(self) -> IntArray:
        """Flat indices of the supported functions on every element, (n_el, n_loc).

        Local ordering is lexicographic with x fastest.
        """
        fx, fy = self.space_x.element_first, self.space_y.element_first
        px, py = self.degrees
        li = np.arange(px + 1)
        lj = np.arange(py + 1)
        # element e = ey * nex + ex
        ii = fx[None, :, None, None] + li[None, None, None, :]
        jj = fy[:, None, None, None] + lj[None, None, :, None]
        flat = jj * self.nx + ii
        return flat.reshape(fx.size * fy.size, (px + 1) * (py + 1))

    def collocation(self, s: npt.ArrayLike, t: npt.ArrayLike, dx: int = 0, dy: int = 0):
        """Dense matrix of basis values on the tensor grid ``s x t``.

        Rows are ordered with ``s`` fastest, columns by flat basis index.
        """
        ex = eval_full(self.space_x, s, dx)
        ey = eval_full(self.space_y, t, dy)
        return np.kron(ey, ex)


@dataclass(frozen=True, eq=False)
class DiscretePair:
    """Velocity space S^{p,p-1} x S^{p-1,p} with no-penetration removal, pressure S^{p-1,p-1}."""

    k_prime: int
    n_elem: int
    vel_x: TensorSpace
    vel_y: TensorSpace
    pressure: TensorSpace
    mesh: ParametricMesh
    vx_map: IntArray = field(repr=False)
    vy_map: IntArray = field(repr=False)

    @property
    def degree(self) -> int:
        return self.k_prime + 1

    @property
    def n_vx(self) -> int:
        return int(np.count_nonzero(self.vx_map >= 0))

    @property
    def n_u(self) -> int:
        return self.n_vx + int(np.count_nonzero(self.vy_map >= 0))

    @property
    def n_p(self) -> int:
        return self.pressure.dim

    @property
    def constrained_dofs(self) -> tuple[IntArray, IntArray]:
        """Removed flat indices of vel_x and vel_y."""
        return np.flatnonzero(self.vx_map < 0), np.flatnonzero(self.vy_map < 0)

    def velocity_components(self, u: npt.ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        """Expand a constrained velocity vector into full vel_x and vel_y coefficients."""
        u = np.asarray(u, dtype=float)
        cx = np.zeros(self.vel_x.dim)
        cy = np.zeros(self.vel_y.dim)
        kx, ky = self.vx_map >= 0, self.vy_map >= 0
        cx[kx] = u[self.vx_map[kx]]
        cy[ky] = u[self.vy_map[ky]]
        return cx, cy

    def restrict_velocity(self, cx: npt.ArrayLike, cy: npt.ArrayLike) -> np.ndarray:
        """Inverse of :meth:`velocity_components` (removed entries are dropped)."""
        u = np.zeros(self.n_u)
        kx, ky = self.vx_map >= 0, self.vy_map >= 0
        u[self.vx_map[kx]] = np.asarray(cx)[kx]
        u[self.vy_map[ky]] = np.asarray(cy)[ky]
        return u


def build_pair(k_prime: int, n_elem: int) -> DiscretePair:
    if k_prime < 1:
        raise ValueError("k' must be >= 1 for an H1-conforming velocity space")
    if n_elem < 2:
        raise ValueError("n_elem must be at least 2")
    p = k_prime + 1
    high = uniform_space(p, n_elem)
    low = lower_degree_space(high)
    vel_x = TensorSpace(high, low)
    vel_y = TensorSpace(low, high)
    pressure = TensorSpace(low, low)
    breaks = high.knot_vector.breakpoints
    mesh = ParametricMesh(breaks, breaks)

    ix, _ = vel_x.unflatten(np.arange(vel_x.dim))
    keep_x = (ix != 0) & (ix != vel_x.nx - 1)
    _, jy = vel_y.unflatten(np.arange(vel_y.dim))
    keep_y = (jy != 0) & (jy != vel_y.ny - 1)
    vx_map = np.full(vel_x.dim, REMOVED, dtype=np.int64)
    vx_map[keep_x] = np.arange(np.count_nonzero(keep_x))
    vy_map = np.full(vel_y.dim, REMOVED, dtype=np.int64)
    vy_map[keep_y] = np.count_nonzero(keep_x) + np.arange(np.count_nonzero(keep_y))
    return DiscretePair(k_prime, n_elem, vel_x, vel_y, pressure, mesh, vx_map, vy_map)


def element_dof_maps(pair: DiscretePair) -> tuple[IntArray, IntArray, IntArray]:
    """Global indices for all elements at once; removed velocity DOFs are ``REMOVED``."""
    vx = pair.vx_map[pair.vel_x.local_indices()]
    vy = pair.vy_map[pair.vel_y.local_indices()]
    pr = pair.pressure.local_indices()
    return vx, vy, pr


def element_dof_map(pair: DiscretePair, e: int) -> tuple[IntArray, IntArray, IntArray]:
    if not 0 <= e < pair.mesh.n_elements:
        raise IndexError(f"element {e} out of range")
    vx, vy, pr = element_dof_maps(pair)
    return vx[e], vy[e], pr[e]


def divergence_image_check(pair: DiscretePair, velocity: npt.ArrayLike | None = None) -> float:
    """Largest relative least-squares residual of expanding div(v) in the pressure basis.

    Checks every kept velocity basis function, or only the field ``velocity``
    when a coefficient vector is given. Sampling uses the element Gauss points.
    """
    p = pair.degree
    s, _ = element_quadrature(pair.vel_x.space_x, p + 1)
    s = s.ravel()
    P = pair.pressure.collocation(s, s)
    dx = pair.vel_x.collocation(s, s, dx=1)
    dy = pair.vel_y.collocation(s, s, dy=1)
    kx, ky = pair.vx_map >= 0, pair.vy_map >= 0
    if velocity is None:
        D = np.hstack([dx[:, kx], dy[:, ky]])
    else:
        cx, cy = pair.velocity_components(velocity)
        D = (dx @ cx + dy @ cy)[:, None]
    coef, *_ = np.linalg.lstsq(P, D, rcond=None)
    res = np.abs(P @ coef - D).max(axis=0)
    scale = np.abs(D).max(axis=0)
    rel = np.divide(res, scale, out=np.zeros_like(res), where=scale > 0)
    return float(rel.max(initial=0.0))


def normal_trace_check(pair: DiscretePair, n_points: int = 7) -> tuple[float, float]:
    """Max |v.n| on the boundary of (0,1)^2 over kept and over removed basis functions.

    Returns ``(max_kept, min_removed)`` where ``min_removed`` is, over removed
    functions, the smallest of their largest boundary normal trace.
    """
    s, _ = element_quadrature(pair.vel_x.space_x, n_points)
    s = s.ravel()
    sides = np.array([0.0, 1.0])
    # vel_x normal trace on x = 0, 1; vel_y on y = 0, 1
    tx = np.abs(pair.vel_x.collocation(sides, s)).max(axis=0)
    ty = np.abs(pair.vel_y.collocation(s, sides)).max(axis=0)
    kx, ky = pair.vx_map >= 0, pair.vy_map >= 0
    kept = max(tx[kx].max(), ty[ky].max())
    removed = min(tx[~kx].min(), ty[~ky].min())
    return float(kept), float(removed)

