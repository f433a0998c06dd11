"""Parametric-to-physical maps, Piola and integral-preserving pushforwards, boundary faces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .spaces import ParametricMesh
from .splines import KnotVector, UnivariateSpace, eval_basis_many, gauss_legendre

FloatArray = npt.NDArray[np.float64]

SIDES = ("left", "right", "bottom", "top")
_SIDE_NORMAL = {
    "left": np.array([-1.0, 0.0]),
    "right": np.array([1.0, 0.0]),
    "bottom": np.array([0.0, -1.0]),
    "top": np.array([0.0, 1.0]),
}

DET_TOL = 1e-14

INNER_RADIUS = 1.0
OUTER_RADIUS = 2.0
ANGLE = np.pi / 4


class SingularMapError(ValueError):
    pass


class GeometricMap:
    """Base class: subclasses provide F, DF and the second derivatives of F."""

    kind = "abstract"

    def derivatives(self, xh: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        """``(F, DF, D2F)`` at points ``xh`` of shape (N, 2).

        ``DF[k, a, c] = dF_a/dxh_c`` and ``D2F[k, a, c, d] = d2F_a/dxh_c dxh_d``.
        """
        raise NotImplementedError

    def evaluate(self, xh: npt.ArrayLike) -> FloatArray:
        return self.derivatives(_points(xh))[0]

    def jacobian(self, xh: npt.ArrayLike) -> FloatArray:
        return self.derivatives(_points(xh))[1]

    def det_jacobian(self, xh: npt.ArrayLike) -> FloatArray:
        return np.linalg.det(self.jacobian(xh))


def _points(xh: npt.ArrayLike) -> FloatArray:
    return np.atleast_2d(np.asarray(xh, dtype=float))


class IdentityMap(GeometricMap):
    kind = "identity"

    def derivatives(self, xh):
        xh = _points(xh)
        n = xh.shape[0]
        DF = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
        return xh.copy(), DF, np.zeros((n, 2, 2, 2))


class PolarAnnulusMap(GeometricMap):
    """F(s, t) = (r cos(theta), r sin(theta)), r = 1 + s, theta = angle * t."""

    kind = "polar-annulus"

    def derivatives(self, xh):
        xh = _points(xh)
        dr = OUTER_RADIUS - INNER_RADIUS
        r = INNER_RADIUS + dr * xh[:, 0]
        th = ANGLE * xh[:, 1]
        c, s = np.cos(th), np.sin(th)
        F = np.stack([r * c, r * s], axis=1)
        DF = np.empty((xh.shape[0], 2, 2))
        DF[:, 0, 0] = dr * c
        DF[:, 1, 0] = dr * s
        DF[:, 0, 1] = -ANGLE * r * s
        DF[:, 1, 1] = ANGLE * r * c
        D2F = np.zeros((xh.shape[0], 2, 2, 2))
        D2F[:, 0, 0, 1] = D2F[:, 0, 1, 0] = -dr * ANGLE * s
        D2F[:, 1, 0, 1] = D2F[:, 1, 1, 0] = dr * ANGLE * c
        D2F[:, 0, 1, 1] = -ANGLE**2 * r * c
        D2F[:, 1, 1, 1] = -ANGLE**2 * r * s
        return F, DF, D2F


class NurbsSurfaceMap(GeometricMap):
    """Rational tensor-product B-spline surface."""

    kind = "nurbs"

    def __init__(
        self,
        space_s: UnivariateSpace,
        space_t: UnivariateSpace,
        control: FloatArray,
        weights: FloatArray,
    ) -> None:
        self.space_s = space_s
        self.space_t = space_t
        self.control = np.asarray(control, dtype=float)  # (n_s, n_t, 2)
        self.weights = np.asarray(weights, dtype=float)  # (n_s, n_t)
        if self.control.shape != (space_s.n, space_t.n, 2):
            raise ValueError("control net shape does not match the spaces")

    def derivatives(self, xh):
        xh = _points(xh)
        n = xh.shape[0]
        bs, fs = eval_basis_many(self.space_s, xh[:, 0], 2)
        bt, ft = eval_basis_many(self.space_t, xh[:, 1], 2)
        ps, pt = self.space_s.degree, self.space_t.degree
        ii = fs[:, None] + np.arange(ps + 1)
        jj = ft[:, None] + np.arange(pt + 1)
        w = self.weights[ii[:, :, None], jj[:, None, :]]  # (n, ps+1, pt+1)
        P = self.control[ii[:, :, None], jj[:, None, :]]  # (n, ps+1, pt+1, 2)
        wP = w[..., None] * P

        def comb(ds: int, dt: int) -> tuple[FloatArray, FloatArray]:
            prod = bs[:, ds, :, None] * bt[:, dt, None, :]
            return (
                np.einsum("nij,nijk->nk", prod, wP),
                np.einsum("nij,nij->n", prod, w),
            )

        A, W = comb(0, 0)
        F = A / W[:, None]
        A1 = [comb(1, 0), comb(0, 1)]
        DF = np.empty((n, 2, 2))
        for c in range(2):
            Ac, Wc = A1[c]
            DF[:, :, c] = (Ac - Wc[:, None] * F) / W[:, None]
        D2F = np.empty((n, 2, 2, 2))
        orders = {(0, 0): (2, 0), (0, 1): (1, 1), (1, 0): (1, 1), (1, 1): (0, 2)}
        for (c, d), (ds, dt) in orders.items():
            Acd, Wcd = comb(ds, dt)
            Wc, Wd = A1[c][1], A1[d][1]
            D2F[:, :, c, d] = (
                Acd - Wcd[:, None] * F - Wc[:, None] * DF[:, :, d] - Wd[:, None] * DF[:, :, c]
            ) / W[:, None]
        return F, DF, D2F


def map_square() -> GeometricMap:
    return IdentityMap()


def map_polar_annulus() -> GeometricMap:
    return PolarAnnulusMap()


def map_nurbs_annulus() -> GeometricMap:
    """Quadratic-in-angle, linear-in-radius NURBS with exact circular arcs."""
    space_s = UnivariateSpace(KnotVector(1, np.array([0.0, 0.0, 1.0, 1.0])))
    space_t = UnivariateSpace(KnotVector(2, np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])))
    half = ANGLE / 2
    arc = np.array([[1.0, 0.0], [1.0, np.tan(half)], [np.cos(ANGLE), np.sin(ANGLE)]])
    arc_w = np.array([1.0, np.cos(half), 1.0])
    radii = np.array([INNER_RADIUS, OUTER_RADIUS])
    control = radii[:, None, None] * arc[None, :, :]
    weights = np.broadcast_to(arc_w, (2, 3)).copy()
    m = NurbsSurfaceMap(space_s, space_t, control, weights)
    m.kind = "nurbs-annulus"
    return m


MAPS = {
    "identity": map_square,
    "polar-annulus": map_polar_annulus,
    "nurbs-annulus": map_nurbs_annulus,
}


@dataclass(frozen=True)
class PiolaData:
    """Geometric quantities at a batch of points needed to push basis functions forward."""

    x: FloatArray  # (N, 2)
    det: FloatArray  # (N,)
    G: FloatArray  # DF / det, (N, 2, 2)
    dG: FloatArray  # dG[k, a, d, c] = d G_ad / dxh_c
    inv: FloatArray  # DF^{-1}, (N, 2, 2)


def geometry_at(gmap: GeometricMap, xh: npt.ArrayLike) -> PiolaData:
    F, DF, D2F = gmap.derivatives(_points(xh))
    det = DF[:, 0, 0] * DF[:, 1, 1] - DF[:, 0, 1] * DF[:, 1, 0]
    if np.any(det <= DET_TOL):
        raise SingularMapError("Jacobian determinant is not positive")
    # d det / dxh_c
    ddet = (
        D2F[:, 0, 0, :] * DF[:, 1, 1, None]
        + DF[:, 0, 0, None] * D2F[:, 1, 1, :]
        - D2F[:, 0, 1, :] * DF[:, 1, 0, None]
        - DF[:, 0, 1, None] * D2F[:, 1, 0, :]
    )
    G = DF / det[:, None, None]
    dG = D2F / det[:, None, None, None] - DF[..., None] * (ddet / det[:, None] ** 2)[:, None, None, :]
    inv = np.empty_like(DF)
    inv[:, 0, 0] = DF[:, 1, 1]
    inv[:, 1, 1] = DF[:, 0, 0]
    inv[:, 0, 1] = -DF[:, 0, 1]
    inv[:, 1, 0] = -DF[:, 1, 0]
    inv /= det[:, None, None]
    return PiolaData(F, det, G, dG, inv)


def push_vectors(geo: PiolaData, vh: FloatArray, Dvh: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Piola pushforward of many fields at once.

    ``vh`` has shape (N, L, 2) and ``Dvh`` (N, L, 2, 2) with
    ``Dvh[..., a, c] = d vh_a / dxh_c``. Returns physical values and gradients
    ``Dv[..., a, b] = d v_a / dx_b``.
    """
    v = np.einsum("nad,nld->nla", geo.G, vh)
    dv_hat = np.einsum("nadc,nld->nlac", geo.dG, vh) + np.einsum("nad,nldc->nlac", geo.G, Dvh)
    Dv = np.einsum("nlac,ncb->nlab", dv_hat, geo.inv)
    return v, Dv


def piola_push(
    gmap: GeometricMap, xh: npt.ArrayLike, vh: npt.ArrayLike, Dvh: npt.ArrayLike
) -> tuple[FloatArray, FloatArray]:
    """Physical value and gradient of the Piola transform of ``vh`` at ``xh``.

    Accepts a single point (``xh`` shape (2,), ``vh`` (2,), ``Dvh`` (2, 2)) or
    batches with a leading point axis.
    """
    xh = np.asarray(xh, dtype=float)
    single = xh.ndim == 1
    geo = geometry_at(gmap, xh)
    vh = np.asarray(vh, dtype=float).reshape(-1, 1, 2)
    Dvh = np.asarray(Dvh, dtype=float).reshape(-1, 1, 2, 2)
    v, Dv = push_vectors(geo, vh, Dvh)
    v, Dv = v[:, 0], Dv[:, 0]
    return (v[0], Dv[0]) if single else (v, Dv)


def integral_push(gmap: GeometricMap, xh: npt.ArrayLike, qh: npt.ArrayLike) -> FloatArray:
    """Pressure pushforward q(F(xh)) = qh(xh) / det DF(xh)."""
    xh = np.asarray(xh, dtype=float)
    det = geometry_at(gmap, xh).det
    q = np.asarray(qh, dtype=float) / det
    return q[0] if xh.ndim == 1 else q


@dataclass(frozen=True)
class BoundaryFace:
    side: str
    element: int
    extent: tuple[float, float]
    points: FloatArray  # parametric quadrature nodes (nq, 2)
    weights: FloatArray  # parametric 1D weights (nq,)
    normal: FloatArray  # unit outward physical normals (nq, 2)
    surface_jacobian: FloatArray  # (nq,)
    h_F: float


@dataclass(frozen=True)
class SideQuadrature:
    """All faces on one side stacked: arrays carry a leading face axis."""

    side: str
    elements: npt.NDArray[np.int64]
    points: FloatArray  # (n_faces, nq, 2)
    weights: FloatArray  # (n_faces, nq)
    normal: FloatArray  # (n_faces, nq, 2)
    surface_jacobian: FloatArray  # (n_faces, nq)
    h_F: FloatArray  # (n_faces,)


def side_quadrature(
    gmap: GeometricMap, mesh: ParametricMesh, side: str, n_points: int
) -> SideQuadrature:
    if side not in _SIDE_NORMAL:
        raise ValueError(f"unknown side {side!r}")
    nodes, w = gauss_legendre(n_points)
    along_x = side in ("bottom", "top")
    breaks = mesh.breaks_x if along_x else mesh.breaks_y
    h = np.diff(breaks)
    t = breaks[:-1, None] + h[:, None] * nodes  # (n_faces, nq)
    wt = h[:, None] * w
    fixed = 0.0 if side in ("left", "bottom") else 1.0
    pts = np.empty(t.shape + (2,))
    if along_x:
        pts[..., 0], pts[..., 1] = t, fixed
        ey = 0 if side == "bottom" else mesh.n_elem_y - 1
        elements = ey * mesh.n_elem_x + np.arange(mesh.n_elem_x)
    else:
        pts[..., 0], pts[..., 1] = fixed, t
        ex = 0 if side == "left" else mesh.n_elem_x - 1
        elements = np.arange(mesh.n_elem_y) * mesh.n_elem_x + ex
    flat = pts.reshape(-1, 2)
    _, DF, _ = gmap.derivatives(flat)
    det = np.linalg.det(DF)
    if np.any(det <= DET_TOL):
        raise SingularMapError("Jacobian determinant is not positive")
    n_hat = _SIDE_NORMAL[side]
    n = np.einsum("kca,c->ka", np.linalg.inv(DF), n_hat)  # DF^{-T} n_hat
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    tangent = DF[:, :, 0] if along_x else DF[:, :, 1]
    sj = np.linalg.norm(tangent, axis=1).reshape(t.shape)
    return SideQuadrature(
        side,
        elements,
        pts,
        wt,
        n.reshape(t.shape + (2,)),
        sj,
        np.sum(wt * sj, axis=1),
    )


def boundary_faces(
    gmap: GeometricMap, mesh: ParametricMesh, side: str, n_points: int = 4
) -> list[BoundaryFace]:
    sq = side_quadrature(gmap, mesh, side, n_points)
    along_x = side in ("bottom", "top")
    breaks = mesh.breaks_x if along_x else mesh.breaks_y
    return [
        BoundaryFace(
            side,
            int(sq.elements[f]),
            (float(breaks[f]), float(breaks[f + 1])),
            sq.points[f],
            sq.weights[f],
            sq.normal[f],
            sq.surface_jacobian[f],
            float(sq.h_F[f]),
        )
        for f in range(sq.elements.size)
    ]
