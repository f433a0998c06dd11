"""Univariate B-spline spaces over open knot vectors.

Basis evaluation uses the Cox-de Boor recursion with derivatives, vectorized
over evaluation points. Only the ``p + 1`` functions supported at a point are
returned (bandwidth form), together with the index of the first one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]


class InvalidRegularityError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector of degree ``degree`` on [0, 1]."""

    degree: int
    knots: FloatArray

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1 or knots.size < 2 * p + 2:
            raise ValueError("knot vector too short for its degree")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        r = self.multiplicities
        if r[0] != p + 1 or r[-1] != p + 1:
            raise ValueError("knot vector is not open")
        if np.any(r[1:-1] > p + 1):
            raise ValueError("interior multiplicity exceeds degree + 1")

    @cached_property
    def _unique(self) -> tuple[FloatArray, npt.NDArray[np.int64]]:
        zeta, counts = np.unique(self.knots, return_counts=True)
        return zeta, counts

    @property
    def breakpoints(self) -> FloatArray:
        return self._unique[0]

    @property
    def multiplicities(self) -> npt.NDArray[np.int64]:
        return self._unique[1]

    @property
    def regularities(self) -> npt.NDArray[np.int64]:
        return self.degree - self.multiplicities

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1


def make_uniform_open_knots(p: int, n_elem: int, reg: int) -> KnotVector:
    """Uniform open knot vector with ``n_elem`` elements and interior regularity ``reg``."""
    if n_elem < 1:
        raise ValueError("n_elem must be at least 1")
    if reg > p - 1 or reg < -1:
        raise InvalidRegularityError(f"regularity {reg} invalid for degree {p}")
    mult = p - reg
    interior = np.repeat(np.arange(1, n_elem) / n_elem, mult)
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)


@dataclass(frozen=True, eq=False)
class UnivariateSpace:
    knot_vector: KnotVector
    element_spans: npt.NDArray[np.int64] = field(init=False)

    def __post_init__(self) -> None:
        kv = self.knot_vector
        # knot span index (into knots) of each nonempty element
        spans = np.searchsorted(kv.knots, kv.breakpoints[:-1], side="right") - 1
        spans.setflags(write=False)
        object.__setattr__(self, "element_spans", spans)

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    @property
    def n(self) -> int:
        return self.knot_vector.n_basis

    @property
    def n_elements(self) -> int:
        return self.knot_vector.n_elements

    @property
    def element_first(self) -> npt.NDArray[np.int64]:
        """Index of the first basis function supported on each element."""
        return self.element_spans - self.degree

    def find_span(self, x: FloatArray) -> npt.NDArray[np.int64]:
        x = np.asarray(x, dtype=float)
        knots = self.knot_vector.knots
        span = np.searchsorted(knots, x, side="right") - 1
        # left limit at x = 1
        return np.clip(span, self.degree, self.n - 1)


def uniform_space(p: int, n_elem: int, reg: int | None = None) -> UnivariateSpace:
    """Maximal-regularity (unless ``reg`` is given) uniform spline space."""
    return UnivariateSpace(make_uniform_open_knots(p, n_elem, p - 1 if reg is None else reg))


def _ders_basis(
    knots: FloatArray, p: int, span: npt.NDArray[np.int64], x: FloatArray, nd: int
) -> FloatArray:
    """Derivatives 0..nd of the p+1 nonzero basis functions, shape (N, nd+1, p+1)."""
    npts = x.size
    ndu = np.zeros((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, nd + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    nk = min(nd, p)
    for r in range(p + 1):
        a = np.zeros((2, npts, p + 1))
        a[0, :, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, nk + 1):
            d = np.zeros(npts)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, :, 0] = a[s1, :, 0] / ndu[:, pk + 1, rk]
                d = a[s2, :, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, :, j] = (a[s1, :, j] - a[s1, :, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[s2, :, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[s2, :, k] = -a[s1, :, k - 1] / ndu[:, pk + 1, r]
                d = d + a[s2, :, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, nk + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return ders


def eval_basis_many(
    space: UnivariateSpace, x: npt.ArrayLike, max_deriv: int = 0
) -> tuple[FloatArray, npt.NDArray[np.int64]]:
    """Evaluate the supported basis functions at many points.

    Returns ``(table, first)`` where ``table[k, d, l]`` is the ``d``-th
    derivative of basis ``first[k] + l`` at ``x[k]``. Derivative orders above
    the degree are returned as zeros.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(np.isnan(x)):
        raise DomainError("evaluation point outside [0, 1]")
    if max_deriv < 0:
        raise ValueError("max_deriv must be non-negative")
    span = space.find_span(x)
    table = _ders_basis(space.knot_vector.knots, space.degree, span, x, max_deriv)
    return table, span - space.degree


def eval_basis(
    space: UnivariateSpace, x: float, max_deriv: int = 0
) -> tuple[FloatArray, int]:
    """Values (and derivatives) of the ``p + 1`` basis functions supported at ``x``.

    Right limits are taken at interior knots and the left limit at ``x = 1``.
    Returns an array of shape ``(max_deriv + 1, p + 1)`` and the first index.
    """
    table, first = eval_basis_many(space, [x], max_deriv)
    return table[0], int(first[0])


def eval_full(space: UnivariateSpace, x: npt.ArrayLike, deriv: int = 0) -> FloatArray:
    """Dense collocation matrix ``(len(x), n)`` of the ``deriv``-th derivative."""
    table, first = eval_basis_many(space, x, deriv)
    out = np.zeros((table.shape[0], space.n))
    cols = first[:, None] + np.arange(space.degree + 1)
    np.put_along_axis(out, cols, table[:, deriv, :], axis=1)
    return out


def lower_degree_space(space: UnivariateSpace) -> UnivariateSpace:
    """The space of derivatives: degree ``p - 1`` and regularity ``alpha - 1``."""
    kv = space.knot_vector
    if kv.degree == 0:
        raise ValueError("cannot lower the degree of a piecewise constant space")
    if np.any(kv.regularities[1:-1] < 0):
        raise InvalidRegularityError("derivative space needs interior regularity >= 0")
    return UnivariateSpace(KnotVector(kv.degree - 1, kv.knots[1:-1]))


def gauss_legendre(n_points: int) -> tuple[FloatArray, FloatArray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def element_quadrature(
    space: UnivariateSpace, n_points: int
) -> tuple[FloatArray, FloatArray]:
    """Per-element quadrature nodes and weights, each of shape (n_elements, n_points)."""
    zeta = space.knot_vector.breakpoints
    nodes, weights = gauss_legendre(n_points)
    h = np.diff(zeta)
    return zeta[:-1, None] + h[:, None] * nodes, h[:, None] * weights
