"""Single-patch B-spline/NURBS spaces and the generalised Taylor-Hood pair.

Univariate bases use the Cox-de Boor recursion (values and first
derivatives). Tensor-product spaces index their functions lexicographically
with the first parametric direction running fastest.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SplineError",
    "KnotVector",
    "TensorSpace",
    "MixedSpaces",
    "Geometry",
    "uniform_knot_vector",
    "basis_eval",
    "build_mixed_spaces",
    "box_geometry",
    "geometry_map",
    "gauss_legendre",
    "read_patch",
    "write_patch",
    "FACES",
]

FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


class SplineError(ValueError):
    pass


@dataclass(frozen=True)
class KnotVector:
    degree: int
    knots: tuple

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", tuple(k.tolist()))
        p = self.degree
        if p < 0:
            raise SplineError("degree must be non-negative")
        if np.any(np.diff(k) < 0):
            raise SplineError("knots must be non-decreasing")
        if len(k) < 2 * (p + 1):
            raise SplineError("too few knots for the degree")
        if not (np.all(k[: p + 1] == k[0]) and np.all(k[-(p + 1):] == k[-1])):
            raise SplineError("knot vector must be open (end knots repeated degree+1 times)")
        if k[0] != 0.0 or k[-1] != 1.0:
            raise SplineError("knot vector must span [0, 1]")
        for _, mult in self._interior():
            if mult > p:
                raise SplineError("interior knot multiplicity exceeds degree")

    def _interior(self):
        vals, counts = np.unique(np.asarray(self.knots), return_counts=True)
        return [(v, c) for v, c in zip(vals, counts) if 0.0 < v < 1.0]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.knots)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def regularity(self) -> list:
        return [self.degree - c for _, c in self._interior()]

    @property
    def breaks(self) -> np.ndarray:
        return np.unique(self.array)

    @property
    def n_elements(self) -> int:
        return len(self.breaks) - 1

    def find_span(self, u: float) -> int:
        k = self.array
        p = self.degree
        n = self.n_basis
        if u >= k[n]:
            return n - 1
        return int(np.searchsorted(k, u, side="right") - 1)

    def element_span(self, e: int) -> int:
        """Knot span index of element ``e`` (0-based, left to right)."""
        mid = 0.5 * (self.breaks[e] + self.breaks[e + 1])
        return self.find_span(mid)

    def greville(self) -> np.ndarray:
        k = self.array
        p = self.degree
        if p == 0:
            return 0.5 * (k[:-1] + k[1:])
        return np.array([k[i + 1 : i + p + 1].mean() for i in range(self.n_basis)])


def uniform_knot_vector(degree: int, n_elements: int, regularity: int | None = None) -> KnotVector:
    """Open uniform knot vector; interior multiplicity ``degree - regularity``."""
    if regularity is None:
        regularity = degree - 1
    if not -1 <= regularity < degree:
        raise SplineError(f"regularity {regularity} incompatible with degree {degree}")
    if n_elements < 1:
        raise SplineError("need at least one element")
    mult = degree - regularity
    interior = np.repeat(np.linspace(0.0, 1.0, n_elements + 1)[1:-1], mult)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(degree, tuple(knots))


def _basis_ders(kv: KnotVector, span: int, u: float, nder: int = 1) -> np.ndarray:
    """Nonzero basis functions and derivatives at ``u`` (Piegl-Tiller A2.3)."""
    p = kv.degree
    U = kv.array
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - U[span + 1 - j]
        right[j] = U[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((nder + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nder + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nder + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def basis_eval(kv: KnotVector, u: float, span: int | None = None):
    """Values and first derivatives of the ``degree+1`` nonzero functions at ``u``.

    Returns ``(first_index, values, derivatives)``; the active functions are
    ``first_index ... first_index + degree``.
    """
    if not 0.0 <= u <= 1.0:
        raise SplineError(f"parameter {u} outside [0, 1]")
    if span is None:
        span = kv.find_span(u)
    d = _basis_ders(kv, span, u, 1)
    return span - kv.degree, d[0], d[1]


@dataclass(frozen=True)
class TensorSpace:
    """Tensor product of three univariate spaces, optionally rational."""

    kvs: tuple
    weights: np.ndarray | None = None

    @property
    def degree(self) -> tuple:
        return tuple(kv.degree for kv in self.kvs)

    @property
    def shape(self) -> tuple:
        return tuple(kv.n_basis for kv in self.kvs)

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def element_shape(self) -> tuple:
        return tuple(kv.n_elements for kv in self.kvs)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.element_shape))

    def flat_index(self, i, j, k):
        n1, n2, _ = self.shape
        return np.asarray(i) + n1 * (np.asarray(j) + n2 * np.asarray(k))

    def face_indices(self, face: str) -> np.ndarray:
        """Global indices of the functions that do not vanish on a boundary face."""
        if face not in FACES:
            raise SplineError(f"unknown face {face!r}")
        d = FACES.index(face) // 2
        end = FACES.index(face) % 2
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        sel = grids[d] == (self.shape[d] - 1 if end else 0)
        return np.sort(self.flat_index(grids[0][sel], grids[1][sel], grids[2][sel]))

    def eval_point(self, xi):
        """All functions with nonzero value at a parametric point.

        Returns ``(indices, values, grads)`` with ``grads`` taken with respect
        to the parametric coordinates.
        """
        pieces = [basis_eval(kv, float(x)) for kv, x in zip(self.kvs, xi)]
        return self._combine(pieces)

    def _combine(self, pieces):
        (i0, v0, d0), (i1, v1, d1), (i2, v2, d2) = pieces
        ii, jj, kk = np.meshgrid(
            np.arange(i0, i0 + len(v0)),
            np.arange(i1, i1 + len(v1)),
            np.arange(i2, i2 + len(v2)),
            indexing="ij",
        )
        idx = self.flat_index(ii, jj, kk).ravel(order="F")
        val = np.einsum("a,b,c->abc", v0, v1, v2).ravel(order="F")
        g = np.stack(
            [
                np.einsum("a,b,c->abc", d0, v1, v2).ravel(order="F"),
                np.einsum("a,b,c->abc", v0, d1, v2).ravel(order="F"),
                np.einsum("a,b,c->abc", v0, v1, d2).ravel(order="F"),
            ],
            axis=1,
        )
        if self.weights is not None:
            w = np.asarray(self.weights).ravel(order="F")[idx]
            wv = w * val
            W = wv.sum()
            dW = (w[:, None] * g).sum(axis=0)
            g = (w[:, None] * g) / W - np.outer(wv, dW) / W**2
            val = wv / W
        return idx, val, g

    def element_functions(self, e_ijk) -> np.ndarray:
        """Global indices of functions supported on element ``(ei, ej, ek)``."""
        starts = [kv.element_span(e) - kv.degree for kv, e in zip(self.kvs, e_ijk)]
        ii, jj, kk = np.meshgrid(
            *[np.arange(s, s + kv.degree + 1) for s, kv in zip(starts, self.kvs)],
            indexing="ij",
        )
        return self.flat_index(ii, jj, kk).ravel(order="F")


@dataclass(frozen=True)
class MixedSpaces:
    velocity: TensorSpace
    pressure: TensorSpace
    p: int
    a: int
    b: int
    dirichlet_faces: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.velocity.element_shape != self.pressure.element_shape:
            raise SplineError("velocity and pressure spaces must share elements")
        for vk, pk in zip(self.velocity.kvs, self.pressure.kvs):
            if not np.allclose(vk.breaks, pk.breaks):
                raise SplineError("velocity and pressure spaces must share knot breaks")
        for f in self.dirichlet_faces:
            if f not in FACES:
                raise SplineError(f"unknown face {f!r}")


def build_mixed_spaces(
    p: int,
    a: int = 1,
    b: int = 0,
    elements=(1, 1, 1),
    regularity: int | None = None,
    dirichlet_faces=(),
) -> MixedSpaces:
    """Generalised Taylor-Hood pair on a uniform parametric mesh.

    The pressure space has degree ``p`` and regularity ``r`` (highest, ``p-1``,
    by default); the velocity space is degree ``p+a`` with regularity ``r+b``.
    """
    if a < 1 or not 0 <= b < a:
        raise SplineError(f"inadmissible degree/regularity shift a={a}, b={b}")
    if p < 1:
        raise SplineError("pressure degree must be at least 1")
    r = p - 1 if regularity is None else regularity
    if not 0 <= r <= p - 1:
        raise SplineError(f"pressure regularity {r} incompatible with degree {p}")
    elements = tuple(int(n) for n in elements)
    if len(elements) != 3:
        raise SplineError("need elements for three directions")
    pres = TensorSpace(tuple(uniform_knot_vector(p, n, r) for n in elements))
    vel = TensorSpace(tuple(uniform_knot_vector(p + a, n, r + b) for n in elements))
    return MixedSpaces(vel, pres, p, a, b, tuple(dirichlet_faces))


@dataclass(frozen=True)
class Geometry:
    """Spline map from the parametric cube; control points shaped ``(n1, n2, n3, 3)``."""

    space: TensorSpace
    control_points: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        if cp.shape != self.space.shape + (3,):
            raise SplineError(f"control net shape {cp.shape} does not match space {self.space.shape}")
        object.__setattr__(self, "control_points", cp)


def geometry_map(geom: Geometry, xi):
    """Physical point and Jacobian ``dX/dxi`` at a parametric point."""
    idx, val, grad = geom.space.eval_point(xi)
    cp = geom.control_points.reshape(-1, 3, order="F")[idx]
    x = val @ cp
    jac = cp.T @ grad
    if np.linalg.det(jac) <= 0.0:
        raise SplineError(f"non-positive Jacobian determinant at {tuple(xi)}")
    return x, jac


def box_geometry(space: TensorSpace, lower, upper) -> Geometry:
    """Affine box map using Greville abscissae as control points."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= lower):
        raise SplineError("box must have positive extent in every direction")
    g = [kv.greville() for kv in space.kvs]
    gi, gj, gk = np.meshgrid(*g, indexing="ij")
    cp = np.stack([gi, gj, gk], axis=-1) * (upper - lower) + lower
    return Geometry(space, cp)


def gauss_legendre(n: int):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def write_patch(geom: Geometry, fh=None) -> str:
    """Serialise a geometry patch to the plain-text patch format."""
    out = io.StringIO()
    out.write("# emelasto patch v1\n")
    for kv in geom.space.kvs:
        out.write(f"knots {kv.degree} " + " ".join(repr(float(k)) for k in kv.knots) + "\n")
    n1, n2, n3 = geom.space.shape
    out.write(f"controlpoints {n1} {n2} {n3}\n")
    w = geom.space.weights
    wflat = np.ones(geom.space.dim) if w is None else np.asarray(w).ravel(order="F")
    cps = geom.control_points.reshape(-1, 3, order="F")
    for p, wi in zip(cps, wflat):
        out.write(" ".join(repr(float(c)) for c in p) + f" {float(wi)!r}\n")
    text = out.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_patch(text: str) -> Geometry:
    """Parse the plain-text patch format written by :func:`write_patch`.

    Lines: ``knots <degree> <k0> <k1> ...`` (three times), then
    ``controlpoints n1 n2 n3`` followed by ``n1*n2*n3`` rows ``x y z w`` with
    the first index running fastest. ``#`` starts a comment.
    """
    kvs = []
    rows = []
    shape = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "knots":
                kvs.append(KnotVector(int(tok[1]), tuple(float(t) for t in tok[2:])))
            elif tok[0] == "controlpoints":
                shape = tuple(int(t) for t in tok[1:4])
            else:
                vals = [float(t) for t in tok]
                if len(vals) not in (3, 4):
                    raise SplineError("control point rows need 3 or 4 numbers")
                rows.append(vals if len(vals) == 4 else vals + [1.0])
        except (ValueError, IndexError) as exc:
            raise SplineError(f"patch line {lineno}: {exc}") from None
    if len(kvs) != 3 or shape is None:
        raise SplineError("patch needs three knot vectors and a controlpoints header")
    rows = np.asarray(rows)
    if rows.shape[0] != int(np.prod(shape)):
        raise SplineError(f"expected {int(np.prod(shape))} control points, got {rows.shape[0]}")
    w = rows[:, 3].reshape(shape, order="F")
    weights = None if np.all(w == 1.0) else w
    space = TensorSpace(tuple(kvs), weights)
    if space.shape != shape:
        raise SplineError(f"control net {shape} inconsistent with knot vectors {space.shape}")
    return Geometry(space, rows[:, :3].reshape(shape + (3,), order="F"))
