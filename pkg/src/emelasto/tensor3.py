"""Small-tensor algebra on 3x3 matrices and a robust symmetric eigensolver.

All routines accept either a single ``(3, 3)`` array or a stack ``(..., 3, 3)``
and broadcast over the leading axes. The eigensolver follows the
Scherzinger-Dohrmann construction: the most separated eigenvalue is found
first from the deviator invariants, its eigenvector from the two largest rows
of the shifted matrix, and the remaining pair from an exact 2x2 problem in the
orthogonal complement. No perturbation is applied to repeated eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymTensor3",
    "Tensor3",
    "SpectralDecomp",
    "TensorError",
    "sym_eigen",
    "eigh_batch",
    "det3",
    "inv3",
    "cof3",
    "norm",
    "double_contract",
    "dev_projection",
    "sym",
    "COINCIDENCE_RTOL",
]

COINCIDENCE_RTOL = 1e-12

DISTINCT = "distinct"
TWO_COINCIDENT = "two-coincident"
ALL_COINCIDENT = "all-coincident"

_VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class TensorError(ValueError):
    """Raised for non-finite or singular tensor input."""


@dataclass(frozen=True)
class SymTensor3:
    """Symmetric 3x3 tensor stored by its six independent components."""

    a11: float
    a22: float
    a33: float
    a12: float = 0.0
    a13: float = 0.0
    a23: float = 0.0

    @classmethod
    def from_matrix(cls, m) -> "SymTensor3":
        m = np.asarray(m, dtype=float)
        s = 0.5 * (m + m.T)
        return cls(s[0, 0], s[1, 1], s[2, 2], s[0, 1], s[0, 2], s[1, 2])

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.a11, self.a12, self.a13],
                [self.a12, self.a22, self.a23],
                [self.a13, self.a23, self.a33],
            ]
        )

    def norm(self) -> float:
        return float(norm(self.matrix))


@dataclass(frozen=True)
class Tensor3:
    """General second-order tensor (deformation gradients, two-point tensors)."""

    components: tuple

    @classmethod
    def from_matrix(cls, m) -> "Tensor3":
        m = np.asarray(m, dtype=float).reshape(3, 3)
        return cls(tuple(map(tuple, m.tolist())))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.components, dtype=float)

    def det(self) -> float:
        return float(det3(self.matrix))


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigenvalues (descending), unit eigenvectors as columns, multiplicity."""

    values: np.ndarray
    vectors: np.ndarray
    multiplicity: str
    tol: float

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, (SymTensor3, Tensor3)):
        return a.matrix
    return np.asarray(a, dtype=float)


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def det3(a) -> np.ndarray:
    a = _as_matrix(a)
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def cof3(a) -> np.ndarray:
    """Cofactor matrix, ``det(A) A^{-T}`` without the division."""
    a = _as_matrix(a)
    c = np.empty(a.shape)
    c[..., 0, 0] = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    c[..., 0, 1] = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    c[..., 0, 2] = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    c[..., 1, 0] = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    c[..., 1, 1] = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    c[..., 1, 2] = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    c[..., 2, 0] = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    c[..., 2, 1] = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    c[..., 2, 2] = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return c


def norm(a) -> np.ndarray:
    a = _as_matrix(a)
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def double_contract(a, b) -> np.ndarray:
    return np.sum(_as_matrix(a) * _as_matrix(b), axis=(-2, -1))


def inv3(a) -> np.ndarray:
    """Inverse through the cofactor matrix; rejects numerically singular input."""
    a = _as_matrix(a)
    d = det3(a)
    scale = norm(a) ** 3
    if np.any(~np.isfinite(d)) or np.any(np.abs(d) <= 1e-300 * np.maximum(scale, 1e-300)):
        raise TensorError("singular tensor: determinant below threshold")
    return np.swapaxes(cof3(a), -1, -2) / d[..., None, None]


def dev_projection(c, t) -> np.ndarray:
    """Lagrangian deviator ``T - (1/3)(C:T) C^{-1}``; the result is orthogonal to C."""
    c = _as_matrix(c)
    t = _as_matrix(t)
    return t - (double_contract(c, t) / 3.0)[..., None, None] * inv3(c)


def _cross(a, b):
    return np.cross(a, b)


def _unit(v):
    n = np.linalg.norm(v, axis=-1)
    return v / n[..., None], n


def eigh_batch(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a stack of symmetric matrices.

    Returns ``(values, vectors)`` with values sorted in descending order and
    eigenvectors stored as columns, ``vectors[..., :, k]``.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise TensorError("non-finite entries in symmetric eigenproblem input")
    shape = a.shape[:-2]
    a = sym(a.reshape(-1, 3, 3))
    n = a.shape[0]

    mean = np.trace(a, axis1=1, axis2=2) / 3.0
    dev = a - mean[:, None, None] * np.eye(3)
    s = norm(dev)
    iso = s == 0.0
    s_safe = np.where(iso, 1.0, s)
    b = dev / s_safe[:, None, None]
    b[iso] = np.diag([1.0, 0.0, -1.0])

    j2 = 0.5 * np.sum(b * b, axis=(1, 2))
    j3 = det3(b)
    arg = 0.5 * j3 * (3.0 / j2) ** 1.5
    alpha = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
    radius = 2.0 * np.sqrt(j2 / 3.0)
    eta1 = np.where(
        alpha < np.pi / 6.0,
        radius * np.cos(alpha),
        radius * np.cos(alpha + 2.0 * np.pi / 3.0),
    )

    # eigenvector of the most separated eigenvalue from the shifted rows
    rows = b - eta1[:, None, None] * np.eye(3)
    rnorm = np.linalg.norm(rows, axis=2)
    imax = np.argmax(rnorm, axis=1)
    idx = np.arange(n)
    s1 = rows[idx, imax] / rnorm[idx, imax][:, None]
    others = np.array([[1, 2], [0, 2], [0, 1]])[imax]
    t_a = rows[idx, others[:, 0]]
    t_b = rows[idx, others[:, 1]]
    t_a = t_a - np.sum(t_a * s1, axis=1)[:, None] * s1
    t_b = t_b - np.sum(t_b * s1, axis=1)[:, None] * s1
    na = np.linalg.norm(t_a, axis=1)
    nb = np.linalg.norm(t_b, axis=1)
    t = np.where((na >= nb)[:, None], t_a, t_b)
    s2, _ = _unit(t)
    v1, _ = _unit(_cross(s1, s2))
    u1 = s1 - np.sum(s1 * v1, axis=1)[:, None] * v1
    u1, _ = _unit(u1)
    u2 = _cross(v1, u1)

    # exact 2x2 problem in the complement
    bu1 = np.einsum("nij,nj->ni", b, u1)
    bu2 = np.einsum("nij,nj->ni", b, u2)
    m11 = np.sum(u1 * bu1, axis=1)
    m22 = np.sum(u2 * bu2, axis=1)
    m12 = 0.5 * (np.sum(u1 * bu2, axis=1) + np.sum(u2 * bu1, axis=1))
    theta = 0.5 * np.arctan2(2.0 * m12, m11 - m22)
    v2 = np.cos(theta)[:, None] * u1 + np.sin(theta)[:, None] * u2
    v3 = _cross(v1, v2)
    c = 0.5 * (m11 + m22)
    r = np.hypot(0.5 * (m11 - m22), m12)
    bv1 = np.einsum("nij,nj->ni", b, v1)
    eta = np.stack([np.sum(v1 * bv1, axis=1), c + r, c - r], axis=1)

    vals = mean[:, None] + s[:, None] * eta
    vecs = np.stack([v1, v2, v3], axis=2)
    vals[iso] = mean[iso, None]
    vecs[iso] = np.eye(3)

    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    return vals.reshape(shape + (3,)), vecs.reshape(shape + (3, 3))


def coincidence_tol(a) -> np.ndarray:
    return COINCIDENCE_RTOL * np.maximum(1.0, norm(a))


def sym_eigen(a) -> SpectralDecomp:
    """Spectral decomposition of a single symmetric tensor."""
    m = _as_matrix(a)
    if m.shape != (3, 3):
        raise TensorError(f"expected a 3x3 tensor, got shape {m.shape}")
    vals, vecs = eigh_batch(m)
    tol = float(coincidence_tol(m))
    gaps = np.abs(np.diff(vals))
    ncoin = int(np.sum(gaps <= tol))
    if ncoin == 0:
        mult = DISTINCT
    elif ncoin == 1:
        mult = TWO_COINCIDENT
    else:
        mult = ALL_COINCIDENT
    return SpectralDecomp(vals, vecs, mult, tol)


def to_voigt(a4: np.ndarray) -> np.ndarray:
    """Fourth-order tensor ``(..., 3, 3, 3, 3)`` to 6x6 Voigt storage."""
    out = np.empty(a4.shape[:-4] + (6, 6))
    for i, (p, q) in enumerate(_VOIGT_PAIRS):
        for j, (r, s) in enumerate(_VOIGT_PAIRS):
            out[..., i, j] = a4[..., p, q, r, s]
    return out


def sym_to_voigt(a: np.ndarray, engineering: bool = False) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    f = 2.0 if engineering else 1.0
    return np.stack(
        [a[..., 0, 0], a[..., 1, 1], a[..., 2, 2], f * a[..., 0, 1], f * a[..., 0, 2], f * a[..., 1, 2]],
        axis=-1,
    )


def voigt_to_sym(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (3, 3))
    for i, (p, q) in enumerate(_VOIGT_PAIRS):
        out[..., p, q] = v[..., i]
        out[..., q, p] = v[..., i]
    return out
