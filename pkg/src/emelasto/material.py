"""Fully incompressible Ogden hyperelasticity in modified principal stretches.

The isochoric Gibbs energy is ``sum_a sum_p mu_p/alpha_p (lt_a**alpha_p - 1)``
with ``lt_a = J**(-1/3) lambda_a``. Stresses are second Piola-Kirchhoff
tensors; elasticity tensors are ``2 dS/dC`` stored as full ``(3,3,3,3)``
arrays (see :func:`ElasticityTensor.voigt` for 6x6 storage).

Everything broadcasts over leading axes so quadrature-point stacks can be
evaluated in one call.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor3 import COINCIDENCE_RTOL, det3, eigh_batch, inv3, to_voigt

__all__ = [
    "OgdenModel",
    "StretchState",
    "ElasticityTensor",
    "MaterialError",
    "stretch_state",
    "g_ich",
    "g_ich_of_c",
    "g_ich_state",
    "s_ich",
    "s_vol",
    "c_ich",
    "c_ich_conventional",
    "elasticity",
]


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class OgdenModel:
    """Ogden parameters ``(mu_p, alpha_p)`` and reference density."""

    mu: tuple
    alpha: tuple
    rho0: float = 1.0

    def __post_init__(self):
        mu = tuple(float(x) for x in np.atleast_1d(self.mu))
        alpha = tuple(float(x) for x in np.atleast_1d(self.alpha))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        if len(mu) == 0 or len(mu) != len(alpha):
            raise MaterialError("mu and alpha must be non-empty and of equal length")
        if any(a == 0.0 for a in alpha):
            raise MaterialError("Ogden exponents alpha_p must be non-zero")
        if not self.rho0 > 0.0:
            raise MaterialError("reference density must be positive")
        if self.shear_modulus <= 0.0:
            warnings.warn(
                f"ground-state shear modulus {self.shear_modulus:g} is not positive",
                stacklevel=2,
            )

    @classmethod
    def neo_hookean(cls, mu: float, rho0: float = 1.0) -> "OgdenModel":
        """``(mu/2)(tr C~ - 3)`` as a one-term Ogden model with alpha = 2."""
        return cls((mu,), (2.0,), rho0)

    @property
    def n_terms(self) -> int:
        return len(self.mu)

    @property
    def shear_modulus(self) -> float:
        return 0.5 * sum(m * a for m, a in zip(self.mu, self.alpha))


@dataclass(frozen=True)
class StretchState:
    J: np.ndarray
    stretches: np.ndarray
    mod_stretches: np.ndarray
    vectors: np.ndarray
    eigenvalues: np.ndarray
    coincident: np.ndarray  # (..., 3, 3) pairwise coincidence flags
    log_mod: np.ndarray | None = None


@dataclass(frozen=True)
class ElasticityTensor:
    """``2 dS/dC`` with minor and major symmetry, full index storage."""

    full: np.ndarray

    @property
    def voigt(self) -> np.ndarray:
        return to_voigt(self.full)


def stretch_state(c, e=None) -> StretchState:
    """Principal data of ``C``.

    ``e`` may carry ``C - I`` computed directly from the displacement
    gradient; near the reference state this keeps the modified stretches (and
    the energy) accurate relative to the strain rather than to one.
    """
    if e is None:
        c = np.asarray(c, dtype=float)
        e = c - np.eye(3)
    e = np.asarray(e, dtype=float)
    ev, vecs = eigh_batch(e)
    vals = 1.0 + ev
    if np.any(vals <= 1e-14):
        bad = float(np.min(vals))
        raise MaterialError(f"C is not positive definite: eigenvalue {bad:.6e}")
    ln = np.log1p(ev)
    lam = np.sqrt(vals)
    J = np.exp(0.5 * np.sum(ln, axis=-1))
    log_lt = 0.5 * (ln - np.mean(ln, axis=-1, keepdims=True))
    lt = np.exp(log_lt)
    tol = COINCIDENCE_RTOL * np.max(vals, axis=-1)
    gap = np.abs(ev[..., :, None] - ev[..., None, :])
    coincident = gap <= tol[..., None, None]
    return StretchState(J, lam, lt, vecs, vals, coincident, log_lt)


def _expm1_minus(x):
    """``expm1(x) - x`` with full relative accuracy for small ``|x|``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    xs = np.where(small, x, 0.0)
    # Taylor series, 0.5**19/19! is far below round-off
    term = 0.5 * xs * xs
    acc = term.copy()
    for k in range(3, 20):
        term = term * xs / k
        acc = acc + term
    return np.where(small, acc, np.expm1(x) - x)


def g_ich(mod_stretches, m: OgdenModel, log_mod=None) -> np.ndarray:
    """Isochoric energy density from the three modified stretches.

    With ``log_mod`` (``ln`` of the modified stretches) the sum is formed as
    ``mu/alpha [expm1(a x) - a x] + mu x`` per stretch, so the first-order
    terms that cancel under ``sum x = 0`` never contribute round-off.
    """
    if log_mod is None:
        lt = np.asarray(mod_stretches, dtype=float)
        if np.any(lt <= 0.0):
            raise MaterialError("modified stretches must be positive")
        log_mod = np.log(lt)
    x = np.asarray(log_mod, dtype=float)
    out = np.zeros(x.shape[:-1])
    for mu, al in zip(m.mu, m.alpha):
        out = out + (mu / al) * np.sum(_expm1_minus(al * x), axis=-1)
    lin = sum(m.mu) * np.sum(x, axis=-1)
    return out + lin


def g_ich_state(st: StretchState, m: OgdenModel) -> np.ndarray:
    return g_ich(st.mod_stretches, m, st.log_mod)


def g_ich_of_c(c, m: OgdenModel, e=None) -> np.ndarray:
    return g_ich_state(stretch_state(c, e), m)


def _principal_stress(st: StretchState, m: OgdenModel):
    """Principal isochoric stresses and the ``g_a = sum_p mu_p lt_a**alpha_p`` sums."""
    lt = st.mod_stretches
    g = np.zeros_like(lt)
    for mu, al in zip(m.mu, m.alpha):
        g = g + mu * lt**al
    # S_a = lambda_a^-2 sum_p mu_p (lt_a^al - mean_c lt_c^al); differences taken per term
    dev = np.zeros_like(lt)
    for mu, al in zip(m.mu, m.alpha):
        pw = np.expm1(al * st.log_mod)
        dev = dev + mu * (pw - np.mean(pw, axis=-1, keepdims=True))
    return dev / st.eigenvalues, g


def s_ich(c, m: OgdenModel, st: StretchState | None = None) -> np.ndarray:
    """Isochoric second Piola-Kirchhoff stress in spectral form."""
    if st is None:
        st = stretch_state(c)
    sa, _ = _principal_stress(st, m)
    n = st.vectors
    return np.einsum("...ia,...a,...ja->...ij", n, sa, n)


def s_vol(c, pressure) -> np.ndarray:
    """Volumetric stress ``-J P C^{-1}`` for the fully incompressible model."""
    c = np.asarray(c, dtype=float)
    J = np.sqrt(det3(c))
    return -(J * np.asarray(pressure, dtype=float))[..., None, None] * inv3(c)


def _coefficients(st: StretchState, m: OgdenModel, corrected: bool):
    """``(1/lambda_b) dS_a/dlambda_b`` for all ``a, b`` as a ``(..., 3, 3)`` array."""
    lt = st.mod_stretches
    lam2 = st.eigenvalues
    inv2 = 1.0 / lam2
    eye = np.eye(3, dtype=bool)
    coef = np.zeros(lt.shape + (3,))
    for mu, al in zip(m.mu, m.alpha):
        pw = lt**al
        tot = np.sum(pw, axis=-1)[..., None]
        off = -(pw[..., :, None] + pw[..., None, :]) / 3.0 + tot[..., None] / 9.0
        diag = pw / 3.0 + tot / 9.0
        if corrected:
            pwm = np.expm1(al * st.log_mod)
            diag = diag - (2.0 / al) * (pwm - np.mean(pwm, axis=-1, keepdims=True))
        coef = coef + mu * al * np.where(eye, diag[..., :, None], off)
    return coef * inv2[..., :, None] * inv2[..., None, :]


def _divided_power(x, y, beta):
    """``(y**beta - x**beta) / (y**2 - x**2)`` evaluated without cancellation."""
    t = np.log(y / x)
    small = t == 0.0
    ts = np.where(small, 1.0, t)
    ratio = np.where(small, 0.5 * beta, np.expm1(beta * ts) / np.expm1(2.0 * ts))
    return x ** (beta - 2.0) * ratio


def _quotients(st: StretchState, m: OgdenModel, coef: np.ndarray):
    """``(S_b - S_a)/(lambda_b^2 - lambda_a^2)`` for a != b, limit form when coincident."""
    lt = st.mod_stretches
    lam2 = st.eigenvalues
    _, g = _principal_stress(st, m)
    mean = np.mean(g, axis=-1)[..., None, None]
    x = lt[..., :, None]
    y = lt[..., None, :]
    # lambda^2 = J^(2/3) lt^2 under the renormalised stretches
    j23 = np.mean(lam2 / lt**2, axis=-1)[..., None, None]
    q = mean / (lam2[..., :, None] * lam2[..., None, :])
    for mu, al in zip(m.mu, m.alpha):
        q = q + mu * _divided_power(x, y, al - 2.0) / j23**2
    diag_b = np.einsum("...bb->...b", coef)[..., None, :]
    limit = 0.5 * (diag_b - coef)
    q = np.where(st.coincident, limit, q)
    eye = np.eye(3, dtype=bool)
    return np.where(eye, 0.0, q)


def elasticity(c, m: OgdenModel, variant: str = "corrected", st: StretchState | None = None) -> np.ndarray:
    """Full ``(..., 3, 3, 3, 3)`` isochoric elasticity tensor.

    ``variant="conventional"`` drops the ``dS_1/dlambda`` contribution on the
    diagonal coefficients, reproducing the widely quoted textbook formula.
    """
    if variant not in ("corrected", "conventional"):
        raise ValueError(f"unknown elasticity variant {variant!r}")
    if st is None:
        st = stretch_state(c)
    coef_true = _coefficients(st, m, corrected=True)
    q = _quotients(st, m, coef_true)
    coef = coef_true if variant == "corrected" else _coefficients(st, m, corrected=False)
    n = st.vectors
    # dyads nn[..., (a,b), (i,j)] = n_ia n_jb; c4 = nn^T W nn with W assembled per pair
    nn = np.einsum("...ia,...jb->...abij", n, n).reshape(n.shape[:-2] + (9, 9))
    w = np.zeros(n.shape[:-2] + (3, 3, 3, 3))
    a = np.arange(3)
    w[..., a[:, None], a[:, None], a[None, :], a[None, :]] = coef
    off = ~np.eye(3, dtype=bool)
    ai, bi = np.nonzero(off)
    w[..., ai, bi, ai, bi] += q[..., ai, bi]
    w[..., ai, bi, bi, ai] += q[..., ai, bi]
    w = w.reshape(n.shape[:-2] + (9, 9))
    c4 = np.swapaxes(nn, -1, -2) @ w @ nn
    c4 = c4.reshape(n.shape[:-2] + (3, 3, 3, 3))
    return c4


def c_ich(c, m: OgdenModel) -> ElasticityTensor:
    return ElasticityTensor(elasticity(c, m, "corrected"))


def c_ich_conventional(c, m: OgdenModel) -> ElasticityTensor:
    return ElasticityTensor(elasticity(c, m, "conventional"))


def correction_term(c, m: OgdenModel) -> np.ndarray:
    """Diagonal coefficients separating the corrected and conventional tensors."""
    st = stretch_state(c)
    out = np.zeros_like(st.mod_stretches)
    for mu, al in zip(m.mu, m.alpha):
        pwm = np.expm1(al * st.log_mod)
        out = out - 2.0 * mu * (pwm - np.mean(pwm, axis=-1, keepdims=True))
    return out / st.eigenvalues**2
