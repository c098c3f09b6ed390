"""Algorithmic isochoric stresses for the energy-consistent mid-point scheme.

Each formula returns a symmetric ``S_alg`` built from ``S_m = S_ich(C_m)`` and
an enhancement chosen so that ``S_alg : Z = G(C~_{n+1}) - G(C~_n)`` whenever the
formula's denominator exceeds ``tol_B``. Below the guard the plain mid-point
stress is returned and the result is flagged inactive.

:func:`stress_and_tangent` additionally returns ``dS_alg/dC_{n+1}`` (acting on
symmetric increments), which the Newton tangent needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .material import OgdenModel, elasticity, g_ich_state, s_ich, stretch_state

__all__ = [
    "FORMULAS",
    "StressPairInput",
    "AlgStressResult",
    "stress_pair",
    "gonzalez",
    "scaled_midpoint",
    "coaxial",
    "midpoint_only",
    "algorithmic_stress",
    "stress_and_tangent",
]

FORMULAS = ("gonzalez", "scaled", "coaxial", "midpoint")
DEFAULT_TOL_B = 1e-10


def _ddot(a, b):
    return np.sum(a * b, axis=(-2, -1))


@dataclass(frozen=True)
class StressPairInput:
    c_n: np.ndarray
    c_n1: np.ndarray
    c_m: np.ndarray
    z: np.ndarray
    delta_g: np.ndarray
    e_m: np.ndarray | None = None


def _strains(c_n, c_n1, e_n, e_n1):
    eye = np.eye(3)
    e_n = np.asarray(c_n, dtype=float) - eye if e_n is None else np.asarray(e_n, dtype=float)
    e_n1 = np.asarray(c_n1, dtype=float) - eye if e_n1 is None else np.asarray(e_n1, dtype=float)
    return e_n, e_n1


def stress_pair(c_n, c_n1, model: OgdenModel, e_n=None, e_n1=None) -> StressPairInput:
    """Mid-point data of a pair of states; ``e = C - I`` may be passed for accuracy."""
    e_n, e_n1 = _strains(c_n, c_n1, e_n, e_n1)
    eye = np.eye(3)
    dg = g_ich_state(stretch_state(None, e_n1), model) - g_ich_state(stretch_state(None, e_n), model)
    e_m = 0.5 * (e_n + e_n1)
    return StressPairInput(eye + e_n, eye + e_n1, eye + e_m, 0.5 * (e_n1 - e_n), dg, e_m)


@dataclass(frozen=True)
class AlgStressResult:
    stress: np.ndarray
    active: np.ndarray
    denominator: np.ndarray
    formula: str
    midpoint_stress: np.ndarray
    enhancement: np.ndarray
    defect: np.ndarray  # dG - S_m : Z

    @property
    def enhancement_active(self):
        return self.active


def _evaluate(inp: StressPairInput, model: OgdenModel, formula: str, tol_b: float):
    s_m = s_ich(inp.c_m, model, stretch_state(inp.c_m, inp.e_m))
    defect = inp.delta_g - _ddot(s_m, inp.z)
    if formula == "gonzalez":
        direction = inp.z
        denom = _ddot(inp.z, inp.z)
        active = denom > tol_b
    elif formula == "scaled":
        direction = s_m
        denom = _ddot(s_m, inp.z)
        active = np.abs(denom) > tol_b
    elif formula == "coaxial":
        direction = inp.c_m
        denom = _ddot(inp.c_m, inp.z)
        active = np.abs(denom) > tol_b
    elif formula == "midpoint":
        direction = np.zeros_like(s_m)
        denom = np.zeros_like(defect)
        active = np.zeros(defect.shape, dtype=bool)
    else:
        raise ValueError(f"unknown algorithmic stress formula {formula!r}")
    safe = np.where(active, denom, 1.0)
    beta = np.where(active, defect / safe, 0.0)
    enh = beta[..., None, None] * direction
    return s_m, enh, denom, active, defect, beta


def algorithmic_stress(
    c_n, c_n1, model: OgdenModel, formula: str = "gonzalez", tol_b: float = DEFAULT_TOL_B, e_n=None, e_n1=None
) -> AlgStressResult:
    inp = stress_pair(c_n, c_n1, model, e_n, e_n1)
    return _from_input(inp, model, formula, tol_b)


def _combine(s_m, enh, formula, delta_g, denom, active):
    # the scaled formula is a pure rescaling; forming dG/denom directly avoids
    # the cancellation in 1 + beta when the denominator is small
    if formula != "scaled":
        return s_m + enh
    ratio = np.where(active, delta_g / np.where(active, denom, 1.0), 1.0)
    return ratio[..., None, None] * s_m


def _from_input(inp, model, formula, tol_b):
    s_m, enh, denom, active, defect, _ = _evaluate(inp, model, formula, tol_b)
    stress = _combine(s_m, enh, formula, inp.delta_g, denom, active)
    return AlgStressResult(stress, active, denom, formula, s_m, enh, defect)


def gonzalez(inp: StressPairInput, model: OgdenModel, tol_b: float = DEFAULT_TOL_B) -> AlgStressResult:
    """Discrete gradient: enhancement along ``Z`` scaled by the defect over ``Z:Z``."""
    return _from_input(inp, model, "gonzalez", tol_b)


def scaled_midpoint(inp: StressPairInput, model: OgdenModel, tol_b: float = DEFAULT_TOL_B) -> AlgStressResult:
    """Multiplicative rescaling ``(dG / S_m:Z) S_m``."""
    return _from_input(inp, model, "scaled", tol_b)


def coaxial(inp: StressPairInput, model: OgdenModel, tol_b: float = DEFAULT_TOL_B) -> AlgStressResult:
    """Enhancement along ``C_m``; denominator ``C_m:Z = (|C_{n+1}|^2 - |C_n|^2)/4``."""
    return _from_input(inp, model, "coaxial", tol_b)


def midpoint_only(inp: StressPairInput, model: OgdenModel, tol_b: float = DEFAULT_TOL_B) -> AlgStressResult:
    return _from_input(inp, model, "midpoint", tol_b)


def stress_and_tangent(
    c_n,
    c_n1,
    model: OgdenModel,
    formula: str = "gonzalez",
    tol_b: float = DEFAULT_TOL_B,
    variant: str = "corrected",
    e_n=None,
    e_n1=None,
):
    """Algorithmic stress and its derivative with respect to ``C_{n+1}``.

    Returns ``(result, dS)`` where ``dS[..., i, j, k, l]`` gives
    ``delta S_ij = dS_ijkl delta C_kl`` for symmetric ``delta C``. The
    mid-point part uses the requested elasticity variant; the enhancement is
    linearised exactly through ``dG``, ``S_m:Z`` and the denominator.
    """
    e_n, e_n1 = _strains(c_n, c_n1, e_n, e_n1)
    eye = np.eye(3)
    c_n, c_n1 = eye + e_n, eye + e_n1
    st_n = stretch_state(None, e_n)
    st_n1 = stretch_state(None, e_n1)
    e_m = 0.5 * (e_n + e_n1)
    c_m = eye + e_m
    st_m = stretch_state(None, e_m)
    inp = StressPairInput(
        c_n, c_n1, c_m, 0.5 * (e_n1 - e_n),
        g_ich_state(st_n1, model) - g_ich_state(st_n, model), e_m,
    )
    s_m = s_ich(c_m, model, st_m)
    z = inp.z
    defect = inp.delta_g - _ddot(s_m, z)
    cm4 = elasticity(c_m, model, variant, st_m)
    # dS_m/dC_{n+1} = (1/2) dS/dC (C_m) = (1/4) C4
    tangent = 0.25 * cm4
    if formula == "midpoint":
        res = AlgStressResult(s_m, np.zeros(defect.shape, bool), np.zeros_like(defect), formula, s_m, np.zeros_like(s_m), defect)
        return res, tangent

    s_n1 = s_ich(c_n1, model, st_n1)
    # d(defect)/dC_{n+1} = S_{n+1}/2 - (1/4) C4:Z - S_m/2
    d_defect = 0.5 * s_n1 - 0.25 * np.einsum("...ijkl,...ij->...kl", cm4, z) - 0.5 * s_m
    sym_id = 0.5 * (np.einsum("ik,jl->ijkl", np.eye(3), np.eye(3)) + np.einsum("il,jk->ijkl", np.eye(3), np.eye(3)))

    if formula == "gonzalez":
        direction = z
        denom = _ddot(z, z)
        active = denom > tol_b
        d_denom = z  # d(Z:Z)/dC_{n+1}
        d_direction = 0.5 * sym_id
    elif formula == "scaled":
        direction = s_m
        denom = _ddot(s_m, z)
        active = np.abs(denom) > tol_b
        d_denom = 0.25 * np.einsum("...ijkl,...ij->...kl", cm4, z) + 0.5 * s_m
        d_direction = tangent
    elif formula == "coaxial":
        direction = c_m
        denom = _ddot(c_m, z)
        active = np.abs(denom) > tol_b
        d_denom = 0.5 * (z + c_m)
        d_direction = 0.5 * sym_id
    else:
        raise ValueError(f"unknown algorithmic stress formula {formula!r}")

    safe = np.where(active, denom, 1.0)
    beta = np.where(active, defect / safe, 0.0)
    d_beta = (d_defect - beta[..., None, None] * d_denom) / safe[..., None, None]
    d_beta = np.where(active[..., None, None], d_beta, 0.0)
    enh = beta[..., None, None] * direction
    if d_direction.ndim == 4:
        d_direction = np.broadcast_to(d_direction, tangent.shape)
    tangent = tangent + np.einsum("...ij,...kl->...ijkl", direction, d_beta) + beta[..., None, None, None, None] * d_direction
    stress = _combine(s_m, enh, formula, inp.delta_g, denom, active)
    res = AlgStressResult(stress, active, denom, formula, s_m, enh, defect)
    return res, tangent
