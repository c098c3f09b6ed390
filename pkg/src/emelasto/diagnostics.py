"""Monitored quantities: Hamiltonian, momenta, divergence error, dissipation and power balance.

All integrals reuse the assembly quadrature so the discrete balance laws hold
at the level of the quadrature rule.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .assembly import Discretization, LoadSpec, State, green_strain2
from .material import OgdenModel, g_ich_state, stretch_state
from .tensor3 import cof3, det3

__all__ = [
    "CSV_COLUMNS",
    "StepRecord",
    "hamiltonian",
    "momenta",
    "div_v_norm",
    "dissipation",
    "external_power",
    "power_balance_residual",
    "HistoryWriter",
]

CSV_COLUMNS = ("t", "H", "Lx", "Ly", "Lz", "Jx", "Jy", "Jz", "divnorm", "dissipation", "pwr_residual", "iters")
SCHEMA_VERSION = 1


@dataclass
class StepRecord:
    t: float
    H: float
    L: np.ndarray
    J: np.ndarray
    divnorm: float
    dissipation: float = 0.0
    pwr_residual: float = 0.0
    iters: int = 0

    def row(self) -> list:
        return [self.t, self.H, *self.L, *self.J, self.divnorm, self.dissipation, self.pwr_residual, self.iters]


def _deformation(disc: Discretization, U: np.ndarray) -> np.ndarray:
    return np.eye(3) + disc.grad(U)


def hamiltonian(disc: Discretization, model: OgdenModel, state: State) -> float:
    v = disc.value(state.V)
    kin = 0.5 * model.rho0 * np.sum(v * v, axis=-1)
    pot = g_ich_state(stretch_state(None, green_strain2(disc.grad(state.U))), model)
    return float(np.sum(disc.w * (kin + pot)))


def momenta(disc: Discretization, model: OgdenModel, state: State):
    """Linear momentum and angular momentum about the origin."""
    v = disc.value(state.V)
    phi = disc.X + disc.value(state.U)
    rw = (model.rho0 * disc.w)[..., None]
    L = np.sum(rw * v, axis=(0, 1))
    J = np.sum(rw * np.cross(phi, v), axis=(0, 1))
    return L, J


def div_v_norm(disc: Discretization, state: State) -> float:
    """L2 norm of the spatial velocity divergence over the current configuration."""
    F = _deformation(disc, state.U)
    J = det3(F)
    if np.any(J <= 0.0):
        bad = np.unique(np.nonzero(J <= 0.0)[0])
        raise ValueError(f"element inversion in elements {bad.tolist()[:10]}")
    e = np.sum(disc.grad(state.V) * cof3(F), axis=(-2, -1))
    return float(np.sqrt(np.sum(disc.w * e * e / J)))


def _midpoint_div(disc, s_n, s_n1):
    F_m = np.eye(3) + 0.5 * (disc.grad(s_n.U) + disc.grad(s_n1.U))
    gv = 0.5 * (disc.grad(s_n.V) + disc.grad(s_n1.V))
    return np.sum(gv * cof3(F_m), axis=(-2, -1)), det3(F_m)


def dissipation(disc: Discretization, s_n: State, s_n1: State, gamma: float) -> float:
    """Grad-div dissipation over the step, evaluated at the mid-point."""
    if gamma == 0.0:
        return 0.0
    e, J = _midpoint_div(disc, s_n, s_n1)
    return float(gamma * np.sum(disc.w * e * e / J))


def external_power(disc: Discretization, model: OgdenModel, loads: LoadSpec | None, s_n: State, s_n1: State) -> float:
    """Power of body forces and dead tractions on the mid-point velocity."""
    if loads is None:
        return 0.0
    t_m = 0.5 * (s_n.t + s_n1.t)
    V_m = 0.5 * (s_n.V + s_n1.V)
    p = 0.0
    if not loads.body.is_zero:
        b = loads.body(disc.X, t_m)
        p += float(np.sum(model.rho0 * disc.w[..., None] * b * disc.value(V_m)))
    for face, rule in loads.tractions:
        fd = disc.faces[face]
        h = rule(fd["X"], t_m)
        v = np.einsum("eai,eqa->eqi", V_m[fd["conn"]], fd["N"])
        p += float(np.sum(fd["w"][..., None] * h * v))
    return p


def power_balance_residual(H_n: float, H_n1: float, dt: float, p_ext: float, d_m: float) -> float:
    return abs((H_n1 - H_n) / dt - p_ext + d_m)


class HistoryWriter:
    """Streams :class:`StepRecord` rows into a CSV file with a fixed header."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(CSV_COLUMNS)

    def write(self, rec: StepRecord):
        self._w.writerow([repr(float(x)) if i < len(CSV_COLUMNS) - 1 else int(x) for i, x in enumerate(rec.row())])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def record(disc, model, state, iters=0, prev=None, prev_state=None, loads=None, gamma=0.0) -> StepRecord:
    """Diagnostics for ``state``; the balance terms need the previous step."""
    H = hamiltonian(disc, model, state)
    L, J = momenta(disc, model, state)
    rec = StepRecord(state.t, H, L, J, div_v_norm(disc, state), iters=iters)
    if prev is not None:
        dt = state.t - prev_state.t
        rec.dissipation = dissipation(disc, prev_state, state, gamma)
        p_ext = external_power(disc, model, loads, prev_state, state)
        rec.pwr_residual = power_balance_residual(prev.H, H, dt, p_ext, rec.dissipation)
    return rec


def as_dict(rec: StepRecord) -> dict:
    d = asdict(rec)
    d["L"] = list(map(float, rec.L))
    d["J"] = list(map(float, rec.J))
    return d
