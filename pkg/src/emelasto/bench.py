"""Benchmark problems: material-point robustness sweeps and full-patch scenarios.

Scenario specs are plain validated data; :func:`build_problem` turns one into
a discretization, material, loads, solver settings and initial state, and
:func:`simulate` marches it in time while recording diagnostics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .algostress import FORMULAS, stress_pair, _evaluate
from .assembly import Discretization, LoadRule, LoadSpec, State
from .diagnostics import StepRecord, record
from .material import OgdenModel
from .solver import SolverConfig, Stepper
from .spline import FACES, box_geometry, build_mixed_spaces
from .tensor3 import norm

__all__ = [
    "SweepSpec",
    "SweepRow",
    "run_sweep",
    "builtin_sweeps",
    "ScenarioSpec",
    "scenario_twisting_column",
    "scenario_cantilever",
    "SCENARIOS",
    "Problem",
    "build_problem",
    "simulate",
    "point_value",
]

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("xi", "dC_norm", "S_enh_norm", "denominator", "defect")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    name: str
    F1: np.ndarray
    D: np.ndarray
    formula: str = "gonzalez"
    mu: float = 5000.0
    xi_min: float = 1e-9
    xi_max: float = 1.0
    n: int = 300

    def xi(self) -> np.ndarray:
        return np.logspace(np.log10(self.xi_min), np.log10(self.xi_max), self.n)


@dataclass(frozen=True)
class SweepRow:
    xi: float
    dC_norm: float
    S_enh_norm: float
    denominator: float
    defect: float
    valid: bool = True


_F1 = np.array([[1.5, 0.0, 0.0], [0.1, 0.8, 0.0], [0.0, 0.0, 1.0]])


def builtin_sweeps() -> dict:
    d_comp = np.diag([0.0, -1.0, 1.0])
    d_shear = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    d_mix = np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    f_sca = np.array([[0.996, 0.001, 0.185], [0.0, 1.0, 0.002], [-0.069, 0.0, 1.008]])
    d_sca = np.array([[-20.0, 0.0, 170.0], [-10.0, -20.0, 10.0], [-180.0, 0.0, 20.0]])
    f_coa = np.array([[0.985, 0.0, 0.15], [0.0, 1.0, 0.0], [-0.032, 0.0, 1.003]])
    d_coa = np.array([[60.0, 0.0, 170.0], [0.0, 10.0, 0.0], [-100.0, 0.0, 10.0]])
    return {
        "compression": SweepSpec("compression", _F1, d_comp),
        "shear": SweepSpec("shear", _F1, d_shear),
        "mixed": SweepSpec("mixed", _F1, d_mix),
        "scaled_pair": SweepSpec("scaled_pair", f_sca, d_sca, formula="scaled"),
        "coaxial_pair": SweepSpec("coaxial_pair", f_coa, d_coa, formula="coaxial"),
    }


def run_sweep(spec: SweepSpec, xi=None) -> list:
    """Evaluate the enhancement along ``F2 = F1 + xi D`` without the guard.

    Rows whose ``F2`` is not orientation preserving are kept and flagged
    ``valid=False`` with NaN entries.
    """
    if spec.formula not in FORMULAS:
        raise ValueError(f"unknown formula {spec.formula!r}")
    model = OgdenModel.neo_hookean(spec.mu)
    xi = spec.xi() if xi is None else np.asarray(xi, dtype=float)
    F1 = np.asarray(spec.F1, dtype=float)
    F2 = F1[None] + xi[:, None, None] * np.asarray(spec.D, dtype=float)[None]
    ok = np.linalg.det(F2) > 0.0
    C1 = np.broadcast_to(F1.T @ F1, F2.shape)
    C2 = np.einsum("nki,nkj->nij", F2, F2)
    rows = [SweepRow(float(x), np.nan, np.nan, np.nan, np.nan, False) for x in xi]
    idx = np.nonzero(ok)[0]
    if idx.size:
        inp = stress_pair(C1[idx], C2[idx], model)
        _, enh, denom, _, defect, _ = _evaluate(inp, model, spec.formula, 0.0)
        dc = norm(C2[idx] - C1[idx])
        se = norm(enh)
        for j, i in enumerate(idx):
            rows[i] = SweepRow(float(xi[i]), float(dc[j]), float(se[j]), float(denom[j]), float(defect[j]))
    bad = int((~ok).sum())
    if bad:
        log.warning("sweep %s: %d samples with det F2 <= 0 flagged", spec.name, bad)
    return rows


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

Vec3 = tuple[float, float, float]


class LoadRuleModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["constant", "harmonic", "rotational"] = "constant"
    vector: Vec3 = (0.0, 0.0, 0.0)
    vector2: Vec3 = (0.0, 0.0, 0.0)
    omega: float = 0.0

    def rule(self) -> LoadRule:
        return LoadRule(self.kind, self.vector, self.vector2, self.omega)


class InitialVelocity(BaseModel):
    """``zero``, ``uniform`` (``vector``) or ``twist``: ``V = w(X3) e3 x X`` with
    ``w = omega1 sin(pi (X3 - L/2) / (2L)) + omega2``."""

    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["zero", "uniform", "twist"] = "zero"
    vector: Vec3 = (0.0, 0.0, 0.0)
    omega1: float = 0.0
    omega2: float = 0.0
    length: float = 1.0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(X)
        if self.kind == "uniform":
            return np.broadcast_to(np.asarray(self.vector), X.shape).copy()
        L = self.length
        w = self.omega1 * np.sin(np.pi * (X[..., 2] - 0.5 * L) / (2.0 * L)) + self.omega2
        return np.stack([-w * X[..., 1], w * X[..., 0], np.zeros_like(w)], axis=-1)


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "custom"
    lower: Vec3 = (0.0, 0.0, 0.0)
    upper: Vec3 = (1.0, 1.0, 1.0)
    elements: tuple[int, int, int] = (1, 1, 1)
    p: int = Field(1, ge=1)
    a: int = Field(1, ge=1)
    b: int = Field(0, ge=0)
    nquad: int | None = None
    mu: tuple[float, ...] = (1.0,)
    alpha: tuple[float, ...] = (2.0,)
    rho0: float = Field(1.0, gt=0)
    initial_velocity: InitialVelocity = InitialVelocity()
    body: LoadRuleModel = LoadRuleModel()
    tractions: dict[str, LoadRuleModel] = {}
    dirichlet_faces: tuple[str, ...] = ()
    dt: float = Field(0.01, gt=0)
    steps: int = Field(100, ge=0)
    gamma: float = Field(0.0, ge=0)
    formula: Literal["gonzalez", "scaled", "coaxial", "midpoint"] = "gonzalez"
    tol_b: float = Field(1e-10, ge=0)
    elasticity: Literal["corrected", "conventional"] = "corrected"
    tol_r: float = Field(1e-10, gt=0)
    tol_a: float = Field(1e-10, gt=0)
    l_max: int = Field(10, ge=1)
    on_failure: Literal["abort", "halve", "accept"] = "abort"
    points: dict[str, Vec3] = {}

    @field_validator("elements")
    @classmethod
    def _positive(cls, v):
        if min(v) < 1:
            raise ValueError("element counts must be positive")
        return v

    @model_validator(mode="after")
    def _check(self):
        faces = list(self.tractions) + list(self.dirichlet_faces)
        for f in faces:
            if f not in FACES:
                raise ValueError(f"unknown face {f!r}; expected one of {FACES}")
        if set(self.tractions) & set(self.dirichlet_faces):
            raise ValueError("a face cannot carry both traction and Dirichlet data")
        if len(self.mu) != len(self.alpha) or not self.mu:
            raise ValueError("mu and alpha must have equal non-zero length")
        if not 0 <= self.b < self.a:
            raise ValueError("need 0 <= b < a")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("upper corner must exceed lower corner")
        return self

    @property
    def t_end(self) -> float:
        return self.steps * self.dt

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            tol_r=self.tol_r,
            tol_a=self.tol_a,
            l_max=self.l_max,
            dt=self.dt,
            t_end=self.t_end,
            gamma=self.gamma,
            formula=self.formula,
            tol_b=self.tol_b,
            elasticity=self.elasticity,
            on_failure=self.on_failure,
        )


def scenario_twisting_column(**overrides) -> ScenarioSpec:
    base = dict(
        name="twisting_column",
        lower=(-0.5, -0.5, 0.0),
        upper=(0.5, 0.5, 6.0),
        elements=(3, 3, 11),
        p=1,
        mu=(6.3e5, 1.2e3, -1.0e4),
        alpha=(1.3, 5.0, -2.0),
        rho0=1.0e3,
        initial_velocity=InitialVelocity(kind="twist", omega1=20.0, omega2=5.0, length=6.0),
        dt=0.01,
        steps=500,
    )
    base.update(overrides)
    return ScenarioSpec(**base)


def scenario_cantilever(**overrides) -> ScenarioSpec:
    base = dict(
        name="cantilever",
        lower=(-0.005, -0.005, 0.0),
        upper=(0.005, 0.005, 0.3),
        elements=(2, 2, 21),
        p=1,
        mu=(6.93e7,),
        alpha=(2.0,),
        rho0=3.0e3,
        tractions={"zmax": LoadRuleModel(kind="harmonic", vector=(200.0, 0.0, 0.0), vector2=(0.0, 100.0, 0.0), omega=8.0)},
        dirichlet_faces=("zmin",),
        dt=0.01,
        steps=25000,
        points={"A": (0.0, 0.005, 0.3)},
    )
    base.update(overrides)
    return ScenarioSpec(**base)


SCENARIOS: dict[str, Callable[..., ScenarioSpec]] = {
    "twisting_column": scenario_twisting_column,
    "cantilever": scenario_cantilever,
}


@dataclass
class Problem:
    spec: ScenarioSpec
    disc: Discretization
    model: OgdenModel
    loads: LoadSpec
    stepper: Stepper

    def initial_state(self) -> State:
        s = self.disc.zero_state(0.0)
        if self.spec.initial_velocity.kind != "zero":
            s.V[:] = self.disc.l2_project(self.spec.initial_velocity)
        return self.stepper.apply_dirichlet(s)


def build_problem(spec: ScenarioSpec) -> Problem:
    spaces = build_mixed_spaces(spec.p, spec.a, spec.b, spec.elements, dirichlet_faces=spec.dirichlet_faces)
    geom = box_geometry(spaces.velocity, spec.lower, spec.upper)
    disc = Discretization(spaces, geom, spec.nquad, traction_faces=tuple(spec.tractions))
    model = OgdenModel(spec.mu, spec.alpha, spec.rho0)
    loads = LoadSpec(spec.body.rule(), tuple((f, r.rule()) for f, r in spec.tractions.items()))
    return Problem(spec, disc, model, loads, Stepper(disc, model, loads, spec.solver_config()))


def point_value(prob: Problem, coeffs: np.ndarray, x) -> np.ndarray:
    """Evaluate a velocity-space field at a physical point of the affine box."""
    lo = np.asarray(prob.spec.lower, dtype=float)
    hi = np.asarray(prob.spec.upper, dtype=float)
    xi = (np.asarray(x, dtype=float) - lo) / (hi - lo)
    if np.any(xi < -1e-12) or np.any(xi > 1 + 1e-12):
        raise ValueError(f"point {tuple(x)} outside the patch")
    idx, val, _ = prob.disc.spaces.velocity.eval_point(np.clip(xi, 0.0, 1.0))
    return val @ coeffs[idx]


def simulate(
    prob: Problem,
    steps: int | None = None,
    on_step: Callable[[int, State, StepRecord, object], None] | None = None,
    state: State | None = None,
):
    """March ``steps`` steps; returns ``(records, final_state, reports)``.

    ``records[0]`` describes the initial state. ``on_step`` is called after
    every step (and once for the initial state with ``report=None``).
    """
    steps = prob.spec.steps if steps is None else steps
    s = prob.initial_state() if state is None else state
    disc, model = prob.disc, prob.model
    gamma = prob.spec.gamma
    rec = record(disc, model, s)
    records, reports = [rec], []
    if on_step:
        on_step(0, s, rec, None)
    for n in range(1, steps + 1):
        s1, rep = prob.stepper.step(s)
        rec = record(disc, model, s1, rep.iterations, rec, s, prob.loads, gamma)
        records.append(rec)
        reports.append(rep)
        if on_step:
            on_step(n, s1, rec, rep)
        s = s1
    return records, s, reports
