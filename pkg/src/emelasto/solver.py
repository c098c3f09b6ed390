"""Predictor multi-corrector Newton iteration and the time-stepping driver.

Each step solves the monolithic (dV, dP) saddle system and updates the
displacement through the kinematic relation, so ``U`` never enters the
linear solve as an unknown.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .algostress import DEFAULT_TOL_B, FORMULAS
from .assembly import AssemblyError, Discretization, LoadSpec, SchemeOptions, State, assemble_system
from .material import MaterialError, OgdenModel

__all__ = [
    "SolverConfig",
    "StepReport",
    "SolverError",
    "ConvergenceError",
    "newton_step_solve",
    "displacement_update",
    "advance_step",
    "Stepper",
]

log = logging.getLogger(__name__)

POLICIES = ("abort", "halve", "accept")


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    tol_r: float = 1e-10
    tol_a: float = 1e-10
    l_max: int = 10
    dt: float = 0.01
    t_end: float = 1.0
    gamma: float = 0.0
    formula: str = "gonzalez"
    tol_b: float = DEFAULT_TOL_B
    elasticity: str = "corrected"
    on_failure: str = "abort"

    def __post_init__(self):
        if self.formula not in FORMULAS:
            raise ValueError(f"unknown formula {self.formula!r}")
        if self.elasticity not in ("corrected", "conventional"):
            raise ValueError(f"unknown elasticity variant {self.elasticity!r}")
        if self.on_failure not in POLICIES:
            raise ValueError(f"unknown failure policy {self.on_failure!r}")
        if not self.dt > 0 or self.l_max < 1 or self.gamma < 0:
            raise ValueError("dt must be positive, l_max >= 1 and gamma >= 0")

    @property
    def scheme(self) -> SchemeOptions:
        return SchemeOptions(self.gamma, self.formula, self.tol_b, self.elasticity)


@dataclass
class StepReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    criterion: str = ""
    dt: float = 0.0
    halved: bool = False

    def rate(self) -> float:
        """Observed convergence order from the last three residual norms."""
        r = [x for x in self.residuals if x > 0]
        if len(r) < 3:
            return float("nan")
        e0, e1, e2 = r[-3:]
        return float(np.log(e2 / e1) / np.log(e1 / e0))


def newton_step_solve(A, B, C, r_m, r_p, free=None):
    """Solve ``[[A, B], [C, 0]] (dV, dP) = -(r_m, r_p)`` by sparse LU.

    ``free`` optionally restricts the velocity dofs (constrained increments are
    zero). Returns ``(dV, dP)`` in full length.
    """
    nv = A.shape[0]
    npres = B.shape[1]
    K = sp.bmat([[A, B], [C, None]], format="csc")
    rhs = -np.concatenate([np.ravel(r_m), np.ravel(r_p)])
    if free is None:
        free = np.arange(nv + npres)
    sol = np.zeros(nv + npres)
    if not np.any(rhs[free]):
        return sol[:nv], sol[nv:]
    Kf = K[free][:, free].tocsc()
    sol[free] = _factor_solve(Kf, rhs[free])
    return sol[:nv], sol[nv:]


def _factor_solve(K, rhs):
    try:
        lu = splu(K.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"singular tangent: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    return x


def displacement_update(dV, dt: float, r_k=None):
    """``dU = dt (dV/2 - R^k)``."""
    dV = np.asarray(dV, dtype=float)
    if r_k is None:
        return 0.5 * dt * dV
    return dt * (0.5 * dV - np.asarray(r_k, dtype=float))


class Stepper:
    """Binds a discretization, material, loads and solver settings."""

    def __init__(self, disc: Discretization, model: OgdenModel, loads: LoadSpec | None, cfg: SolverConfig):
        self.disc = disc
        self.model = model
        self.loads = loads if loads is not None else LoadSpec()
        self.cfg = cfg
        nd = disc.n_dofs
        fixed = disc.dirichlet_dofs()
        mask = np.ones(nd, dtype=bool)
        mask[fixed] = False
        self.fixed = fixed
        self.free = np.nonzero(mask)[0]

    def apply_dirichlet(self, s: State) -> State:
        # only homogeneous clamps are supported
        u = s.U.reshape(-1)
        v = s.V.reshape(-1)
        u[self.fixed] = 0.0
        v[self.fixed] = 0.0
        return s

    def step(self, s_n: State, dt: float | None = None, opts: SchemeOptions | None = None) -> tuple[State, StepReport]:
        return advance_step(self, s_n, dt, opts)


def _norm(r_m, r_p, free_v, n_v3):
    rm = r_m.reshape(-1)[free_v]
    return float(np.sqrt(rm @ rm + r_p @ r_p))


def _newton(st: Stepper, s_n: State, dt: float, opts: SchemeOptions):
    cfg = st.cfg
    disc = st.disc
    nv3 = 3 * disc.n_vel
    free_v = st.free[st.free < nv3]
    s1 = s_n.copy()
    s1.t = s_n.t + dt
    # kinematically consistent predictor: R^k vanishes from the first iterate on
    s1.U += dt * s_n.V
    st.apply_dirichlet(s1)
    rep = StepReport(dt=dt)
    r0 = None
    for it in range(cfg.l_max + 1):
        last = it == cfg.l_max
        r_m, r_p, K, _ = assemble_system(disc, st.model, s_n, s1, dt, st.loads, opts, st.free, with_tangent=not last)
        nrm = _norm(r_m, r_p, free_v, nv3)
        if not np.isfinite(nrm):
            raise SolverError("non-finite residual")
        rep.residuals.append(nrm)
        if r0 is None:
            r0 = nrm
        if nrm <= cfg.tol_a:
            rep.converged, rep.criterion = True, "absolute"
            break
        if it > 0 and nrm <= cfg.tol_r * r0:
            rep.converged, rep.criterion = True, "relative"
            break
        if last:
            break
        rhs = -np.concatenate([r_m.reshape(-1), r_p])[st.free]
        d = np.zeros(disc.n_dofs)
        d[st.free] = _factor_solve(K, rhs)
        dV = d[:nv3].reshape(-1, 3)
        r_k = (s1.U - s_n.U) / dt - 0.5 * (s_n.V + s1.V)
        s1.U += displacement_update(dV, dt, r_k)
        s1.V += dV
        s1.P += d[nv3:]
        rep.iterations = it + 1
    return s1, rep


def advance_step(st: Stepper, s_n: State, dt: float | None = None, opts: SchemeOptions | None = None):
    """One time step from ``s_n``; applies the configured failure policy."""
    cfg = st.cfg
    dt = cfg.dt if dt is None else dt
    opts = cfg.scheme if opts is None else opts
    try:
        s1, rep = _newton(st, s_n, dt, opts)
        failed = not rep.converged
    except (AssemblyError, MaterialError, SolverError) as exc:
        if cfg.on_failure != "halve":
            raise ConvergenceError(f"step from t={s_n.t:g} failed: {exc}") from exc
        s1, rep, failed = None, StepReport(dt=dt), True
    if not failed:
        return s1, rep
    if cfg.on_failure == "accept" and s1 is not None:
        warnings.warn(f"step from t={s_n.t:g} not converged after {cfg.l_max} iterations; accepting", stacklevel=2)
        return s1, rep
    if cfg.on_failure == "halve":
        log.warning("step from t=%g not converged; retrying with two half steps", s_n.t)
        mid, r1 = _newton(st, s_n, 0.5 * dt, opts)
        if r1.converged:
            end, r2 = _newton(st, mid, 0.5 * dt, opts)
            if r2.converged:
                r2.halved = True
                r2.iterations += r1.iterations
                r2.residuals = r1.residuals + r2.residuals
                return end, r2
    raise ConvergenceError(
        f"Newton iteration did not converge within {cfg.l_max} iterations at t={s_n.t:g}", rep
    )
