"""Residuals and consistent tangents of the fully-discrete mixed formulation.

Unknowns per time level are the velocity-space coefficient arrays ``U`` and
``V`` (shape ``(n_vel, 3)``) and pressure coefficients ``P`` (``(n_pres,)``).
Global velocity dofs are numbered node-major (``3 * node + component``) and
pressure dofs follow them in the monolithic system.

Element kernels are vectorised over all elements and quadrature points at
once; reductions into global arrays go through ``np.bincount`` on fixed index
maps so the summation order never changes between runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .algostress import DEFAULT_TOL_B, stress_and_tangent
from .material import OgdenModel
from .spline import FACES, Geometry, MixedSpaces, gauss_legendre

__all__ = [
    "AssemblyError",
    "LoadRule",
    "LoadSpec",
    "State",
    "Discretization",
    "SchemeOptions",
    "QuadPointData",
    "residual_kinematic",
    "residual_mass",
    "residual_momentum",
    "tangent_blocks",
    "assemble_system",
    "green_strain2",
]

_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


class AssemblyError(RuntimeError):
    """Element inversion or inconsistent discrete data."""


@dataclass(frozen=True)
class LoadRule:
    """Spatially/temporally varying vector field given by a named rule.

    ``constant``: ``vector``; ``harmonic``: ``vector cos(omega t) +
    vector2 sin(omega t)``; ``rotational``: ``vector x X``.
    """

    kind: str = "constant"
    vector: tuple = (0.0, 0.0, 0.0)
    vector2: tuple = (0.0, 0.0, 0.0)
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic", "rotational"):
            raise ValueError(f"unknown load rule {self.kind!r}")
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))
        object.__setattr__(self, "vector2", tuple(float(v) for v in self.vector2))

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.vector)
        if self.kind == "constant":
            return np.broadcast_to(a, x.shape).copy()
        if self.kind == "harmonic":
            val = a * np.cos(self.omega * t) + np.asarray(self.vector2) * np.sin(self.omega * t)
            return np.broadcast_to(val, x.shape).copy()
        return np.cross(np.broadcast_to(a, x.shape), x)

    @property
    def is_zero(self) -> bool:
        return not (any(self.vector) or (self.kind == "harmonic" and any(self.vector2)))


@dataclass(frozen=True)
class LoadSpec:
    """Body force per unit mass and dead tractions on tagged faces."""

    body: LoadRule = field(default_factory=LoadRule)
    tractions: tuple = ()  # ((face, LoadRule), ...)

    def traction_faces(self):
        return tuple(f for f, _ in self.tractions)


@dataclass
class State:
    t: float
    U: np.ndarray
    V: np.ndarray
    P: np.ndarray

    def copy(self) -> "State":
        return State(self.t, self.U.copy(), self.V.copy(), self.P.copy())


@dataclass(frozen=True)
class SchemeOptions:
    gamma: float = 0.0
    formula: str = "gonzalez"
    tol_b: float = DEFAULT_TOL_B
    elasticity: str = "corrected"


@dataclass
class QuadPointData:
    F_n: np.ndarray
    F_n1: np.ndarray
    F_m: np.ndarray
    J_m: np.ndarray
    C_n: np.ndarray
    C_n1: np.ndarray
    C_m: np.ndarray
    S_alg: np.ndarray
    dS: np.ndarray
    P_m: np.ndarray
    cof_m: np.ndarray
    grad_v_m: np.ndarray
    div_m: np.ndarray  # grad V_m : cof(F_m) = J_m (grad V_m : F_m^-T)
    enhancement_active: np.ndarray


def _tensor_tables(kv, breaks_idx, u):
    """1D basis tables at points ``u`` lying in element ``breaks_idx``."""
    from .spline import basis_eval

    span = kv.element_span(breaks_idx)
    vals, ders = [], []
    for x in u:
        start, v, d = basis_eval(kv, float(x), span)
        vals.append(v)
        ders.append(d)
    return span - kv.degree, np.array(vals), np.array(ders)


class Discretization:
    """Precomputed quadrature data for a mixed-space patch and its geometry."""

    def __init__(self, spaces: MixedSpaces, geometry: Geometry, nquad: int | None = None, traction_faces=()):
        self.spaces = spaces
        self.geometry = geometry
        vel, pres = spaces.velocity, spaces.pressure
        if nquad is None:
            nquad = spaces.p + spaces.a + 2
        self.nquad = nquad
        self.n_vel = vel.dim
        self.n_pres = pres.dim
        qx, qw = gauss_legendre(nquad)

        ne = vel.element_shape
        # 1D quadrature coordinates per direction, grouped by element
        pts1d, wts1d = [], []
        for d in range(3):
            br = vel.kvs[d].breaks
            h = np.diff(br)
            pts1d.append(br[:-1, None] + h[:, None] * qx[None, :])
            wts1d.append(h[:, None] * qw[None, :])

        x_grid, jac_grid = self._geometry_grid([p.ravel() for p in pts1d])

        nq3 = nquad**3
        n_el = int(np.prod(ne))
        nv_loc = int(np.prod([kv.degree + 1 for kv in vel.kvs]))
        np_loc = int(np.prod([kv.degree + 1 for kv in pres.kvs]))
        self.conn_v = np.empty((n_el, nv_loc), dtype=np.int64)
        self.conn_p = np.empty((n_el, np_loc), dtype=np.int64)
        self.N = np.empty((n_el, nq3, nv_loc))
        self.dN = np.empty((n_el, nq3, nv_loc, 3))
        self.M = np.empty((n_el, nq3, np_loc))
        self.w = np.empty((n_el, nq3))
        self.X = np.empty((n_el, nq3, 3))
        self.element_ijk = np.empty((n_el, 3), dtype=np.int64)

        tabs_v = [[_tensor_tables(vel.kvs[d], e, pts1d[d][e]) for e in range(ne[d])] for d in range(3)]
        tabs_p = [[_tensor_tables(pres.kvs[d], e, pts1d[d][e]) for e in range(ne[d])] for d in range(3)]

        for e3 in range(ne[2]):
            for e2 in range(ne[1]):
                for e1 in range(ne[0]):
                    e = e1 + ne[0] * (e2 + ne[1] * e3)
                    self.element_ijk[e] = (e1, e2, e3)
                    self.conn_v[e] = vel.element_functions((e1, e2, e3))
                    self.conn_p[e] = pres.element_functions((e1, e2, e3))
                    tv = [tabs_v[0][e1], tabs_v[1][e2], tabs_v[2][e3]]
                    tp = [tabs_p[0][e1], tabs_p[1][e2], tabs_p[2][e3]]
                    N, dN = _tensor_basis(tv)
                    M, _ = _tensor_basis(tp)
                    sl = (
                        slice(e1 * nquad, (e1 + 1) * nquad),
                        slice(e2 * nquad, (e2 + 1) * nquad),
                        slice(e3 * nquad, (e3 + 1) * nquad),
                    )
                    jac = jac_grid[sl].reshape(-1, 3, 3, order="F")
                    det = np.linalg.det(jac)
                    if np.any(det <= 0.0):
                        raise AssemblyError(f"non-positive geometry Jacobian in element {e}")
                    jinv = np.linalg.inv(jac)
                    self.N[e] = N
                    self.dN[e] = np.einsum("qaz,qzx->qax", dN, jinv)
                    self.M[e] = M
                    wq = np.einsum("a,b,c->abc", wts1d[0][e1], wts1d[1][e2], wts1d[2][e3]).ravel(order="F")
                    self.w[e] = wq * det
                    self.X[e] = x_grid[sl].reshape(-1, 3, order="F")

        self.n_elements = n_el
        self.faces = {f: self._face_data(f, qx, qw) for f in traction_faces}
        self._build_patterns()

    # -- geometry -----------------------------------------------------------
    def _geometry_grid(self, pts):
        g = self.geometry
        sp_ = g.space
        tables = []
        for d in range(3):
            kv = sp_.kvs[d]
            st, va, de = [], [], []
            from .spline import basis_eval

            for u in pts[d]:
                s, v, dd = basis_eval(kv, float(u))
                st.append(s)
                va.append(v)
                de.append(dd)
            tables.append((np.array(st), np.array(va), np.array(de)))
        (s1, v1, d1), (s2, v2, d2), (s3, v3, d3) = tables
        p = [kv.degree + 1 for kv in sp_.kvs]
        i1 = s1[:, None] + np.arange(p[0])
        i2 = s2[:, None] + np.arange(p[1])
        i3 = s3[:, None] + np.arange(p[2])
        cp = g.control_points
        w = np.ones(sp_.shape) if sp_.weights is None else np.asarray(sp_.weights, dtype=float)
        blk = cp[i1[:, None, None, :, None, None], i2[None, :, None, None, :, None], i3[None, None, :, None, None, :]]
        wb = w[i1[:, None, None, :, None, None], i2[None, :, None, None, :, None], i3[None, None, :, None, None, :]]
        wx = blk * wb[..., None]
        ein = "ia,jb,kc,ijkabc...->ijk..."
        W = np.einsum(ein, v1, v2, v3, wb)
        Xw = np.einsum(ein, v1, v2, v3, wx)
        dW = [
            np.einsum(ein, d1, v2, v3, wb),
            np.einsum(ein, v1, d2, v3, wb),
            np.einsum(ein, v1, v2, d3, wb),
        ]
        dXw = [
            np.einsum(ein, d1, v2, v3, wx),
            np.einsum(ein, v1, d2, v3, wx),
            np.einsum(ein, v1, v2, d3, wx),
        ]
        X = Xw / W[..., None]
        jac = np.stack([(dXw[k] - X * dW[k][..., None]) / W[..., None] for k in range(3)], axis=-1)
        return X, jac

    def _face_data(self, face, qx, qw):
        if face not in FACES:
            raise AssemblyError(f"unknown face {face!r}")
        vel = self.spaces.velocity
        d = FACES.index(face) // 2
        end = FACES.index(face) % 2
        ne = vel.element_shape
        tang = [k for k in range(3) if k != d]
        conn, Ns, ws, Xs = [], [], [], []
        for e in range(self.n_elements):
            ijk = self.element_ijk[e]
            if ijk[d] != (ne[d] - 1 if end else 0):
                continue
            pts = []
            wts = []
            for k in range(3):
                br = vel.kvs[k].breaks
                lo, hi = br[ijk[k]], br[ijk[k] + 1]
                if k == d:
                    pts.append(np.array([hi if end else lo]))
                    wts.append(np.ones(1))
                else:
                    pts.append(lo + (hi - lo) * qx)
                    wts.append((hi - lo) * qw)
            tv = [_tensor_tables(vel.kvs[k], ijk[k], pts[k]) for k in range(3)]
            N, _ = _tensor_basis(tv)
            X, jac = self._geometry_grid(pts)
            X = X.reshape(-1, 3, order="F")
            jac = jac.reshape(-1, 3, 3, order="F")
            da = np.linalg.norm(np.cross(jac[:, :, tang[0]], jac[:, :, tang[1]]), axis=1)
            wq = np.einsum("a,b,c->abc", *wts).ravel(order="F") * da
            conn.append(vel.element_functions(tuple(ijk)))
            Ns.append(N)
            ws.append(wq)
            Xs.append(X)
        return {"conn": np.array(conn), "N": np.array(Ns), "w": np.array(ws), "X": np.array(Xs)}

    # -- sparsity -----------------------------------------------------------
    def _build_patterns(self):
        nv = 3 * self.conn_v.shape[1]
        npl = self.conn_p.shape[1]
        vd = (3 * self.conn_v[:, :, None] + np.arange(3)).reshape(self.n_elements, nv)
        pd = 3 * self.n_vel + self.conn_p
        self.vdofs = vd
        self.pdofs = pd
        self.n_dofs = 3 * self.n_vel + self.n_pres
        rows = np.concatenate(
            [
                np.repeat(vd, nv, axis=1).ravel(),
                np.repeat(vd, npl, axis=1).ravel(),
                np.repeat(pd, nv, axis=1).ravel(),
            ]
        )
        cols = np.concatenate(
            [
                np.tile(vd, (1, nv)).ravel(),
                np.tile(pd, (1, nv)).ravel(),
                np.tile(vd, (1, npl)).ravel(),
            ]
        )
        self._entry_rows = rows
        self._entry_cols = cols
        self._pattern_cache = {}

    def pattern(self, free: np.ndarray):
        """CSR pattern restricted to the ``free`` dofs and the entry->slot map."""
        key = free.tobytes()
        if key in self._pattern_cache:
            return self._pattern_cache[key]
        red = -np.ones(self.n_dofs, dtype=np.int64)
        red[free] = np.arange(free.size)
        r = red[self._entry_rows]
        c = red[self._entry_cols]
        keep = (r >= 0) & (c >= 0)
        n = free.size
        keys = r[keep] * n + c[keep]
        ukeys, slot = np.unique(keys, return_inverse=True)
        indptr = np.searchsorted(ukeys // n, np.arange(n + 1))
        indices = ukeys % n
        pat = (keep, slot, indptr, indices, n)
        self._pattern_cache[key] = pat
        return pat

    # -- field evaluation ---------------------------------------------------
    def grad(self, coeffs: np.ndarray) -> np.ndarray:
        """Reference gradient ``d(field)_i/dX_J`` at all quadrature points."""
        return np.einsum("eai,eqaJ->eqiJ", coeffs[self.conn_v], self.dN)

    def value(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("eai,eqa->eqi", coeffs[self.conn_v], self.N)

    def pressure(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("ea,eqa->eq", coeffs[self.conn_p], self.M)

    def scatter_vel(self, local: np.ndarray) -> np.ndarray:
        """Sum element vectors ``(E, nloc, 3)`` into a global ``(n_vel, 3)`` array."""
        out = np.bincount(self.vdofs.ravel(), weights=local.reshape(-1), minlength=3 * self.n_vel)
        return out.reshape(self.n_vel, 3)

    def scatter_pres(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.conn_p.ravel(), weights=local.ravel(), minlength=self.n_pres)

    def dirichlet_dofs(self) -> np.ndarray:
        vel = self.spaces.velocity
        nodes = set()
        for f in self.spaces.dirichlet_faces:
            nodes.update(vel.face_indices(f).tolist())
        nodes = np.array(sorted(nodes), dtype=np.int64)
        return (3 * nodes[:, None] + np.arange(3)).ravel()

    def mass_matrix(self, rho: float = 1.0) -> sp.csr_matrix:
        """Scalar consistent mass matrix on the velocity space."""
        me = np.einsum("eq,eqa,eqb->eab", self.w * rho, self.N, self.N)
        nl = self.conn_v.shape[1]
        rows = np.repeat(self.conn_v, nl, axis=1).ravel()
        cols = np.tile(self.conn_v, (1, nl)).ravel()
        return sp.csr_matrix((me.ravel(), (rows, cols)), shape=(self.n_vel, self.n_vel))

    def l2_project(self, func) -> np.ndarray:
        """Coefficients of the L2 projection of ``func(X) -> (..., k)`` onto the velocity space."""
        from scipy.sparse.linalg import splu

        vals = np.asarray(func(self.X), dtype=float)
        squeeze = vals.ndim == 2
        if squeeze:
            vals = vals[..., None]
        rhs_loc = np.einsum("eq,eqa,eqk->eak", self.w, self.N, vals)
        k = vals.shape[-1]
        rhs = np.stack(
            [np.bincount(self.conn_v.ravel(), weights=rhs_loc[..., j].ravel(), minlength=self.n_vel) for j in range(k)],
            axis=1,
        )
        lu = splu(self.mass_matrix().tocsc())
        out = lu.solve(rhs)
        return out[:, 0] if squeeze else out

    def zero_state(self, t: float = 0.0) -> State:
        return State(t, np.zeros((self.n_vel, 3)), np.zeros((self.n_vel, 3)), np.zeros(self.n_pres))


def _tensor_basis(tables):
    (_, v0, d0), (_, v1, d1), (_, v2, d2) = tables
    nq = v0.shape[0]
    val = np.einsum("qa,rb,sc->qrsabc", v0, v1, v2)
    g0 = np.einsum("qa,rb,sc->qrsabc", d0, v1, v2)
    g1 = np.einsum("qa,rb,sc->qrsabc", v0, d1, v2)
    g2 = np.einsum("qa,rb,sc->qrsabc", v0, v1, d2)
    nq3 = v0.shape[0] * v1.shape[0] * v2.shape[0]
    nl = v0.shape[1] * v1.shape[1] * v2.shape[1]

    def flat(a):
        # quadrature points and local functions both with first index fastest
        return a.transpose(2, 1, 0, 5, 4, 3).reshape(nq3, nl)

    del nq
    return flat(val), np.stack([flat(g0), flat(g1), flat(g2)], axis=-1)


# ---------------------------------------------------------------------------
# kinematics at quadrature points
# ---------------------------------------------------------------------------

def _dcof(F):
    """``d cof(F)_iJ / dF_pM`` for 3x3 F (exact, no inverse needed)."""
    x = _EPS.reshape(9, 3) @ F  # (ip, N)
    y = x @ _EPS.reshape(9, 3).T  # (ip, JM)
    return y.reshape(F.shape[:-2] + (3, 3, 3, 3)).transpose(*range(F.ndim - 2), -4, -2, -3, -1)


def green_strain2(grad_u: np.ndarray) -> np.ndarray:
    """``C - I = H + H^T + H^T H`` formed without adding the identity first."""
    return grad_u + np.swapaxes(grad_u, -1, -2) + np.swapaxes(grad_u, -1, -2) @ grad_u


def quad_data(disc: Discretization, model: OgdenModel, s_n: State, s_n1: State, opts: SchemeOptions) -> QuadPointData:
    from .tensor3 import cof3, det3

    I = np.eye(3)
    gu_n = disc.grad(s_n.U)
    gu_n1 = disc.grad(s_n1.U)
    F_n = I + gu_n
    F_n1 = I + gu_n1
    F_m = 0.5 * (F_n + F_n1)
    J_m = det3(F_m)
    if np.any(J_m <= 0.0):
        bad = np.unique(np.nonzero(J_m <= 0.0)[0])
        raise AssemblyError(f"element inversion (J_m <= 0) in elements {bad.tolist()[:10]}")
    E_n = green_strain2(gu_n)
    E_n1 = green_strain2(gu_n1)
    C_n = I + E_n
    C_n1 = I + E_n1
    res, dS = stress_and_tangent(C_n, C_n1, model, opts.formula, opts.tol_b, opts.elasticity, E_n, E_n1)
    cof_m = cof3(F_m)
    gv_m = 0.5 * (disc.grad(s_n.V) + disc.grad(s_n1.V))
    div_m = np.sum(gv_m * cof_m, axis=(-2, -1))
    P_m = disc.pressure(0.5 * (s_n.P + s_n1.P))
    return QuadPointData(
        F_n, F_n1, F_m, J_m, C_n, C_n1, 0.5 * (C_n + C_n1), res.stress, dS, P_m, cof_m, gv_m, div_m, res.active
    )


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def residual_kinematic(s_n: State, s_n1: State, dt: float) -> np.ndarray:
    return (s_n1.U - s_n.U) / dt - 0.5 * (s_n.V + s_n1.V)


def residual_mass(disc: Discretization, s_n: State, s_n1: State, qd: QuadPointData | None = None, model=None) -> np.ndarray:
    """Discrete incompressibility residual tested against every pressure function."""
    if qd is None:
        qd = _mass_only_data(disc, s_n, s_n1)
    return disc.scatter_pres(np.einsum("eq,eqk->ek", disc.w * qd.div_m, disc.M))


def _mass_only_data(disc, s_n, s_n1):
    from .tensor3 import cof3, det3

    F_m = np.eye(3) + 0.5 * (disc.grad(s_n.U) + disc.grad(s_n1.U))
    J_m = det3(F_m)
    if np.any(J_m <= 0.0):
        bad = np.unique(np.nonzero(J_m <= 0.0)[0])
        raise AssemblyError(f"element inversion (J_m <= 0) in elements {bad.tolist()[:10]}")
    gv_m = 0.5 * (disc.grad(s_n.V) + disc.grad(s_n1.V))
    cof_m = cof3(F_m)

    class _D:
        pass

    d = _D()
    d.div_m = np.sum(gv_m * cof_m, axis=(-2, -1))
    return d


def _body_and_traction(disc: Discretization, loads: LoadSpec, t_m: float, model: OgdenModel):
    """Element and face contributions of external loads (dead, at the mid time)."""
    out = np.zeros((disc.n_vel, 3))
    if not loads.body.is_zero:
        b = loads.body(disc.X, t_m)
        loc = np.einsum("eq,eqa,eqi->eai", disc.w * model.rho0, disc.N, b)
        out += disc.scatter_vel(loc)
    for face, rule in loads.tractions:
        fd = disc.faces[face]
        h = rule(fd["X"], t_m)
        loc = np.einsum("eq,eqa,eqi->eai", fd["w"], fd["N"], h)
        out += np.bincount(
            (3 * fd["conn"][:, :, None] + np.arange(3)).ravel(), weights=loc.ravel(), minlength=3 * disc.n_vel
        ).reshape(disc.n_vel, 3)
    return out


def residual_momentum(
    disc: Discretization,
    model: OgdenModel,
    s_n: State,
    s_n1: State,
    dt: float,
    loads: LoadSpec | None = None,
    opts: SchemeOptions = SchemeOptions(),
    qd: QuadPointData | None = None,
) -> np.ndarray:
    """Momentum residual ``(n_vel, 3)``: inertia, stress, pressure, grad-div minus loads."""
    if qd is None:
        qd = quad_data(disc, model, s_n, s_n1, opts)
    T = _flux(qd, opts.gamma)
    acc = model.rho0 * (disc.value(s_n1.V) - disc.value(s_n.V)) / dt
    loc = np.einsum("eq,eqaJ,eqiJ->eai", disc.w, disc.dN, T) + np.einsum("eq,eqa,eqi->eai", disc.w, disc.N, acc)
    r = disc.scatter_vel(loc)
    if loads is not None:
        r -= _body_and_traction(disc, loads, 0.5 * (s_n.t + s_n1.t), model)
    return r


def _flux(qd: QuadPointData, gamma: float):
    fs = np.einsum("...iK,...KJ->...iJ", qd.F_m, qd.S_alg)
    coef = -qd.P_m
    if gamma:
        coef = coef + gamma * qd.div_m / qd.J_m
    return fs + coef[..., None, None] * qd.cof_m


# ---------------------------------------------------------------------------
# tangents
# ---------------------------------------------------------------------------

def _element_blocks(disc: Discretization, model: OgdenModel, qd: QuadPointData, dt: float, gamma: float):
    """Element matrices of A (E, 3n, 3n), B (E, 3n, np), C (E, np, 3n)."""
    I = np.eye(3)
    dcof = _dcof(qd.F_m)
    # d(F_m S)/dG_{n+1}
    D = 0.5 * np.einsum("ip,...MJ->...iJpM", I, qd.S_alg)
    lead = qd.F_m.shape[:-2]
    t = (qd.F_m @ qd.dS.reshape(lead + (3, 27))).reshape(lead + (9, 3, 3))  # (iJ, L, M)
    t = np.swapaxes(t, -1, -2) @ np.swapaxes(qd.F_n1, -1, -2)[..., None, :, :]  # (iJ, M, p)
    D = D + 2.0 * np.swapaxes(t, -1, -2).reshape(lead + (3, 3, 3, 3))
    D = D - 0.5 * qd.P_m[..., None, None, None, None] * dcof
    gv_dcof = 0.5 * np.einsum("...kL,...kLpM->...pM", qd.grad_v_m, dcof)
    Dv = None
    if gamma:
        Jm = qd.J_m[..., None, None, None, None]
        e = qd.div_m[..., None, None, None, None]
        cof = qd.cof_m
        D = D + gamma * (
            np.einsum("...iJ,...pM->...iJpM", cof, gv_dcof) / Jm
            + 0.5 * e * dcof / Jm
            - 0.5 * e * np.einsum("...iJ,...pM->...iJpM", cof, cof) / Jm**2
        )
        Dv = 0.5 * gamma * np.einsum("...iJ,...pM->...iJpM", cof, cof) / Jm
    DA = 0.5 * dt * D
    if Dv is not None:
        DA = DA + Dv

    E, Q, nl, _ = disc.dN.shape
    wdN = disc.dN * disc.w[..., None, None]
    # Y[e,q,i,J,p,b] = sum_M DA[e,q,i,J,p,M] dN[e,q,b,M]
    Y = np.matmul(DA.reshape(E, Q, 27, 3), np.swapaxes(disc.dN, -1, -2))  # (E,Q,27,nl) with 27=(i,J,p)
    Y = Y.reshape(E, Q, 3, 3, 3, nl).transpose(0, 1, 3, 2, 4, 5).reshape(E, Q * 3, 9 * nl)  # (q,J),(i,p,b)
    Ke = np.matmul(wdN.transpose(0, 2, 1, 3).reshape(E, nl, Q * 3), Y)  # (E, a, (i,p,b))
    Ke = Ke.reshape(E, nl, 3, 3, nl).transpose(0, 1, 2, 4, 3)  # a,i,b,p
    mass = np.einsum("eq,eqa,eqb->eab", disc.w * (model.rho0 / dt), disc.N, disc.N)
    Ke = Ke + mass[:, :, None, :, None] * I[None, None, :, None, :]
    Ae = Ke.reshape(E, 3 * nl, 3 * nl)

    npl = disc.M.shape[2]
    bi = (wdN @ np.swapaxes(qd.cof_m, -1, -2)).reshape(E, Q, 3 * nl)  # (a,i)
    Be = -0.5 * np.swapaxes(bi, 1, 2) @ disc.M
    G = 0.5 * qd.cof_m + 0.5 * dt * gv_dcof
    ci = (disc.dN @ np.swapaxes(G, -1, -2)).reshape(E, Q, 3 * nl)  # (b,p)
    Ce = np.swapaxes(disc.M * disc.w[..., None], 1, 2) @ ci
    del npl
    return Ae, Be, Ce


def tangent_blocks(
    disc: Discretization,
    model: OgdenModel,
    s_n: State,
    s_n1: State,
    dt: float,
    opts: SchemeOptions = SchemeOptions(),
):
    """Global sparse ``A``, ``B``, ``C`` blocks of the (dV, dP) Newton system."""
    qd = quad_data(disc, model, s_n, s_n1, opts)
    Ae, Be, Ce = _element_blocks(disc, model, qd, dt, opts.gamma)
    nv = 3 * disc.n_vel
    E, n, _ = Ae.shape
    npl = Be.shape[2]
    vd, pd = disc.vdofs, disc.conn_p
    A = sp.csr_matrix(
        (Ae.ravel(), (np.repeat(vd, n, axis=1).ravel(), np.tile(vd, (1, n)).ravel())), shape=(nv, nv)
    )
    B = sp.csr_matrix(
        (Be.ravel(), (np.repeat(vd, npl, axis=1).ravel(), np.tile(pd, (1, n)).ravel())), shape=(nv, disc.n_pres)
    )
    C = sp.csr_matrix(
        (Ce.ravel(), (np.repeat(pd, n, axis=1).ravel(), np.tile(vd, (1, npl)).ravel())), shape=(disc.n_pres, nv)
    )
    return A, B, C


def assemble_system(
    disc: Discretization,
    model: OgdenModel,
    s_n: State,
    s_n1: State,
    dt: float,
    loads: LoadSpec | None,
    opts: SchemeOptions,
    free: np.ndarray,
    with_tangent: bool = True,
):
    """Residual on the free dofs and (optionally) the reduced monolithic matrix.

    Returns ``(r_m, r_p, K, qd)`` where ``r_m`` is ``(n_vel, 3)``, ``r_p`` is
    ``(n_pres,)`` and ``K`` is a CSR matrix over ``free`` (or ``None``).
    """
    qd = quad_data(disc, model, s_n, s_n1, opts)
    r_m = residual_momentum(disc, model, s_n, s_n1, dt, loads, opts, qd)
    r_p = residual_mass(disc, s_n, s_n1, qd)
    if not with_tangent:
        return r_m, r_p, None, qd
    Ae, Be, Ce = _element_blocks(disc, model, qd, dt, opts.gamma)
    keep, slot, indptr, indices, n = disc.pattern(free)
    data = np.concatenate([Ae.ravel(), Be.ravel(), Ce.ravel()])[keep]
    vals = np.bincount(slot, weights=data, minlength=indices.size)
    K = sp.csr_matrix((vals, indices, indptr), shape=(n, n))
    return r_m, r_p, K, qd


def with_time(state: State, t: float) -> State:
    return replace(state, t=t)
