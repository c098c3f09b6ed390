from __future__ import annotations

import csv

import numpy as np
import pytest
from scipy import integrate

from emelasto.bench import InitialVelocity, ScenarioSpec, build_problem, scenario_twisting_column
from emelasto.diagnostics import (
    CSV_COLUMNS,
    HistoryWriter,
    StepRecord,
    dissipation,
    div_v_norm,
    hamiltonian,
    momenta,
    power_balance_residual,
    record,
)


def cube(lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0), rho0=1.0, **kw):
    return build_problem(ScenarioSpec(lower=lower, upper=upper, rho0=rho0, mu=(5.0,), alpha=(2.0,), **kw))


def test_rest_state():
    prob = cube()
    s = prob.initial_state()
    assert hamiltonian(prob.disc, prob.model, s) == 0.0
    L, J = momenta(prob.disc, prob.model, s)
    assert not np.any(L) and not np.any(J)
    assert div_v_norm(prob.disc, s) == 0.0


def test_uniform_velocity():
    v = np.array([1.0, -2.0, 0.5])
    prob = cube((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5), rho0=2.0, initial_velocity=InitialVelocity(kind="uniform", vector=tuple(v)))
    s = prob.initial_state()
    assert hamiltonian(prob.disc, prob.model, s) == pytest.approx(2.0 * v @ v / 2, rel=1e-13)
    L, J = momenta(prob.disc, prob.model, s)
    assert np.allclose(L, 2.0 * v, rtol=1e-13)
    assert np.abs(J).max() <= 1e-13
    assert div_v_norm(prob.disc, s) <= 1e-13


def test_rigid_rotation_inertia():
    w = np.array([0.3, -0.4, 1.2])
    a, b, c = 1.0, 2.0, 0.5
    prob = cube((-a / 2, -b / 2, -c / 2), (a / 2, b / 2, c / 2), rho0=3.0, elements=(2, 1, 1))
    s = prob.initial_state()
    s.V = prob.disc.l2_project(lambda x: np.cross(w, x))
    m = 3.0 * a * b * c
    inertia = m / 12.0 * np.diag([b * b + c * c, a * a + c * c, a * a + b * b])
    _, J = momenta(prob.disc, prob.model, s)
    assert np.allclose(J, inertia @ w, rtol=1e-12)
    assert div_v_norm(prob.disc, s) <= 1e-12


def test_dilation_divnorm():
    prob = cube()
    s = prob.initial_state()
    s.V = prob.disc.l2_project(lambda x: x)
    assert div_v_norm(prob.disc, s) == pytest.approx(3.0, rel=1e-13)


def test_twisting_column_initial_energy():
    spec = scenario_twisting_column()
    prob = build_problem(spec)
    H = hamiltonian(prob.disc, prob.model, prob.initial_state())
    iv = spec.initial_velocity
    L = iv.length

    def w(z):
        return iv.omega1 * np.sin(np.pi * (z - L / 2) / (2 * L)) + iv.omega2

    # the square section [-1/2, 1/2]^2 has polar moment 1/6
    ref = 0.5 * spec.rho0 / 6.0 * integrate.quad(lambda z: w(z) ** 2, 0.0, 6.0, epsabs=0, epsrel=1e-13)[0]
    assert H == pytest.approx(ref, rel=1e-9)


def test_dissipation_nonnegative(rng):
    prob = cube(elements=(1, 1, 2))
    s0 = prob.initial_state()
    s1 = s0.copy()
    s1.V = rng.normal(size=s1.V.shape)
    assert dissipation(prob.disc, s0, s1, 0.0) == 0.0
    assert dissipation(prob.disc, s0, s1, 10.0) > 0.0


def test_power_balance_formula():
    assert power_balance_residual(1.0, 1.5, 0.5, 2.0, 1.0) == pytest.approx(0.0)
    assert power_balance_residual(1.0, 1.0, 0.5, 0.0, 0.5) == pytest.approx(0.5)


def test_history_writer(tmp_path):
    prob = cube(initial_velocity=InitialVelocity(kind="uniform", vector=(1.0, 0.0, 0.0)))
    s = prob.initial_state()
    r0 = record(prob.disc, prob.model, s)
    s1, rep = prob.stepper.step(s)
    r1 = record(prob.disc, prob.model, s1, rep.iterations, r0, s, prob.loads, 0.0)
    assert r1.pwr_residual <= 1e-12
    path = tmp_path / "h.csv"
    with HistoryWriter(path) as hw:
        hw.write(r0)
        hw.write(r1)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 3
    assert float(rows[2][0]) == pytest.approx(0.01)
    assert int(rows[2][-1]) == rep.iterations
    assert float(rows[1][1]) == r0.H


def test_record_row_length():
    rec = StepRecord(0.0, 1.0, np.zeros(3), np.zeros(3), 0.0)
    assert len(rec.row()) == len(CSV_COLUMNS)
