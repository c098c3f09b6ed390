from __future__ import annotations

import numpy as np
import pytest
from conftest import F1, random_rotation, random_spd, spd_near

from emelasto.material import (
    MaterialError,
    OgdenModel,
    c_ich,
    c_ich_conventional,
    correction_term,
    elasticity,
    g_ich_of_c,
    s_ich,
    s_vol,
    stretch_state,
)

OGDEN3 = OgdenModel((1.89, 3.6e-3, -3e-2), (1.3, 5.0, -2.0))
NH = OgdenModel.neo_hookean(2.5)

SYM_DIRS = []
for i, j in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)):
    e = np.zeros((3, 3))
    e[i, j] = e[j, i] = 1.0
    SYM_DIRS.append(e)


def fd_elasticity_error(c, m, variant="corrected", rel_h=1e-6):
    """Max relative error of ``C4:E`` against central differences ``2 dS/dC [E]``."""
    c4 = elasticity(c, m, variant)
    h = rel_h * np.linalg.norm(c, axis=(-2, -1))[..., None, None]
    err = np.zeros(c.shape[:-2])
    scale = np.zeros(c.shape[:-2])
    for e in SYM_DIRS:
        fd = (s_ich(c + h * e, m) - s_ich(c - h * e, m)) / h
        an = np.einsum("...ijkl,kl->...ij", c4, e)
        err = np.maximum(err, np.linalg.norm(fd - an, axis=(-2, -1)))
        scale = np.maximum(scale, np.linalg.norm(fd, axis=(-2, -1)))
    return err / np.maximum(scale, 1e-300)


def coincident_states(rng, n):
    q = random_rotation(rng, n)
    ev = rng.uniform(0.5, 2.0, size=(n, 3))
    ev[:, 1] = ev[:, 0]
    ev[: n // 4] = ev[: n // 4, :1]
    return np.einsum("nia,na,nja->nij", q, ev, q)


def nh_closed_form(c, mu):
    ci = np.linalg.inv(c)
    J23 = np.linalg.det(c) ** (-1.0 / 3.0)
    i1 = np.trace(c, axis1=-2, axis2=-1)
    eye = np.eye(3)
    s = mu * J23[..., None, None] * (eye - (i1 / 3.0)[..., None, None] * ci)
    # 2 dS/dC with d(C^-1)/dC = -sym(C^-1 x C^-1)
    cc = 0.5 * (np.einsum("...ik,...jl->...ijkl", ci, ci) + np.einsum("...il,...jk->...ijkl", ci, ci))
    c4 = 2.0 * (
        -np.einsum("...ij,...kl->...ijkl", s, ci) / 3.0
        + mu * J23[..., None, None, None, None]
        * (-np.einsum("...ij,kl->...ijkl", ci, eye) / 3.0 + (i1 / 3.0)[..., None, None, None, None] * cc)
    )
    return s, c4


def test_model_validation():
    with pytest.raises(MaterialError):
        OgdenModel((1.0, 2.0), (2.0,))
    with pytest.raises(MaterialError):
        OgdenModel((1.0,), (0.0,))
    with pytest.warns(UserWarning):
        OgdenModel((-1.0,), (2.0,))


def test_reference_state_zero():
    st = stretch_state(np.eye(3))
    assert np.allclose(st.mod_stretches, 1.0)
    assert g_ich_of_c(np.eye(3), OGDEN3) == 0.0
    assert np.allclose(s_ich(np.eye(3), OGDEN3), 0.0, atol=1e-15)


def test_modified_stretch_product_is_one(rng):
    c = random_spd(rng, 500)
    st = stretch_state(c)
    assert np.allclose(np.prod(st.mod_stretches, axis=-1), 1.0, rtol=1e-14)
    assert np.allclose(st.J, np.sqrt(np.linalg.det(c)), rtol=1e-12)


def test_not_spd_rejected():
    with pytest.raises(MaterialError):
        stretch_state(np.diag([1.0, 1.0, -1.0]))


def test_s_vol_examples():
    assert np.allclose(s_vol(np.eye(3), 0.0), 0.0)
    assert np.allclose(s_vol(np.eye(3), 3.0), -3.0 * np.eye(3))
    c = F1.T @ F1
    assert np.allclose(s_vol(c, 1.0), -1.2 * np.linalg.inv(c), rtol=1e-13)


def test_energy_consistency(rng):
    c = spd_near(rng, 200)
    s = s_ich(c, OGDEN3)
    h = 1e-6
    for e in SYM_DIRS:
        fd = (g_ich_of_c(c + h * e, OGDEN3) - g_ich_of_c(c - h * e, OGDEN3)) / (2 * h)
        an = 0.5 * np.sum(s * e, axis=(-2, -1))
        assert np.all(np.abs(fd - an) <= 1e-5 * np.maximum(np.abs(an), np.linalg.norm(s, axis=(-2, -1))) + 1e-12)


def test_neo_hookean_closed_form(rng):
    c = random_spd(rng, 1000)
    s_ref, c4_ref = nh_closed_form(c, NH.mu[0])
    s = s_ich(c, NH)
    c4 = elasticity(c, NH)
    rel_s = np.linalg.norm(s - s_ref, axis=(-2, -1)) / np.linalg.norm(s_ref, axis=(-2, -1))
    rel_c = np.linalg.norm((c4 - c4_ref).reshape(-1, 81), axis=1) / np.linalg.norm(c4_ref.reshape(-1, 81), axis=1)
    assert rel_s.max() <= 1e-12
    assert rel_c.max() <= 1e-12


def test_identity_coefficients():
    # at C = I the corrected and conventional tensors coincide; (4/3) mu on the diagonal modes
    c4 = c_ich(np.eye(3), NH).full
    c4c = c_ich_conventional(np.eye(3), NH).full
    assert np.allclose(c4, c4c, atol=1e-14)
    # C4:E for a deviatoric diagonal E is 2 dS/dC; dS/dC = mu (E - tr E/3 I) at C = I
    e = np.diag([1.0, -1.0, 0.0])
    assert np.allclose(np.einsum("ijkl,kl->ij", c4, e), 2.0 * NH.mu[0] * e, atol=1e-13)


def test_fd_random_and_coincident(rng):
    c = np.concatenate([spd_near(rng, 300), coincident_states(rng, 200), random_spd(rng, 200, 1e2)])
    assert fd_elasticity_error(c, OGDEN3).max() <= 1e-5
    assert fd_elasticity_error(c, NH).max() <= 1e-5


def test_conventional_difference_is_correction(rng):
    for c in [F1.T @ F1, *spd_near(rng, 20)]:
        st = stretch_state(c)
        diff = c_ich(c, OGDEN3).full - c_ich_conventional(c, OGDEN3).full
        n = st.vectors
        corr = correction_term(c, OGDEN3)
        ref = np.einsum("ia,ja,ka,la,a->ijkl", n, n, n, n, corr)
        assert np.allclose(diff, ref, atol=1e-12 * np.abs(ref).max())
        # the correction vanishes only in the stress-free state
        assert np.abs(corr).max() > 0.0


def test_objectivity(rng):
    c = spd_near(rng, 100)
    q = random_rotation(rng, 100)
    s = s_ich(c, OGDEN3)
    s_rot = s_ich(np.einsum("nki,nkl,nlj->nij", q, c, q), OGDEN3)
    ref = np.einsum("nki,nkl,nlj->nij", q, s, q)
    assert np.allclose(s_rot, ref, atol=1e-12 * np.abs(s).max())


def test_major_minor_symmetry(rng):
    c4 = elasticity(spd_near(rng, 10), OGDEN3)
    assert np.allclose(c4, c4.transpose(0, 3, 4, 1, 2), atol=1e-12)
    assert np.allclose(c4, c4.transpose(0, 2, 1, 3, 4), atol=1e-12)
