from __future__ import annotations

import numpy as np
import pytest

F1 = np.array([[1.5, 0.0, 0.0], [0.1, 0.8, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, 3, 3)))
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    q[np.linalg.det(q) < 0, :, 0] *= -1.0
    return q


def random_spd(rng, n, cond=1e3):
    """SPD matrices with eigenvalues spread over at most ``cond``."""
    q = random_rotation(rng, n)
    ev = np.exp(rng.uniform(0.0, np.log(cond), size=(n, 3))) * rng.uniform(0.3, 3.0, size=(n, 1))
    return np.einsum("nia,na,nja->nij", q, ev, q)


def spd_near(rng, n, scale=0.3):
    """Deformation-like SPD tensors ``F^T F`` with ``F`` near the identity."""
    f = np.eye(3) + scale * rng.normal(size=(n, 3, 3))
    f[np.linalg.det(f) <= 0.1] = np.eye(3)
    return np.einsum("nki,nkj->nij", f, f)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
