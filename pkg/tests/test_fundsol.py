import numpy as np
import pytest
from scipy.integrate import solve_ivp

from hillspec import fundsol
from hillspec.potential import evaluate, mathieu, optical, zero


def test_initial_conditions_and_free_lambda_zero():
    fp = fundsol.fundamental_pair(zero(), 0.0)
    assert (fp.theta[0], fp.dtheta[0], fp.phi[0], fp.dphi[0]) == (1, 0, 0, 1)
    assert np.allclose(fp.theta, 1, atol=1e-14)
    assert np.allclose(fp.phi, fp.x, atol=1e-14)
    assert np.allclose(fp.monodromy, [[1, 1], [0, 1]], atol=1e-13)


def test_free_oracle_complex_lambda(rng):
    lams = rng.uniform(0, 100, 50) * np.exp(1j * rng.uniform(-np.pi, np.pi, 50))
    for lam in lams:
        # Wronskian check off and errors relative to size: for Im sqrt(lam) ~ 9 the
        # solutions reach ~1e4 and det - 1 cancels below double precision
        fp = fundsol.fundamental_pair(zero(), lam, grid_size=4096, tol=np.inf)
        k = np.sqrt(lam + 0j)
        th, ph = np.cos(k * fp.x), np.sin(k * fp.x) / k
        assert np.max(np.abs(fp.theta - th) / np.maximum(1, np.abs(th))) < 1e-8
        assert np.max(np.abs(fp.phi - ph) / np.maximum(1, np.abs(ph))) < 1e-8


def test_monodromy_examples():
    assert np.allclose(fundsol.monodromy(zero(), np.pi**2), [[-1, 0], [0, -1]], atol=1e-10)
    assert np.allclose(fundsol.monodromy(zero(), (2 * np.pi) ** 2), np.eye(2), atol=1e-9)
    q = optical(0.5)
    M = fundsol.monodromy(q, 6.0 / q.scale)
    assert abs(np.linalg.det(M) - 1) < 1e-10


def test_against_adaptive_integrator():
    # independent oracle: DOP853 on the original first-order system
    q = mathieu(1, 1)
    lam = 5.0

    def rhs(x, y):
        c = evaluate(q, x) - lam
        return [y[1], c * y[0], y[3], c * y[2]]

    sol = solve_ivp(rhs, (0, 1), np.array([1, 0, 0, 1], complex), method="DOP853", rtol=1e-13, atol=1e-14)
    y = sol.y[:, -1]
    M_ref = np.array([[y[0], y[2]], [y[1], y[3]]])
    assert np.max(np.abs(fundsol.monodromy(q, lam) - M_ref)) < 1e-9


def test_grid_refinement_order():
    lam = 40.0 + 5j
    k = np.sqrt(lam)
    errs = []
    for n in (64, 128, 256):
        fp = fundsol.fundamental_pair(zero(), lam, grid_size=n, tol=np.inf)
        errs.append(abs(fp.theta[-1] - np.cos(k)))
    # fourth-order scheme: one doubling should gain well over a factor 2^3
    assert errs[0] / errs[1] > 8 and errs[1] / errs[2] > 8


def test_accuracy_error_and_bad_grid():
    with pytest.raises(fundsol.AccuracyError) as ei:
        fundsol.fundamental_pair(zero(), 4000.0, grid_size=16)
    assert ei.value.residual > 1e-10
    with pytest.raises(ValueError):
        fundsol.fundamental_pair(zero(), 1.0, grid_size=1)


def test_cauchy_mean_value_probe():
    # F is entire: its mean on a circle equals the center value
    q = mathieu(1, 2)
    c, r = 7.0 + 1j, 0.5
    z = c + r * np.exp(2j * np.pi * np.arange(64) / 64)
    M = fundsol.monodromy_batch(q, z)
    F = M[:, 0, 0] + M[:, 1, 1]
    Mc = fundsol.monodromy(q, c)
    assert abs(F.mean() - (Mc[0, 0] + Mc[1, 1])) < 1e-6


def test_solve_batch_shape():
    Y = fundsol.solve_batch(mathieu(1, 2), [1.0, 2.0 + 1j], 64, tol=None)
    assert Y.shape == (2, 65, 2, 2)
