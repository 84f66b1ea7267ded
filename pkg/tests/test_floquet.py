import numpy as np
import pytest

from hillspec import floquet as FL
from hillspec import hill
from hillspec.potential import mathieu, optical, zero


def _phase_align(u, v):
    c = np.vdot(v, u)
    return v * c / abs(c)


def test_free_bloch_waves():
    t = 1.0
    x = np.linspace(0, 1, 2049)
    psi = FL.normalized_eigenfunction(zero(), t, t**2, 2048)
    assert np.max(np.abs(psi - np.exp(1j * t * x))) < 1e-8
    lam = (2 * np.pi - t) ** 2
    psi2 = FL.normalized_eigenfunction(zero(), t, lam, 2048)
    ref = np.exp(-1j * (2 * np.pi - t) * x)
    assert np.max(np.abs(psi2 - _phase_align(psi2, ref))) < 1e-8


def test_quasi_periodicity_and_residual():
    q = mathieu(1, 2)
    lam1 = hill.bloch_eigenvalues(q, 1.0, 1)[0]
    assert FL.quasi_periodicity_residual(q, 1.0, lam1) < 1e-7
    psi = FL.normalized_eigenfunction(q, 1.0, lam1)
    assert FL.eigen_residual(q, 1.0, lam1, psi) < 1e-6
    psi_s = FL.adjoint_eigenfunction(q, 1.0, lam1)
    assert FL.eigen_residual(q.conj(), 1.0, np.conj(lam1), psi_s) < 1e-6


def test_unit_norm():
    q = optical(0.3)
    lam = hill.bloch_eigenvalues(q, 1.0, 1)[0]
    assert abs(FL.norm(FL.normalized_eigenfunction(q, 1.0, lam)) - 1) < 1e-10


def test_matches_galerkin_vector():
    q, t = mathieu(1, 1), 1.0
    w, v = hill.galerkin_eigenpairs(q, t, 20)
    x = np.linspace(0, 1, 2049)
    psi = FL.normalized_eigenfunction(q, t, w[1], 2048)
    ref = FL.galerkin_eigenfunction(v[:, 1], t, 20, x)
    assert np.max(np.abs(psi - _phase_align(psi, ref))) < 1e-6


def test_real_potential_alpha_is_one():
    q = mathieu(1, 1)
    lams = hill.bloch_eigenvalues(q, 0.7, 4)
    for T in FL.eigen_triples(q, 0.7, lams):
        assert abs(abs(T.alpha) - 1) < 1e-8
        assert np.max(np.abs(T.psi_star - _phase_align(T.psi_star, T.psi))) < 1e-8
        assert abs(T.projection_norm - 1) < 1e-8
    assert abs(FL.projection_norm(zero(), 0.4, 0.16) - 1) < 1e-10


def test_biorthonormality_generic_t():
    q = mathieu(1, 2)
    lams = hill.bloch_eigenvalues(q, 1.0, 8)
    tr = FL.eigen_triples(q, 1.0, lams)
    P = np.array([[FL.inner(a.psi, b.x_elem) for b in tr] for a in tr])
    assert np.max(np.abs(P - np.diag(np.diag(P)))) < 1e-7
    assert np.max(np.abs(np.diag(P) - 1)) < 1e-8
    a1 = abs(tr[0].alpha)
    assert 0 < a1 <= 1 + 1e-12


def test_alpha_vanishes_at_collision():
    q = optical(0.888437)
    ts = [1e-1, 3e-2, 1e-2]
    vals = []
    for t in ts:
        lam = hill.bloch_eigenvalues(q, t, 1)[0]
        vals.append(abs(FL.norming_constant(q, t, lam)))
    assert vals[0] > vals[1] > vals[2]
    lam = hill.bloch_eigenvalues(q, 1e-2, 1)[0]
    assert FL.projection_norm(q, 1e-2, lam) > 10


def test_alpha_underflow_and_degenerate():
    # free double eigenvalue at t = 0: monodromy = I, the closed form vanishes
    with pytest.raises(FL.DegenerateFormulaError):
        FL.bloch_function(zero(), 0.0, (2 * np.pi) ** 2)
    T = FL.EigenTriple(0.0, 1.0, np.zeros(3), np.zeros(3), np.zeros(3), 0.0, None)
    assert T.projection_norm == np.inf


def test_write_alpha_csv(tmp_path):
    p = tmp_path / "a.csv"
    FL.write_alpha_csv([(1, 0.5, 0.5 + 0.5j)], p)
    head, row = p.read_text().splitlines()
    assert head.split(",")[0:2] == ["n", "t"]
    assert float(row.split(",")[-1]) == pytest.approx(np.sqrt(2))
