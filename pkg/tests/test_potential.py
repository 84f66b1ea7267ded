import numpy as np
import pytest

from hillspec import potential as P


def test_make_potential_drops_zero_and_checks_period():
    q = P.make_potential({0: 0}, 1)
    assert q.coeffs == {} and q.scale == 1
    with pytest.raises(ValueError):
        P.make_potential({1: 1.0}, 0.0)
    with pytest.raises(ValueError):
        P.make_potential({1: 1.0}, -2.0)


def test_mathieu_form():
    q = P.mathieu(0.3 + 1j, -2.0)
    x = np.linspace(0, 1, 7)
    expect = (0.3 + 1j) * np.exp(2j * np.pi * x) - 2.0 * np.exp(-2j * np.pi * x)
    assert np.allclose(P.evaluate(q, x), expect, atol=1e-14)
    assert P.mathieu(0, 0).coeffs == {}


def test_mathieu_self_adjointness():
    q = P.mathieu(1, 1)
    assert q.is_self_adjoint
    assert np.allclose(P.evaluate(q, [0.0, 0.25]), [2.0, 0.0], atol=1e-14)
    assert not P.mathieu(1, 2).is_self_adjoint


def test_optical_coefficients():
    q0 = P.optical(0.0)
    assert q0.is_self_adjoint and q0.scale == pytest.approx(np.pi**2)
    assert P.optical(1.0).coeffs == {0: 2, 1: 3, -1: -1}
    half = P.optical(0.5)
    assert set(half.coeffs) == {0, 1}  # lower harmonic dropped
    # 4cos^2 x + 4iV sin 2x in original coordinates
    x = np.linspace(0, np.pi, 9)
    V = 0.37
    expect = 4 * np.cos(x) ** 2 + 4j * V * np.sin(2 * x)
    assert np.allclose(P.evaluate_original(P.optical(V), x), expect, atol=1e-13)
    with pytest.raises(ValueError):
        P.optical(-0.1)


def test_evaluate_examples():
    assert P.evaluate(P.zero(), 0.37) == 0
    assert P.evaluate(P.mathieu(1, 1), 0.0) == pytest.approx(2.0)
    assert abs(P.evaluate_original(P.optical(0.5), np.pi / 2)) < 1e-14


def test_conj_and_json_round_trip():
    q = P.optical(0.8)
    qc = q.conj()
    x = np.linspace(0, 1, 11)
    assert np.allclose(P.evaluate(qc, x), np.conj(P.evaluate(q, x)))
    back = P.PeriodicPotential.from_json(q.to_json())
    assert back.coeffs == q.coeffs and back.declared_period == q.declared_period


def test_from_spec():
    assert P.from_spec({"name": "optical", "V": 0.5}).params["V"] == 0.5
    assert P.from_spec({"name": "mathieu", "a": 1, "b": 2}).coefficient(-1) == 2
    assert P.from_spec({"name": "zero"}).coeffs == {}
    with pytest.raises(ValueError):
        P.from_spec({"name": "nope"})
