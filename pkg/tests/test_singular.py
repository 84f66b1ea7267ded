from fractions import Fraction

import numpy as np
import pytest

from hillspec import singular as S
from hillspec.potential import mathieu, optical, zero

V2 = 0.8884370040751802


def test_fit_local_order_synthetic():
    s = np.geomspace(*S.FIT_WINDOW, S.FIT_SAMPLES)
    for g in (0.5, 1.0, 1.5):
        gh, c, res = S.fit_local_order(s, s**g * (1 + 0.1 * s))
        assert abs(gh - g) < 0.05 and res < 1e-2


def test_real_potentials_have_no_singularities():
    assert S.find_spectral_singularities(mathieu(1, 1), 4) == []
    for r in S.ess_groups(optical(0.0), 6):
        assert r.verdict == "regular"


def test_ess_at_second_critical_coupling():
    rec = S.classify_ess(optical(V2), 0.0, (1, 2))
    assert rec.verdict == "ESS" and abs(rec.exponent - 1) < 0.05
    js = rec.to_json()
    assert js["member_set"] == [1, 2] and len(js["Lambda"]) == 2


def test_ess_groups_at_V2_single_pair_at_zero():
    recs = S.ess_groups(optical(V2), 6)
    ess = [r for r in recs if r.verdict == "ESS"]
    assert [(r.t0, r.member_set) for r in ess] == [(0.0, (1, 2))]


def test_generic_collision_is_square_root_like():
    # a synthetic branch point: |alpha| ~ sqrt(s) is integrable, gamma ~ 1/2
    s = np.geomspace(1e-5, 1e-2, 13)
    g, _, _ = S.fit_local_order(s, np.sqrt(s) * (1 + s))
    assert 0.1 <= g < 0.9


def test_projection_norm_rate_matches_alpha_fit():
    q = optical(V2)
    rec = S.classify_ess(q, 0.0, (1, 2))
    rates = S.projection_norm_exponent(q, 0.0, (1, 2))
    assert max(abs(r - rec.exponent) for r in rates) < 0.1


def test_find_singularities_near_V2():
    t = np.linspace(-0.2, 0.2, 41)
    pts = S.find_spectral_singularities(optical(V2), 2, t_grid=t)
    assert pts and all(p.n in (1, 2) for p in pts)
    assert min(abs(p.t) for p in pts) < 1e-3


def test_infinity_probe_bounded_cases():
    t = np.linspace(-np.pi, np.pi, 65)[1:]
    pr = S.ess_at_infinity_probe(zero(), [1, 2, 3], t_grid=t)
    assert np.allclose(pr.integrals, 2 * np.pi, rtol=1e-10) and pr.trend == "bounded"
    pr = S.ess_at_infinity_probe(mathieu(1, 2), [2, 3, 4, 5], t_grid=t)
    assert pr.trend == "bounded"


def test_critical_V_intervals():
    assert S.critical_V((0.0, 0.3)) == []
    v1 = S.critical_V((0.3, 0.7))
    assert len(v1) == 1 and abs(v1[0] - 0.5) < 1e-4
    v2 = S.critical_V((0.7, 1.0))
    assert len(v2) == 1 and abs(v2[0] - 0.888437) < 1e-3
    with pytest.raises(ValueError):
        S.critical_V((0.5, 0.2))


def test_critical_V_stable_under_refinement():
    a = S.critical_V((0.7, 1.0), truncation=40)[0]
    b = S.critical_V((0.7, 1.0), truncation=80)[0]
    assert abs(a - b) < 1e-5


def test_mathieu_spectrality_examples():
    v = S.mathieu_spectrality(1, 1)
    assert v.condition5_infimum == 1 and v.verdict == "asymptotically-spectral-candidate" and v.caveat
    assert S.mathieu_spectrality(1, 2).verdict == "not-spectral"
    a = np.exp(1j * np.pi / 3)
    v = S.mathieu_spectrality(a, 1, exact_alpha=Fraction(1, 3))
    assert v.verdict == "not-asymptotically-spectral" and v.rational_certificate
    with pytest.raises(ValueError):
        S.mathieu_spectrality(a, 1, exact_alpha=Fraction(1, 4))
    with pytest.raises(ValueError):
        S.mathieu_spectrality(1, 1, N_search=0)


def test_even_numerator_is_not_certified():
    a = np.exp(2j * np.pi / 3)
    v = S.mathieu_spectrality(a, 1, exact_alpha=Fraction(2, 3))
    assert v.rational_certificate is False and v.verdict == "asymptotically-spectral-candidate"


def test_condition5_infimum():
    assert S.condition5_infimum(0.0, 50) == 1.0
    assert S.condition5_infimum(1 / 3, 50) < 1e-12  # q = 3, p = 1
    assert S.condition5_infimum(0.5, 50) == pytest.approx(0.0)  # q = 2, p = 1


def test_reports(tmp_path):
    S.write_singularities_csv([S.SingularPoint(1, 0.0, 4.0 + 0j, 1e-9)], tmp_path / "s.csv")
    assert "abs_alpha" in (tmp_path / "s.csv").read_text()
    rec = S.ESSRecord(0.0, 1 + 1j, (1, 2), 1.0, "ESS")
    assert '"verdict": "ESS"' in S.records_json([rec])
