import json

import numpy as np
import pytest

from hillspec import expansion as E
from hillspec import floquet, hill
from hillspec.fundsol import grid_size_for
from hillspec.potential import mathieu, zero

SMALL = dict(b_panels=2, window_panels=1, panel_order=8)
X = np.linspace(0.0, 1.0, 11)


def small_plan(**kw):
    return E.GroupingPlan(**{**SMALL, **kw})


# --- test functions and the Gelfand transform


def test_indicator_and_bump_support():
    ind = E.indicator(0.0, 1.0)
    assert ind(0.0) == 0.5 and ind(0.5) == 1 and ind(1.5) == 0
    b = E.bump(0.5, 0.25)
    assert b(0.5) == pytest.approx(1.0) and b(0.75) == 0 and b(0.2) == 0
    with pytest.raises(ValueError):
        E.indicator(1.0, 0.0)


def test_gelfand_indicator_examples():
    for t in (0.0, 0.7, -2.0):
        s = E.gelfand_transform(E.indicator(0.0, 1.0), t, K=1, grid_size=64)
        assert np.allclose(s.f_t[1:-1], 1.0)
        s2 = E.gelfand_transform(E.indicator(0.0, 2.0), t, K=2, grid_size=64)
        assert np.allclose(s2.f_t[1:-1], 1 + np.exp(-1j * t))


def test_gelfand_inverse_gaussian():
    f = E.gaussian(0.5, 0.1)
    x = np.linspace(-1.0, 2.0, 31)
    assert np.max(np.abs(E.inverse_gelfand(f, x, K=4) - f(x))) < 1e-8


def test_support_overflow():
    with pytest.raises(E.SupportOverflowError):
        E.gelfand_transform(E.indicator(-3.0, 1.0), 0.3, K=1)
    assert E.translation_range(E.indicator(-3.0, 1.0)) == 3


def test_coefficients_free_plane_wave():
    # f_t = e^{itx} on [0, 1]: all weight on the band lambda = t^2
    t = 0.6
    lams = hill.bloch_eigenvalues(zero(), t, 4)
    N = grid_size_for(zero(), np.abs(lams).max())
    x = np.linspace(0, 1, N + 1)
    tr = floquet.eigen_triples(zero(), t, lams, N)
    s = E.coefficients(E.GelfandSlice(t, x, np.exp(1j * t * x), 0), tr)
    assert abs(abs(s.a[1]) - 1) < 1e-10
    assert max(abs(s.a[n]) for n in (2, 3, 4)) < 1e-10
    assert s.partial_residual < 1e-10


def test_coefficients_parseval_real_potential():
    q, t = mathieu(1, 1), 0.9
    f = E.gaussian(0.5, 0.2)
    lams = hill.bloch_eigenvalues(q, t, 30)
    N = grid_size_for(q, np.abs(lams).max())
    s = E.gelfand_transform(f, t, K=2, grid_size=N)
    s = E.coefficients(s, floquet.eigen_triples(q, t, lams, N))
    lhs = np.mean(np.abs(s.f_t[:-1]) ** 2)
    rhs = sum(abs(a) ** 2 for a in s.a.values())
    assert abs(lhs - rhs) < 1e-6


def test_coefficients_residual_decays_non_self_adjoint():
    q, t = mathieu(1, 2), 0.9
    N = grid_size_for(q, np.abs(hill.galerkin_eigenvalues(q, t, 30)[:16]).max())
    s = E.gelfand_transform(E.gaussian(0.5, 0.2), t, K=2, grid_size=N)
    res = []
    for n in (4, 8, 16):
        lams = hill.bloch_eigenvalues(q, t, n)
        res.append(E.coefficients(s, floquet.eigen_triples(q, t, lams, N)).partial_residual)
    assert res[0] > res[1] > res[2] and res[2] < 1e-4


# --- plans and quadrature


def test_grouping_plan_validation():
    p = E.GroupingPlan()
    assert p.h == 0.02 and np.allclose(p.delta_seq, 0.02 * 10.0 ** -np.arange(1, 6))
    with pytest.raises(ValueError):
        E.GroupingPlan(h=0.5)
    with pytest.raises(ValueError):
        E.GroupingPlan(delta_seq=(1e-3, 1e-2))
    with pytest.raises(ValueError):
        E.GroupingPlan(groups0=[(1, 2), (2, 3)])
    p = E.GroupingPlan(groups0=[(1, 2)], groups_pi=[(3, 4)])
    assert p.S0 == [1, 2] and p.S_pi == [3, 4]


def test_grouped_cancellation_synthetic():
    # g1 = C/t + 1, g2 = -C/t + t^2: members diverge, the grouped sum converges
    h, deltas = 0.02, 0.02 * 10.0 ** -np.arange(1, 6)
    s, w, pan = E.gauss_panels(E._geometric_breaks(h, deltas), 12)
    C = 3.0
    group_vals, member_vals = [], []
    for j in range(len(deltas)):
        keep = pan >= len(deltas) - j
        g1 = C / s + 1
        g2 = -C / s + s**2
        group_vals.append(np.sum(w[keep] * (g1 + g2)[keep]))
        member_vals.append(np.sum(w[keep] * g1[keep]))
    limit = E._richardson(np.array(deltas), np.array(group_vals))
    assert abs(limit - (h + h**3 / 3)) < 1e-6
    assert np.all(np.diff(member_vals) > 0)


def test_check_cauchy_raises():
    pv = {"t0=0:1,2": {"cauchy_diffs": [1e-2, 5e-3]}}
    with pytest.raises(E.NonConvergenceError):
        E._check_cauchy(pv, 1e-3)
    E._check_cauchy(pv, 1e-2)


# --- reconstructions


@pytest.fixture(scope="module")
def free_t():
    return E.reconstruct_t(E.gaussian(0.5, 0.12), zero(), plan=small_plan(), n_max=8, x_grid=X)


def test_free_reconstruction(free_t):
    assert free_t.residual < 1e-3
    assert free_t.groups["groups0"] == [] and free_t.pv_convergence == {}


def test_free_domains_agree(free_t):
    rl = E.reconstruct_lambda(E.gaussian(0.5, 0.12), zero(), plan=small_plan(), n_max=8, x_grid=X)
    assert np.max(np.abs(rl.reconstruction - free_t.reconstruction)) < 1e-6
    assert rl.F_plus is not None and rl.F_minus is not None


@pytest.fixture(scope="module")
def mathieu_t():
    return E.reconstruct_t(E.bump(0.5, 0.45), mathieu(1, 2), plan=small_plan(), n_max=8, x_grid=X)


def test_mathieu_no_groups(mathieu_t):
    assert mathieu_t.groups["groups0"] == [] and mathieu_t.groups["groups_pi"] == []
    assert mathieu_t.residual < 1e-3


def test_linearity(mathieu_t):
    f2 = E.gaussian(0.4, 0.1)
    r2 = E.reconstruct_t(f2, mathieu(1, 2), plan=small_plan(), n_max=8, x_grid=X)
    c1, c2 = 0.7 - 0.2j, 1.3
    rc = E.reconstruct_t(E.combine(c1, E.bump(0.5, 0.45), c2, f2), mathieu(1, 2), plan=small_plan(),
                         n_max=8, x_grid=X)
    assert np.max(np.abs(rc.reconstruction - (c1 * mathieu_t.reconstruction + c2 * r2.reconstruction))) < 1e-8


def test_h_independence(mathieu_t):
    r = E.reconstruct_t(E.bump(0.5, 0.45), mathieu(1, 2), plan=small_plan(h=0.01), n_max=8, x_grid=X)
    assert np.max(np.abs(r.reconstruction - mathieu_t.reconstruction)) < 2e-3


def test_regular_group_equals_plain_quadrature():
    # free double eigenvalue at t = 0 (labels 2, 3): alpha = 1, nothing to cancel
    f = E.gaussian(0.5, 0.12)
    plan = small_plan()
    lim, row = E.grouped_pv_integral(f, zero(), (2, 3), 0.0, plan=plan, x_grid=X, n_max=4)
    ctx = E._Context(f, zero(), plan, 4, X, None, None)
    s, w, _ = E.gauss_panels(np.linspace(0, plan.h, 5), 12)
    plain = sum(wi * sum(E._t_node_terms(ctx, sg * si, (2, 3))[1].values())
                for sg in (1, -1) for si, wi in zip(s, w))
    assert np.max(np.abs(lim - plain)) < 1e-6


def test_report_outputs(tmp_path, free_t):
    free_t.to_csv(tmp_path / "r.csv")
    free_t.to_json(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["schema_version"] == 1 and d["mode"] == "t-domain"
    assert (tmp_path / "r.csv").read_text().startswith("x,re_f")


# --- Parseval


def test_parseval_free_and_rejects_complex():
    res, _, _ = E.parseval_check(E.gaussian(0.5, 0.12), zero(), n_max=12, t_panels=2)
    assert res < 1e-6
    with pytest.raises(ValueError):
        E.parseval_check(E.gaussian(0.5, 0.12), mathieu(1, 2))


def test_parseval_indicator_tail_rate():
    # |a_n|^2 ~ n^-2 for a jump, so the truncated sum misses O(1/n_max)
    out = [E.parseval_check(E.indicator(0.2, 0.8), mathieu(1, 1), n_max=n, K=4, t_panels=2) for n in (8, 16)]
    (r8, l8, s8), (r16, _, s16) = out
    assert s8 < s16 < l8
    assert 1.8 < r8 / r16 < 2.4


def test_bloch_norm_identity():
    q = mathieu(1, 2)
    lam = hill.bloch_eigenvalues(q, 1.0, 2)[1]
    a, b = E.bloch_norm_identity(q, 1.0, lam)
    assert abs(a - b) < 1e-6 * abs(a)
