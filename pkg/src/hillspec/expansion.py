"""Gelfand transform, biorthogonal coefficients and spectral reconstruction.

Coordinates: the user supplies f and x in the units of the declared period rho.
Everything internal works in the normalized coordinate x / rho with period 1:

    f_t(x) = sum_k f(rho (x + k)) e^{-ikt},      f(rho x) = (1/2pi) int_{-pi}^{pi} f_t(x) dt.

t-domain:  f_t = sum_n a_n(t) Psi_{n,t},  a_n(t) = (f_t, X_{n,t}).
lambda-domain:  the same integral after lambda = lambda_n(t), with the kernel

    Phi(x, lam) = (Phi_t F_- + Phi_{-t} F_+) / (2 pi phi(1, lam) p(lam)),

where F_pm(lam) = int_R f Phi_{pm t} dx.  On the arc F(lam) = 2 cos t so
p(lam) = +-2 sin t; the sign is calibrated per arc.  The 1/(2 pi) makes the
lambda-domain form equal the t-domain one (the identity
int_0^1 Phi_t Phi_{-t} dx = 2 sin t phi(1) dt/dlam fixes the normalization).

Every quasiperiodic function on the solver grid is carried as the Fourier
coefficients of its periodic part e^{-itx} g(x), so it can be evaluated at any
real x, including other periods.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fundsol, hill, singular
from .floquet import eigen_triples
from .fundsol import grid_size_for
from .potential import PeriodicPotential

log = logging.getLogger(__name__)

H_DEFAULT = 0.02
H_MAX = 1.0 / (15 * np.pi)
N_MAX_DEFAULT = 16
PANEL_ORDER = 12
MODE_CAP = 256
MODEL_SWITCH = 1e-3
CAUCHY_TOL = 1e-3
GRID_TOL = 4e-10  # predicted Wronskian drift budget used to size the grid


class SupportOverflowError(ValueError):
    pass


class NonConvergenceError(ArithmeticError):
    def __init__(self, msg, table=None):
        super().__init__(msg)
        self.table = table


class BranchInconsistencyError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    name: str
    params: dict
    support: tuple  # closed interval outside which f vanishes (original units)
    fn: Callable = field(repr=False, compare=False)

    __test__ = False  # not a pytest class

    def __call__(self, x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape, complex)
        m = (x >= self.support[0]) & (x <= self.support[1])
        out[m] = self.fn(x[m])
        return out

    def to_json(self):
        return {"name": self.name, **self.params}


def gaussian(center: float, width: float, cutoff: float = 1e-17) -> TestFunction:
    """exp(-(x - c)^2 / (2 w^2)), treated as zero below ``cutoff``."""
    r = width * np.sqrt(-2 * np.log(cutoff))
    return TestFunction("gaussian", {"center": center, "width": width}, (center - r, center + r),
                        lambda x: np.exp(-((x - center) ** 2) / (2 * width**2)))


def indicator(a: float, b: float) -> TestFunction:
    """1 on (a, b), 1/2 at the endpoints."""
    if not b > a:
        raise ValueError("indicator needs a < b")
    return TestFunction("indicator", {"a": a, "b": b}, (a, b),
                        lambda x: np.where((x == a) | (x == b), 0.5, 1.0))


def bump(center: float, radius: float) -> TestFunction:
    """C-infinity bump exp(1 - 1 / (1 - r^2)) with r = (x - c) / radius, supported in |r| < 1."""

    def fn(x):
        r2 = ((x - center) / radius) ** 2
        out = np.zeros_like(r2)
        m = r2 < 1
        out[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m]))
        return out

    return TestFunction("bump", {"center": center, "radius": radius}, (center - radius, center + radius), fn)


def sampled(x, values) -> TestFunction:
    """Piecewise-linear interpolant of samples, zero outside [x0, x_end]."""
    x = np.asarray(x, float)
    v = np.asarray(values, complex)
    return TestFunction("sampled", {"points": len(x)}, (float(x[0]), float(x[-1])),
                        lambda s: np.interp(s, x, v.real) + 1j * np.interp(s, x, v.imag))


def combine(c1, f1: TestFunction, c2, f2: TestFunction) -> TestFunction:
    lo = min(f1.support[0], f2.support[0])
    hi = max(f1.support[1], f2.support[1])
    return TestFunction("combination", {"c1": str(c1), "f1": f1.to_json(), "c2": str(c2), "f2": f2.to_json()},
                        (lo, hi), lambda x: c1 * f1(x) + c2 * f2(x))


TEST_FUNCTIONS = {"gaussian": gaussian, "indicator": indicator, "bump": bump}


def test_function_from_spec(spec) -> TestFunction:
    if isinstance(spec, TestFunction):
        return spec
    spec = dict(spec)
    name = spec.pop("name")
    if name == "sampled":
        return sampled(spec["x"], spec["values"])
    return TEST_FUNCTIONS[name](**spec)


test_function_from_spec.__test__ = False


# ---------------------------------------------------------------------------
# Gelfand transform


@dataclass
class GelfandSlice:
    t: float
    x: np.ndarray
    f_t: np.ndarray
    K: int
    a: dict = field(default_factory=dict)
    partial_residual: float | None = None


def translation_range(f: TestFunction, period: float = 1.0) -> int:
    """Smallest K with supp f inside [-K, K + 1] (normalized units)."""
    lo, hi = f.support[0] / period, f.support[1] / period
    return int(max(0, np.ceil(-lo), np.ceil(hi - 1)))


def check_support(f: TestFunction, K: int, period: float = 1.0) -> None:
    lo, hi = f.support[0] / period, f.support[1] / period
    if lo < -K - 1e-12 or hi > K + 1 + 1e-12:
        raise SupportOverflowError(f"support [{lo:.4g}, {hi:.4g}] exceeds [-{K}, {K + 1}]")


class _Translates:
    """f(rho (x_j + k)) for k = -K..K on a grid, so f_t = e^{-ikt} @ table."""

    def __init__(self, f: TestFunction, K: int, x, period: float):
        check_support(f, K, period)
        self.K = K
        self.k = np.arange(-K, K + 1)
        self.table = np.array([f(period * (np.asarray(x) + k)) for k in self.k])

    def f_t(self, t):
        return np.exp(-1j * self.k * t) @ self.table


def gelfand_transform(f: TestFunction, t: float, K: int | None = None, grid_size: int = fundsol.DEFAULT_GRID,
                      period: float = 1.0) -> GelfandSlice:
    """f_t on the uniform grid of [0, 1] (both endpoints)."""
    if K is None:
        K = translation_range(f, period)
    x = np.linspace(0.0, 1.0, grid_size + 1)
    return GelfandSlice(float(t), x, _Translates(f, K, x, period).f_t(t), K)


def inverse_gelfand(f: TestFunction, x, K: int | None = None, period: float = 1.0, nodes: int = 64):
    """(1/2pi) int f_t(x) dt by the periodic trapezoid rule (exact for nodes > 2K)."""
    if K is None:
        K = translation_range(f, period)
    tr = _Translates(f, K, np.asarray(x, float) / period, period)
    ts = -np.pi + 2 * np.pi * np.arange(nodes) / nodes
    return np.mean([tr.f_t(t) for t in ts], axis=0)


def coefficients(slice_: GelfandSlice, triples) -> GelfandSlice:
    """a_n(t) = (f_t, X_{n,t}) and the partial-sum residual ||f_t - sum a_n Psi_n||."""
    ft = slice_.f_t
    a = {}
    acc = np.zeros_like(ft)
    for i, T in enumerate(triples):
        if not np.allclose(T.x, slice_.x):
            raise ValueError("triples and slice must share the x-grid")
        n = T.n if T.n is not None else i + 1
        a[n] = complex(np.mean(ft[:-1] * np.conj(T.x_elem[:-1])))
        acc = acc + a[n] * T.psi
    res = float(np.sqrt(np.mean(np.abs(ft[:-1] - acc[:-1]) ** 2)))
    return GelfandSlice(slice_.t, slice_.x, ft, slice_.K, a, res)


# ---------------------------------------------------------------------------
# plans and quadrature


@dataclass
class GroupingPlan:
    """Split of (-pi, pi] into B(h) and windows of half-width h about 0 and pi."""

    h: float = H_DEFAULT
    delta_seq: tuple | None = None
    groups0: list | None = None  # ESS member sets at t = 0 (None: detect)
    groups_pi: list | None = None
    b_panels: int = 8
    window_panels: int = 2
    panel_order: int = PANEL_ORDER

    def __post_init__(self):
        if not (0 < self.h < H_MAX):
            raise ValueError(f"h must lie in (0, 1/(15 pi)) = (0, {H_MAX:.5f}), got {self.h}")
        if self.delta_seq is None:
            self.delta_seq = tuple(self.h * 10.0 ** -np.arange(1, 6))
        d = np.asarray(self.delta_seq, float)
        if np.any(d <= 0) or np.any(np.diff(d) >= 0) or d[0] >= self.h:
            raise ValueError("delta_seq must be positive, decreasing and below h")
        for gs in (self.groups0 or [], self.groups_pi or []):
            flat = [n for g in gs for n in g]
            if len(flat) != len(set(flat)):
                raise ValueError("groups must be pairwise disjoint")

    @property
    def S0(self):
        return sorted(n for g in (self.groups0 or []) for n in g)

    @property
    def S_pi(self):
        return sorted(n for g in (self.groups_pi or []) for n in g)

    @property
    def B_h(self):
        return [(-np.pi + self.h, -self.h), (self.h, np.pi - self.h)]


def gauss_panels(breaks, order: int = PANEL_ORDER):
    """Gauss-Legendre nodes/weights on consecutive panels [breaks[i], breaks[i+1]]."""
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights, panel = [], [], []
    for i, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
        panel.append(np.full(order, i))
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(panel)


def _geometric_breaks(h, delta_seq):
    """0 < ... < delta_2 < delta_1 < h as panel breaks of a one-sided window."""
    d = sorted(delta_seq)
    return np.array([0.0] + d + [h])


# ---------------------------------------------------------------------------
# x-evaluation helper


class _Synth:
    """Evaluate quasiperiodic grid functions at arbitrary normalized x."""

    def __init__(self, x_eval, grid_size, cap=MODE_CAP):
        self.x = np.asarray(x_eval, float)
        self.N = grid_size
        M = min(cap, grid_size // 2 - 1)
        self.modes = np.arange(-M, M + 1)
        self.idx = self.modes % grid_size
        self.E = np.exp(2j * np.pi * np.outer(self.x, self.modes))
        self.xg = np.arange(grid_size) / grid_size

    def __call__(self, g, t):
        """g sampled on the grid (N + 1 points, last ignored) with multiplier e^{it}."""
        g = np.atleast_2d(g)
        u = g[:, :-1] * np.exp(-1j * t * self.xg)
        c = np.fft.fft(u, axis=1)[:, self.idx] / self.N
        return (c @ self.E.T) * np.exp(1j * t * self.x)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExpansionReport:
    mode: str
    x: np.ndarray
    f: np.ndarray
    reconstruction: np.ndarray
    residual: float  # relative mean-square error sum|err|^2 / sum|f|^2
    rms_relative: float
    pieces: dict
    pv_convergence: dict
    groups: dict
    n_max: int
    config: dict = field(default_factory=dict)
    F_plus: np.ndarray | None = None
    F_minus: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.reconstruction - self.f)))

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "mode": self.mode,
            "residual": self.residual,
            "rms_relative": self.rms_relative,
            "max_abs_error": self.max_abs_error,
            "n_max": self.n_max,
            "groups": self.groups,
            "pv_convergence": self.pv_convergence,
            "warnings": self.warnings,
            "config": self.config,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "re_f", "im_f", "re_recon", "im_recon", "abs_err"])
            for x, f, r in zip(self.x, self.f, self.reconstruction):
                w.writerow([repr(float(x)), repr(f.real), repr(f.imag), repr(r.real), repr(r.imag),
                            repr(float(abs(r - f)))])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (complex, np.complexfloating)):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _residuals(f, rec):
    err = np.sum(np.abs(rec - f) ** 2)
    ref = np.sum(np.abs(f) ** 2)
    return float(err / ref), float(np.sqrt(err / ref))


# ---------------------------------------------------------------------------
# shared machinery


class _Context:
    """Per-run state: potential, translates, grid, ESS models and a spectrum cache."""

    def __init__(self, f, q, plan, n_max, x_grid, K, grid_size, extra=4):
        self.f, self.q, self.plan, self.n_max = f, q, plan, n_max
        self.period = q.declared_period
        self.x_user = np.asarray(x_grid, float)
        self.xn = self.x_user / self.period
        if K is None:
            K = translation_range(f, self.period)
        self.K = K
        self.extra = extra
        if grid_size is None:
            gal = hill.galerkin_eigenvalues(q, np.pi, max(25, n_max + extra + 10))
            # bloch_spectrum seeds a few roots beyond the requested count
            grid_size = grid_size_for(q, 1.2 * float(np.abs(gal[: n_max + 2 * extra]).max()), tol=GRID_TOL)
        self.N = grid_size
        self.xg = np.linspace(0.0, 1.0, grid_size + 1)
        self.trans = _Translates(f, K, self.xg, self.period)
        self.synth = _Synth(self.xn, grid_size)
        self.models = {}
        self.records = []
        self._cache = {}

    def detect_groups(self):
        plan = self.plan
        if plan.groups0 is None or plan.groups_pi is None:
            self.records = singular.ess_groups(self.q, self.n_max, self.N)
            ess = [r for r in self.records if r.verdict == "ESS" and max(r.member_set) <= self.n_max]
            if plan.groups0 is None:
                plan.groups0 = [tuple(r.member_set) for r in ess if r.t0 == 0.0]
            if plan.groups_pi is None:
                plan.groups_pi = [tuple(r.member_set) for r in ess if r.t0 != 0.0]
        for t0, gs in ((0.0, plan.groups0), (np.pi, plan.groups_pi)):
            for g in gs:
                self.models[(t0, tuple(g))] = singular.group_model(self.q, t0, tuple(g), self.N)

    def spectrum(self, t):
        """n_max + extra eigenvalues at t; ESS members near t0 come from the local model."""
        count = self.n_max + self.extra
        key = float(abs(t))  # F is even in t
        if key not in self._cache:
            self._cache[key] = hill.bloch_spectrum(self.q, key, count, self.N,
                                                   min_split=singular.TINY_SPLIT).lambdas
        lams = self._cache[key].copy()
        for (t0, g), model in self.models.items():
            dist = abs(np.angle(np.exp(1j * (t - t0))))
            if model is not None and dist < MODEL_SWITCH:
                r = model.roots(t)
                lams = hill.with_model_pair(lams, r)
        return lams


# ---------------------------------------------------------------------------
# t-domain


def _t_node_terms(ctx: _Context, t, members=()):
    """x-values of sum_n a_n Psi_n and of the listed members' a_k Psi_k at node t."""
    lams = ctx.spectrum(t)[: ctx.n_max]
    tr = eigen_triples(ctx.q, t, lams, ctx.N)
    ft = ctx.trans.f_t(t)
    G = np.array([T.psi * np.mean(ft[:-1] * np.conj(T.x_elem[:-1])) for T in tr])
    vals = ctx.synth(G, t)
    total = vals.sum(axis=0)
    mem = {k: vals[k - 1] for k in members}
    return total, mem


def _window_t(ctx, t0, groups, h, delta_seq, order, panels):
    """Integral over (t0 - h, t0 + h); grouped principal value for ESS groups.

    Returns (value, pv table per group, per-member tables)."""
    members = [k for g in groups for k in g]
    if groups:
        br = _geometric_breaks(h, delta_seq)
    else:
        br = np.linspace(0.0, h, panels + 1)
    s, w, pan = gauss_panels(br, order)
    sides = (+1, -1)
    total = np.zeros(len(ctx.xn), complex)
    # per panel, per side accumulators for the group and member integrands
    npan = len(br) - 1
    grp = {g: np.zeros((npan, len(ctx.xn)), complex) for g in groups}
    mem = {k: np.zeros((npan, len(ctx.xn)), complex) for k in members}
    for sign in sides:
        for si, wi, pi_ in zip(s, w, pan):
            t = t0 + sign * si
            if t > np.pi:
                t -= 2 * np.pi
            tot, m = _t_node_terms(ctx, t, members)
            grouped = sum((m[k] for k in members), np.zeros_like(tot))
            rest = tot - grouped
            if groups and pi_ == 0:
                # innermost panel [0, delta_min]: only the non-ESS part is integrated
                total += wi * rest
                continue
            total += wi * rest
            for g in groups:
                grp[g][pi_] += wi * sum(m[k] for k in g)
            for k in members:
                mem[k][pi_] += wi * m[k]
    tables, member_tables = {}, {}
    for g in groups:
        # panels 1..npan-1 are [delta_j, delta_{j-1}] ... ; cutoff at delta_j keeps panels above it
        vals = []
        for j, d in enumerate(sorted(delta_seq, reverse=True)):
            first = npan - 1 - j  # index of panel [delta_j, next break]
            vals.append(grp[g][first:].sum(axis=0))
        vals = np.array(vals)
        limit = _richardson(np.array(sorted(delta_seq, reverse=True)), vals)
        diffs = [float(np.max(np.abs(vals[i + 1] - vals[i]))) for i in range(len(vals) - 1)]
        tables[g] = {"t0": t0, "delta": sorted(delta_seq, reverse=True),
                     "grouped_norm": [float(np.sqrt(np.mean(np.abs(v) ** 2))) for v in vals],
                     "cauchy_diffs": diffs, "limit": limit, "values": vals}
        for k in g:
            mv = np.array([mem[k][npan - 1 - j:].sum(axis=0) for j in range(len(delta_seq))])
            member_tables[k] = {"t0": t0, "norms": [float(np.sqrt(np.mean(np.abs(v) ** 2))) for v in mv],
                                "values": mv}
        total += limit
    return total, tables, member_tables


def _richardson(delta, vals):
    """Extrapolate I(delta) to delta = 0 from the last three levels (quadratic in delta)."""
    d = delta[-3:]
    v = vals[-3:]
    # Lagrange weights at 0
    w = np.array([d[1] * d[2] / ((d[0] - d[1]) * (d[0] - d[2])),
                  d[0] * d[2] / ((d[1] - d[0]) * (d[1] - d[2])),
                  d[0] * d[1] / ((d[2] - d[0]) * (d[2] - d[1]))])
    return np.tensordot(w, v, axes=1)


def _b_integral_t(ctx, plan):
    br = np.linspace(plan.h, np.pi - plan.h, plan.b_panels + 1)
    s, w, _ = gauss_panels(br, plan.panel_order)
    acc = np.zeros(len(ctx.xn), complex)
    for sign in (+1, -1):
        for si, wi in zip(s, w):
            acc += wi * _t_node_terms(ctx, sign * si)[0]
    return acc


def reconstruct_t(f: TestFunction, q: PeriodicPotential, plan: GroupingPlan | None = None,
                  n_max: int = N_MAX_DEFAULT, x_grid=None, K: int | None = None, grid_size: int | None = None,
                  cauchy_tol: float = CAUCHY_TOL) -> ExpansionReport:
    """f = (1/2pi)(int_{B(h)} + int_{(-h, h)} + int_{(pi - h, pi + h)}) sum_n a_n Psi_n dt."""
    plan = plan or GroupingPlan()
    if x_grid is None:
        x_grid = np.linspace(0, q.declared_period, 101)
    ctx = _Context(f, q, plan, n_max, x_grid, K, grid_size)
    ctx.detect_groups()
    IB = _b_integral_t(ctx, plan)
    I0, tab0, mem0 = _window_t(ctx, 0.0, plan.groups0, plan.h, plan.delta_seq, plan.panel_order,
                               plan.window_panels)
    Ipi, tabpi, mempi = _window_t(ctx, np.pi, plan.groups_pi, plan.h, plan.delta_seq, plan.panel_order,
                                  plan.window_panels)
    rec = (IB + I0 + Ipi) / (2 * np.pi)
    fx = f(ctx.x_user)
    resid, rms = _residuals(fx, rec)
    pv = _pv_summary(tab0, mem0, tabpi, mempi)
    _check_cauchy(pv, cauchy_tol)
    return ExpansionReport(
        "t-domain", ctx.x_user, fx, rec, resid, rms,
        {"B_h": IB / (2 * np.pi), "window_0": I0 / (2 * np.pi), "window_pi": Ipi / (2 * np.pi)},
        pv, {"groups0": [list(g) for g in plan.groups0], "groups_pi": [list(g) for g in plan.groups_pi],
             "records": [r.to_json() for r in ctx.records]},
        n_max, _config(f, q, plan, n_max, ctx))


def _pv_summary(tab0, mem0, tabpi, mempi):
    out = {}
    for tabs, mems in ((tab0, mem0), (tabpi, mempi)):
        for g, tab in tabs.items():
            key = f"t0={tab['t0']:.6g}:{','.join(map(str, g))}"
            out[key] = {"delta": tab["delta"], "grouped_norm": tab["grouped_norm"],
                        "cauchy_diffs": tab["cauchy_diffs"],
                        "member_norms": {str(k): mems[k]["norms"] for k in g}}
    return out


def _check_cauchy(pv, tol):
    for key, row in pv.items():
        if row["cauchy_diffs"] and row["cauchy_diffs"][-1] > tol:
            raise NonConvergenceError(f"grouped integral {key} not Cauchy: last difference "
                                      f"{row['cauchy_diffs'][-1]:.3e} > {tol:g}", pv)


def _config(f, q, plan, n_max, ctx):
    return {"f": f.to_json(), "potential": q.to_json(), "h": plan.h, "delta_seq": list(plan.delta_seq),
            "n_max": n_max, "K": ctx.K, "grid_size": ctx.N, "panel_order": plan.panel_order,
            "b_panels": plan.b_panels}


def grouped_pv_integral(f: TestFunction, q: PeriodicPotential, group, t0: float,
                        plan: GroupingPlan | None = None, x_grid=None, n_max: int | None = None,
                        grid_size: int | None = None, cauchy_tol: float = CAUCHY_TOL):
    """Sum over the group of int_{[t0-h, t0+h] minus [t0-delta, t0+delta]} a_k Psi_k dt along delta_seq.

    Returns (extrapolated grouped integral on x_grid, convergence row).
    """
    group = tuple(group)
    plan = plan or GroupingPlan()
    if x_grid is None:
        x_grid = np.linspace(0, q.declared_period, 51)
    n_max = n_max or max(group)
    ctx = _Context(f, q, plan, n_max, x_grid, None, grid_size)
    ctx.models[(t0, group)] = singular.group_model(q, t0, group, ctx.N)
    _, tab, mem = _window_t(ctx, t0, [group], plan.h, plan.delta_seq, plan.panel_order, plan.window_panels)
    pv = _pv_summary(tab, mem, {}, {}) if t0 == 0.0 else _pv_summary({}, {}, tab, mem)
    row = next(iter(pv.values()))
    row["members"] = {k: mem[k]["values"] for k in group}
    row["values"] = tab[group]["values"]
    _check_cauchy(pv, cauchy_tol)
    return tab[group]["limit"], row


# ---------------------------------------------------------------------------
# lambda-domain


def _dlam_dt(ctx, t, lams, eta_max=1e-4):
    """Centered differences of lambda_n(t) along the bands (original units)."""
    dist = min(abs(t), abs(np.pi - abs(t)))
    eta = min(eta_max, dist / 4)
    # follow each band to t +- eta by Newton from lambda_n(t)
    lp = hill._newton(ctx.q, 2 * np.cos(t + eta), lams, ctx.N)
    lm = hill._newton(ctx.q, 2 * np.cos(t - eta), lams, ctx.N)
    d = (lp - lm) / (2 * eta)
    # members of an ESS group close to t0 use the model's implicit derivative
    for (t0, g), model in ctx.models.items():
        if model is not None and abs(np.angle(np.exp(1j * (t - t0)))) < MODEL_SWITCH:
            for i, l in enumerate(lams):
                if abs(l - model.lam_c) < 0.1 * model.radius:
                    d[i] = model.dlam_dt(l, t)
    return d


def _lambda_node_terms(ctx: _Context, t, members=()):
    """lambda-domain integrand Phi(x, lam_n(t)) lambda_n'(t) for t in (0, pi), summed over n.

    Returns (Phi_t part, Phi_{-t} part) of the total and per listed member, each as
    x-values, plus diagnostic (p_numeric, 2 sin t) at the node.
    """
    q = ctx.q
    lams_all = ctx.spectrum(t)
    lams = lams_all[: ctx.n_max]
    dl = _dlam_dt(ctx, t, lams_all)[: ctx.n_max] * q.scale  # internal units
    Y = fundsol.solve_batch(q, lams, ctx.N)
    M = Y[:, -1]
    theta, phi = Y[:, :, 0, 0], Y[:, :, 0, 1]
    th1, ph1 = M[:, 0, 0], M[:, 0, 1]
    Phi_p = ph1[:, None] * theta + (np.exp(1j * t) - th1)[:, None] * phi
    Phi_m = ph1[:, None] * theta + (np.exp(-1j * t) - th1)[:, None] * phi
    F_minus = np.mean(ctx.trans.f_t(t)[None, :-1] * Phi_m[:, :-1], axis=1)
    F_plus = np.mean(ctx.trans.f_t(-t)[None, :-1] * Phi_p[:, :-1], axis=1)
    p = 2.0 * np.sin(t)
    Fdisc = M[:, 0, 0] + M[:, 1, 1]
    p_num = np.sqrt(4.0 - Fdisc**2 + 0j)
    coef = dl / (2 * np.pi * ph1 * p)
    Gp = ctx.synth(Phi_p * (coef * F_minus)[:, None], t)
    Gm = ctx.synth(Phi_m * (coef * F_plus)[:, None], -t)
    vals = Gp + Gm
    mem = {k: vals[k - 1] for k in members}
    return vals.sum(axis=0), mem, (p_num, p), (F_plus, F_minus)


def _calibrate_branch(ctx, t_mid, tol=1e-2):
    """Sign of p on an arc: principal sqrt(4 - F^2) against 2 sin t at the arc midpoint."""
    _, _, (p_num, p), _ = _lambda_node_terms(ctx, t_mid)
    s = np.sign((p_num / p).real)
    s[s == 0] = 1
    if np.any(np.abs(s * p_num - p) > tol * max(abs(p), 1e-300) + 1e-6):
        raise BranchInconsistencyError(f"p(lambda) disagrees with 2 sin t at t={t_mid}")
    return s


def _window_lambda(ctx, t0, groups, h, delta_seq, order, panels):
    """One-sided arc window (0, h) or (pi - h, pi), as lambda-domain arcs gamma(j, t0, h)."""
    members = [k for g in groups for k in g]
    sign = +1 if t0 == 0.0 else -1
    br = _geometric_breaks(h, delta_seq) if groups else np.linspace(0.0, h, panels + 1)
    s, w, pan = gauss_panels(br, order)
    npan = len(br) - 1
    total = np.zeros(len(ctx.xn), complex)
    grp = {g: np.zeros((npan, len(ctx.xn)), complex) for g in groups}
    mem = {k: np.zeros((npan, len(ctx.xn)), complex) for k in members}
    for si, wi, pi_ in zip(s, w, pan):
        t = t0 + sign * si
        tot, m, _, _ = _lambda_node_terms(ctx, t, members)
        grouped = sum((m[k] for k in members), np.zeros_like(tot))
        total += wi * (tot - grouped)
        if groups and pi_ == 0:
            continue
        for g in groups:
            grp[g][pi_] += wi * sum(m[k] for k in g)
        for k in members:
            mem[k][pi_] += wi * m[k]
    tables, member_tables = {}, {}
    ds = sorted(delta_seq, reverse=True)
    for g in groups:
        vals = np.array([grp[g][npan - 1 - j:].sum(axis=0) for j in range(len(ds))])
        limit = _richardson(np.array(ds), vals)
        diffs = [float(np.max(np.abs(vals[i + 1] - vals[i]))) for i in range(len(vals) - 1)]
        tables[g] = {"t0": t0, "delta": ds, "grouped_norm": [float(np.sqrt(np.mean(np.abs(v) ** 2))) for v in vals],
                     "cauchy_diffs": diffs, "limit": limit, "values": vals}
        for k in g:
            mv = np.array([mem[k][npan - 1 - j:].sum(axis=0) for j in range(len(ds))])
            member_tables[k] = {"t0": t0, "norms": [float(np.sqrt(np.mean(np.abs(v) ** 2))) for v in mv],
                                "values": mv}
        total += limit
    return total, tables, member_tables


def reconstruct_lambda(f: TestFunction, q: PeriodicPotential, plan: GroupingPlan | None = None,
                       n_max: int = N_MAX_DEFAULT, x_grid=None, K: int | None = None,
                       grid_size: int | None = None, cauchy_tol: float = CAUCHY_TOL) -> ExpansionReport:
    """int_{sigma minus gamma(h)} Phi dlam + sum of p.v. arc integrals, via lambda = lambda_n(t), t in (0, pi)."""
    plan = plan or GroupingPlan()
    if x_grid is None:
        x_grid = np.linspace(0, q.declared_period, 101)
    ctx = _Context(f, q, plan, n_max, x_grid, K, grid_size)
    ctx.detect_groups()
    # branch calibration on the three arc families
    branches = {}
    for name, tm in (("gamma0", plan.h / 2), ("bulk", np.pi / 2), ("gamma_pi", np.pi - plan.h / 2)):
        branches[name] = _calibrate_branch(ctx, tm).tolist()
    br = np.linspace(plan.h, np.pi - plan.h, plan.b_panels + 1)
    s, w, _ = gauss_panels(br, plan.panel_order)
    IB = np.zeros(len(ctx.xn), complex)
    for si, wi in zip(s, w):
        IB += wi * _lambda_node_terms(ctx, si)[0]
    I0, tab0, mem0 = _window_lambda(ctx, 0.0, plan.groups0, plan.h, plan.delta_seq, plan.panel_order,
                                    plan.window_panels)
    Ipi, tabpi, mempi = _window_lambda(ctx, np.pi, plan.groups_pi, plan.h, plan.delta_seq, plan.panel_order,
                                       plan.window_panels)
    rec = IB + I0 + Ipi
    fx = f(ctx.x_user)
    resid, rms = _residuals(fx, rec)
    pv = _pv_summary(tab0, mem0, tabpi, mempi)
    _check_cauchy(pv, cauchy_tol)
    _, _, _, (Fp, Fm) = _lambda_node_terms(ctx, np.pi / 2)
    cfg = _config(f, q, plan, n_max, ctx)
    cfg["p_branch_signs"] = branches
    return ExpansionReport(
        "lambda-domain", ctx.x_user, fx, rec, resid, rms,
        {"sigma_minus_gamma_h": IB, "gamma_0": I0, "gamma_pi": Ipi}, pv,
        {"groups0": [list(g) for g in plan.groups0], "groups_pi": [list(g) for g in plan.groups_pi],
         "records": [r.to_json() for r in ctx.records]},
        n_max, cfg, F_plus=Fp, F_minus=Fm)


# ---------------------------------------------------------------------------
# Parseval


def parseval_check(f: TestFunction, q: PeriodicPotential, n_max: int = N_MAX_DEFAULT, K: int | None = None,
                   t_panels: int = 8, order: int = PANEL_ORDER, grid_size: int | None = None):
    """|int |f|^2 dx - (1/2pi) int sum_n |a_n(t)|^2 dt| / int |f|^2 dx (normalized x).

    Returns (relative residual, lhs, rhs).
    """
    if not q.is_self_adjoint:
        raise ValueError("Parseval check needs a real (self-adjoint) potential")
    ctx = _Context(f, q, GroupingPlan(), n_max, [0.0], K, grid_size)
    # lhs on a fine grid over the support (normalized units)
    lo, hi = f.support[0] / ctx.period, f.support[1] / ctx.period
    xs = np.linspace(lo, hi, 20001)
    lhs = float(np.trapezoid(np.abs(f(xs * ctx.period)) ** 2, xs))
    br = np.linspace(-np.pi, np.pi, 2 * t_panels + 1)
    s, w, _ = gauss_panels(br, order)
    rhs = 0.0
    for t, wt in zip(s, w):
        lams = ctx.spectrum(t)[:n_max]
        tr = eigen_triples(q, t, lams, ctx.N)
        ft = ctx.trans.f_t(t)
        a = np.array([np.mean(ft[:-1] * np.conj(T.x_elem[:-1])) for T in tr])
        rhs += wt * float(np.sum(np.abs(a) ** 2))
    rhs /= 2 * np.pi
    return abs(lhs - rhs) / lhs, lhs, rhs


def bloch_norm_identity(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None):
    """(int_0^1 Phi_t Phi_{-t} dx, 2 sin t phi(1) dt/dlam) in internal units; they should agree."""
    if grid_size is None:
        grid_size = grid_size_for(q, abs(lam) + 1)
    Y = fundsol.solve_batch(q, [lam], grid_size)[0]
    th1, ph1 = Y[-1, 0, 0], Y[-1, 0, 1]
    Pp = ph1 * Y[:, 0, 0] + (np.exp(1j * t) - th1) * Y[:, 0, 1]
    Pm = ph1 * Y[:, 0, 0] + (np.exp(-1j * t) - th1) * Y[:, 0, 1]
    lhs = np.mean(Pp[:-1] * Pm[:-1])
    _, dF, _ = hill.discriminant_derivatives(q, lam, grid_size)
    dlam_dt = -2 * np.sin(t) / dF[0] * q.scale  # internal units
    return complex(lhs), complex(2 * np.sin(t) * ph1 / dlam_dt)

