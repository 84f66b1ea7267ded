"""Spectral singularities, essential spectral singularities and spectrality tests.

A spectral singularity is a point where the norming constant alpha_n(t) vanishes.
At a coalescence t0 in {0, pi} the local order gamma of |alpha_n(t)| ~ c|t - t0|^gamma
decides integrability of 1/alpha_n: gamma >= 1 is an essential spectral
singularity (ESS), 0 < gamma < 1 is integrable.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import hill
from .floquet import DegenerateFormulaError, eigen_triples
from .fundsol import grid_size_for
from .potential import PeriodicPotential, optical

log = logging.getLogger(__name__)

FIT_WINDOW = (1e-5, 1e-2)
FIT_SAMPLES = 13
FIT_RESIDUAL_MAX = 0.1
ESS_GAMMA = 0.9
REGULAR_GAMMA = 0.1
ALPHA_ZERO = 1e-4
TINY_SPLIT = 1e-15
COALESCE_REL = 1e-5


@dataclass
class ESSRecord:
    t0: float
    Lambda: complex
    member_set: tuple
    exponent: float
    verdict: str
    fit_diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["Lambda"] = [self.Lambda.real, self.Lambda.imag]
        d["member_set"] = list(self.member_set)
        return d


@dataclass
class SingularPoint:
    n: int
    t: float
    lam: complex
    alpha_abs: float


@dataclass
class InfinityProbe:
    k_s: list
    I_s: list
    integrals: list
    trend: str
    growth_ratios: list


@dataclass
class SpectralityVerdict:
    a: complex
    b: complex
    alpha_arg: float
    modulus_equal: bool
    condition5_infimum: float
    rational_certificate: bool | None
    verdict: str
    N_search: int
    caveat: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        d["a"] = [complex(self.a).real, complex(self.a).imag]
        d["b"] = [complex(self.b).real, complex(self.b).imag]
        return d


# ---------------------------------------------------------------------------
# local order


def fit_local_order(s, alpha_abs):
    """Least-squares fit of log|alpha| = gamma log s + c.

    Returns (gamma, c, rms residual of the natural-log fit).
    """
    ls = np.log(np.asarray(s, float))
    la = np.log(np.asarray(alpha_abs, float))
    A = np.vstack([ls, np.ones_like(ls)]).T
    (g, c), *_ = np.linalg.lstsq(A, la, rcond=None)
    res = float(np.sqrt(np.mean((A @ [g, c] - la) ** 2)))
    return float(g), float(c), res


def _grid_for(q, t0, count, extra=4):
    """Grid that covers every Newton seed bloch_spectrum will use for ``count`` roots."""
    gal = hill.galerkin_eigenvalues(q, t0, max(25, count + extra + 10))
    return grid_size_for(q, 1.2 * float(np.abs(gal[: count + extra]).max()) + 1)


def _offset_t(t0, s):
    # stay inside (-pi, pi]
    return t0 - s if np.isclose(t0, np.pi) else t0 + s


def group_model(q, t0, group, grid_size, lam0=None):
    """Taylor model of F at the coalescence of a two-member group, or None."""
    if len(group) != 2:
        return None
    if lam0 is None:
        sp = hill.bloch_spectrum(q, t0, max(group) + 2, grid_size)
        lam0 = np.mean(sp.lambdas[np.array(group) - 1])
    return hill.LocalDiscriminantModel.build(q, lam0, t0, grid_size)


def group_spectrum(q, t, count, grid_size, model=None, members=None):
    """Bloch eigenvalues at t (magnitude order) with ESS-group members from the model.

    Near a coalescence the pair is ill-conditioned as roots of the sampled F;
    the model roots are smooth in t and replace the two closest Newton roots.
    """
    lams = hill.bloch_spectrum(q, t, count, grid_size, min_split=TINY_SPLIT).lambdas.copy()
    if model is not None:
        r = model.roots(t)
        lams = hill.with_model_pair(lams, r)
    return lams


def group_alphas(q, t0, group, offsets, grid_size=None, model=None):
    """|alpha_n(t0 +- s)| for each s in offsets and each member n (1-based labels)."""
    group = list(group)
    count = max(group) + 2
    if grid_size is None:
        grid_size = _grid_for(q, t0, count)
    out = np.empty((len(offsets), len(group)))
    for i, s in enumerate(offsets):
        t = _offset_t(t0, s)
        if model is not None:
            # inside the fit window both members are roots of the local model
            members = model.roots(t)
        else:
            members = group_spectrum(q, t, count, grid_size)[np.array(group) - 1]
        tr = eigen_triples(q, t, members, grid_size, allow_underflow=True)
        out[i] = [abs(T.alpha) for T in tr]
    return out


def classify_ess(q: PeriodicPotential, t0: float, group, window=FIT_WINDOW, samples: int = FIT_SAMPLES,
                 grid_size: int | None = None, members=None) -> ESSRecord:
    """Fit the local order of |alpha_n| for each member of a coalescing group.

    ``members`` (eigenvalues at t0) skips the spectrum solve when already known.
    """
    group = tuple(sorted(int(g) for g in group))
    count = max(group) + 2
    if members is None:
        if grid_size is None:
            grid_size = _grid_for(q, t0, count)
        sp = hill.bloch_spectrum(q, t0, count, grid_size)
        members = sp.lambdas[np.array(group) - 1]
    members = np.asarray(members)
    Lambda = complex(np.mean(members))
    if grid_size is None:
        grid_size = grid_size_for(q, 1.2 * abs(Lambda) + 1)
    model = group_model(q, t0, group, grid_size, Lambda)
    s = np.geomspace(window[0], window[1], samples)
    A = group_alphas(q, t0, group, s, grid_size, model)
    fits = [fit_local_order(s, A[:, j]) for j in range(len(group))]
    gammas = [f[0] for f in fits]
    resid = max(f[2] for f in fits)
    gamma = max(gammas)
    if resid > FIT_RESIDUAL_MAX:
        verdict = "inconclusive"
    elif gamma >= ESS_GAMMA:
        verdict = "ESS"
    elif gamma >= REGULAR_GAMMA:
        verdict = "integrable-singularity"
    else:
        verdict = "regular"
    diag = {"window": list(window), "samples": samples, "gammas": gammas, "log_residual": resid,
            "alpha_at_window_min": A[0].tolist(), "grid_size": grid_size,
            "member_spread": float(np.ptp(np.abs(members - Lambda)))}
    return ESSRecord(float(t0), Lambda, group, float(gamma), verdict, diag)


def coalescing_groups(q: PeriodicPotential, t0: float, n_max: int, grid_size: int | None = None,
                      rel_tol: float = COALESCE_REL):
    """Adjacent labels <= n_max whose eigenvalues at t0 agree within rel_tol (1 + |lam|).

    The tolerance is loose on purpose: at an exceptional point the computed pair
    is split by O(sqrt(eps)); classification decides what the group is.
    """
    return _coalescences(q, t0, n_max, grid_size, rel_tol)[0]


def _coalescences(q, t0, n_max, grid_size, rel_tol=COALESCE_REL):
    lam = hill.bloch_spectrum(q, t0, n_max + 2, grid_size).lambdas
    groups = []
    i = 0
    while i < n_max:
        if abs(lam[i] - lam[i + 1]) < rel_tol * (1 + abs(lam[i])):
            groups.append((i + 1, i + 2))
            i += 2
        else:
            i += 1
    return groups, lam


def ess_groups(q: PeriodicPotential, n_max: int, grid_size: int | None = None):
    """ESSRecords for every coalescence among bands <= n_max at t0 = 0 and pi."""
    records = []
    if grid_size is None:
        grid_size = max(_grid_for(q, 0.0, n_max + 2), _grid_for(q, np.pi, n_max + 2))
    for t0 in (0.0, np.pi):
        groups, lam = _coalescences(q, t0, n_max, grid_size)
        for g in groups:
            members = lam[np.array(g) - 1]
            if q.is_self_adjoint:
                records.append(ESSRecord(t0, complex(np.mean(members)), g, 0.0, "regular",
                                         {"reason": "self-adjoint"}))
                continue
            records.append(classify_ess(q, t0, g, members=members))
    return records


def projection_norm_exponent(q, t0, group, window=FIT_WINDOW, samples=FIT_SAMPLES, grid_size=None):
    """Fitted divergence rate of 1/|alpha| (projection norm) for each member."""
    group = tuple(group)
    s = np.geomspace(window[0], window[1], samples)
    grid_size = grid_size or _grid_for(q, t0, max(group) + 2)
    model = group_model(q, t0, group, grid_size)
    A = group_alphas(q, t0, group, s, grid_size, model)
    return [-fit_local_order(s, 1.0 / A[:, j])[0] for j in range(len(group))]


# ---------------------------------------------------------------------------
# singularity search


def _abs_alpha_row(q, t_grid, lams, grid_size):
    """|alpha| along one band trace.

    At a semisimple double eigenvalue (monodromy = e^{it} I) the closed-form
    eigenfunction does not exist and the projection is rank two and bounded;
    such nodes take the value interpolated from their neighbours.
    """
    a = np.full(len(t_grid), np.nan)
    for j, (t, l) in enumerate(zip(t_grid, lams)):
        try:
            a[j] = abs(eigen_triples(q, t, [l], grid_size, allow_underflow=True)[0].alpha)
        except DegenerateFormulaError:
            log.info("semisimple double eigenvalue at t=%s, lam=%s", t, l)
    bad = np.isnan(a)
    if bad.all():
        raise DegenerateFormulaError("every node of the band is degenerate")
    if bad.any():
        a[bad] = np.interp(t_grid[bad], t_grid[~bad], a[~bad])
    return a


def _alpha_at(q, t, lam_guess, grid_size):
    lam = hill.refine_root(q, t, lam_guess, grid_size)
    return abs(eigen_triples(q, t, [lam], grid_size, allow_underflow=True)[0].alpha), lam


def find_spectral_singularities(q: PeriodicPotential, n_max: int, t_grid=None, threshold: float = ALPHA_ZERO,
                                bands=None, grid_size: int | None = None, xtol: float = 1e-8) -> list[SingularPoint]:
    """Local minima of |alpha_n(t)| below threshold, refined in t.

    Real potentials short-circuit to an empty list since alpha = 1 identically.
    """
    if q.is_self_adjoint:
        return []
    if bands is None:
        if t_grid is None:
            t_grid = hill.default_t_grid(256, 4)
        bands = hill.trace_bands(q, n_max, t_grid, grid_size=grid_size)
    t_grid = bands[0].t_grid
    if grid_size is None:
        grid_size = grid_size_for(q, max(float(np.abs(b.lambdas).max()) for b in bands) + 1)
    L = np.array([b.lambdas for b in bands])  # (n, T)
    A = np.array([_abs_alpha_row(q, t_grid, L[n], grid_size) for n in range(len(bands))])
    out = []
    for n in range(len(bands)):
        a = A[n]
        for j in range(len(t_grid)):
            lo, hi = max(j - 1, 0), min(j + 1, len(t_grid) - 1)
            if a[j] >= threshold or a[j] > a[lo] or a[j] > a[hi]:
                continue
            if j > 0 and a[j - 1] == a[j]:
                continue
            if lo == j or hi == j:
                t_best, val, lam = t_grid[j], a[j], L[n, j]
            else:
                def f(t):
                    lam_guess = np.interp(t, t_grid[lo:hi + 1], L[n, lo:hi + 1].real) + 1j * np.interp(
                        t, t_grid[lo:hi + 1], L[n, lo:hi + 1].imag)
                    return _alpha_at(q, t, lam_guess, grid_size)[0]
                res = minimize_scalar(f, bounds=(t_grid[lo], t_grid[hi]), method="bounded",
                                      options={"xatol": xtol})
                t_best, val = float(res.x), float(res.fun)
                if a[j] < val:
                    t_best, val = float(t_grid[j]), float(a[j])
                lam = L[n, j]
            out.append(SingularPoint(n + 1, float(t_best), complex(lam), float(val)))
    return out


# ---------------------------------------------------------------------------
# ESS at infinity


def ess_at_infinity_probe(q: PeriodicPotential, band_range, collision_margin: float = 0.05, t_grid=None,
                          near_singular: float = 1e-2, grid_size: int | None = None) -> InfinityProbe:
    """Integrals of 1/|alpha_k| over the t-grid minus neighborhoods of near-singular points."""
    band_range = list(band_range)
    if t_grid is None:
        t_grid = hill.default_t_grid(256, 1)
    t_grid = np.asarray(t_grid, float)
    n_max = max(band_range)
    bands = hill.trace_bands(q, n_max, t_grid, grid_size=grid_size)
    if grid_size is None:
        grid_size = grid_size_for(q, max(float(np.abs(b.lambdas).max()) for b in bands) + 1)
    ints, sets = [], []
    for k in band_range:
        a = _abs_alpha_row(q, t_grid, bands[k - 1].lambdas, grid_size)
        bad = t_grid[a < near_singular]
        keep = np.ones(len(t_grid), bool)
        for tb in bad:
            d = np.abs(np.angle(np.exp(1j * (t_grid - tb))))
            keep &= d > collision_margin
        # periodic trapezoid: segment weights between consecutive nodes, wrapping pi -> -pi
        tt = np.append(t_grid, t_grid[0] + 2 * np.pi)
        vals = np.append(1.0 / a, 1.0 / a[0])
        kk = np.append(keep, keep[0])
        seg = np.diff(tt)
        use = kk[:-1] & kk[1:]
        ints.append(float(np.sum(0.5 * seg[use] * (vals[:-1][use] + vals[1:][use]))))
        sets.append(f"(-pi, pi] minus {len(bad)} point(s) +- {collision_margin}")
    ratios = [ints[i + 1] / ints[i] for i in range(len(ints) - 1)]
    last = ratios[-2:]
    if len(last) == 2 and all(r >= 2 for r in last):
        trend = "diverging"
    elif len(ints) >= 3 and np.ptp(ints[-3:]) <= 0.1 * np.mean(ints[-3:]):
        trend = "bounded"
    else:
        trend = "inconclusive"
    return InfinityProbe(band_range, sets, ints, trend, ratios)


# ---------------------------------------------------------------------------
# critical couplings of the optical potential


def _pair_gap2(V, t0, truncation, pairs):
    """Re (lam_{i+1} - lam_i)^2 for neighbours in (Re, Im) order, and a mask of genuine pairs.

    A pair is genuine when both members are real or they are complex conjugates;
    mixed neighbours (members of different conjugate pairs) carry no collision
    information and are masked out.
    """
    lam = hill.galerkin_eigenvalues(optical(V), t0, truncation)[: pairs + 2]
    lam = lam[np.lexsort((lam.imag, lam.real))][: pairs + 1]
    tol = 1e-8 * (1 + np.abs(lam))
    real = np.abs(lam.imag) < tol
    both_real = real[1:] & real[:-1]
    conj = np.abs(lam[1:] - np.conj(lam[:-1])) < tol[1:]
    return ((lam[1:] - lam[:-1]) ** 2).real, lam, both_real | conj


def _model_gap2(V, lam0, t0, grid_size):
    m = hill.LocalDiscriminantModel.build(optical(V), lam0, t0, grid_size)
    return m.gap_squared().real


def refine_critical_V(V_lo: float, V_hi: float, lam0: complex, t0: float = 0.0,
                      grid_size: int | None = None) -> float:
    """Root of the F-based gap^2 of the pair near lam0, to full double precision."""
    if grid_size is None:
        grid_size = grid_size_for(optical(V_hi), abs(lam0) + 1)
    f = lambda V: _model_gap2(V, lam0, t0, grid_size)  # noqa: E731
    return float(brentq(f, V_lo, V_hi, xtol=1e-16, rtol=8.9e-16))


def critical_V(search_interval=(0.3, 1.0), pair_hint: int | None = None, t0: float = 0.0,
               scan_step: float = 0.005, truncation: int = 40, pairs: int = 8,
               grid_size: int | None = None, tol: float = 1e-6, dedupe: float = 1e-5) -> list[float]:
    """Couplings V where two eigenvalues of optical(V) at t0 coalesce.

    A coarse Galerkin scan of gap^2 for adjacent pairs (sorted by Re, Im) finds
    sign changes, refined first on the Galerkin gap^2 and then on the F-based
    gap^2; touching zeros (no sign change) are refined by bounded minimization.
    ``pair_hint`` restricts to the pair (hint, hint + 1) in that order.
    """
    lo, hi = search_interval
    if not (0 <= lo < hi):
        raise ValueError("search interval must satisfy 0 <= lo < hi")
    n = max(3, int(np.ceil((hi - lo) / scan_step)) + 1)
    Vs = np.linspace(lo, hi, n)
    scan = [_pair_gap2(V, t0, truncation, pairs) for V in Vs]
    G = np.array([s[0] for s in scan])
    ok = np.array([s[2] for s in scan])
    lam_abs = np.array([np.abs(s[1][:-1]) for s in scan])
    floor = 1e-8 * (1 + lam_abs**2)  # below this, gap^2 is rounding noise
    idx = range(G.shape[1]) if pair_hint is None else [pair_hint - 1]
    found = []
    for i in idx:
        g = G[:, i]
        scale = lambda V: 1.0 + abs(_pair_gap2(V, t0, truncation, pairs)[1][i]) ** 2  # noqa: E731
        for j in range(n - 1):
            if g[j] == 0:
                found.append(Vs[j])
            elif (g[j] * g[j + 1] < 0 and ok[j, i] and ok[j + 1, i]
                  and abs(g[j]) > floor[j, i] and abs(g[j + 1]) > floor[j + 1, i]):
                f = lambda V: _pair_gap2(V, t0, truncation, pairs)[0][i]  # noqa: E731
                Vr = brentq(f, Vs[j], Vs[j + 1], xtol=1e-12)
                lam0 = np.mean(_pair_gap2(Vr, t0, truncation, pairs)[1][i:i + 2])
                try:
                    a, b = max(lo, Vr - 1e-6), min(hi, Vr + 1e-6)
                    if _model_gap2(a, lam0, t0, grid_size) * _model_gap2(b, lam0, t0, grid_size) < 0:
                        Vr = refine_critical_V(a, b, lam0, t0, grid_size)
                except (ValueError, ArithmeticError) as exc:  # keep the Galerkin root
                    log.info("F-based refinement skipped at V=%s: %s", Vr, exc)
                found.append(float(Vr))
        # touching zeros: interior local minima of |gap^2| without a sign change
        ag = np.abs(g)
        for j in range(1, n - 1):
            if not ok[j - 1:j + 2, i].all():
                continue
            if ag[j - 1] < 100 * floor[j - 1, i] or ag[j + 1] < 100 * floor[j + 1, i]:
                continue
            if ag[j] <= ag[j - 1] and ag[j] <= ag[j + 1] and g[j - 1] * g[j + 1] > 0:
                f = lambda V: abs(_pair_gap2(V, t0, truncation, pairs)[0][i])  # noqa: E731
                res = minimize_scalar(f, bounds=(Vs[j - 1], Vs[j + 1]), method="bounded",
                                      options={"xatol": tol * 1e-2})
                if res.fun < 1e-10 * scale(res.x):
                    found.append(float(res.x))
    found.sort()
    out = []
    for V in found:
        if not out or abs(V - out[-1]) > dedupe:
            out.append(V)
    return out


# ---------------------------------------------------------------------------
# Mathieu spectrality


def condition5_infimum(alpha: float, N_search: int) -> float:
    """min over 1 <= q, p <= N_search of |q alpha - (2p - 1)|."""
    q = np.arange(1, N_search + 1)
    qa = q * abs(alpha)
    p = np.clip(np.round((qa + 1) / 2), 1, N_search)
    best = np.abs(qa - (2 * p - 1))
    return float(best.min())


def mathieu_spectrality(a: complex, b: complex, exact_alpha: Fraction | None = None, N_search: int = 1000,
                        zero_tol: float = 1e-9, modulus_tol: float = 1e-12) -> SpectralityVerdict:
    """Verdict for q = a e^{i2pi x} + b e^{-i2pi x} from |a|, |b| and alpha = arg(ab) / pi.

    The infimum inf |q alpha - (2p - 1)| is symmetric under alpha -> -alpha, so |alpha| is used.
    """
    if N_search < 1:
        raise ValueError("N_search must be >= 1")
    a, b = complex(a), complex(b)
    alpha = float(np.angle(a * b) / np.pi)
    mod_eq = abs(abs(a) - abs(b)) <= modulus_tol * max(1.0, abs(a), abs(b))
    cert = None
    if exact_alpha is not None:
        exact_alpha = Fraction(exact_alpha)
        if abs(abs(float(exact_alpha)) - abs(alpha)) > 1e-9:
            raise ValueError(f"exact alpha {exact_alpha} inconsistent with arg(ab)/pi = {alpha}")
        cert = exact_alpha.numerator % 2 == 1
    inf = condition5_infimum(alpha, N_search)
    caveat = ""
    if not mod_eq:
        verdict = "not-spectral"
    elif cert:
        verdict = "not-asymptotically-spectral"
    elif cert is None and inf < zero_tol:
        verdict = "not-asymptotically-spectral"
        caveat = f"numeric infimum below {zero_tol:g} over q, p <= {N_search}"
    else:
        verdict = "asymptotically-spectral-candidate"
        if cert is None:
            caveat = f"positive infimum over q, p <= {N_search} is evidence, not proof"
    return SpectralityVerdict(a, b, alpha, bool(mod_eq), inf, cert, verdict, N_search, caveat)


# ---------------------------------------------------------------------------
# reports


def write_singularities_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "re_lambda", "im_lambda", "abs_alpha"])
        for p in points:
            w.writerow([p.n, repr(p.t), repr(p.lam.real), repr(p.lam.imag), repr(p.alpha_abs)])


def records_json(records) -> str:
    return json.dumps([r.to_json() for r in records], indent=2)
