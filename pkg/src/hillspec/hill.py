"""Hill discriminant, Bloch eigenvalues and band continuation.

Bloch eigenvalues at quasimomentum t are the roots of G(lam) = F(lam) - 2 cos t,
where F is the trace of the monodromy matrix.  Roots are found by Newton
iteration seeded from a Fourier-Galerkin truncation; seeds that collapse onto
one root are resolved with a local quadratic model of G around its critical
point, which handles both genuine double roots and nearly-coalesced pairs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import fundsol
from .fundsol import DEFAULT_GRID, grid_size_for
from .potential import PeriodicPotential

log = logging.getLogger(__name__)

ROOT_TOL = 1e-9
MERGE_REL = 1e-6
T_REF = 1.0


class MissedRootError(RuntimeError):
    pass


class ContinuationError(RuntimeError):
    def __init__(self, t_lo, t_hi, band):
        self.interval = (float(t_lo), float(t_hi))
        self.band = band
        super().__init__(f"continuation of band {band} failed on t in [{t_lo:.6g}, {t_hi:.6g}]")


def merge_tol(lam) -> float:
    return MERGE_REL * (1.0 + abs(lam))


def magnitude_order(lams) -> np.ndarray:
    """Sort indices by |lam|, ties (conjugate pairs) broken by Re then Im."""
    lams = np.asarray(lams, dtype=complex)
    return np.lexsort((lams.imag, np.round(lams.real, 8), np.round(np.abs(lams), 8)))


# ---------------------------------------------------------------------------
# discriminant


def discriminant(q: PeriodicPotential, lam, grid_size: int = DEFAULT_GRID):
    """F(lam) = theta(1, lam) + phi'(1, lam); vectorized over lam.

    The trace is divided by sqrt(det M).  RK4 damps the solution amplitude by the
    same factor that shows up as det M != 1; left in, it lifts a double root of
    F - 2cos t into a complex pair split by ~sqrt(drift / |F''|).
    """
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    M = fundsol.monodromy_batch(q, lam_arr.ravel(), grid_size)
    det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    F = ((M[:, 0, 0] + M[:, 1, 1]) / np.sqrt(det)).reshape(lam_arr.shape)
    return F if np.ndim(lam) else complex(F[0])


def discriminant_derivatives(q: PeriodicPotential, lam, grid_size: int = DEFAULT_GRID, rel_step: float = 1e-4):
    """F, F', F'' at each lam by a five-point central stencil."""
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    eps = rel_step * (1.0 + np.abs(lam))
    offsets = np.array([-2, -1, 0, 1, 2])
    pts = lam[:, None] + offsets[None, :] * eps[:, None]
    Fs = discriminant(q, pts, grid_size)
    F = Fs[:, 2]
    d1 = (Fs[:, 0] - 8 * Fs[:, 1] + 8 * Fs[:, 3] - Fs[:, 4]) / (12 * eps)
    d2 = (-Fs[:, 0] + 16 * Fs[:, 1] - 30 * Fs[:, 2] + 16 * Fs[:, 3] - Fs[:, 4]) / (12 * eps**2)
    return F, d1, d2


def p_function(q: PeriodicPotential, lam, branch: int = 1, grid_size: int = DEFAULT_GRID):
    """branch * principal sqrt(4 - F(lam)^2)."""
    F = discriminant(q, lam, grid_size)
    return branch * np.sqrt(4.0 - np.asarray(F) ** 2 + 0j)


# ---------------------------------------------------------------------------
# Galerkin oracle


def galerkin_matrix(q: PeriodicPotential, t: float, truncation: int) -> np.ndarray:
    """Internal-units operator in the basis e^{i(2 pi k + t)x}, |k| <= truncation."""
    k = np.arange(-truncation, truncation + 1)
    H = np.diag(((2 * np.pi * k + t) ** 2).astype(complex))
    dim = 2 * truncation + 1
    for m, c in q.coeffs.items():
        if abs(m) < dim:
            H += q.scale * c * np.eye(dim, k=-m)
    return H


def galerkin_eigenpairs(q: PeriodicPotential, t: float, truncation: int = 25):
    """Eigenvalues (original units, magnitude-sorted) and Fourier eigenvectors (columns)."""
    if truncation < q.max_harmonic:
        raise ValueError("truncation must be at least the largest harmonic of q")
    w, v = np.linalg.eig(galerkin_matrix(q, t, truncation))
    w = w / q.scale
    order = magnitude_order(w)
    return w[order], v[:, order]


def galerkin_eigenvalues(q: PeriodicPotential, t: float, truncation: int = 25) -> np.ndarray:
    if truncation < q.max_harmonic:
        raise ValueError("truncation must be at least the largest harmonic of q")
    w = np.linalg.eigvals(galerkin_matrix(q, t, truncation)) / q.scale
    return w[magnitude_order(w)]


# ---------------------------------------------------------------------------
# Newton on G


def _newton(q, target, lams, grid_size, max_iter=40):
    lams = np.array(lams, dtype=complex)
    active = np.ones(lams.shape, bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        lam = lams[idx]
        eps = 1e-6 * (1.0 + np.abs(lam))
        Fs = discriminant(q, np.stack([lam, lam + eps, lam - eps], axis=1), grid_size)
        G = Fs[:, 0] - target
        dG = (Fs[:, 1] - Fs[:, 2]) / (2 * eps)
        bad = dG == 0
        dG[bad] = 1.0
        step = np.where(bad, 0.0, G / dG)
        # damp wild steps
        big = np.abs(step) > 0.5 * (1.0 + np.abs(lam))
        step[big] *= 0.5 * (1.0 + np.abs(lam[big])) / np.abs(step[big])
        lams[idx] = lam - step
        done = np.abs(step) <= 1e-14 * (1.0 + np.abs(lam))
        active[idx[done]] = False
    return lams


def _resolve_pair(q, target, lam0, grid_size, min_split=None):
    """Two roots of G near lam0 from the quadratic model about the critical point of G.

    The pair is reported as one double root when the split is below ``min_split``
    (default half the merge tolerance).
    """
    lc = complex(lam0)
    for _ in range(30):
        _, d1, d2 = discriminant_derivatives(q, lc, grid_size)
        if d2[0] == 0:
            break
        step = d1[0] / d2[0]
        lc -= step
        if abs(step) < 1e-13 * (1 + abs(lc)):
            break
    F, d1, d2 = discriminant_derivatives(q, lc, grid_size)
    G = F[0] - target
    disc = -2.0 * G / d2[0]
    sq = np.sqrt(disc)
    if min_split is None:
        min_split = 0.5 * merge_tol(lc)
    if abs(sq) <= min_split:
        return [lc, lc], 2
    roots = _newton(q, target, [lc + sq, lc - sq], grid_size, max_iter=20)
    if abs(roots[0] - roots[1]) <= min_split:
        return [lc, lc], 2
    return list(roots), 1


@dataclass
class BlochSpectrum:
    t: float
    lambdas: np.ndarray
    multiplicity: np.ndarray
    residuals: np.ndarray
    grid_size: int


def bloch_spectrum(q: PeriodicPotential, t: float, count: int, grid_size: int | None = None,
                   root_tol: float = ROOT_TOL, extra: int = 4, min_split: float | None = None) -> BlochSpectrum:
    """The ``count`` Bloch eigenvalues of smallest magnitude at quasimomentum t.

    ``min_split`` controls when a nearly double root is reported as double; pass a
    tiny value to keep resolving pairs very close to an exceptional point.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    ntrunc = max(25, count + extra + 10 + q.max_harmonic)
    gal = galerkin_eigenvalues(q, t, ntrunc)
    seeds = gal[: count + extra]
    if grid_size is None:
        grid_size = grid_size_for(q, float(np.abs(seeds).max()))
    target = 2.0 * np.cos(t)
    roots = _newton(q, target, seeds, grid_size)

    # collapse seeds that landed on the same root
    found: list[complex] = []
    mult: list[int] = []
    order = np.argsort(np.abs(roots))
    used = np.zeros(len(roots), bool)
    for i in order:
        if used[i]:
            continue
        close = [j for j in range(len(roots)) if not used[j] and abs(roots[j] - roots[i]) < merge_tol(roots[i])]
        for j in close:
            used[j] = True
        if len(close) == 1:
            found.append(roots[i])
            mult.append(1)
        else:
            pair, m = _resolve_pair(q, target, roots[i], grid_size, min_split)
            if m == 2:
                found.append(pair[0])
                mult.append(2)
            else:
                found.extend(pair)
                mult.extend([1, 1])

    # seeds with no root nearby: deflated Newton
    lam_list = np.repeat(np.array(found), mult)
    for s in seeds:
        if np.min(np.abs(lam_list - s)) > 1e-3 * (1 + abs(s)):
            r = _deflated_newton(q, target, s, lam_list, grid_size)
            if r is not None and np.min(np.abs(lam_list - r)) > merge_tol(r):
                found.append(r)
                mult.append(1)
                lam_list = np.repeat(np.array(found), mult)

    lam_all = np.array(found, dtype=complex)
    mult_all = np.array(mult)
    o = magnitude_order(lam_all)
    lam_all, mult_all = lam_all[o], mult_all[o]
    expanded = np.repeat(lam_all, mult_all)[:count]
    mults = np.repeat(mult_all, mult_all)[:count]

    mags = np.sort(np.abs(np.repeat(lam_all, mult_all)))
    R = mags[min(count, len(mags)) - 1]
    # count inside a radius midway to the next root beyond the cluster at R, so a
    # narrow gap is not straddled and a near-double root is not split
    k = min(count, len(mags))
    while k < len(mags) and mags[k] <= R * (1 + 1e-7) + 1e-9:
        k += 1
    R_cut = 0.5 * (mags[k - 1] + mags[k]) if k < len(mags) else mags[-1] * (1 + 1e-7) + 1e-9
    n_gal = int(np.sum(np.abs(gal) <= R_cut))
    n_new = int(np.sum(mags <= R_cut))
    if n_gal != n_new:
        raise MissedRootError(
            f"t={t}: {n_new} roots of F - 2cos t in |lam| <= {R:.6g} but Galerkin finds {n_gal}"
        )
    residuals = np.abs(discriminant(q, expanded, grid_size) - target)
    simple = mults == 1
    if np.any(residuals[simple] > root_tol):
        raise MissedRootError(f"t={t}: root residual {residuals.max():.3e} above tolerance")
    return BlochSpectrum(float(t), expanded, mults, residuals, grid_size)


def _deflated_newton(q, target, seed, known, grid_size, max_iter=60):
    lam = complex(seed)
    for _ in range(max_iter):
        eps = 1e-6 * (1 + abs(lam))
        Fs = discriminant(q, np.array([lam, lam + eps, lam - eps]), grid_size)
        G = Fs[0] - target
        dG = (Fs[1] - Fs[2]) / (2 * eps)
        d = lam - known
        if np.any(d == 0):
            return None
        # Newton on G / prod(lam - r)
        corr = dG / G - np.sum(1.0 / d) if G != 0 else np.inf
        if not np.isfinite(corr) or corr == 0:
            break
        step = 1.0 / corr
        lam -= step
        if abs(step) < 1e-14 * (1 + abs(lam)):
            break
    if abs(discriminant(q, lam, grid_size) - target) > ROOT_TOL:
        return None
    return lam


def bloch_eigenvalues(q: PeriodicPotential, t: float, count: int, grid_size: int | None = None) -> np.ndarray:
    """Smallest-magnitude Bloch eigenvalues at t, repeated according to multiplicity."""
    return bloch_spectrum(q, t, count, grid_size).lambdas


def refine_root(q: PeriodicPotential, t: float, lam: complex, grid_size: int) -> complex:
    """Newton-polish a single Bloch eigenvalue at t starting from lam."""
    return complex(_newton(q, 2.0 * np.cos(t), [lam], grid_size)[0])


# ---------------------------------------------------------------------------
# bands


@dataclass
class BlochBand:
    n: int
    t_grid: np.ndarray
    lambdas: np.ndarray
    residuals: np.ndarray
    collision_flags: np.ndarray
    sorted_rank: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.t_grid)


def default_t_grid(points: int = 512, refine: int = 8, window: float = 0.1) -> np.ndarray:
    """Uniform grid on (-pi, pi] refined ``refine``-fold within ``window`` of 0 and +-pi."""
    base = -np.pi + 2 * np.pi * np.arange(1, points + 1) / points
    dt = 2 * np.pi / points
    fine = dt / refine
    extra = [np.arange(-window, window + fine / 2, fine)]
    extra.append(np.arange(np.pi - window, np.pi + fine / 2, fine))
    extra.append(-np.pi + np.arange(fine, window + fine / 2, fine))
    t = np.unique(np.round(np.concatenate([base] + extra), 12))
    return t[(t > -np.pi) & (t <= np.pi)]


def _lipschitz(q: PeriodicPotential, lam) -> float:
    # |d lam / dt| for nearly free bands is 2 sqrt(scale |lam|) / scale
    return 4.0 * (np.sqrt(q.scale * abs(lam)) + 2 * np.pi) / q.scale + 1.0


def trace_bands(q: PeriodicPotential, n_max: int, t_grid, t_ref: float = T_REF,
                grid_size: int | None = None, extra: int = 4, min_dt: float = 1e-7) -> list[BlochBand]:
    """Continue bands 1..n_max (labels from |lam| order at t_ref) over t_grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing")
    if t_grid[0] <= -np.pi - 1e-12 or t_grid[-1] > np.pi + 1e-12:
        raise ValueError("t_grid must lie in (-pi, pi]")
    count = n_max + extra
    if grid_size is None:
        # bloch_spectrum seeds ``extra`` roots beyond the count it is asked for
        seeds = galerkin_eigenvalues(q, np.pi, max(25, count + extra + 10))[:count + extra]
        grid_size = grid_size_for(q, float(np.abs(seeds).max()) * 1.2)

    cache: dict[float, BlochSpectrum] = {}

    def spec(t):
        if t not in cache:
            cache[t] = bloch_spectrum(q, t, count, grid_size)
        return cache[t]

    start = spec(t_ref).lambdas[:n_max].copy()
    out_l = np.empty((len(t_grid), n_max), complex)
    out_flag = np.zeros((len(t_grid), n_max), bool)

    def walk(targets):
        prev_t, prev_l, prev_slope = t_ref, start.copy(), np.zeros(n_max, complex)
        res = []
        for tt in targets:
            pending = [tt]
            while pending:
                tn = pending[-1]
                dt = tn - prev_t
                cand = spec(tn).lambdas
                pred = prev_l + prev_slope * dt
                cost = np.abs(pred[:, None] - cand[None, :])
                rows, cols = linear_sum_assignment(cost)
                new = cand[cols[np.argsort(rows)]]
                jump = np.abs(new - prev_l)
                thresh = np.array([_lipschitz(q, l) for l in prev_l]) * abs(dt) + 10 * np.array(
                    [merge_tol(l) for l in prev_l])
                flags = np.zeros(n_max, bool)
                for i in range(n_max):
                    others = np.delete(cand, cols[np.argsort(rows)][i])
                    if np.min(np.abs(others - new[i])) < max(merge_tol(new[i]), 1e-3 * (1 + abs(new[i]))):
                        flags[i] = True
                viol = jump > thresh
                if viol.any() and abs(dt) > min_dt:
                    pending.append(prev_t + dt / 2)
                    continue
                if viol.any():
                    # bottomed out: only acceptable at a branch point where bands meet
                    for i in np.flatnonzero(viol):
                        others = np.delete(cand, cols[np.argsort(rows)][i])
                        if np.min(np.abs(others - new[i])) > 2 * jump[i]:
                            raise ContinuationError(min(prev_t, tn), max(prev_t, tn), i + 1)
                        flags[i] = True
                prev_slope = (new - prev_l) / dt if dt != 0 else prev_slope
                prev_t, prev_l = tn, new
                pending.pop()
                if tn == tt:
                    res.append((new, flags))
        return res

    right = [i for i, t in enumerate(t_grid) if t >= t_ref]
    left = [i for i, t in enumerate(t_grid) if t < t_ref][::-1]
    for idxs in (right, left):
        for i, (l, f) in zip(idxs, walk([t_grid[i] for i in idxs])):
            out_l[i], out_flag[i] = l, f

    bands = []
    for n in range(n_max):
        ranks = np.empty(len(t_grid), int)
        resid = np.empty(len(t_grid))
        for i, t in enumerate(t_grid):
            sp = spec(t)
            j = int(np.argmin(np.abs(sp.lambdas - out_l[i, n])))
            ranks[i] = j + 1
            resid[i] = sp.residuals[j]
        bands.append(BlochBand(n + 1, t_grid.copy(), out_l[:, n] / 1.0, resid, out_flag[:, n], ranks))
    return bands


def band_trace(q: PeriodicPotential, n: int, t_grid, **kw) -> BlochBand:
    """Band n (1-based label by |lam| at t_ref) continued over t_grid."""
    return trace_bands(q, n, t_grid, **kw)[n - 1]


def write_bands_csv(bands, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "re_lambda", "im_lambda", "residual", "collision_flag"])
        for b in bands:
            for t, l, r, f in zip(b.t_grid, b.lambdas, b.residuals, b.collision_flags):
                w.writerow([b.n, repr(float(t)), repr(float(l.real)), repr(float(l.imag)), repr(float(r)), int(f)])


# ---------------------------------------------------------------------------
# local model near a coalescence


def with_model_pair(lams, pair):
    """Replace the two roots nearest ``pair`` by it, in magnitude order.

    The pair keeps the model's branch order within its two slots: near an
    exact conjugate pair |lam_1| = |lam_2| up to rounding, and re-sorting by
    magnitude would swap the labels from one t to the next.
    """
    lams = np.array(lams, dtype=complex)
    idx = [int(np.argmin(np.abs(lams - r))) for r in pair]
    if len(set(idx)) != 2:
        return lams[magnitude_order(lams)]
    lams[idx] = pair
    lams = lams[magnitude_order(lams)]
    slots = sorted(int(np.argmin(np.abs(lams - r))) for r in pair)
    lams[slots] = pair
    return lams


@dataclass(frozen=True)
class LocalDiscriminantModel:
    """Taylor polynomial of F about its critical point lam_c (original units).

    Near a double root of F = +-2 the two Bloch eigenvalues are ill-conditioned
    as roots of the sampled F (errors ~ sqrt(eps)), but they are smooth functions
    of t as roots of this fixed polynomial.  Coefficients come from a contour
    FFT, which keeps their noise at eps / radius^k.
    """

    lam_c: complex
    coeffs: np.ndarray  # F(lam_c + u) = sum_k coeffs[k] u^k
    radius: float
    t0: float

    @classmethod
    def build(cls, q: PeriodicPotential, lam0: complex, t0: float, grid_size: int | None = None,
              radius: float | None = None, points: int = 32, order: int = 10) -> "LocalDiscriminantModel":
        if grid_size is None:
            grid_size = grid_size_for(q, abs(lam0) + 1.0)
        if radius is None:
            radius = 0.05 * (1.0 + abs(lam0))
        lc = complex(lam0)
        for _ in range(4):
            c = _taylor(q, lc, radius, points, order, grid_size)
            d = np.polynomial.polynomial.polyder(c)
            crit = np.polynomial.polynomial.polyroots(d)
            u = crit[np.argmin(np.abs(crit))]
            lc += u
            if abs(u) < 1e-14 * (1 + abs(lc)):
                break
        c = _taylor(q, lc, radius, points, order, grid_size)
        return cls(lc, c, radius, float(t0))

    def F(self, lam):
        return np.polynomial.polynomial.polyval(np.asarray(lam) - self.lam_c, self.coeffs)

    def roots(self, t: float) -> np.ndarray:
        """The two roots of F = 2 cos t closest to lam_c, ordered by imag part then real."""
        c = self.coeffs.copy()
        c[0] -= 2.0 * np.cos(t)
        u = np.polynomial.polynomial.polyroots(c)
        u = u[np.argsort(np.abs(u))][:2]
        lam = self.lam_c + u
        return lam[np.lexsort((lam.real, lam.imag))]

    def dlam_dt(self, lam, t: float):
        """Implicit derivative -2 sin t / F'(lam) along F(lam) = 2 cos t."""
        d = np.polynomial.polynomial.polyder(self.coeffs)
        Fp = np.polynomial.polynomial.polyval(np.asarray(lam) - self.lam_c, d)
        return -2.0 * np.sin(t) / Fp

    def gap_squared(self) -> complex:
        """(lam_1 - lam_2)^2 at t0 from the quadratic part."""
        target = 2.0 * np.cos(self.t0)
        return complex(-8.0 * (self.coeffs[0] - target) / (2.0 * self.coeffs[2]))


def _taylor(q, lc, radius, points, order, grid_size):
    z = radius * np.exp(2j * np.pi * np.arange(points) / points)
    F = discriminant(q, lc + z, grid_size)
    c = np.fft.fft(F) / points
    k = np.arange(order + 1)
    return c[: order + 1] / radius**k
