"""Bloch eigenfunctions, adjoint eigenfunctions and norming constants.

For a Bloch eigenvalue lam of L_t(q) the eigenfunction is the Bloch solution

    Phi_t(x, lam) = phi(1, lam) theta(x, lam) + (e^{it} - theta(1, lam)) phi(x, lam),

built from one fundamental-pair solve.  The adjoint problem uses conj(q) at
conj(lam) with the same t-quasiperiodic conditions.

Pairing convention: (f, g) = int_0^1 f conj(g) dx (linear in f).  With
alpha = (Psi, Psi*) the biorthogonal element is X = Psi* / conj(alpha), so
that (Psi, X) = 1 and (f, X) = (f, Psi*) / alpha.

All x-integrals here have 1-periodic integrands (products of a t-quasiperiodic
function with the conjugate of another), so the periodic trapezoidal rule on the
solver grid is used; it is spectrally accurate for smooth data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import fundsol
from .fundsol import grid_size_for
from .potential import PeriodicPotential

ALPHA_FLOOR = 1e-13
PHASE_RULE = "largest Fourier coefficient of e^{-itx} psi real positive; X = psi_star / conj(alpha), (f, g) = int f conj(g)"


class DegenerateFormulaError(ArithmeticError):
    """phi(1, lam) and e^{it} - theta(1, lam) both vanish: the closed form gives zero."""


class AlphaUnderflowError(ArithmeticError):
    def __init__(self, alpha, t=None, lam=None):
        self.alpha = alpha
        super().__init__(f"|alpha| = {abs(alpha):.3e} below {ALPHA_FLOOR:g} (t={t}, lam={lam})")


@dataclass(frozen=True)
class EigenTriple:
    t: float
    lam: complex
    x: np.ndarray
    psi: np.ndarray
    psi_star: np.ndarray
    alpha: complex
    x_elem: np.ndarray | None
    phase_convention: str = PHASE_RULE
    n: int | None = None

    @property
    def projection_norm(self) -> float:
        a = abs(self.alpha)
        return 1.0 / a if a > 0 else float("inf")


def inner(f, g) -> complex:
    """int_0^1 f conj(g) dx on grid samples including both endpoints."""
    return complex(np.mean(np.asarray(f)[..., :-1] * np.conj(np.asarray(g)[..., :-1]), axis=-1))


def norm(f) -> float:
    return float(np.sqrt(np.mean(np.abs(np.asarray(f)[..., :-1]) ** 2, axis=-1)))


def _closed_form_coeffs(M, t):
    return M[..., 0, 1], np.exp(1j * t) - M[..., 0, 0]


def _bloch_coeffs(M, t):
    """Coefficients (c_theta, c_phi) of the Bloch solution with multiplier e^{it}.

    Uses the closed form (first row of M - e^{it}) unless the second row is much
    better conditioned; both rows give the same solution up to scaling.
    """
    a0, a1 = _closed_form_coeffs(M, t)
    b0, b1 = np.exp(1j * t) - M[..., 1, 1], M[..., 1, 0]
    na = np.hypot(np.abs(a0), np.abs(a1))
    nb = np.hypot(np.abs(b0), np.abs(b1))
    scale = 1.0 + np.abs(M).max(axis=(-1, -2))
    if np.any(np.maximum(na, nb) < 1e-11 * scale):
        raise DegenerateFormulaError(
            "monodromy equals e^{it} I: eigenvalue has geometric multiplicity 2")
    use_b = na < 0.1 * nb
    return np.where(use_b, b0, a0), np.where(use_b, b1, a1), np.where(use_b, "monodromy-row-2", "closed-form")


def bloch_function(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None):
    """Unnormalized Phi_t(x, lam) on the solver grid, plus its x-derivative."""
    if grid_size is None:
        grid_size = grid_size_for(q, abs(lam))
    Y = fundsol.solve_batch(q, [lam], grid_size)[0]
    M = Y[-1]
    c0, c1 = _closed_form_coeffs(M, t)
    if max(abs(c0), abs(c1)) < 1e-11 * (1.0 + np.abs(M).max()):
        raise DegenerateFormulaError(f"closed form vanishes at t={t}, lam={lam}")
    val = c0 * Y[:, 0, 0] + c1 * Y[:, 0, 1]
    der = c0 * Y[:, 1, 0] + c1 * Y[:, 1, 1]
    return val, der


def _fix_phase(psi, t, x):
    u = psi[:-1] * np.exp(-1j * t * x[:-1])
    c = np.fft.fft(u)
    k = int(np.argmax(np.abs(c)))
    return psi * np.exp(-1j * np.angle(c[k]))


def _normalized_batch(q, t, lams, grid_size):
    Y = fundsol.solve_batch(q, lams, grid_size)
    c0, c1, _ = _bloch_coeffs(Y[:, -1], t)
    val = c0[:, None] * Y[:, :, 0, 0] + c1[:, None] * Y[:, :, 0, 1]
    der = c0[:, None] * Y[:, :, 1, 0] + c1[:, None] * Y[:, :, 1, 1]
    x = np.linspace(0.0, 1.0, grid_size + 1)
    nrm = np.sqrt(np.mean(np.abs(val[:, :-1]) ** 2, axis=1))
    val = val / nrm[:, None]
    der = der / nrm[:, None]
    out_v, out_d = [], []
    for v, d in zip(val, der):
        fixed = _fix_phase(v, t, x)
        rot = fixed[0] / v[0] if v[0] != 0 else fixed[1] / v[1]
        out_v.append(fixed)
        out_d.append(d * rot)
    return x, np.array(out_v), np.array(out_d)


def eigen_triples(q: PeriodicPotential, t: float, lams, grid_size: int | None = None,
                  labels=None, allow_underflow: bool = False) -> list[EigenTriple]:
    """Eigen-triples for several Bloch eigenvalues at one t (one batched solve each side)."""
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    if grid_size is None:
        grid_size = grid_size_for(q, float(np.abs(lams).max()))
    x, psi, _ = _normalized_batch(q, t, lams, grid_size)
    _, psi_s, _ = _normalized_batch(q.conj(), t, np.conj(lams), grid_size)
    alphas = np.mean(psi[:, :-1] * np.conj(psi_s[:, :-1]), axis=1)
    out = []
    for i, lam in enumerate(lams):
        a = complex(alphas[i])
        if abs(a) < ALPHA_FLOOR:
            if not allow_underflow:
                raise AlphaUnderflowError(a, t, lam)
            xe = None
        else:
            xe = psi_s[i] / np.conj(a)
        out.append(EigenTriple(float(t), complex(lam), x, psi[i], psi_s[i], a, xe,
                               n=None if labels is None else int(labels[i])))
    return out


def eigen_triple(q, t, lam, grid_size=None, allow_underflow=False) -> EigenTriple:
    return eigen_triples(q, t, [lam], grid_size, allow_underflow=allow_underflow)[0]


def normalized_eigenfunction(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None):
    if grid_size is None:
        grid_size = grid_size_for(q, abs(lam))
    return _normalized_batch(q, t, [lam], grid_size)[1][0]


def adjoint_eigenfunction(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None):
    if grid_size is None:
        grid_size = grid_size_for(q, abs(lam))
    return _normalized_batch(q.conj(), t, [np.conj(lam)], grid_size)[1][0]


def norming_constant(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None) -> complex:
    return eigen_triple(q, t, lam, grid_size, allow_underflow=True).alpha


def biorthogonal_element(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None):
    return eigen_triple(q, t, lam, grid_size).x_elem


def projection_norm(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None) -> float:
    """Norm of f -> (f, X) Psi, i.e. ||Psi|| ||X|| = 1 / |alpha|."""
    return eigen_triple(q, t, lam, grid_size).projection_norm


# ---------------------------------------------------------------------------
# diagnostics


def quasi_periodicity_residual(q: PeriodicPotential, t: float, lam: complex, grid_size: int | None = None) -> float:
    """max(|Psi(1) - e^{it} Psi(0)|, |Psi'(1) - e^{it} Psi'(0)|) for the normalized eigenfunction."""
    if grid_size is None:
        grid_size = grid_size_for(q, abs(lam))
    _, v, d = _normalized_batch(q, t, [lam], grid_size)
    v, d = v[0], d[0]
    w = np.exp(1j * t)
    return float(max(abs(v[-1] - w * v[0]), abs(d[-1] - w * d[0]) / (1 + np.sqrt(q.scale * abs(lam)))))


def eigen_residual(q: PeriodicPotential, t: float, lam: complex, psi) -> float:
    """Root-mean-square of -psi'' + q psi - lam psi (original units) with spectral x-derivatives.

    psi e^{-itx} is 1-periodic, so its derivatives come from the FFT.
    """
    psi = np.asarray(psi)
    n = len(psi) - 1
    x = np.linspace(0.0, 1.0, n + 1)[:-1]
    u = psi[:-1] * np.exp(-1j * t * x)
    k = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n) + t
    d2 = np.fft.ifft(-(k**2) * np.fft.fft(u)) * np.exp(1j * t * x)
    r = -d2 + q.internal(x) * psi[:-1] - q.scale * lam * psi[:-1]
    return float(np.sqrt(np.mean(np.abs(r) ** 2)) / q.scale)


def galerkin_eigenfunction(coeffs, t: float, truncation: int, x) -> np.ndarray:
    """Synthesize sum_k c_k e^{i(2 pi k + t)x} on x and normalize with the same phase rule."""
    k = np.arange(-truncation, truncation + 1)
    psi = np.exp(1j * np.outer(x, 2 * np.pi * k + t)) @ coeffs
    psi = psi / norm(psi)
    return _fix_phase(psi, t, np.asarray(x))


def write_alpha_csv(rows, path) -> None:
    """rows: iterable of (n, t, alpha)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "re_alpha", "im_alpha", "abs_alpha", "projection_norm"])
        for n, t, a in rows:
            pn = 1.0 / abs(a) if abs(a) > 0 else float("inf")
            w.writerow([n, repr(float(t)), repr(float(np.real(a))), repr(float(np.imag(a))),
                        repr(float(abs(a))), repr(float(pn))])
