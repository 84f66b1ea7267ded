"""Fundamental solutions of the Hill equation -y'' + q y = lam y on [0, 1].

The system Y' = A(x) Y with A = [[0, 1], [Q(x) - lam, 0]] is integrated by the
classical fourth-order Runge-Kutta scheme on a uniform grid.  Because the
system is linear, one RK4 step is a 2x2 matrix P_j(lam) whose entries are
written out in closed form in the compiled kernel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from .potential import PeriodicPotential

DEFAULT_GRID = 2048
WRONSKIAN_TOL = 1e-10
MAX_GRID = 1 << 16


class AccuracyError(ArithmeticError):
    """Raised when the Wronskian drift exceeds the configured tolerance."""

    def __init__(self, residual, grid_size, lam=None):
        self.residual = float(np.max(residual))
        self.grid_size = grid_size
        self.lam = lam
        super().__init__(
            f"Wronskian residual {self.residual:.3e} exceeds tolerance at grid_size={grid_size}"
            + (f" (lambda={lam})" if lam is not None else "")
        )


@dataclass(frozen=True)
class FundamentalPair:
    lam: complex
    x: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    monodromy: np.ndarray
    wronskian_residual: float

    @property
    def grid_size(self) -> int:
        return len(self.x) - 1

    def to_csv(self, path) -> None:
        """Debug dump of the sampled solutions."""
        cols = ["x", "re_theta", "im_theta", "re_dtheta", "im_dtheta",
                "re_phi", "im_phi", "re_dphi", "im_dphi"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(self.x, self.theta, self.dtheta, self.phi, self.dphi):
                x, *vals = row
                out = [repr(float(x))]
                for v in vals:
                    out += [repr(float(v.real)), repr(float(v.imag))]
                w.writerow(out)


def grid_size_for(q: PeriodicPotential, lam_abs_max: float, tol: float = WRONSKIAN_TOL) -> int:
    """Smallest power-of-two grid >= DEFAULT_GRID whose predicted RK4 drift is below tol/4.

    For y'' = -w^2 y one RK4 step changes the Wronskian by about (w h)^6 / 72.
    """
    w = np.sqrt(q.scale * (abs(lam_abs_max) + sum(abs(c) for c in q.coeffs.values())) + 1.0)
    n = DEFAULT_GRID
    while n < MAX_GRID and n * (w / n) ** 6 / 72.0 > tol / 4:
        n *= 2
    return n


@njit(cache=True)
def _rk4_kernel(Q, lams, n, store):
    """Propagate the fundamental matrix through n RK4 steps for each lam.

    Q holds the internal potential at the half-grid x = k / (2n).  Each step
    applies the closed form of I + h/6 (K1 + 2 K2 + 2 K3 + K4) for
    A = [[0, 1], [c, 0]], c = Q - lam.  Returns (B, n + 1, 4) when ``store``
    else (B, 1, 4); the last axis is (theta, theta', phi, phi').
    """
    h = 1.0 / n
    h2 = h * h
    h3 = h2 * h
    h4 = h3 * h
    B = lams.shape[0]
    out = np.empty((B, n + 1 if store else 1, 4), dtype=np.complex128)
    for b in range(B):
        lam = lams[b]
        y0, p0, y1, p1 = 1.0 + 0j, 0j, 0j, 1.0 + 0j
        if store:
            out[b, 0, 0] = y0
            out[b, 0, 1] = p0
            out[b, 0, 2] = y1
            out[b, 0, 3] = p1
        for j in range(n):
            c0 = Q[2 * j] - lam
            c1 = Q[2 * j + 1] - lam
            c2 = Q[2 * j + 2] - lam
            c1h4 = c1 * (h4 / 24.0)
            a = 1.0 + h2 * (c0 / 6.0 + c1 / 3.0) + c0 * c1h4
            bb = h + c1 * (h3 / 6.0)
            c = h * (c0 + 4.0 * c1 + c2) / 6.0 + (h3 / 12.0) * c1 * (c0 + c2)
            d = 1.0 + h2 * (c1 / 3.0 + c2 / 6.0) + c2 * c1h4
            y0, p0 = a * y0 + bb * p0, c * y0 + d * p0
            y1, p1 = a * y1 + bb * p1, c * y1 + d * p1
            if store:
                out[b, j + 1, 0] = y0
                out[b, j + 1, 1] = p0
                out[b, j + 1, 2] = y1
                out[b, j + 1, 3] = p1
        if not store:
            out[b, 0, 0] = y0
            out[b, 0, 1] = p0
            out[b, 0, 2] = y1
            out[b, 0, 3] = p1
    return out


def _propagate(q: PeriodicPotential, lams, n: int, store: bool) -> np.ndarray:
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    Q = np.ascontiguousarray(q.internal(np.arange(2 * n + 1) / (2 * n)), dtype=complex)
    raw = _rk4_kernel(Q, np.ascontiguousarray(q.scale * lams.ravel()), n, store)
    # (theta, theta', phi, phi') -> [[theta, phi], [theta', phi']]
    return raw[..., [0, 2, 1, 3]].reshape(raw.shape[:2] + (2, 2))


def _wronskian_residual(Y: np.ndarray) -> np.ndarray:
    det = Y[..., 0, 0] * Y[..., 1, 1] - Y[..., 0, 1] * Y[..., 1, 0]
    return np.abs(det - 1.0)


def monodromy_batch(q: PeriodicPotential, lams, grid_size: int = DEFAULT_GRID,
                    tol: float | None = WRONSKIAN_TOL) -> np.ndarray:
    """Monodromy matrices [[theta(1), phi(1)], [theta'(1), phi'(1)]] for each lam."""
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    M = _propagate(q, lams, grid_size, store=False)[:, 0]
    if tol is not None:
        res = _wronskian_residual(M)
        if np.any(res > tol):
            bad = int(np.argmax(res))
            raise AccuracyError(res, grid_size, complex(lams[bad]))
    return M


def solve_batch(q: PeriodicPotential, lams, grid_size: int = DEFAULT_GRID,
                tol: float | None = WRONSKIAN_TOL) -> np.ndarray:
    """Fundamental matrices at every grid point, shape (len(lams), grid_size + 1, 2, 2)."""
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    Y = _propagate(q, lams, grid_size, store=True)
    if tol is not None:
        res = _wronskian_residual(Y).max(axis=1)
        if np.any(res > tol):
            bad = int(np.argmax(res))
            raise AccuracyError(res, grid_size, complex(lams[bad]))
    return Y


def fundamental_pair(q: PeriodicPotential, lam: complex, grid_size: int | None = DEFAULT_GRID,
                     tol: float = WRONSKIAN_TOL) -> FundamentalPair:
    """theta, phi and derivatives sampled on the uniform grid of [0, 1].

    ``grid_size=None`` picks a grid from the size of lam and refines on failure.
    """
    if grid_size is None:
        n = grid_size_for(q, abs(lam), tol)
        while True:
            try:
                return fundamental_pair(q, lam, n, tol)
            except AccuracyError:
                if n >= MAX_GRID:
                    raise
                n *= 2
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    Y = solve_batch(q, [lam], grid_size, tol=None)[0]
    res = float(_wronskian_residual(Y).max())
    if res > tol:
        raise AccuracyError(res, grid_size, lam)
    return FundamentalPair(
        lam=complex(lam),
        x=np.linspace(0.0, 1.0, grid_size + 1),
        theta=Y[:, 0, 0].copy(),
        dtheta=Y[:, 1, 0].copy(),
        phi=Y[:, 0, 1].copy(),
        dphi=Y[:, 1, 1].copy(),
        monodromy=Y[-1].copy(),
        wronskian_residual=res,
    )


def monodromy(q: PeriodicPotential, lam: complex, grid_size: int = DEFAULT_GRID,
              tol: float = WRONSKIAN_TOL) -> np.ndarray:
    return monodromy_batch(q, [lam], grid_size, tol)[0]
