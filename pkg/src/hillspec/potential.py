"""Complex periodic potentials stored as finite Fourier series.

A potential with declared period ``rho`` is rescaled to period 1 with
``x -> x / rho``.  The differential equation picks up a factor ``rho**2``
(``scale``) on both the potential and the spectral parameter, so internally
the Hill equation reads ``-y'' + scale * q(x) y = (scale * lam) y`` on
``[0, 1]``.  Every eigenvalue exposed by the public API is in the units of
the original period, i.e. ``lam = lam_internal / scale``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

DROP_TOL = 1e-14


@dataclass(frozen=True)
class PeriodicPotential:
    """q(x) = sum_m c_m exp(i 2 pi m x) in normalized coordinates."""

    coeffs: Mapping[int, complex]
    declared_period: float = 1.0
    tag: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.declared_period**2

    @property
    def max_harmonic(self) -> int:
        return max((abs(m) for m in self.coeffs), default=0)

    @property
    def is_self_adjoint(self) -> bool:
        return all(
            abs(c - np.conj(self.coeffs.get(-m, 0.0))) <= DROP_TOL
            for m, c in self.coeffs.items()
        )

    def coefficient(self, m: int) -> complex:
        return complex(self.coeffs.get(m, 0.0))

    def conj(self) -> "PeriodicPotential":
        """Potential conj(q(x)), i.e. c_m -> conj(c_{-m})."""
        conj_coeffs = {-m: complex(np.conj(c)) for m, c in self.coeffs.items()}
        return PeriodicPotential(
            conj_coeffs, self.declared_period, tag=f"conj({self.tag})", params=dict(self.params)
        )

    def __call__(self, x):
        return evaluate(self, x)

    def internal(self, x):
        """scale * q(x): the potential actually seen by the period-1 ODE."""
        return self.scale * evaluate(self, x)

    def to_json(self) -> dict:
        return {
            "period": self.declared_period,
            "coeffs": [[int(m), float(np.real(c)), float(np.imag(c))] for m, c in sorted(self.coeffs.items())],
            "tag": self.tag,
            "params": {k: float(v) for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, obj) -> "PeriodicPotential":
        if isinstance(obj, str):
            obj = json.loads(obj)
        coeffs = {int(m): complex(re, im) for m, re, im in obj["coeffs"]}
        pot = make_potential(coeffs, obj.get("period", 1.0))
        return cls(pot.coeffs, pot.declared_period, tag=obj.get("tag", "custom"), params=obj.get("params", {}))


def make_potential(coeffs: Mapping[int, complex], period: float = 1.0) -> PeriodicPotential:
    """Build a normalized potential, dropping numerically-zero harmonics."""
    if not np.isfinite(period) or period <= 0:
        raise ValueError(f"period must be positive, got {period}")
    kept = {}
    for m, c in coeffs.items():
        c = complex(c)
        if not np.isfinite(c):
            raise ValueError(f"coefficient c_{m} is not finite")
        if abs(c) >= DROP_TOL:
            kept[int(m)] = c
    return PeriodicPotential(kept, float(period))


def zero() -> PeriodicPotential:
    return PeriodicPotential({}, 1.0, tag="zero")


def mathieu(a: complex, b: complex) -> PeriodicPotential:
    """q(x) = a e^{i2 pi x} + b e^{-i2 pi x} on period 1."""
    pot = make_potential({1: a, -1: b}, 1.0)
    return PeriodicPotential(pot.coeffs, 1.0, tag="mathieu", params={"a_re": np.real(a), "a_im": np.imag(a),
                                                                      "b_re": np.real(b), "b_im": np.imag(b)})


def optical(V: float) -> PeriodicPotential:
    """PT-symmetric lattice 4cos^2 x + 4iV sin 2x, period pi."""
    if V < 0:
        raise ValueError(f"V must be nonnegative, got {V}")
    pot = make_potential({0: 2.0, 1: 1 + 2 * V, -1: 1 - 2 * V}, np.pi)
    return PeriodicPotential(pot.coeffs, np.pi, tag="optical", params={"V": float(V)})


def evaluate(q: PeriodicPotential, x):
    """Sum of c_m e^{i 2 pi m x} at normalized coordinate(s) x."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    for m, c in sorted(q.coeffs.items()):
        out += c * np.exp(2j * np.pi * m * x)
    return out if out.ndim else complex(out)


def evaluate_original(q: PeriodicPotential, x):
    """q at a coordinate measured in the declared period's units."""
    return evaluate(q, np.asarray(x, dtype=float) / q.declared_period)


BUILTINS = {"zero": zero, "mathieu": mathieu, "optical": optical}


def from_spec(spec) -> PeriodicPotential:
    """Resolve a config entry such as {"name": "optical", "V": 0.5}."""
    if isinstance(spec, PeriodicPotential):
        return spec
    spec = dict(spec)
    name = spec.pop("name", None)
    if name is None or name == "custom":
        return PeriodicPotential.from_json(spec)
    if name == "zero":
        return zero()
    if name == "mathieu":
        a = complex(spec.get("a", 0.0))
        b = complex(spec.get("b", 0.0))
        return mathieu(a, b)
    if name == "optical":
        return optical(float(spec["V"]))
    raise ValueError(f"unknown potential {name!r}")
