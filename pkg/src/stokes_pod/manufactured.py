"""Manufactured solution for the unsteady Stokes test problem.

    u = cos(t) * U(x, y),   U = (pi sin^2(pi x) sin(2 pi y), -pi sin(2 pi x) sin^2(pi y))
    p = cos(t) * P(x, y),   P = 10 cos(pi x) cos(pi y)

U is divergence free and vanishes on the boundary of the unit square, and P
has zero mean.  The forcing f = du/dt - nu Lap(u) + grad(p) splits as

    f = -sin(t) * U + cos(t) * (-nu Lap(U) + grad(P)).

Every closed form below is checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import AnalyticField, SeparableTerm

__all__ = [
    "StokesProblem",
    "manufactured_problem",
    "zero_problem",
    "evaluate_exact",
    "evaluate_forcing",
]

PI = np.pi


def _U(x, y):
    return np.stack([PI * np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
                     -PI * np.sin(2 * PI * x) * np.sin(PI * y) ** 2])


def _grad_U(x, y):
    s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
    c2x, c2y = np.cos(2 * PI * x), np.cos(2 * PI * y)
    sx2, sy2 = np.sin(PI * x) ** 2, np.sin(PI * y) ** 2
    g1 = np.stack([PI ** 2 * s2x * s2y, 2 * PI ** 2 * sx2 * c2y])
    g2 = np.stack([-2 * PI ** 2 * c2x * sy2, -PI ** 2 * s2x * s2y])
    return np.stack([g1, g2])


def _lap_U(x, y):
    s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
    c2x, c2y = np.cos(2 * PI * x), np.cos(2 * PI * y)
    sx2, sy2 = np.sin(PI * x) ** 2, np.sin(PI * y) ** 2
    l1 = 2 * PI ** 3 * c2x * s2y - 4 * PI ** 3 * sx2 * s2y
    l2 = 4 * PI ** 3 * s2x * sy2 - 2 * PI ** 3 * s2x * c2y
    return np.stack([l1, l2])


def _P(x, y):
    return (10 * np.cos(PI * x) * np.cos(PI * y))[None]


def _grad_P(x, y):
    return np.stack([np.stack([-10 * PI * np.sin(PI * x) * np.cos(PI * y),
                               -10 * PI * np.cos(PI * x) * np.sin(PI * y)])])


def evaluate_exact(x, y, t):
    """Exact ``(u1, u2, p)`` at points ``(x, y)`` and time ``t``."""
    u = np.cos(t) * _U(np.asarray(x, float), np.asarray(y, float))
    p = np.cos(t) * _P(np.asarray(x, float), np.asarray(y, float))[0]
    return u[0], u[1], p


def evaluate_forcing(x, y, t, nu=1.0):
    """Forcing ``(f1, f2) = du/dt - nu Lap(u) + grad(p)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    f = -np.sin(t) * _U(x, y) + np.cos(t) * (-nu * _lap_U(x, y) + _grad_P(x, y)[0])
    return f[0], f[1]


@dataclass(frozen=True, eq=False)
class StokesProblem:
    """Data of an unsteady Stokes problem with homogeneous Dirichlet velocity."""

    nu: float
    T: float
    exact_velocity: AnalyticField
    exact_pressure: AnalyticField
    forcing: AnalyticField

    @property
    def initial_velocity(self) -> AnalyticField:
        return self.exact_velocity


def _minus_sin(t):
    return -np.sin(t)


def manufactured_problem(nu: float = 1.0, T: float = 1.0) -> StokesProblem:
    nu = float(nu)
    velocity = AnalyticField(2, [SeparableTerm(np.cos, _U, _grad_U)])
    pressure = AnalyticField(1, [SeparableTerm(np.cos, _P, _grad_P)])

    def steady(x, y):
        return -nu * _lap_U(x, y) + _grad_P(x, y)[0]

    forcing = AnalyticField(2, [
        SeparableTerm(_minus_sin, _U),
        SeparableTerm(np.cos, steady),
    ])
    return StokesProblem(nu, float(T), velocity, pressure, forcing)


def zero_problem(nu: float = 1.0, T: float = 1.0) -> StokesProblem:
    """Trivial problem whose exact solution is identically zero."""
    zero2 = lambda x, y: np.zeros((2,) + np.shape(x))
    zero1 = lambda x, y: np.zeros((1,) + np.shape(x))
    zg2 = lambda x, y: np.zeros((2, 2) + np.shape(x))
    zg1 = lambda x, y: np.zeros((1, 2) + np.shape(x))
    one = lambda t: 1.0
    return StokesProblem(
        float(nu), float(T),
        AnalyticField(2, [SeparableTerm(one, zero2, zg2)]),
        AnalyticField(1, [SeparableTerm(one, zero1, zg1)]),
        AnalyticField(2, [SeparableTerm(one, zero2, zg2)]),
    )
