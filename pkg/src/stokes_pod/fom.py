"""Full-order model: the pressure-stabilised projection scheme with P1-P1 elements.

One step from ``(u~^n, p^n)`` to ``t_{n+1}``:

1. velocity  ``(M_v/dt + nu A_v) u~^{n+1} = M_v u~^n/dt + F^{n+1} - G p^n``
   with homogeneous Dirichlet data eliminated symmetrically;
2. pressure  ``dt S_p p^{n+1} = -D u~^{n+1}`` solved in the mean-zero
   subspace, then re-centred with the mass-weighted mean.

The end-of-step velocity ``u^{n+1}`` is the L2 projection of
``u~^{n+1} - dt grad p^{n+1}`` onto the full vector P1 space.

Two families of errors are recorded each step.  The standard columns measure
the full velocity vector with the 7-point degree-5 rule.  The ``*_x3`` and
``*_q3`` columns measure only the first velocity component, and the pressure,
with the 4-point degree-3 rule.  That second convention reproduces the
published convergence tables (see the README).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fem import (DEGREE3, DEGREE5, FeDiscretization, FieldVec, dirichlet_matrix,
                  dirichlet_rhs, discretize, interpolate, mean_zero)
from .linalg import solve_cg
from .manufactured import StokesProblem

__all__ = [
    "FomConfig",
    "FomState",
    "FomStepper",
    "FomTrajectory",
    "CompatibilityError",
    "ERROR_COLUMNS",
    "TABLE_COLUMNS",
    "fom_init",
    "fom_step",
    "end_of_step_velocity",
    "run_fom",
]

#: per-step error columns in the standard (full vector, degree-5) measure
ERROR_COLUMNS = ("eu_tilde_l2", "eu_l2", "ep_l2", "ep_h1semi", "eu_h1semi")
#: the same quantities in the first-component, degree-3 measure
TABLE_COLUMNS = ("eu_tilde_l2_x3", "eu_l2_x3", "ep_l2_q3", "ep_h1semi_q3", "eu_h1semi_x3")

#: checkpoint positions as fractions of the run length
CHECKPOINT_FRACTIONS = (1 / 16, 2 / 16, 3 / 16, 4 / 16, 8 / 16, 12 / 16, 1.0)


class CompatibilityError(AssertionError):
    """The pressure right-hand side is not orthogonal to constants."""


@dataclass(frozen=True)
class FomConfig:
    """Run parameters; ``dt = dt_coefficient * h**2`` with ``h = 1/N``."""

    N: int
    dt_coefficient: float = 0.1
    T: float = 1.0
    nu: float = 1.0
    n0: int = 6
    M: int = 20
    record_every_step_errors: bool = True
    end_of_step: bool = True
    store_every: Optional[int] = None
    cg_tol: float = 1e-10

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.dt_coefficient > 0:
            raise ValueError("dt_coefficient must be positive")
        if not (self.T > 0 and self.nu > 0):
            raise ValueError("T and nu must be positive")
        if self.n0 < 1 or self.M < 1:
            raise ValueError("n0 and M must be at least 1")
        if self.n0 + self.M - 1 > self.n_steps:
            raise ValueError(f"snapshot window ends at step {self.n0 + self.M - 1} "
                             f"beyond the last step {self.n_steps}")
        if self.store_every is not None and self.store_every < 1:
            raise ValueError("store_every must be positive")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def dt(self) -> float:
        return self.dt_coefficient * self.h ** 2

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.T / self.dt * (1 + 1e-12)))

    @property
    def record_window(self) -> tuple:
        return (self.n0, self.M)

    def window_steps(self) -> np.ndarray:
        return np.arange(self.n0, self.n0 + self.M)

    def checkpoint_steps(self) -> np.ndarray:
        n = self.n_steps
        return np.unique([max(1, int(round(f * n))) for f in CHECKPOINT_FRACTIONS])

    def stored_steps(self) -> np.ndarray:
        every = self.store_every or max(1, self.n_steps // 256)
        steps = set(range(0, self.n_steps + 1, every))
        steps.update(self.window_steps().tolist())
        steps.update(self.checkpoint_steps().tolist())
        steps.add(self.n_steps)
        return np.array(sorted(steps))


@dataclass(frozen=True)
class FomState:
    n: int
    t: float
    u_tilde: FieldVec
    p: FieldVec
    u: Optional[FieldVec] = None


def fom_init(problem: StokesProblem, config: FomConfig,
             disc: Optional[FeDiscretization] = None) -> FomState:
    """Interpolated initial velocity (boundary DOFs set to the zero data), p = 0."""
    if disc is None:
        disc = discretize(config.N)
    u0 = interpolate(disc.mesh, disc.dofmap, problem.initial_velocity, 0.0, "velocity")
    c = u0.coefficients.copy()
    c[disc.dofmap.boundary_velocity_dofs] = 0.0
    u0 = FieldVec(c, "velocity", 0.0)
    p0 = FieldVec(np.zeros(disc.dofmap.n_pressure_dofs), "pressure", 0.0)
    return FomState(0, 0.0, u0, p0, u0)


class FomStepper:
    """Holds the eliminated step matrices for fixed ``dt`` and ``nu``."""

    def __init__(self, disc: FeDiscretization, problem: StokesProblem, dt: float,
                 cg_tol: float = 1e-10, compat_tol: float = 1e-10):
        ops = disc.ops
        self.disc = disc
        self.problem = problem
        self.dt = float(dt)
        self.cg_tol = cg_tol
        self.compat_tol = compat_tol
        self._bd = disc.dofmap.boundary_velocity_dofs
        self._zero_bd = np.zeros(self._bd.size)
        self.L_v, self._coupling = dirichlet_matrix(ops.M_v / dt + problem.nu * ops.A_v,
                                                    self._bd)
        self.L_p = (dt * ops.S_p).tocsr()
        self._M_dt = (ops.M_v / dt).tocsr()
        self.max_compatibility = 0.0

    def step(self, state: FomState, t_next: float) -> FomState:
        ops = self.disc.ops
        u, p = state.u_tilde.coefficients, state.p.coefficients
        F = self.disc.loads.assemble(self.problem.forcing, t_next)
        rhs = self._M_dt @ u + F - ops.G @ p
        rhs = dirichlet_rhs(rhs, self._coupling, self._bd, self._zero_bd)
        u_new = solve_cg(self.L_v, rhs, tol=self.cg_tol, x0=u, jacobi=True)

        div = -(ops.D @ u_new)
        compat = abs(div.sum())
        self.max_compatibility = max(self.max_compatibility, compat)
        if compat > self.compat_tol:
            raise CompatibilityError(f"pressure data has nonzero mean {compat:.3e}")
        p_new = solve_cg(self.L_p, div, tol=self.cg_tol, nullspace=True, x0=p)
        p_new = mean_zero(p_new, ops.M_p)
        return FomState(state.n + 1, t_next, FieldVec(u_new, "velocity", t_next),
                        FieldVec(p_new, "pressure", t_next))


def fom_step(state: FomState, stepper: FomStepper, t_next: float) -> FomState:
    """Advance one step of the projection scheme."""
    return stepper.step(state, t_next)


def end_of_step_velocity(u_tilde: FieldVec, p: FieldVec, ops, dt: float,
                         tol: float = 1e-10, x0=None) -> FieldVec:
    """Solve ``M_v u = M_v u~ - dt G p`` over the full vector P1 space."""
    uc = u_tilde.coefficients
    rhs = ops.M_v @ uc - dt * (ops.G @ p.coefficients)
    u = solve_cg(ops.M_v, rhs, tol=tol, x0=uc if x0 is None else x0, jacobi=True)
    return FieldVec(u, "velocity", u_tilde.time)


@dataclass
class FomTrajectory:
    """Everything recorded by :func:`run_fom`.

    ``errors`` maps column names to arrays indexed by step ``n = 0..n_steps``.
    ``energy`` holds ``u_norm`` (L2 norm of u~), ``grad_u_sq`` (squared H1
    seminorm of u~) and ``f_norm`` (L2 norm of the forcing).  Step fields are
    kept at ``stored_steps`` only.  ``step_time[n]`` is the cumulative stepping
    wall-clock after step ``n``.
    """

    config: FomConfig
    times: np.ndarray
    errors: dict
    energy: dict
    stored_steps: np.ndarray
    u_tilde: np.ndarray
    p: np.ndarray
    u_end: Optional[np.ndarray]
    step_time: np.ndarray
    max_compatibility: float
    max_pressure_mean: float
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def n_steps(self) -> int:
        return self.config.n_steps

    def index_of(self, n: int) -> int:
        k = int(np.searchsorted(self.stored_steps, n))
        if k >= len(self.stored_steps) or self.stored_steps[k] != n:
            raise KeyError(f"step {n} was not stored")
        return k

    def fields_at(self, n: int):
        """``(u~, p, u)`` FieldVecs at a stored step (``u`` may be None)."""
        k = self.index_of(n)
        t = float(self.times[n])
        u = None if self.u_end is None else FieldVec(self.u_end[k], "velocity", t)
        return (FieldVec(self.u_tilde[k], "velocity", t),
                FieldVec(self.p[k], "pressure", t), u)

    @property
    def steps(self):
        """List of ``(n, t, u~, p, u)`` over the stored steps."""
        return [(int(n), float(self.times[n]), *self.fields_at(int(n)))
                for n in self.stored_steps]

    def summary(self, n_min: Optional[int] = None) -> dict:
        """Time-discrete norms over ``n >= n_min`` (default ``n0``).

        ``max_*``     max over n of the per-step error,
        ``l2_*``      ``sqrt(dt * sum e_n^2)``,
        ``sdt_l2_*``  ``sqrt(dt) * l2_*`` (scaled pressure-gradient norm).
        """
        n_min = self.config.n0 if n_min is None else n_min
        dt = self.dt
        out = {}
        for suffix, cols in (("", ERROR_COLUMNS), ("_x3", TABLE_COLUMNS)):
            e = {c: self.errors[c][n_min:] for c in cols}
            tu, uu, pl, ph, uh = cols
            out["max_" + tu] = float(np.max(e[tu]))
            if not np.all(np.isnan(e[uu])):
                out["max_" + uu] = float(np.nanmax(e[uu]))
            out["max_" + pl] = float(np.max(e[pl]))
            out["l2_" + uh] = float(np.sqrt(dt * np.sum(e[uh] ** 2)))
            out["l2_" + pl] = float(np.sqrt(dt * np.sum(e[pl] ** 2)))
            out["sdt_l2_" + ph] = float(np.sqrt(dt) * np.sqrt(dt * np.sum(e[ph] ** 2)))
        return out


def _record_errors(errors, n, t, state, u_end, problem, s5, s3, compute):
    if not compute:
        return
    uc, pc = state.u_tilde.coefficients, state.p.coefficients
    uv, pv = problem.exact_velocity, problem.exact_pressure
    errors["eu_tilde_l2"][n], errors["eu_h1semi"][n] = s5.errors(uv, uc, "velocity", t)
    errors["ep_l2"][n], errors["ep_h1semi"][n] = s5.errors(pv, pc, "pressure", t)
    errors["eu_tilde_l2_x3"][n], errors["eu_h1semi_x3"][n] = s3.errors(
        uv, uc, "velocity", t, component=0)
    errors["ep_l2_q3"][n], errors["ep_h1semi_q3"][n] = s3.errors(pv, pc, "pressure", t)
    if u_end is not None:
        errors["eu_l2"][n] = s5.errors(uv, u_end, "velocity", t, gradient=False)[0]
        errors["eu_l2_x3"][n] = s3.errors(uv, u_end, "velocity", t, component=0,
                                          gradient=False)[0]


def run_fom(problem: StokesProblem, config: FomConfig,
            disc: Optional[FeDiscretization] = None, progress=None) -> FomTrajectory:
    """Run the projection scheme from ``t = 0`` to step ``floor(T/dt)``.

    ``progress``, if given, is called as ``progress(n, n_steps)`` after each step.
    """
    if disc is None:
        disc = discretize(config.N)
    ops = disc.ops
    dt, n_steps = config.dt, config.n_steps
    stepper = FomStepper(disc, problem, dt, config.cg_tol)
    s5, s3 = disc.sampler(DEGREE5), disc.sampler(DEGREE3)

    times = np.arange(n_steps + 1) * dt
    errors = {c: np.full(n_steps + 1, np.nan) for c in ERROR_COLUMNS + TABLE_COLUMNS}
    energy = {k: np.zeros(n_steps + 1) for k in ("u_norm", "grad_u_sq", "f_norm")}
    stored = config.stored_steps()
    slot = {int(n): k for k, n in enumerate(stored)}
    nu_dof, np_dof = disc.dofmap.n_velocity_dofs, disc.dofmap.n_pressure_dofs
    U = np.empty((len(stored), nu_dof))
    P = np.empty((len(stored), np_dof))
    UE = np.empty((len(stored), nu_dof)) if config.end_of_step else None
    step_time = np.zeros(n_steps + 1)
    max_mean = 0.0
    mass_w = np.asarray(ops.M_p.sum(axis=0)).ravel()

    state = fom_init(problem, config, disc)
    u_end = state.u_tilde.coefficients
    elapsed = 0.0
    for n in range(n_steps + 1):
        if n > 0:
            tick = time.perf_counter()
            state = stepper.step(state, times[n])
            elapsed += time.perf_counter() - tick
            if config.end_of_step:
                u_end = end_of_step_velocity(state.u_tilde, state.p, ops, dt,
                                             config.cg_tol, x0=u_end).coefficients
        step_time[n] = elapsed
        uc = state.u_tilde.coefficients
        energy["u_norm"][n] = np.sqrt(uc @ (ops.M_v @ uc))
        energy["grad_u_sq"][n] = uc @ (ops.A_v @ uc)
        energy["f_norm"][n] = s5.l2_norm(problem.forcing, times[n])
        max_mean = max(max_mean, abs(mass_w @ state.p.coefficients))
        _record_errors(errors, n, times[n], state, u_end if config.end_of_step else None,
                       problem, s5, s3, config.record_every_step_errors or n in slot)
        k = slot.get(n)
        if k is not None:
            U[k] = uc
            P[k] = state.p.coefficients
            if UE is not None:
                UE[k] = u_end
        if progress is not None:
            progress(n, n_steps)

    return FomTrajectory(config, times, errors, energy, stored, U, P, UE, step_time,
                         stepper.max_compatibility, max_mean,
                         meta={"N": config.N, "dt": dt, "n_steps": n_steps})
