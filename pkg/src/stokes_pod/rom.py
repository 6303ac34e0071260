"""Reduced-order projection model on POD bases.

Velocity ``u~_r = Phi a`` and pressure ``p_r = Psi b``.  With M-orthonormal
modes the reduced mass matrices are identities, so one step reads

    (I/dt + nu A_r) a^{n+1} = a^n/dt + f_r^{n+1} - G_r b^n
    dt S_r b^{n+1}          = -D_r a^{n+1}

with ``A_r = Phi^T A_v Phi``, ``G_r = Phi^T G Psi``, ``D_r = Psi^T D Phi``,
``S_r = Psi^T S_p Psi`` and ``f_r = Phi^T F`` the projected FE load.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fem import DEGREE5, FeDiscretization, FieldVec
from .linalg import DenseLU, SingularMatrixError, eigh, solve_dense

__all__ = [
    "RomOperators",
    "RomState",
    "RomStepper",
    "RomTrajectory",
    "ROM_COLUMNS",
    "build_rom_operators",
    "rom_init",
    "rom_step",
    "run_rom",
]

ROM_COLUMNS = ("eu_exact_l2", "ep_exact_l2", "eu_rel_fom", "ep_rel_fom")


@dataclass(frozen=True, eq=False)
class RomOperators:
    r_u: int
    r_p: int
    A_r: np.ndarray
    G_r: np.ndarray
    D_r: np.ndarray
    S_r: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    adjointness_error: float = 0.0


def _sym(A, name, tol):
    scale = max(np.max(np.abs(A)), 1.0)
    if np.max(np.abs(A - A.T)) > tol * scale:
        raise ArithmeticError(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def build_rom_operators(bases, fe_ops, r_u: int, r_p: Optional[int] = None,
                        gram_tolerance: float = 1e-8) -> RomOperators:
    """Project the FE operators onto the leading ``r_u`` / ``r_p`` modes.

    Parameters
    ----------
    bases : (PodBasis, PodBasis)
        Velocity and pressure bases.
    fe_ops : FeOperators

    Raises
    ------
    ValueError
        If a rank is outside ``[1, d]``.
    SingularMatrixError
        If ``S_r`` has an eigenvalue below ``1e-12 * max(lambda_max, 1)``.
    """
    vb, pb = bases
    r_p = r_u if r_p is None else r_p
    for r, b in ((r_u, vb), (r_p, pb)):
        if int(r) != r or not 1 <= r <= b.d:
            raise ValueError(f"rank {r} outside [1, {b.d}] for the {b.kind} basis")
    Phi = np.ascontiguousarray(vb.modes[:, :r_u])
    Psi = np.ascontiguousarray(pb.modes[:, :r_p])
    for X, Mm, name in ((Phi, fe_ops.M_v, "velocity"), (Psi, fe_ops.M_p, "pressure")):
        err = np.max(np.abs(X.T @ (Mm @ X) - np.eye(X.shape[1])))
        if err > gram_tolerance:
            raise ArithmeticError(f"{name} modes not orthonormal ({err:.2e})")

    A_r = _sym(Phi.T @ (fe_ops.A_v @ Phi), "A_r", 1e-10)
    S_r = _sym(Psi.T @ (fe_ops.S_p @ Psi), "S_r", 1e-10)
    G_r = Phi.T @ (fe_ops.G @ Psi)
    D_r = Psi.T @ (fe_ops.D @ Phi)
    # L2-normalised mean-zero modes have |grad psi|^2 of order pi^2, so unity
    # is a safe absolute reference when S_r is tiny as a whole
    lam = eigh(S_r).eigenvalues
    if lam[-1] < 1e-12 * max(lam[0], 1.0):
        raise SingularMatrixError("reduced pressure stiffness is singular")
    adj = float(np.max(np.abs(D_r + G_r.T)))
    for a in (A_r, S_r, G_r, D_r, Phi, Psi):
        a.setflags(write=False)
    return RomOperators(int(r_u), int(r_p), A_r, G_r, D_r, S_r, Phi, Psi, adj)


@dataclass(frozen=True)
class RomState:
    a: np.ndarray
    b: np.ndarray
    n: int
    t: float


def rom_init(rom_ops: RomOperators, fe_ops, u_tilde, p, n: int = 0) -> RomState:
    """L2 projections of FE fields onto the reduced spaces."""
    uc = np.asarray(getattr(u_tilde, "coefficients", u_tilde), dtype=float)
    pc = np.asarray(getattr(p, "coefficients", p), dtype=float)
    t = float(getattr(u_tilde, "time", 0.0))
    return RomState(rom_ops.Phi.T @ (fe_ops.M_v @ uc), rom_ops.Psi.T @ (fe_ops.M_p @ pc),
                    int(n), t)


def rom_step(state: RomState, rom_ops: RomOperators, reduced_load, dt: float,
             nu: float) -> RomState:
    """One reduced step with fresh dense solves (see :class:`RomStepper`)."""
    L = np.eye(rom_ops.r_u) / dt + nu * rom_ops.A_r
    a = solve_dense(L, state.a / dt + reduced_load - rom_ops.G_r @ state.b)
    b = solve_dense(dt * rom_ops.S_r, -(rom_ops.D_r @ a))
    return RomState(a, b, state.n + 1, state.t + dt)


class RomStepper:
    """Reduced stepper with both system matrices factorised once."""

    def __init__(self, rom_ops: RomOperators, dt: float, nu: float):
        self.ops = rom_ops
        self.dt = float(dt)
        self._lu_v = DenseLU(np.eye(rom_ops.r_u) / dt + nu * rom_ops.A_r)
        self._lu_p = DenseLU(dt * rom_ops.S_r)

    def step(self, state: RomState, reduced_load, t_next: float) -> RomState:
        o = self.ops
        a = self._lu_v.solve(state.a / self.dt + reduced_load - o.G_r @ state.b)
        b = self._lu_p.solve(-(o.D_r @ a))
        return RomState(a, b, state.n + 1, float(t_next))


@dataclass
class RomTrajectory:
    """Per-step ROM records for ``n = n0 .. n_steps``.

    Relative errors against the FOM are ``nan`` at steps where no FOM field
    was stored.  ``ledger`` is the discrete energy sum of the stability
    estimate and ``ledger_bound`` its data bound.
    """

    r_u: int
    r_p: int
    steps: np.ndarray
    times: np.ndarray
    errors: dict
    a: np.ndarray
    b: np.ndarray
    u_norm: np.ndarray
    step_time: np.ndarray
    ledger: float
    ledger_bound: float
    max_pressure_mean: float
    meta: dict = field(default_factory=dict)

    def time_averaged(self, column: str) -> float:
        v = self.errors[column]
        return float(np.nanmean(v[1:]))


def run_rom(rom_ops: RomOperators, problem, config, disc: FeDiscretization,
            initial=None, fom_trajectory=None) -> RomTrajectory:
    """Step the ROM from ``n0`` to ``floor(T/dt)``.

    ``initial`` is the pair ``(u~^{n0}_h, p^{n0}_h)``; if omitted it is read
    from ``fom_trajectory``, which also supplies relative errors.
    """
    fe = disc.ops
    dt, nu, n0, n_steps = config.dt, problem.nu, config.n0, config.n_steps
    if initial is None:
        if fom_trajectory is None:
            raise ValueError("need initial fields or a FOM trajectory")
        initial = fom_trajectory.fields_at(n0)[:2]
    state = rom_init(rom_ops, fe, initial[0], initial[1], n0)
    stepper = RomStepper(rom_ops, dt, nu)
    s5 = disc.sampler(DEGREE5)
    Phi, Psi = rom_ops.Phi, rom_ops.Psi
    mass_w = np.asarray(fe.M_p.sum(axis=0)).ravel()

    steps = np.arange(n0, n_steps + 1)
    times = steps * dt
    k_max = len(steps)
    errors = {c: np.full(k_max, np.nan) for c in ROM_COLUMNS}
    A = np.empty((k_max, rom_ops.r_u))
    B = np.empty((k_max, rom_ops.r_p))
    step_time = np.zeros(k_max)
    fom_slot = {}
    if fom_trajectory is not None:
        fom_slot = {int(n): k for k, n in enumerate(fom_trajectory.stored_steps)}

    ledger_sum = 0.0
    f_sum = 0.0
    max_mean = 0.0
    elapsed = 0.0
    for k, n in enumerate(steps):
        t = times[k]
        if k > 0:
            tick = time.perf_counter()
            f_r = Phi.T @ disc.loads.assemble(problem.forcing, t)
            new = stepper.step(state, f_r, t)
            elapsed += time.perf_counter() - tick
            da = new.a - state.a
            ledger_sum += da @ da + dt * (nu * new.a @ rom_ops.A_r @ new.a
                                          + dt * new.b @ rom_ops.S_r @ new.b)
            f_sum += s5.l2_norm(problem.forcing, t) ** 2
            state = new
        step_time[k] = elapsed
        A[k], B[k] = state.a, state.b
        u = Phi @ state.a
        p = Psi @ state.b
        max_mean = max(max_mean, abs(mass_w @ p))
        errors["eu_exact_l2"][k] = s5.errors(problem.exact_velocity, u, "velocity", t,
                                             gradient=False)[0]
        errors["ep_exact_l2"][k] = s5.errors(problem.exact_pressure, p, "pressure", t,
                                             gradient=False)[0]
        j = fom_slot.get(int(n))
        if j is not None:
            uh, ph = fom_trajectory.u_tilde[j], fom_trajectory.p[j]
            du, dp = uh - u, ph - p
            errors["eu_rel_fom"][k] = np.sqrt((du @ (fe.M_v @ du)) / (uh @ (fe.M_v @ uh)))
            errors["ep_rel_fom"][k] = np.sqrt((dp @ (fe.M_p @ dp)) / (ph @ (fe.M_p @ ph)))

    ledger = float(state.a @ state.a + ledger_sum)
    bound = float(10.0 * (A[0] @ A[0] + dt / nu * f_sum))
    return RomTrajectory(rom_ops.r_u, rom_ops.r_p, steps, times, errors, A, B,
                         np.linalg.norm(A, axis=1), step_time, ledger, bound, max_mean,
                         meta={"adjointness_error": rom_ops.adjointness_error})
