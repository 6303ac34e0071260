"""Shared, session-cached simulation runs.

The expensive runs (the N = 4, 8, 16 convergence study and the N = 32
POD/ROM study) are computed once per session and reused by every module.
"""

import functools

import numpy as np
import pytest

from stokes_pod import pod
from stokes_pod.fem import discretize
from stokes_pod.fom import FomConfig, run_fom
from stokes_pod.manufactured import manufactured_problem
from stokes_pod.rom import build_rom_operators, run_rom

STUDY_RANKS = (2, 4, 6, 8, 12, 16)


@functools.lru_cache(maxsize=None)
def disc(N):
    return discretize(N)


@functools.lru_cache(maxsize=None)
def fom_run(N, dt_coefficient=0.1):
    cfg = FomConfig(N, dt_coefficient)
    return run_fom(manufactured_problem(), cfg, disc(N))


class Study:
    """FOM, bases and ROM runs on one snapshot mesh."""

    def __init__(self, N, ranks=STUDY_RANKS):
        self.N = N
        self.disc = disc(N)
        self.problem = manufactured_problem()
        self.fom = fom_run(N)
        ops = self.disc.ops
        self.snaps_u = pod.build_snapshots(self.fom, "velocity")
        self.snaps_p = pod.build_snapshots(self.fom, "pressure")
        self.basis_u = pod.build_pod_basis(self.snaps_u, ops.M_v)
        self.basis_p = pod.build_pod_basis(self.snaps_p, ops.M_p)
        self.d = min(self.basis_u.d, self.basis_p.d)
        self.rom = {}
        self.rom_ops = {}
        for r in ranks:
            re = min(r, self.d)
            if re not in self.rom:
                self.rom_ops[re] = build_rom_operators((self.basis_u, self.basis_p), ops, re)
                self.rom[re] = run_rom(self.rom_ops[re], self.problem, self.fom.config,
                                       self.disc, fom_trajectory=self.fom)

    def effective(self, r):
        return min(r, self.d)


@functools.lru_cache(maxsize=None)
def study(N):
    return Study(N)


@pytest.fixture(scope="session")
def problem():
    return manufactured_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
