"""Acceptance criteria 1-12, each printing one PASS/FAIL line.

Criteria 1-4 use the N = 4, 8, 16 convergence runs; 5-12 use the N = 32
snapshot-mesh study.  Reference values come from the published tables.
"""

import warnings

import numpy as np
import pytest

from conftest import disc, fom_run, study
from stokes_pod import io, pod
from stokes_pod.linalg import eigh

MESHES = (4, 8, 16)


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


def summaries():
    return [fom_run(N).summary() for N in MESHES]


def rates(values):
    return [float(np.log2(a / b)) for a, b in zip(values, values[1:])]


def within(values, refs, rel):
    return all(abs(v - r) <= rel * abs(r) for v, r in zip(values, refs))


def fmt(values):
    return "[" + ", ".join(f"{v:.5g}" for v in values) + "]"


# -- convergence tables -----------------------------------------------------------

def test_criterion_01_velocity_convergence(verdict):
    e = [s["max_eu_tilde_l2_x3"] for s in summaries()]
    refs, ref_rates = [5.3013e-01, 1.6490e-01, 4.3368e-02], [1.7078, 1.9259]
    r = rates(e)
    ok = within(e, refs, 0.05) and all(abs(a - b) <= 0.15 for a, b in zip(r, ref_rates))
    verdict(1, "max ||u - u~_h||", ok, f"errors {fmt(e)} vs {fmt(refs)}, rates {fmt(r)}")


def test_criterion_02_end_of_step_velocity(verdict):
    e = [s["max_eu_l2_x3"] for s in summaries()]
    refs = [4.6509e-01, 1.4931e-01, 4.0108e-02]
    r = rates(e)
    ok = within(e, refs, 0.05) and abs(r[-1] - 1.8963) <= 0.15
    verdict(2, "max ||u - u_h||", ok, f"errors {fmt(e)} vs {fmt(refs)}, rate(16) {r[-1]:.4f}")


def test_criterion_03_pressure_convergence(verdict):
    s = summaries()
    emax = [x["max_ep_l2_q3"] for x in s]
    el2 = [x["l2_ep_l2_q3"] for x in s]
    rmax, rl2 = [2.7636e+00, 1.1144e+00, 3.6664e-01], [2.2987e+00, 8.8892e-01, 2.7275e-01]
    ok = within(emax, rmax, 0.05) and within(el2, rl2, 0.05)
    verdict(3, "pressure errors", ok, f"max {fmt(emax)} vs {fmt(rmax)}, l2 {fmt(el2)} vs {fmt(rl2)}")


def test_criterion_04_h1_velocity(verdict):
    e = [s["l2_eu_h1semi_x3"] for s in summaries()]
    refs, ref_rates = [4.8187e+00, 2.6626e+00, 1.3785e+00], [0.85582, 0.94976]
    r = rates(e)
    ok = within(e, refs, 0.05) and all(abs(a - b) <= 0.15 for a, b in zip(r, ref_rates))
    verdict(4, "l2(||grad(u - u~_h)||)", ok, f"errors {fmt(e)} vs {fmt(refs)}, rates {fmt(r)}")


# -- POD -------------------------------------------------------------------------

def test_criterion_05_projection_identity(verdict):
    s = study(32)
    ops = s.disc.ops
    reps = [pod.identity_report(s.snaps_u, s.basis_u, ops.M_v),
            pod.identity_report(s.snaps_p, s.basis_p, ops.M_p)]
    worst = max(r["max_relative_mismatch"] for r in reps)
    norms = {r["normalization"] for r in reps}
    ok = worst <= 1e-8 and all(len(r["checks"]) == b.d for r, b in
                               zip(reps, (s.basis_u, s.basis_p)))
    verdict(5, "projection-error identity, r = 1..d", ok,
            f"normalization {sorted(norms)}, max relative mismatch {worst:.3e}")


def test_criterion_06_orthonormality(verdict):
    s = study(32)
    ops = s.disc.ops
    eu = np.max(np.abs(s.basis_u.modes.T @ ops.M_v @ s.basis_u.modes - np.eye(s.basis_u.d)))
    ep = np.max(np.abs(s.basis_p.modes.T @ ops.M_p @ s.basis_p.modes - np.eye(s.basis_p.d)))
    verdict(6, "M-orthonormality", eu <= 1e-8 and ep <= 1e-8,
            f"velocity {eu:.3e}, pressure {ep:.3e}")


def test_criterion_07_energy_capture(verdict):
    s = study(32)
    fu, fp = pod.energy_fraction(s.basis_u, 4), pod.energy_fraction(s.basis_p, 4)
    verdict(7, "energy fraction at r = 4", fu >= 0.999 and fp >= 0.999,
            f"velocity {fu:.8f}, pressure {fp:.8f} (d = {s.basis_u.d}, {s.basis_p.d})")


# -- ROM -------------------------------------------------------------------------

def test_criterion_08_rom_accuracy(verdict):
    s = study(32)
    fom, rom = s.fom, s.rom[s.effective(4)]
    worst = 0.0
    for n in fom.config.checkpoint_steps():
        k = int(n - rom.steps[0])
        for fcol, rcol in (("eu_tilde_l2", "eu_exact_l2"), ("ep_l2", "ep_exact_l2")):
            f, r = fom.errors[fcol][n], rom.errors[rcol][k]
            worst = max(worst, abs(r - f) / f)
    verdict(8, "ROM vs FOM errors at checkpoints (r = 4)", worst <= 0.20,
            f"largest relative deviation {worst:.4f}")


def test_criterion_09_rom_efficiency(verdict):
    s = study(32)
    t_fom = float(s.fom.step_time[-1])
    t_rom = float(s.rom[s.effective(4)].step_time[-1])
    ratio = t_rom / t_fom
    verdict(9, "ROM/FOM stepping time", ratio <= 1 / 3,
            f"ROM {t_rom:.3f} s, FOM {t_fom:.3f} s, ratio {ratio:.4f}")


def test_criterion_10_truncation_trend(verdict):
    s = study(32)
    ranks = (2, 4, 6, 8, 12, 16)
    eu = [s.rom[s.effective(r)].time_averaged("eu_rel_fom") for r in ranks]
    ep = [s.rom[s.effective(r)].time_averaged("ep_rel_fom") for r in ranks]
    ups = int(np.sum(np.diff(ep) > 0))
    ok = bool(np.all(np.diff(eu) <= 0)) and ups <= 1
    verdict(10, "relative error vs rank", ok,
            f"effective ranks {[s.effective(r) for r in ranks]}, velocity {fmt(eu)}, "
            f"pressure {fmt(ep)} ({ups} increases)")


def test_criterion_11_stability(verdict):
    s = study(32)
    parts, ok = [], True
    for r in (4, s.d):
        rt = s.rom[s.effective(r)]
        growth = float(np.max(rt.u_norm) / rt.u_norm[0])
        ok &= growth < 10 and np.isfinite(rt.ledger) and rt.ledger <= rt.ledger_bound
        parts.append(f"r={rt.r_u}: max|a|/|a0| {growth:.4f}, ledger {rt.ledger:.4e} "
                     f"<= {rt.ledger_bound:.4e}")
    verdict(11, "reduced stability", ok, "; ".join(parts))


# -- structure --------------------------------------------------------------------

def test_criterion_12_structural_properties(verdict, tmp_path):
    s = study(32)
    d = s.disc
    inn = d.dofmap.interior_velocity_dofs
    adj = abs(d.ops.G[inn].toarray() + d.ops.D[:, inn].toarray().T).max()
    compat = max(fom_run(N).max_compatibility for N in MESHES + (32,))
    mean = max(fom_run(N).max_pressure_mean for N in MESHES + (32,))

    K = pod.correlation_matrix(s.snaps_u, d.ops.M_v)
    K = K / np.abs(K).max()
    rng = np.random.default_rng(7)
    A = rng.standard_normal((20, 20))
    recon = 0.0
    for S in (K, A + A.T):
        with warnings.catch_warnings():
            # the random test matrix is indefinite by design
            warnings.simplefilter("ignore", RuntimeWarning)
            dec = eigh(S)
        V, lam = dec.eigenvectors, dec.eigenvalues
        recon = max(recon, np.abs(V @ np.diag(lam) @ V.T - S).max())

    traj = s.fom
    same = True
    for kind in ("velocity", "pressure"):
        path = io.write_trajectory(tmp_path / f"{kind}.sppd", traj, kind)
        ff = io.read_trajectory(path)
        arr = traj.u_tilde if kind == "velocity" else traj.p
        same &= ff.data.T.tobytes() == np.ascontiguousarray(arr).tobytes()
        b = s.basis_u if kind == "velocity" else s.basis_p
        io.write_basis(tmp_path / f"b_{kind}.sppd", b, 32, traj.dt, (6, 20))
        back, _ = io.read_basis(tmp_path / f"b_{kind}.sppd")
        same &= back.modes.tobytes() == np.ascontiguousarray(b.modes).tobytes()
        same &= back.eigenvalues.tobytes() == np.ascontiguousarray(b.eigenvalues).tobytes()
    ok = adj <= 1e-12 and compat <= 1e-10 and mean <= 1e-12 and recon <= 1e-9 and same
    verdict(12, "structural properties", ok,
            f"adjointness {adj:.1e}, compatibility {compat:.1e}, pressure mean {mean:.1e}, "
            f"eigen reconstruction {recon:.1e}, bitwise round trip {same}")

