"""Study orchestration: convergence runs, POD phase, ROM phase and the report.

Output tree below ``output_dir``::

    fom/N<N>/errors.csv               per-step errors
    fom/N<N>/checkpoints.csv          errors and stepping time at checkpoints
    fom/N<N>/summary.csv              time-discrete norms and diagnostics
    fom/N<N>/trajectory_velocity.sppd stored intermediate velocities
    fom/N<N>/trajectory_pressure.sppd stored pressures
    fom/rates.csv                     norm, 1/h, error, rate
    pod/basis_{velocity,pressure}.sppd
    pod/eigenvalues_{velocity,pressure}.csv
    pod/identity.csv, pod/summary.csv
    rom/r<r>/errors.csv               per-step ROM errors
    rom/comparison.csv                FOM vs ROM at checkpoints
    rom/trend.csv                     per-rank averages and diagnostics
    report.txt, spectrum.csv, relative_errors.csv
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io, pod
from .config import RunConfig, format_config
from .fem import discretize
from .fom import ERROR_COLUMNS, TABLE_COLUMNS, FomConfig, run_fom
from .manufactured import manufactured_problem
from .rom import ROM_COLUMNS, build_rom_operators, run_rom

__all__ = [
    "MissingInputError",
    "RATE_MEASURES",
    "observed_rates",
    "run_fom_case",
    "run_fom_study",
    "LoadedTrajectory",
    "load_trajectory",
    "run_pod_phase",
    "run_rom_phase",
    "build_report",
]


class MissingInputError(FileNotFoundError):
    pass


#: (summary key, table label) for the rates table, tabulated measure first
RATE_MEASURES = (
    ("max_eu_tilde_l2_x3", "max ||u-u~_h|| (x, q3)"),
    ("max_eu_l2_x3", "max ||u-u_h|| (x, q3)"),
    ("l2_eu_h1semi_x3", "l2(||grad(u-u~_h)||) (x, q3)"),
    ("max_ep_l2_q3", "max ||p-p_h|| (q3)"),
    ("l2_ep_l2_q3", "l2(||p-p_h||) (q3)"),
    ("sdt_l2_ep_h1semi_q3", "sqrt(dt) l2(||grad(p-p_h)||) (q3)"),
    ("max_eu_tilde_l2", "max ||u-u~_h||"),
    ("max_eu_l2", "max ||u-u_h||"),
    ("l2_eu_h1semi", "l2(||grad(u-u~_h)||)"),
    ("max_ep_l2", "max ||p-p_h||"),
    ("l2_ep_l2", "l2(||p-p_h||)"),
    ("sdt_l2_ep_h1semi", "sqrt(dt) l2(||grad(p-p_h)||)"),
)


def observed_rates(errors):
    """``log2(e_coarse / e_fine)`` for consecutive entries; first is None."""
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else None)
    return out


def _fom_dir(out, N):
    return Path(out) / "fom" / f"N{N}"


def _require(*paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise MissingInputError("missing input: " + ", ".join(missing))


def _read_kv(path):
    _, rows = io.read_csv(path)
    return {k: v for k, v in rows}


def _num(text):
    return float(text) if text not in ("", None) else float("nan")


# ---------------------------------------------------------------------------
# FOM phase

def run_fom_case(cfg: RunConfig, N: int, out) -> dict:
    """Run one mesh size and write its files; returns the summary dict."""
    fcfg = cfg.fom_config(N)
    problem = manufactured_problem(cfg.nu, cfg.T)
    disc = discretize(N)
    traj = run_fom(problem, fcfg, disc)
    d = _fom_dir(out, N)
    d.mkdir(parents=True, exist_ok=True)

    cols = ERROR_COLUMNS + TABLE_COLUMNS
    io.write_csv(d / "errors.csv", ("n", "t") + cols,
                 ([n, traj.times[n]] + [traj.errors[c][n] for c in cols]
                  for n in range(fcfg.n_steps + 1)))
    io.write_trajectory(d / "trajectory_velocity.sppd", traj, "velocity")
    io.write_trajectory(d / "trajectory_pressure.sppd", traj, "pressure")
    io.write_csv(d / "checkpoints.csv",
                 ("n", "t", "eu_tilde_l2", "eu_l2", "ep_l2", "step_time"),
                 ([n, traj.times[n], traj.errors["eu_tilde_l2"][n], traj.errors["eu_l2"][n],
                   traj.errors["ep_l2"][n], traj.step_time[n] if cfg.timing else None]
                  for n in fcfg.checkpoint_steps()))

    summary = traj.summary()
    e = traj.energy
    summary.update({
        "N": N, "dt": fcfg.dt, "n_steps": fcfg.n_steps,
        "max_compatibility": traj.max_compatibility,
        "max_pressure_mean": traj.max_pressure_mean,
        "max_u_norm": float(np.max(e["u_norm"])),
        "energy_bound": float(2 * max(e["u_norm"][0], np.max(e["f_norm"]))),
        "energy_ledger": float(e["u_norm"][-1] ** 2
                               + 2 * cfg.nu * fcfg.dt * np.sum(e["grad_u_sq"][1:])),
        "step_time": float(traj.step_time[-1]) if cfg.timing else None,
    })
    io.write_csv(d / "summary.csv", ("key", "value"), summary.items())
    return summary


def _fom_case_star(args):
    return run_fom_case(*args)


def run_fom_study(cfg: RunConfig, out=None, threads: int = 1, log=print) -> dict:
    """Run every mesh size (concurrently if ``threads > 1``) and write the rates table."""
    out = Path(out or cfg.output_dir)
    for N in cfg.mesh_sizes:
        cfg.fom_config(N)                 # validate all before running any
    jobs = [(cfg, N, out) for N in cfg.mesh_sizes]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_fom_case_star, jobs))
    else:
        results = []
        for job in jobs:
            log(f"fom: N={job[1]} ({job[0].fom_config(job[1]).n_steps} steps)")
            results.append(run_fom_case(*job))
    summaries = dict(zip(cfg.mesh_sizes, results))
    _write_rates(out, summaries)
    return summaries


def _write_rates(out, summaries):
    Ns = sorted(summaries)
    rows = []
    for key, label in RATE_MEASURES:
        errs = [summaries[N][key] for N in Ns]
        for N, e, r in zip(Ns, errs, observed_rates(errs)):
            rows.append([label, N, e, r])
    io.write_csv(Path(out) / "fom" / "rates.csv", ("norm", "1/h", "error", "rate"), rows)


# ---------------------------------------------------------------------------
# POD phase

class LoadedTrajectory:
    """Stored FOM fields read back from the container files.

    Offers the subset of the :class:`~stokes_pod.fom.FomTrajectory` interface
    used by the POD and ROM phases.
    """

    def __init__(self, velocity: io.FieldFile, pressure: io.FieldFile, config: FomConfig):
        if not np.array_equal(velocity.labels, pressure.labels):
            raise io.FormatError("velocity and pressure files store different steps")
        self.config = config
        self.stored_steps = velocity.labels
        self.u_tilde = velocity.data.T
        self.p = pressure.data.T
        self.dt = velocity.dt
        self._times = dict(zip(velocity.labels.tolist(), velocity.scalars.tolist()))

    def index_of(self, n):
        k = int(np.searchsorted(self.stored_steps, n))
        if k >= len(self.stored_steps) or self.stored_steps[k] != n:
            raise KeyError(f"step {n} was not stored")
        return k

    def fields_at(self, n):
        from .fem import FieldVec

        k = self.index_of(n)
        t = self._times[int(n)]
        return (FieldVec(self.u_tilde[k], "velocity", t),
                FieldVec(self.p[k], "pressure", t), None)


def load_trajectory(cfg: RunConfig, out, N: int) -> LoadedTrajectory:
    d = _fom_dir(out, N)
    vpath, ppath = d / "trajectory_velocity.sppd", d / "trajectory_pressure.sppd"
    _require(vpath, ppath)
    return LoadedTrajectory(io.read_trajectory(vpath), io.read_trajectory(ppath),
                            cfg.fom_config(N))


def _r_for_energy(basis, target):
    for r in range(1, basis.d + 1):
        if pod.energy_fraction(basis, r) >= target:
            return r
    return basis.d


def run_pod_phase(cfg: RunConfig, out=None, log=print) -> dict:
    """Build both bases from the snapshot mesh trajectory and write POD outputs."""
    out = Path(out or cfg.output_dir)
    N = cfg.snapshot_mesh
    traj = load_trajectory(cfg, out, N)
    disc = discretize(N)
    masses = {"velocity": disc.ops.M_v, "pressure": disc.ops.M_p}
    stiff = {"velocity": disc.ops.A_v, "pressure": disc.ops.S_p}
    pdir = out / "pod"
    pdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    summary = {"N": N, "n_snapshots": 2 * cfg.M - 1}
    id_rows = []
    r_probe = 4
    for kind in ("velocity", "pressure"):
        snaps = pod.build_snapshots(traj, kind)
        basis = pod.build_pod_basis(snaps, masses[kind], cfg.rank_tolerance)
        io.write_basis(pdir / f"basis_{kind}.sppd", basis, N, traj.dt, (cfg.n0, cfg.M))
        io.write_csv(pdir / f"eigenvalues_{kind}.csv",
                     ("i", "lambda", "cumulative_energy_fraction"),
                     ([i, lam, pod.energy_fraction(basis, i)]
                      for i, lam in enumerate(basis.eigenvalues, 1)))
        rep = pod.identity_report(snaps, basis, masses[kind])
        id_rows += [[kind, c.r, c.lhs, c.lhs_sum, c.rhs] for c in rep["checks"]]
        rp = min(r_probe, basis.d)
        worst, bound = pod.pointwise_projection_check(basis, masses[kind],
                                                      snaps.values.T, rp, cfg.T)
        ratio, const = pod.inverse_estimate_check(basis, masses[kind], stiff[kind], rp,
                                                  50, rng)
        summary.update({
            f"d_{kind}": basis.d,
            f"rank_threshold_{kind}": basis.rank_threshold,
            f"orthonormality_{kind}": basis.orthonormality_error,
            f"energy_r{rp}_{kind}": pod.energy_fraction(basis, rp),
            f"r_9999_{kind}": _r_for_energy(basis, 0.9999),
            f"identity_normalization_{kind}": rep["normalization"],
            f"identity_mismatch_{kind}": rep["max_relative_mismatch"],
            f"identity_mismatch_other_{kind}":
                rep["mismatch"]["mean" if rep["normalization"] == "sum" else "sum"],
            f"pointwise_error_r{rp}_{kind}": worst,
            f"pointwise_bound_r{rp}_{kind}": bound,
            f"inverse_ratio_r{rp}_{kind}": ratio,
            f"inverse_constant_r{rp}_{kind}": const,
        })
        log(f"pod: {kind}: d = {basis.d}, r for 99.99% energy = "
            f"{summary[f'r_9999_{kind}']}, identity ({rep['normalization']}) "
            f"mismatch {rep['max_relative_mismatch']:.2e}")
    io.write_csv(pdir / "identity.csv", ("field", "r", "lhs", "lhs_sum", "rhs"), id_rows)
    io.write_csv(pdir / "summary.csv", ("key", "value"), summary.items())
    return summary


# ---------------------------------------------------------------------------
# ROM phase

def run_rom_phase(cfg: RunConfig, out=None, log=print) -> dict:
    """Run the ROM for every configured rank against the snapshot-mesh FOM.

    Ranks above the basis dimension are clipped to it; the effective rank is
    written next to the requested one.
    """
    out = Path(out or cfg.output_dir)
    N = cfg.snapshot_mesh
    pdir = out / "pod"
    _require(pdir / "basis_velocity.sppd", pdir / "basis_pressure.sppd",
             _fom_dir(out, N) / "checkpoints.csv")
    vb, _ = io.read_basis(pdir / "basis_velocity.sppd")
    pb, _ = io.read_basis(pdir / "basis_pressure.sppd")
    traj = load_trajectory(cfg, out, N)
    fcfg = traj.config
    disc = discretize(N)
    problem = manufactured_problem(cfg.nu, cfg.T)
    _, cp_rows = io.read_csv(_fom_dir(out, N) / "checkpoints.csv")
    fom_cp = {int(r[0]): r for r in cp_rows}
    fom_total = _num(fom_cp[max(fom_cp)][5]) if fom_cp else float("nan")

    cache = {}
    comparison, trend = [], []
    rdir = out / "rom"
    for r in cfg.ranks:
        re = min(r, vb.d, pb.d)
        if re not in cache:
            log(f"rom: r={re}")
            ops = build_rom_operators((vb, pb), disc.ops, re)
            cache[re] = run_rom(ops, problem, fcfg, disc, fom_trajectory=traj)
        rt = cache[re]
        io.write_csv(rdir / f"r{r}" / "errors.csv", ("n", "t") + ROM_COLUMNS,
                     ([n, t] + [rt.errors[c][k] for c in ROM_COLUMNS]
                      for k, (n, t) in enumerate(zip(rt.steps, rt.times))))
        for n, row in sorted(fom_cp.items()):
            k = n - int(rt.steps[0])
            if k < 0:
                continue
            comparison.append([r, re, n, rt.times[k], _num(row[2]), rt.errors["eu_exact_l2"][k],
                               _num(row[4]), rt.errors["ep_exact_l2"][k], _num(row[5]),
                               rt.step_time[k] if cfg.timing else None])
        rom_total = float(rt.step_time[-1])
        trend.append([r, re, rt.time_averaged("eu_rel_fom"), rt.time_averaged("ep_rel_fom"),
                      rt.ledger, rt.ledger_bound, float(np.max(rt.u_norm) / rt.u_norm[0]),
                      rt.meta["adjointness_error"], rt.max_pressure_mean,
                      rom_total if cfg.timing else None,
                      rom_total / fom_total if cfg.timing else None])
    io.write_csv(rdir / "comparison.csv",
                 ("r", "r_effective", "n", "t", "fom_eu", "rom_eu", "fom_ep", "rom_ep",
                  "fom_time", "rom_time"), comparison)
    io.write_csv(rdir / "trend.csv",
                 ("r", "r_effective", "mean_eu_rel", "mean_ep_rel", "ledger", "ledger_bound",
                  "max_norm_ratio", "adjointness_error", "max_pressure_mean", "rom_time",
                  "time_ratio"), trend)
    return {"trend": trend, "comparison": comparison, "runs": cache}


# ---------------------------------------------------------------------------
# report

def _e(v):
    try:
        v = float(v)
    except (TypeError, ValueError):
        return "-"
    return "-" if math.isnan(v) else f"{v:.4e}"


def _r(v):
    return "-" if v is None else f"{v:.4f}"


def _t(v):
    try:
        v = float(v)
    except (TypeError, ValueError):
        return "-"
    return "-" if math.isnan(v) else f"{v:.2f}"


def _rate_block(title, summaries, keys, missing):
    Ns = sorted(summaries)
    lines = [title, "-" * len(title)]
    head = f"{'1/h':>5}"
    for _, label in keys:
        head += f" | {label:>34} {'rate':>7}"
    lines.append(head)
    cols = []
    for key, _ in keys:
        errs = [_num(summaries[N].get(key)) for N in Ns]
        cols.append((errs, observed_rates(errs)))
    for i, N in enumerate(Ns):
        row = f"{N:>5}"
        for errs, rates in cols:
            row += f" | {_e(errs[i]):>34} {_r(rates[i]):>7}"
        lines.append(row)
    for m in missing:
        lines.append(f"  missing: {m}")
    return lines


def build_report(cfg: RunConfig, out=None) -> str:
    """Collect the CSV outputs into ``report.txt`` and the plot data files.

    Missing pieces are marked in the report.  Raises
    :class:`MissingInputError` only when no phase has produced any output.
    """
    out = Path(out or cfg.output_dir)
    inputs = [_fom_dir(out, N) / "summary.csv" for N in cfg.mesh_sizes]
    inputs += [out / "pod" / "summary.csv", out / "rom" / "trend.csv"]
    if not any(p.exists() for p in inputs):
        raise MissingInputError(f"missing input: no study outputs below {out}")
    lines = ["Stokes projection FEM and POD-ROM study", "=" * 40, "",
             "configuration:"]
    lines += ["  " + s for s in format_config(cfg).splitlines()
              if not s.startswith("output_dir")]
    lines.append("")

    summaries, missing = {}, []
    for N in cfg.mesh_sizes:
        p = _fom_dir(out, N) / "summary.csv"
        if p.exists():
            summaries[N] = _read_kv(p)
        else:
            missing.append(str(p.relative_to(out)))

    t1 = (("max_eu_tilde_l2_x3", "max ||u-u~_h||"), ("max_eu_l2_x3", "max ||u-u_h||"),
          ("l2_eu_h1semi_x3", "l2(||grad(u-u~_h)||)"))
    t2 = (("max_ep_l2_q3", "max ||p-p_h||"), ("l2_ep_l2_q3", "l2(||p-p_h||)"),
          ("sdt_l2_ep_h1semi_q3", "sqrt(dt) l2(||grad(p-p_h)||)"))
    t1f = tuple((k[:-3], l) for k, l in t1)
    t2f = tuple((k[:-3], l) for k, l in t2)
    lines += _rate_block("Velocity convergence (first component, 4-point rule)",
                         summaries, t1, missing) + [""]
    lines += _rate_block("Velocity convergence (full vector, 7-point rule)",
                         summaries, t1f, []) + [""]
    lines += _rate_block("Pressure convergence (4-point rule)", summaries, t2,
                         missing) + [""]
    lines += _rate_block("Pressure convergence (7-point rule)", summaries, t2f,
                         []) + [""]

    # POD
    pdir = out / "pod"
    lines += ["POD spectrum", "------------"]
    spectrum_rows = []
    if (pdir / "summary.csv").exists():
        ps = _read_kv(pdir / "summary.csv")
        lines.append(f"  snapshot mesh N={ps['N']}, N_s={ps['n_snapshots']}")
        for kind in ("velocity", "pressure"):
            lines.append(
                f"  {kind:>8}: d={ps[f'd_{kind}']}, energy(r=4)={float(ps.get(f'energy_r4_{kind}', 'nan')):.8f}, "
                f"r(99.99%)={ps[f'r_9999_{kind}']}, orthonormality={_e(ps[f'orthonormality_{kind}'])}, "
                f"identity[{ps[f'identity_normalization_{kind}']}] mismatch="
                f"{_e(ps[f'identity_mismatch_{kind}'])}")
            _, rows = io.read_csv(pdir / f"eigenvalues_{kind}.csv")
            spectrum_rows += [[kind] + row for row in rows]
    else:
        lines.append("  missing: pod/summary.csv")
    io.write_csv(out / "spectrum.csv",
                 ("field", "i", "lambda", "cumulative_energy_fraction"), spectrum_rows)
    lines.append("")

    # ROM
    rdir = out / "rom"
    dt_label = "Reduced vs full model: errors and stepping time at checkpoints"
    lines += [dt_label, "-" * len(dt_label)]
    rel_rows = []
    if (rdir / "comparison.csv").exists() and (rdir / "trend.csv").exists():
        _, comp = io.read_csv(rdir / "comparison.csv")
        _, trend = io.read_csv(rdir / "trend.csv")
        show = "4" if "4" in {row[0] for row in comp} else comp[0][0] if comp else None
        r_eff = next((row[1] for row in comp if row[0] == show), "-")
        lines.append(f"  N={cfg.snapshot_mesh}, r={show} (effective {r_eff})")
        lines.append(f"{'n':>7} | {'FOM ||u-u~||':>12} {'ROM ||u-u~||':>12} | "
                     f"{'FOM ||p-p||':>12} {'ROM ||p-p||':>12} | {'FOM s':>9} {'ROM s':>9}")
        for row in comp:
            if row[0] != show:
                continue
            lines.append(f"{row[2]:>7} | {_e(row[4]):>12} {_e(row[5]):>12} | "
                         f"{_e(row[6]):>12} {_e(row[7]):>12} | {_t(row[8]):>9} {_t(row[9]):>9}")
        lines += ["", "ROM rank study (time-averaged relative errors against the FOM)"]
        lines.append(f"{'r':>4} {'r_eff':>5} | {'rel u':>11} {'rel p':>11} | "
                     f"{'ledger':>11} {'bound':>11} | {'max|a|/|a0|':>11} | {'time ratio':>10}")
        for row in trend:
            lines.append(f"{row[0]:>4} {row[1]:>5} | {_e(row[2]):>11} {_e(row[3]):>11} | "
                         f"{_e(row[4]):>11} {_e(row[5]):>11} | {float(row[6]):>11.4f} | "
                         f"{_r(_num(row[10])) if row[10] else '-':>10}")
        for r in sorted({int(row[0]) for row in trend}):
            _, rows = io.read_csv(rdir / f"r{r}" / "errors.csv")
            for row in rows:
                if row[4] != "":
                    rel_rows.append(["velocity", r, row[0], row[1], row[4]])
                    rel_rows.append(["pressure", r, row[0], row[1], row[5]])
    else:
        lines.append("  missing: rom/comparison.csv")
    io.write_csv(out / "relative_errors.csv",
                 ("field", "r", "n", "t", "relative_error"), rel_rows)

    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    return text
