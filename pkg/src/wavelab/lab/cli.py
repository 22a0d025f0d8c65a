"""Command-line front end.

Exit codes: 0 ok, 1 a check failed (validation, integrity), 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import sys
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .. import __version__
from .. import decay as dec
from .. import floquet as fl
from .. import rays
from ..evolve import (BlowUpError, CFLViolation, GridError, LatticeError, Propagator, StepPlan,
                      fit_growth_bound, huygens_check)
from ..evolve.snapshot import encode_snapshot, energy_trace_csv
from ..geometry import Sampling, Scenario, ScenarioError, flat_metric, smooth_bump, validate_scenario
from .config import ConfigError, ExperimentConfig, load_config, option
from .manifest import IntegrityError, RunManifest, load_manifest

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("validate", "evolve", "decay", "spectrum", "resolvent", "rays", "sweep", "report")


def _g(x: float) -> str:
    return f"{x:.17g}"


def _propagator(cfg: ExperimentConfig) -> Propagator:
    plan = StepPlan.for_scenario(cfg.scenario, cfg.grid, **cfg.plan)
    return Propagator(cfg.scenario, cfg.grid, plan)


def _run_hash(cfg: ExperimentConfig, command: str) -> str:
    return hashlib.sha256(f"{cfg.seed}\n{cfg.text}".encode()).hexdigest()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(cfg: ExperimentConfig, out: str, man: RunManifest, threads: int) -> int:
    report = validate_scenario(cfg.scenario, Sampling())
    man.add(out, "validation.txt", report.to_text())
    man.summary.update(ok=report.ok)
    return EXIT_OK if report.ok else EXIT_CHECK


def cmd_evolve(cfg: ExperimentConfig, out: str, man: RunManifest, threads: int) -> int:
    prop = _propagator(cfg)
    horizon = option(cfg, "evolve", "time", float, 2.0 * cfg.scenario.period)
    width = option(cfg, "evolve", "width", float, 0.3)
    variant = option(cfg, "evolve", "variant", str, "metric")
    every = option(cfg, "evolve", "every", int, prop.steps_per_period)
    x = prop.grid.centers()
    centre = np.zeros(prop.grid.n)
    centre[0] = option(cfg, "evolve", "offset", float, 0.0)
    u0 = np.exp(-np.sum((x - centre) ** 2, axis=-1) / width ** 2)
    chi = dec.decay_cutoff(prop)
    nsteps = int(math.ceil(horizon / prop.dt - 1e-9))
    rows = []
    state = None
    for state in prop.trajectory(prop.state(u0), nsteps, every):
        rows.append((state.t, prop.energy(state, variant=variant).value,
                     prop.energy(state, cutoff=chi, variant=variant).value, variant))
    man.add(out, "energy.csv", energy_trace_csv(rows))
    man.add(out, "final.fwlb", encode_snapshot(state, prop.grid.h, prop.dt))
    e0, e1 = rows[0][1], rows[-1][1]
    man.summary.update(steps=nsteps, dt=prop.dt, energy_initial=e0, energy_final=e1,
                       relative_drift=abs(e1 - e0) / e0 if e0 else 0.0)
    count = option(cfg, "evolve", "periodicity_states", int, 0)
    if count > 0:
        same = _periodicity_check(prop, count, cfg.seed)
        man.add(out, "periodicity.txt", f"states = {count}\nbitwise = {str(same).lower()}\n")
        man.summary["periodicity_bitwise"] = same
        return EXIT_OK if same else EXIT_CHECK
    return EXIT_OK


def _periodicity_check(prop: Propagator, count: int, seed: int) -> bool:
    """``U(T, 0) f`` against ``U(2T, T) f`` on random states, compared bitwise."""
    n_t = prop.steps_per_period
    rng = np.random.default_rng(seed)
    for _ in range(count):
        u, v = rng.standard_normal(prop.grid.shape), rng.standard_normal(prop.grid.shape)
        a = prop.evolve_steps(prop.state_at_step(u, v, 0), n_t)
        b = prop.evolve_steps(prop.state_at_step(u, v, n_t), n_t)
        if not (np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)):
            return False
    return True


def _radial_decay(cfg: ExperimentConfig, out: str, man: RunManifest) -> int:
    support = option(cfg, "decay", "support", float, 1.0)
    rho = option(cfg, "decay", "rho", float, 1.0)
    t = option(cfg, "decay", "time", float, support + rho + 1.0)
    nodes = option(cfg, "decay", "nodes_per_unit", int, 100)
    refinements = option(cfg, "decay", "refinements", int, 2)
    horizon = option(cfg, "decay", "horizon", float, 2.0 * t)

    def u0(r):
        return smooth_bump(r / support)

    prof = dec.radial_profile(u0, support, horizon, rho, nodes)
    hc = huygens_check(u0, support, t, rho, nodes, refinements)
    lines = ["path = radial", f"support = {_g(support)}", f"rho = {_g(rho)}", f"time = {_g(t)}"]
    for h, r in zip(hc.mesh_sizes, hc.ratios):
        lines.append(f"h = {_g(h)}  ratio = {_g(r)}")
    lines.append("orders = " + " ".join(_g(o) for o in hc.orders))
    lines.append(f"worst_ratio = {_g(hc.worst_ratio)}")
    lines.append(f"min_order = {_g(hc.min_order)}")
    man.add(out, "profile.csv", prof.to_csv())
    man.add(out, "fit.txt", "\n".join(lines) + "\n")
    ok = hc.worst_ratio < 1e-6 and hc.min_order >= 1.8
    man.summary.update(verdict="decay" if ok else "neither", huygens_ratio=hc.worst_ratio,
                       huygens_order=hc.min_order, flagged=0)
    return EXIT_OK


def cmd_decay(cfg: ExperimentConfig, out: str, man: RunManifest, threads: int) -> int:
    if option(cfg, "decay", "path", str, "radial" if cfg.builtin_name == "free3d-radial" else "grid") == "radial":
        return _radial_decay(cfg, out, man)
    prop = _propagator(cfg)
    horizon = option(cfg, "decay", "horizon", float, 30.0)
    ensemble = option(cfg, "decay", "ensemble", int, 32)
    model = option(cfg, "decay", "model", str, "auto")
    poles = option(cfg, "decay", "poles", bool, prop.plan.boundary == "sponge")
    run = dec.decay_run(prop, horizon, ensemble, cfg.seed, model, with_poles=poles, threads=threads)
    man.add(out, "profile.csv", run.profile.to_csv())
    man.add(out, "fit.txt", run.fit.to_text())
    period = cfg.scenario.period
    summary = dict(verdict=run.verdict, model=run.fit.model, rate=run.fit.rate,
                   residual=run.fit.residual, flagged=0)
    if run.poles is not None:
        man.add(out, "poles.csv", run.poles.to_csv())
        man.add(out, "poles.txt", run.poles.to_text())
        summary.update(flagged=len(run.poles.flagged),
                       delta_est_per_time=None if run.poles.delta_est is None else run.poles.delta_est / period,
                       spectral_radius=max((abs(p.mu) for p in run.poles.poles), default=0.0))
        top = max((abs(p.mu) for p in run.poles.poles), default=0.0)
        summary["log_mu_per_time"] = math.log(top) / period if top > 0 else None
    man.summary.update(summary)
    return EXIT_CHECK if run.verdict == "both" else EXIT_OK


def _spectrum_csv(mus, residuals) -> str:
    lines = ["re_mu,im_mu,abs_mu,re_theta,im_theta,residual"]
    for mu, res in zip(mus, residuals):
        th = fl.theta_of(mu)
        lines.append(",".join(_g(v) for v in (mu.real, mu.imag, abs(mu), th.real, th.imag, res)))
    return "\n".join(lines) + "\n"


def cmd_spectrum(cfg: ExperimentConfig, out: str, man: RunManifest, threads: int) -> int:
    prop = _propagator(cfg)
    m = fl.FloquetOperator(prop)
    k = option(cfg, "floquet", "k", int, 6)
    tol = option(cfg, "floquet", "tol", float, 1e-10)
    rep = fl.arnoldi_spectrum(m, k=k, tol=tol, seed=cfg.seed)
    man.add(out, "spectrum.txt", rep.to_text())
    man.add(out, "spectrum.csv", _spectrum_csv(rep.eigenvalues, rep.residuals))
    summary = dict(dim=m.dim, spectral_radius=rep.spectral_radius, converged=rep.converged,
                   matvecs=rep.matvecs)
    dense = option(cfg, "floquet", "dense", bool, m.dim <= 2000)
    if dense:
        mus = fl.dense_spectrum(fl.dense_floquet_matrix(m))
        man.add(out, "dense.csv", _spectrum_csv(mus, [0.0] * len(mus)))
        diff = max(abs(abs(a) - abs(b)) for a, b in zip(rep.eigenvalues, mus[:len(rep.eigenvalues)]))
        summary["dense_max_abs_diff"] = diff
    if prop.plan.boundary == "sponge":
        poles = fl.detect_poles(m, k=k, tol=tol, spectrum=rep)
        man.add(out, "poles.csv", poles.to_csv())
        summary.update(flagged=len(poles.flagged), delta_est=poles.delta_est)
    man.summary.update(summary)
    return EXIT_OK if rep.converged else EXIT_NUMERIC


def cmd_resolvent(cfg: ExperimentConfig, out: str, man: RunManifest, threads: int) -> int:
    prop = _propagator(cfg)
    m = fl.FloquetOperator(prop)
    cut = fl.default_cutoffs(prop)
    bound = fit_growth_bound(prop, samples=option(cfg, "floquet", "bound_samples", int, 4))
    period = cfg.scenario.period
    im = option(cfg, "floquet", "theta_im", float, (bound.A + 1.0) * period)
    re = option(cfg, "floquet", "theta_re", float, 0.7)
    nprobe = option(cfg, "floquet", "probes", int, 5)
    rng = np.random.default_rng(cfg.seed)
    probes = [rng.standard_normal(m.dim) for _ in range(nprobe)]
    theta = complex(re, im)
    ser = fl.resolvent_series(m, cut, theta, probes, bound)
    sol = fl.resolvent_solve(m, cut, theta, probes)
    shifted = fl.resolvent_series(m, cut, theta + 2 * math.pi, probes, bound)
    rel = max(np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(ser.outputs, sol.outputs))
    per = max(np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(shifted.outputs, ser.outputs))
    lines = [f"theta = {_g(theta.real)} {theta.imag:+.17g}i", f"growth_B = {_g(bound.B)}",
             f"growth_A = {_g(bound.A)}", f"series_terms = {ser.n_max}",
             f"series_tail_bound = {_g(ser.certificate)}", f"gmres_residual = {_g(sol.certificate)}",
             f"series_vs_solve = {_g(rel)}", f"periodicity_2pi = {_g(per)}", f"probes = {nprobe}"]
    man.add(out, "resolvent.txt", "\n".join(lines) + "\n")
    man.summary.update(series_vs_solve=rel, periodicity=per, growth_A=bound.A, growth_B=bound.B)
    return EXIT_OK


def cmd_rays(cfg: ExperimentConfig, out: str, man: RunManifest, threads: int) -> int:
    sc = cfg.scenario
    radius = option(cfg, "rays", "radius", float, sc.rho + 0.5)
    budget = option(cfg, "rays", "t_budget", float, 40.0)
    sampling = rays.RaySampling(option(cfg, "rays", "positions", int, 24),
                                option(cfg, "rays", "directions", int, 8),
                                option(cfg, "rays", "times", int, 2), cfg.seed)
    rep = rays.nontrapping_scan(sc, radius, budget, sampling,
                                dt=option(cfg, "rays", "dt", float, 0.02),
                                max_reflections=option(cfg, "rays", "max_reflections", int, 64),
                                threads=threads)
    man.add(out, "scan.txt", rep.to_text())
    for i, w in enumerate(rep.witnesses[:10]):
        man.add(out, f"witness_{i}.csv", w.to_csv())
    man.summary.update(T1_estimate=rep.t1_estimate, witnesses=len(rep.witnesses),
                       grazing_discards=rep.grazing_discards, samples=rep.samples)
    if option(cfg, "rays", "self_test", bool, False):
        checks = _ray_self_test(cfg.seed)
        man.add(out, "selftest.txt", "".join(f"{k} = {_g(v)}\n" for k, v in checks.items()))
        man.summary.update(checks)
        ok = checks["straight_line"] <= 1e-10 and checks["involution"] <= 1e-12 and checks["doppler"] <= 1e-8
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK


def _ray_self_test(seed: int) -> dict:
    """Closed-form ray checks in flat 3D space: line, reflection involution, moving-mirror Doppler."""
    free = Scenario(flat_metric(3, 1.0, 1.0))
    x0, d = np.array([0.3, -0.2, 0.1]), np.array([0.48, 0.6, 0.64])
    tr = rays.trace_ray(rays.null_ray(free, 0.0, x0, d), 10.0, free, dt=0.05)
    line = max(float(np.max(np.abs(np.array(r[2:5]) - (x0 + r[1] * d)))) for r in tr.rows)
    rng = np.random.default_rng(seed)
    inv = 0.0
    for _ in range(100):
        xi = rng.standard_normal(3)
        p = rays.RayState(0.0, np.zeros(3), -float(np.linalg.norm(xi)), xi)
        nx = rng.standard_normal(3)
        nu = (rng.uniform(-0.9, 0.9), nx / np.linalg.norm(nx))
        back = rays.reflect(rays.reflect(p, nu, free), nu, free)
        inv = max(inv, abs(back.tau - p.tau), float(np.max(np.abs(back.xi - p.xi))))
    # flat mirror x1 = 1 - w t moving against a ray along +x1
    w = 0.4
    s = math.sqrt(1 + w * w)
    hit = rays.RayState(0.0, np.array([1.0, 0.0, 0.0]), -1.0, np.array([1.0, 0.0, 0.0]))
    out = rays.reflect(hit, (-w / s, np.array([-1.0, 0.0, 0.0]) / s), free)
    return dict(straight_line=line, involution=inv, doppler=abs(out.tau / hit.tau - (1 + w) / (1 - w)))


def cmd_sweep(cfg: ExperimentConfig, out: str, man: RunManifest, threads: int) -> int:
    if cfg.family is None:
        raise ConfigError("sweep needs a glued family: a glued-T{k} builtin or a [glue] section")
    mult = option(cfg, "decay", "sweep", str, "1 2 4 8")
    try:
        ks = [int(v) for v in mult.split()]
    except ValueError:
        raise ConfigError(f"[decay] sweep = {mult!r} must list integers") from None
    fit = option(cfg, "decay", "sweep_fit", bool, True)
    rep = dec.theorem6_sweep(cfg.family, [k * cfg.family.t1 for k in ks], cfg.grid, cfg.plan,
                             fit=fit, ensemble=option(cfg, "decay", "sweep_ensemble", int, 8),
                             horizon=option(cfg, "decay", "sweep_horizon", float, 60.0),
                             seed=cfg.seed)
    man.add(out, "sweep.csv", rep.to_csv())
    man.summary.update(threshold=rep.threshold, nondecreasing=rep.nondecreasing,
                       localization_max=max(r.localization_residual for r in rep.rows))
    ok = rep.threshold is not None and rep.nondecreasing and all(r.localization_residual == 0 for r in rep.rows)
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("scenario", "config_hash", "commands", "verdict", "fit_model", "fit_rate",
                  "delta_est_per_time", "log_mu_per_time", "flagged")


def build_report(paths) -> str:
    """One row per scenario; labels shared by different configs get a hash suffix."""
    rows: dict = {}
    for p in paths:
        m = load_manifest(p)
        key = (m.scenario, m.config_hash)
        row = rows.setdefault(key, {c: "" for c in REPORT_COLUMNS})
        row["scenario"], row["config_hash"] = m.scenario, m.config_hash[:12]
        row["commands"] = " ".join(sorted(set(row["commands"].split()) | {m.command}))
        s = m.summary
        if m.command == "decay":
            row["verdict"] = s.get("verdict", "")
            row["fit_model"] = s.get("model", "")
            for col, key2 in (("fit_rate", "rate"), ("delta_est_per_time", "delta_est_per_time"),
                              ("log_mu_per_time", "log_mu_per_time")):
                v = s.get(key2)
                row[col] = "" if v is None else _g(v)
            row["flagged"] = str(s.get("flagged", ""))
    labels = [k[0] for k in rows]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for key in sorted(rows):
        row = dict(rows[key])
        if labels.count(key[0]) > 1:
            row["scenario"] = f"{key[0]}#{row['config_hash']}"
        w.writerow([row[c] for c in REPORT_COLUMNS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

HANDLERS = {"validate": cmd_validate, "evolve": cmd_evolve, "decay": cmd_decay,
            "spectrum": cmd_spectrum, "resolvent": cmd_resolvent, "rays": cmd_rays,
            "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wavelab", description="Wave propagation experiments with "
                                 "time-periodic metrics and moving obstacles.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", default=None, help="output directory (default: wavelab-out/<command>)")
        p.add_argument("--threads", type=int, default=1)
        if name == "report":
            p.add_argument("manifests", nargs="*", help="manifest files or run directories")
            continue
        p.add_argument("--config", default=None, help="experiment file (INI)")
        p.add_argument("--scenario", default=None, help="builtin scenario name")
        p.add_argument("--seed", type=int, default=None)
    return ap


def _set_threads(n: int) -> None:
    if n > 1:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or os.path.join("wavelab-out", args.command)
    try:
        _set_threads(args.threads)
        if args.command == "report":
            text = build_report(args.manifests)
            os.makedirs(out, exist_ok=True)
            man = RunManifest("report", "", hashlib.sha256(text.encode()).hexdigest(), 0)
            man.add(out, "summary.csv", text)
            man.write(out)
            sys.stdout.write(text)
            return EXIT_OK
        cfg = load_config(args.config, args.scenario, args.seed)
        os.makedirs(out, exist_ok=True)
        man = RunManifest(args.command, cfg.label, _run_hash(cfg, args.command), cfg.seed)
        code = HANDLERS[args.command](cfg, out, man, args.threads)
        man.exit_code = code
        man.write(out)
        for f in man.files:
            print(os.path.join(out, f["name"]))
        return code
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, ScenarioError, GridError, LatticeError, CFLViolation, dec.DecayError,
            fl.DimensionError, fl.SeriesDivergenceError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BlowUpError, fl.FloquetError, spla.ArpackNoConvergence, np.linalg.LinAlgError,
            FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
