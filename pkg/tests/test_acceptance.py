"""The eleven acceptance criteria at their stated tolerances.

Each test records a PASS/FAIL line that is printed at the end of the run.
Runs that the criteria phrase as commands go through the CLI entry point.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from wavelab.decay import localization_check
from wavelab.evolve import Propagator
from wavelab.floquet import FloquetOperator, arnoldi_spectrum, dense_floquet_matrix, dense_spectrum
from wavelab.geometry import Scenario
from wavelab.lab.cli import build_report, main
from wavelab.lab.scenarios import builtin

pytestmark = pytest.mark.acceptance


CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_cli(args):
    t0 = time.perf_counter()
    code = main(args)
    return code, time.perf_counter() - t0


def summary(out):
    with open(out / "manifest.json") as fh:
        return json.load(fh)["summary"]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """CLI decay runs shared by several criteria."""
    root = tmp_path_factory.mktemp("acceptance")
    done = {}

    def get(name, *extra):
        key = (name,) + extra
        if key not in done:
            out = root / ("-".join(key).replace("--", ""))
            code, secs = run_cli(["decay", "--scenario", name, "--seed", "0", "--out", str(out), *extra])
            done[key] = (code, out, secs)
        return done[key]

    return get


def test_01_conservation(criterion, tmp_path):
    code, secs = run_cli(["evolve", "--config", str(CONFIGS / "conservation.ini"), "--out", str(tmp_path)])
    s = summary(tmp_path)
    drift = s["relative_drift"]
    ok = criterion(1, "energy conservation 64^3, 1e4 steps",
                   code == 0 and s["steps"] == 10_000 and drift <= 1e-8 and secs <= 60,
                   f"drift {drift:.2e} (<= 1e-8), {secs:.1f} s (<= 60 s)")
    assert ok


def test_02_huygens(criterion, tmp_path):
    code, secs = run_cli(["decay", "--scenario", "free3d-radial", "--out", str(tmp_path)])
    s = summary(tmp_path)
    ratio, order = s["huygens_ratio"], s["huygens_order"]
    ok = criterion(2, "Huygens on the 3D radial path",
                   code == 0 and ratio < 1e-6 and order >= 1.8 and secs <= 10,
                   f"worst ratio {ratio:.2e} (< 1e-6), min order {order:.1f} (>= 1.8), {secs:.1f} s")
    assert ok


def test_03_finite_speed(criterion):
    b = builtin("glued-T4")
    prop_u = b.propagator()
    base = b.family().base
    static = Scenario(replace(base.metric, period=prop_u.scenario.period), label=base.label)
    prop_v = Propagator(static, prop_u.grid, prop_u.plan)
    res = localization_check(prop_u, prop_v, b.family().t1, trials=4)
    ok = criterion(3, "finite speed on glued-T4", res.exact and res.difference > 0 and prop_u.plan.cfl <= 1,
                   f"left {res.left_residual:g}, right {res.right_residual:g}, "
                   f"U - V max {res.difference:.2e}, psi radius {res.psi_radius:.3f}")
    assert ok


def test_04_periodicity(criterion, tmp_path):
    code, _ = run_cli(["evolve", "--config", str(CONFIGS / "periodicity.ini"), "--out", str(tmp_path)])
    pump = code == 0 and summary(tmp_path)["periodicity_bitwise"]
    # a moving obstacle as well: the mask schedule must repeat too
    prop = builtin("moving-ball").propagator()
    n_t = prop.steps_per_period
    rng = np.random.default_rng(4)
    moving = True
    for _ in range(10):
        u, v = rng.standard_normal(prop.grid.shape), rng.standard_normal(prop.grid.shape)
        a = prop.evolve_steps(prop.state_at_step(u, v, 0), n_t)
        b = prop.evolve_steps(prop.state_at_step(u, v, n_t), n_t)
        moving &= bool(np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v))
    ok = criterion(4, "U(T,0) = U(2T,T) on 10 random states", pump and moving,
                   f"pump-cavity {'bitwise' if pump else 'differs'}, "
                   f"moving-ball {'bitwise' if moving else 'differs'}")
    assert ok


def test_05_resolvent(criterion, tmp_path):
    code, _ = run_cli(["resolvent", "--scenario", "tiny1d", "--out", str(tmp_path)])
    s = summary(tmp_path)
    ok = criterion(5, "resolvent series vs solve, 2 pi periodicity",
                   code == 0 and s["series_vs_solve"] <= 1e-8 and s["periodicity"] <= 1e-12,
                   f"series/solve {s['series_vs_solve']:.1e} (<= 1e-8), "
                   f"periodicity {s['periodicity']:.1e} (<= 1e-12), A = {s['growth_A']:.4f}")
    assert ok


def test_06_spectrum_oracle(criterion, tmp_path):
    prop = builtin("tiny1d").propagator()
    m = FloquetOperator(prop)
    t0 = time.perf_counter()
    spec = arnoldi_spectrum(m, k=5, tol=1e-12)
    dense = dense_spectrum(dense_floquet_matrix(m))
    secs = time.perf_counter() - t0
    diff = max(abs(abs(a) - abs(b)) for a, b in zip(spec.eigenvalues, dense[:5]))
    code, _ = run_cli(["spectrum", "--scenario", "tiny1d", "--out", str(tmp_path)])
    cli_diff = summary(tmp_path)["dense_max_abs_diff"]
    ok = criterion(6, "tiny1d Arnoldi top-5 vs dense",
                   m.dim <= 2000 and diff <= 1e-8 and cli_diff <= 1e-8 and secs <= 30 and code == 0,
                   f"dim {m.dim}, max ||mu| diff| {diff:.1e} (cli {cli_diff:.1e}), {secs:.1f} s")
    assert ok


def _decay_check(runs, name):
    code, out, secs = runs(name)
    s = summary(out)
    est, fit = s["delta_est_per_time"], s["rate"]
    rel = abs(fit - est) / est if est else math.inf
    good = code == 0 and s["model"] == "exp" and fit > 0 and rel <= 0.15
    return good, f"{name}: fit {fit:.4f} vs est {est:.4f} ({100 * rel:.1f}%)"


def test_07_decay_rates(criterion, runs):
    ok_a, da = _decay_check(runs, "static-nontrap")
    ok_b, db = _decay_check(runs, "glued-T4")
    ok = criterion(7, "fitted decay vs leading pole (<= 15%)", ok_a and ok_b, f"{da}; {db}")
    assert ok


def test_08_growth(criterion, runs):
    code, out, _ = runs("pump-cavity")
    s = summary(out)
    target = s["log_mu_per_time"]
    rel = abs(s["rate"] - target) / target
    ok = criterion(8, "pump-cavity growth vs ln|mu_max|/T (<= 10%)",
                   code == 0 and s["flagged"] > 0 and s["model"] == "growth" and rel <= 0.10,
                   f"flagged {s['flagged']}, growth {s['rate']:.4f} vs {target:.4f} ({100 * rel:.1f}%)")
    assert ok


def test_report_opposite_verdicts(runs):
    _, decay_dir, _ = runs("static-nontrap")
    _, growth_dir, _ = runs("pump-cavity")
    rows = list(csv.DictReader(build_report([str(decay_dir), str(growth_dir)]).splitlines()))
    assert {r["scenario"]: r["verdict"] for r in rows} == {"static-nontrap": "decay",
                                                          "pump-cavity": "growth"}


def test_09_sweep(criterion, tmp_path):
    code, _ = run_cli(["sweep", "--scenario", "glued-T1", "--out", str(tmp_path)])
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    s = summary(tmp_path)
    est = " ".join(f"{float(r['delta_est']):.3f}" for r in rows)
    ok = criterion(9, "delta_est(T) trend over T1, 2T1, 4T1, 8T1",
                   code == 0 and s["threshold"] is not None and s["nondecreasing"],
                   f"T* = {s['threshold']}, delta_est {est}, localization max {s['localization_max']:g}")
    assert ok


def test_10_rays(criterion, tmp_path):
    code_m, _ = run_cli(["rays", "--config", str(CONFIGS / "rays-selftest.ini"), "--out", str(tmp_path / "m")])
    code_t, _ = run_cli(["rays", "--scenario", "two-ball-trap", "--out", str(tmp_path / "t")])
    m, t = summary(tmp_path / "m"), summary(tmp_path / "t")
    t1 = m["T1_estimate"]
    ok = (code_m == 0 and code_t == 0 and m["straight_line"] <= 1e-10 and m["involution"] <= 1e-12
          and m["doppler"] <= 1e-8 and t["witnesses"] > 0 and m["witnesses"] == 0
          and t1 is not None and math.isfinite(t1))
    ok = criterion(10, "rays", ok,
                   f"line {m['straight_line']:.1e}, involution {m['involution']:.1e}, "
                   f"Doppler {m['doppler']:.1e}, two-ball witnesses {t['witnesses']}, "
                   f"moving-ball T1 {t1:.3f}")
    assert ok


def test_11_determinism(criterion, runs):
    _, first, _ = runs("static-nontrap")
    code, second, _ = runs("static-nontrap", "--threads", "2")
    names = ("profile.csv", "poles.csv", "fit.txt", "poles.txt")
    same = all((first / n).read_bytes() == (second / n).read_bytes() for n in names)
    ok = criterion(11, "repeated cmd_decay byte-identical", code == 0 and same,
                   "static-nontrap, threads 1 vs 2: " + ("identical" if same else "differ"))
    assert ok
