from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavelab.decay import (DecayError, DecayProfile, HorizonError, LocalizationError, decay_cutoff,
                           decay_profile, decay_run, even_envelope, fit_rate, localization_check,
                           localization_radius, radial_profile, random_ensemble,
                           safe_reflecting_horizon, series_decay_check, theorem6_sweep)
from wavelab.evolve import Grid, Propagator, StepPlan
from wavelab.floquet import FloquetOperator, default_cutoffs
from wavelab.geometry import GluedFamily, Scenario, bump_metric, flat_metric, glued_scenario
from wavelab.lab.scenarios import builtin


# -- fits on synthetic data ----------------------------------------------------

def test_exp_fit_recovers_rate():
    t = np.linspace(0, 10, 41)
    fit = fit_rate(t, 3.0 * np.exp(-2.0 * t), model="exp")
    assert fit.rate == pytest.approx(1.0, abs=1e-12)
    assert fit.log_c == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.residual < 1e-12


def test_auto_picks_growth():
    t = np.linspace(0, 5, 30)
    fit = fit_rate(t, np.exp(0.6 * t), model="auto")
    assert fit.model == "growth" and fit.rate == pytest.approx(0.3, abs=1e-12)


def test_even_model_on_exact_envelope():
    t = np.linspace(0, 50, 200)
    fit = fit_rate(t, 2.5 * even_envelope(t) ** 2, model="even")
    assert fit.rate == pytest.approx(2.5, rel=1e-12)
    assert fit.spread < 0.01


def test_fit_respects_transient_and_floor():
    t = np.arange(0, 40.0)
    e = np.where(t < 4, 1.0, np.exp(-t))
    e[30:] = 0.0
    fit = fit_rate(t, e, model="exp", period=2.0)
    assert fit.window == (4.0, 29.0)
    assert fit.rate == pytest.approx(0.5, abs=1e-12)


def test_zero_data_rejected():
    with pytest.raises(DecayError):
        fit_rate(np.arange(20.0), np.zeros(20))


def test_unknown_model_rejected():
    with pytest.raises(ValueError):
        fit_rate(np.arange(20.0), np.ones(20), model="power")


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(-5, 5))
def test_exp_fit_property(delta, logc):
    t = np.linspace(0, 8, 33)
    fit = fit_rate(t, np.exp(logc - 2 * delta * t), model="exp")
    assert fit.rate == pytest.approx(delta, rel=1e-9, abs=1e-12)


def test_profile_csv_format():
    p = DecayProfile("x", "chi", (0.0, 1.0), np.array([[1.0, 0.5], [3.0, 0.25]]), (1.0, 1.0))
    lines = p.to_csv().splitlines()
    assert lines[0] == "t,E_mean,E_max,ensemble,norm_variant"
    assert lines[1] == "0,2,3,2,paper"
    with pytest.raises(DecayError):
        DecayProfile("x", "chi", (1.0, 1.0), np.ones((1, 2)), (1.0,))


# -- profiles ------------------------------------------------------------------

def test_reflecting_horizon_refused():
    sc = Scenario(flat_metric(2, 1.0, 1.0))
    g = Grid(2, 20, 4.0)
    prop = Propagator(sc, g, StepPlan.for_scenario(sc, g))
    chi = decay_cutoff(prop)
    assert safe_reflecting_horizon(prop) == pytest.approx(2.0)
    with pytest.raises(HorizonError) as exc:
        decay_profile(prop, chi, random_ensemble(prop, chi, 1), 2.5)
    assert exc.value.safe_horizon == pytest.approx(2.0)
    prof = decay_profile(prop, chi, random_ensemble(prop, chi, 2), 1.5)
    assert prof.ensemble == 2 and prof.times[-1] <= 1.5 + 1e-12


def test_ensemble_unit_energy_and_support(tiny1d):
    chi = decay_cutoff(tiny1d)
    members = random_ensemble(tiny1d, chi, 3, seed=2)
    for f in members:
        assert tiny1d.energy(f).value == pytest.approx(1.0, rel=1e-12)
        assert np.all(f.u[chi == 0] == 0) and np.all(f.v[chi == 0] == 0)


def test_profile_independent_of_threads(tiny1d):
    chi = decay_cutoff(tiny1d)
    members = random_ensemble(tiny1d, chi, 4, seed=1)
    a = decay_profile(tiny1d, chi, members, 6.0, threads=1)
    b = decay_profile(tiny1d, chi, members, 6.0, threads=3)
    assert a.to_csv() == b.to_csv()


def test_decay_run_structure(tiny1d):
    run = decay_run(tiny1d, 12.0, ensemble=4, seed=0)
    # four random members plus the real and imaginary part of the leading Floquet vector
    assert run.profile.ensemble == 6
    assert run.poles is not None and run.poles.converged
    assert len(run.profile.times) == 13
    assert run.verdict in ("decay", "neither")


def test_verdict_dichotomy():
    from wavelab.decay import DecayRun, RateFit
    from wavelab.floquet import Pole, PoleReport

    prof = DecayProfile("x", "chi", (0.0, 1.0), np.ones((1, 2)), (1.0,))
    good = RateFit("exp", 0.2, 0.0, 0.1, (0, 1), 10)
    up = PoleReport("x", "sponge", (1, 1), (Pole(1.2, 0.18j, 0.0),), 1.0)
    down = PoleReport("x", "sponge", (1, 1), (Pole(0.8, -0.22j, 0.0),), 1.0)
    assert DecayRun(prof, good, down).verdict == "decay"
    assert DecayRun(prof, good, up).verdict == "both"
    assert DecayRun(prof, RateFit("growth", 0.1, 0.0, 0.1, (0, 1), 10), up).verdict == "growth"
    assert DecayRun(prof, RateFit("exp", 0.2, 0.0, 3.0, (0, 1), 10), None).verdict == "neither"


def test_radial_profile_decays_fast():
    def u0(r):
        return np.where(r < 1, np.cos(0.5 * np.pi * np.minimum(r, 1)) ** 4, 0.0)

    prof = radial_profile(u0, 1.0, 3.0, nodes_per_unit=60)
    assert prof.e_max[0] > 0 and prof.e_max[-1] < 1e-6 * prof.e_max[0]


def test_series_decay_report(tiny1d):
    m = FloquetOperator(tiny1d)
    rep = series_decay_check(m, default_cutoffs(tiny1d), 12, probes=3, epsilon=0.1)
    norms = np.array(rep.norms)
    assert 0 < norms[0] <= 1 + 1e-12
    ns = np.arange(13)
    assert np.allclose(rep.envelope_stat, norms * (ns + 1) * np.log(ns + math.e) ** 2)
    assert np.allclose(rep.partial_sums, np.cumsum(norms * np.exp(-0.1 * ns)))
    assert 0 < rep.geometric_factor < 1
    assert rep.partial_bounded == (rep.geometric_factor * math.exp(-0.1) < 1)


# -- localization --------------------------------------------------------------

def glued_pair(half_width):
    base = Scenario(bump_metric(1, 1.0, 1.0, -0.3))
    fam = GluedFamily(base, t1=0.25, period=1.0, amplitude=0.25, hump_radius=1.0)
    sc = glued_scenario(fam)
    g = Grid(1, int(round(40 * half_width)), half_width)
    # steps per period divisible by 4 so T1 = T/4 sits on the lattice
    spp = 4 * math.ceil(StepPlan.for_scenario(sc, g).steps_per_period / 4)
    plan = StepPlan.for_scenario(sc, g, steps_per_period=spp)
    return Propagator(sc, g, plan), Propagator(base, g, plan)


def test_localization_identities_exact():
    prop_u, prop_v = glued_pair(4.0)
    res = localization_check(prop_u, prop_v, 0.25, trials=3)
    assert res.difference > 0  # the transient really changes the solution
    assert res.exact


def test_localization_fails_with_too_small_cutoff():
    prop_u, prop_v = glued_pair(4.0)
    res = localization_check(prop_u, prop_v, 0.25, trials=2, radius=1.0)
    assert not res.exact


def test_localization_error_names_half_width():
    prop_u, prop_v = glued_pair(2.1)
    need = localization_radius(prop_u.scenario, prop_u, 0.25) + 0.5
    with pytest.raises(LocalizationError) as exc:
        localization_check(prop_u, prop_v, 0.25)
    assert exc.value.required_half_width == pytest.approx(need)


def test_localization_radius_formula():
    prop_u, _ = glued_pair(4.0)
    h, dt = prop_u.grid.h, prop_u.dt
    assert localization_radius(prop_u.scenario, prop_u, 0.25) == pytest.approx(1.5 + 0.25 * h / dt + 2 * h)


def test_sweep_ignores_a_fixed_step_count():
    base = Scenario(bump_metric(1, 1.0, 1.0, -0.3))
    fam = GluedFamily(base, t1=0.25, period=1.0, amplitude=0.25, hump_radius=1.0)
    g = Grid(1, 160, 4.0)
    plan_args = dict(boundary="sponge", sponge_width=1.0, sponge_strength=6.0, steps_per_period=999)
    rep = theorem6_sweep(fam, [0.25, 0.5], g, plan_args, fit=False, localization_trials=1)
    assert [r.period for r in rep.rows] == [0.25, 0.5]
    assert all(r.localization_residual == 0 for r in rep.rows)
