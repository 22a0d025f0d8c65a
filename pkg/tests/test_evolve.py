from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavelab.evolve import (CFLViolation, Grid, GridError, LatticeError, Propagator, RadialSolver,
                            StepPlan, exact_radial, fit_growth_bound, huygens_check,
                            operator_norm_estimate, read_snapshot, write_snapshot)
from wavelab.evolve.kernels import grid_filter
from wavelab.evolve.snapshot import SnapshotError, decode_snapshot, encode_snapshot
from wavelab.geometry import BallPath, Scenario, balls_obstacle, bump_metric, flat_metric


def gaussian(x, width=0.3, center=0.0):
    return np.exp(-((x - center) / width) ** 2)


# -- lattice bookkeeping -------------------------------------------------------

def test_grid_geometry():
    g = Grid(2, 10, 1.5)
    assert g.h == pytest.approx(0.3)
    assert g.shape == (10, 10) and g.size == 100
    c = g.centers()
    assert c[0, 0, 0] == pytest.approx(-1.35) and c[-1, -1, 1] == pytest.approx(1.35)


def test_grid_requires_room_for_cutoffs():
    with pytest.raises(GridError):
        Grid(3, 10, 1.5).check_scenario(Scenario(flat_metric(3, 1.0, 1.0)))


def test_cfl_bound_enforced():
    sc = Scenario(bump_metric(2, 1.0, 1.0, 0.0, 0.5))
    g = Grid(2, 20, 3.0)
    plan = StepPlan.for_scenario(sc, g, cfl=0.8)
    # closed form: dt sqrt(n C) <= cfl h
    assert plan.dt * np.sqrt(2 * 1.5) <= 0.8 * g.h * (1 + 1e-12)
    with pytest.raises(CFLViolation):
        StepPlan.for_scenario(sc, g, steps_per_period=3)
    with pytest.raises(CFLViolation):
        StepPlan.for_scenario(sc, g, cfl=1.2)


def test_sponge_must_stay_outside_cutoff_region():
    sc = Scenario(flat_metric(2, 1.0, 1.0))
    with pytest.raises(GridError):
        StepPlan.for_scenario(sc, Grid(2, 20, 3.0), boundary="sponge", sponge_width=1.5,
                              sponge_strength=2.0)


def test_off_lattice_time_rejected(free1d):
    with pytest.raises(LatticeError):
        free1d.state(np.zeros(free1d.grid.shape), None, 0.5 * free1d.dt)
    with pytest.raises(LatticeError):
        free1d.evolve(free1d.zero_state(2 * free1d.dt), free1d.dt)


def test_lattice_speed_counts_filter_cells():
    plan = StepPlan(dt=0.1, steps_per_period=10, cfl=0.9)
    assert plan.lattice_speed(0.2) == pytest.approx(2.0)
    plan = StepPlan(dt=0.1, steps_per_period=10, cfl=0.9, filter_strength=0.2, filter_order=2)
    assert plan.lattice_speed(0.2) == pytest.approx(6.0)


# -- dynamics ------------------------------------------------------------------

def test_free_1d_matches_dalembert(free1d):
    # at dt = h the kick-drift-kick scheme transports lattice data exactly
    assert free1d.dt == pytest.approx(free1d.grid.h)
    x = free1d.grid.centers()[..., 0]
    s = free1d.state(gaussian(x), None, 0.0)
    n = 30
    out = free1d.evolve_steps(s, n)
    t = n * free1d.dt
    expect = 0.5 * (gaussian(x - t) + gaussian(x + t))
    assert np.max(np.abs(out.u - expect)) < 1e-10


def test_energy_conserved_static_reflecting():
    sc = Scenario(bump_metric(3, 1.0, 1.0, -0.3))
    g = Grid(3, 16, 2.2)
    prop = Propagator(sc, g, StepPlan.for_scenario(sc, g))
    rng = np.random.default_rng(0)
    s = prop.state(rng.standard_normal(g.shape), rng.standard_normal(g.shape))
    e0 = prop.energy(s, variant="metric").value
    out = prop.evolve_steps(s, 200)
    e1 = prop.energy(out, variant="metric").value
    assert abs(e1 - e0) <= 1e-11 * e0


def test_energy_conserved_with_static_obstacle():
    sc = Scenario(flat_metric(2, 1.0, 1.0), balls_obstacle(2, 1.0, [BallPath((0.2, 0.0), 0.4)]))
    g = Grid(2, 30, 2.5)
    prop = Propagator(sc, g, StepPlan.for_scenario(sc, g))
    x = g.centers()
    s = prop.state(gaussian(x[..., 0], 0.3, -1.0) * gaussian(x[..., 1], 0.3))
    e0 = prop.energy(s, variant="metric").value
    out = prop.evolve_steps(s, 300)
    assert abs(prop.energy(out, variant="metric").value - e0) <= 1e-11 * e0
    # the solution vanishes inside the obstacle
    inside = prop.schedule.mask(out.step).reshape(g.shape) == 0
    assert inside.any() and np.all(out.u[inside] == 0) and np.all(out.v[inside] == 0)


def test_period_shift_is_bitwise(pulsing2d, rng):
    prop = pulsing2d
    n_t = prop.steps_per_period
    u, v = rng.standard_normal(prop.grid.shape), rng.standard_normal(prop.grid.shape)
    a = prop.evolve_steps(prop.state_at_step(u, v, 3), n_t + 5)
    b = prop.evolve_steps(prop.state_at_step(u, v, 3 + n_t), n_t + 5)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_sponge_absorbs():
    sc = Scenario(flat_metric(1, 1.0, 1.0))
    g = Grid(1, 120, 4.0)
    prop = Propagator(sc, g, StepPlan.for_scenario(sc, g, boundary="sponge", sponge_width=1.0,
                                                   sponge_strength=6.0))
    x = g.centers()[..., 0]
    s = prop.state(gaussian(x, 0.3), None, 0.0)
    e0 = prop.energy(s).value
    # one pass through the layer leaves a few percent, later passes keep draining
    e5 = prop.energy(prop.evolve(s, 5.0)).value
    e20 = prop.energy(prop.evolve(s, 20.0)).value
    assert e5 < 0.05 * e0 and e20 < 0.01 * e0


def test_transpose_adjoint_identity(pulsing2d, rng):
    prop = pulsing2d
    size = prop.grid.size
    x = rng.standard_normal(2 * size)
    y = rng.standard_normal(2 * size)
    k0, k1 = 2, 2 + prop.steps_per_period
    fx = prop.evolve_steps(prop.from_vector(x, k0), k1 - k0).vector()
    p, q = prop.evolve_transpose(y[:size], y[size:], k0, k1)
    lhs = fx @ y
    rhs = x @ np.concatenate([p.ravel(), q.ravel()])
    assert abs(lhs - rhs) <= 1e-11 * abs(lhs)


def test_transpose_with_sponge_and_filter(rng):
    sc = Scenario(bump_metric(2, 1.0, 1.0, -0.2, 0.1))
    g = Grid(2, 24, 3.0)
    prop = Propagator(sc, g, StepPlan.for_scenario(sc, g, boundary="sponge", sponge_width=0.8,
                                                   sponge_strength=4.0, filter_strength=0.2))
    size = g.size
    x, y = rng.standard_normal(2 * size), rng.standard_normal(2 * size)
    fx = prop.evolve_steps(prop.from_vector(x, 0), 17).vector()
    p, q = prop.evolve_transpose(y[:size], y[size:], 0, 17)
    assert abs(fx @ y - x @ np.concatenate([p.ravel(), q.ravel()])) <= 1e-11 * abs(fx @ y)


def test_duhamel_modes_agree(pulsing2d):
    prop = pulsing2d
    x = prop.grid.centers()

    def g(t):
        return np.sin(3 * t) * gaussian(x[..., 0], 0.4) * gaussian(x[..., 1], 0.4)

    t = 40 * prop.dt
    a = prop.duhamel_solve(g, 0.0, t, mode="direct")
    b = prop.duhamel_solve(g, 0.0, t, mode="quadrature")
    scale = np.max(np.abs(a.u))
    assert scale > 0
    assert np.max(np.abs(a.u - b.u)) <= 1e-12 * max(1.0, scale)
    assert np.max(np.abs(a.v - b.v)) <= 1e-12 * max(1.0, np.max(np.abs(a.v)))


def test_duhamel_zero_interval(pulsing2d):
    out = pulsing2d.duhamel_solve(np.ones(pulsing2d.grid.shape), pulsing2d.dt, pulsing2d.dt)
    assert out.is_zero()


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_linearity(alpha, beta, seed):
    from wavelab.lab.scenarios import builtin
    prop = builtin("tiny1d").propagator()
    rng = np.random.default_rng(seed)
    f1 = rng.standard_normal(2 * prop.grid.size)
    f2 = rng.standard_normal(2 * prop.grid.size)
    n = 13
    a = prop.evolve_steps(prop.from_vector(alpha * f1 + beta * f2), n).vector()
    b = alpha * prop.evolve_steps(prop.from_vector(f1), n).vector() + \
        beta * prop.evolve_steps(prop.from_vector(f2), n).vector()
    assert np.max(np.abs(a - b)) <= 1e-10 * (1 + np.max(np.abs(a)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 0.5), st.sampled_from([1, 2, 3]))
def test_filter_is_symmetric_contraction(seed, strength, order):
    rng = np.random.default_rng(seed)
    shape = (7, 6)
    x, y = rng.standard_normal(42), rng.standard_normal(42)
    fx, fy = grid_filter(x, shape, strength, order), grid_filter(y, shape, strength, order)
    assert abs(fx @ y - x @ fy) <= 1e-12 * (1 + abs(fx @ y))
    assert np.linalg.norm(fx) <= np.linalg.norm(x) * (1 + 1e-12)


# -- norms ---------------------------------------------------------------------

def test_norm_estimate_static_reflecting_is_one():
    sc = Scenario(flat_metric(1, 1.0, 1.0))
    g = Grid(1, 40, 3.0)
    prop = Propagator(sc, g, StepPlan.for_scenario(sc, g))
    est = operator_norm_estimate(prop, 0.0, 1.0, trials=2)
    assert est.value == pytest.approx(1.0, abs=1e-8)


def test_growth_bound_envelope(tiny1d):
    gb = fit_growth_bound(tiny1d, samples=4, trials=2, iterations=15)
    assert gb.A >= 0 and gb.B >= 1
    for t, v in zip(gb.times, gb.estimates):
        assert v <= gb.bound(t) * (1 + 1e-12)


# -- snapshots -----------------------------------------------------------------

def test_snapshot_roundtrip(tmp_path, pulsing2d, rng):
    s = pulsing2d.state_at_step(rng.standard_normal(pulsing2d.grid.shape),
                                rng.standard_normal(pulsing2d.grid.shape), 7)
    path = tmp_path / "s.fwlb"
    write_snapshot(str(path), s, pulsing2d.grid.h, pulsing2d.dt)
    head, back = read_snapshot(str(path))
    assert head.cells == pulsing2d.grid.shape and head.n == 2
    assert back.step == 7 and back.t == s.t
    assert np.array_equal(back.u, s.u) and np.array_equal(back.v, s.v)


def test_snapshot_rejects_garbage(pulsing2d):
    with pytest.raises(SnapshotError):
        decode_snapshot(b"NOPE" + bytes(40))
    blob = encode_snapshot(pulsing2d.zero_state(), 0.1, 0.01)
    with pytest.raises(SnapshotError):
        decode_snapshot(blob[:-8])


# -- radial path ---------------------------------------------------------------

def bump_data(r):
    return np.where(r < 1, np.cos(0.5 * np.pi * np.minimum(r, 1)) ** 4, 0.0)


def test_radial_solver_exact_at_unit_cfl():
    solver = RadialSolver(6.0, 600, cfl=1.0)
    solver.set_data(bump_data)
    solver.advance(2.0)
    expect = exact_radial(bump_data, solver.r, solver.t)
    assert np.max(np.abs(solver.w - expect)) < 1e-12


def test_radial_energy_conserved():
    solver = RadialSolver(8.0, 800, cfl=0.5)
    solver.set_data(bump_data)
    e0 = solver.local_energy()
    solver.advance(2.5)
    assert solver.local_energy() == pytest.approx(e0, rel=2e-3)


def test_huygens_ratio_converges():
    res = huygens_check(bump_data, 1.0, 3.0, rho=1.0, base_nodes_per_unit=50, refinements=1)
    assert res.ratios[1] < res.ratios[0]
    assert res.worst_ratio < 1e-6
