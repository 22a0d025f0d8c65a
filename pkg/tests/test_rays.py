from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavelab.geometry import (BallPath, Scenario, balls_obstacle, boundary_normal, bump_metric,
                              flat_metric)
from wavelab.lab.scenarios import builtin
from wavelab.rays import (ESCAPE, REFLECTION, NotTimelikeError, RayError, RaySampling, RayState,
                          flow_step, null_ray, nontrapping_scan, pairing, reflect, sample_rays,
                          trace_ray)

FREE3 = Scenario(flat_metric(3, 1.0, 1.0))


def test_straight_line_in_flat_space():
    x0, d = np.array([0.2, -0.1, 0.3]), np.array([1.0, 2.0, -0.5])
    d = d / np.linalg.norm(d)
    tr = trace_ray(null_ray(FREE3, 0.0, x0, d), 10.0, FREE3, dt=0.05)
    assert tr.status == "escaped"
    for row in tr.rows:
        t, x = row[1], np.array(row[2:5])
        assert np.max(np.abs(x - (x0 + t * d))) < 1e-10


def test_flat_square_radius_is_convex():
    x0, d = np.array([0.5, 0.0, 0.0]), np.array([-0.6, 0.8, 0.0])
    tr = trace_ray(null_ray(FREE3, 0.0, x0, d), 10.0, FREE3, dt=0.05)
    t = np.array([r[1] for r in tr.rows])
    r2 = np.array([sum(v * v for v in r[2:5]) for r in tr.rows])
    # |x(t)|^2 = |x0|^2 + 2 t x0.d + t^2 along a unit-speed line
    assert np.allclose(r2, x0 @ x0 + 2 * t * (x0 @ d) + t * t, atol=1e-10)
    assert np.all(np.diff(r2, 2) > 0)


def test_angular_momentum_in_radial_bump():
    sc = Scenario(bump_metric(2, 1.0, 1.0, -0.3))
    st_ = null_ray(sc, 0.0, [0.4, -0.3], [0.3, 1.0])
    ang0 = st_.x[0] * st_.xi[1] - st_.x[1] * st_.xi[0]
    tr = trace_ray(st_, 10.0, sc, dt=0.01)
    for row in tr.rows:
        ang = row[2] * row[6] - row[3] * row[5]
        assert abs(ang - ang0) < 1e-9


def test_null_residual_stays_small():
    sc = Scenario(bump_metric(3, 1.0, 1.0, 0.2, 0.1))
    tr = trace_ray(null_ray(sc, 0.3, [0.1, 0.2, 0.0], [1.0, 0.5, 0.2]), 10.0, sc, dt=0.01)
    assert abs(tr.final.null_residual(sc)) < 1e-12


def test_flow_is_period_equivariant():
    sc = Scenario(bump_metric(2, 1.0, 1.0, 0.2, 0.15))
    a = null_ray(sc, 0.1, [0.3, 0.0], [0.0, 1.0])
    b = RayState(a.t + 1.0, a.x.copy(), a.tau, a.xi.copy())
    for _ in range(200):
        a = flow_step(a, 0.004, sc)
        b = flow_step(b, 0.004, sc)
    assert abs((b.t - a.t) - 1.0) < 1e-10
    assert np.max(np.abs(a.x - b.x)) < 1e-10 and np.max(np.abs(a.xi - b.xi)) < 1e-10


def test_static_ball_mirror_law():
    sc = Scenario(flat_metric(3, 1.0, 1.0), balls_obstacle(3, 1.0, [BallPath((0.0, 0.0, 0.0), 0.4)]))
    tr = trace_ray(null_ray(sc, 0.0, [0.9, 0.0, 0.0], [-1.0, 0.0, 0.0]), 10.0, sc, dt=0.02)
    assert tr.status == "escaped" and tr.reflections == 1
    ev = tr.events[0]
    assert ev.outgoing[0] == pytest.approx(ev.incoming[0], abs=1e-12)
    assert np.allclose(ev.outgoing[1], -np.asarray(ev.incoming[1]), atol=1e-9)
    assert np.linalg.norm(ev.x) == pytest.approx(0.4, abs=1e-8)
    flags = [r[-1] for r in tr.rows]
    assert REFLECTION in flags and flags[-1] == ESCAPE


def test_single_static_ball_every_ray_escapes():
    sc = Scenario(flat_metric(3, 1.0, 1.0), balls_obstacle(3, 1.0, [BallPath((0.0, 0.0, 0.0), 0.4)]))
    rep = nontrapping_scan(sc, 1.0, 20.0, RaySampling(positions=6, directions=4, times=1))
    assert not rep.witnesses and rep.samples > 0
    # escape from |x| <= 1 takes at most a diameter plus one bounce detour
    assert rep.t1_estimate <= 2.0 + 1e-9


def test_doppler_on_approaching_ball():
    amp, period, radius = 0.2, 4.0, 0.3
    sc = Scenario(flat_metric(3, period, 1.0),
                  balls_obstacle(3, period, [BallPath((0.0, 0.0, 0.0), radius, center_amplitude=amp)]))
    w = amp * 2 * math.pi / period  # surface speed at t = 0
    x = np.array([radius, 0.0, 0.0])
    nu = boundary_normal(sc.obstacle, 0.0, x)
    incoming = RayState(0.0, x, -1.0, np.array([-1.0, 0.0, 0.0]))
    out = reflect(incoming, nu, sc)
    assert out.tau / incoming.tau == pytest.approx((1 + w) / (1 - w), rel=1e-8)
    assert abs(out.null_residual(sc)) < 1e-12


def test_reflection_rejects_spacelike_wall():
    st_ = RayState(0.0, np.zeros(2), -1.0, np.array([1.0, 0.0]))
    with pytest.raises(NotTimelikeError):
        reflect(st_, (1.0, np.array([0.5, 0.0])), Scenario(flat_metric(2, 1.0, 1.0)))


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi),
       st.floats(0.5, 2.0))
def test_reflection_is_null_preserving_involution(w, ang_ray, ang_wall, freq):
    sc = Scenario(flat_metric(2, 1.0, 1.0))
    xi = freq * np.array([math.cos(ang_ray), math.sin(ang_ray)])
    p = RayState(0.0, np.zeros(2), -freq, xi)
    s = math.sqrt(1 + w * w)
    nu = (w / s, np.array([math.cos(ang_wall), math.sin(ang_wall)]) / s)
    once = reflect(p, nu, sc)
    twice = reflect(once, nu, sc)
    assert abs(twice.tau - p.tau) < 1e-12 and np.max(np.abs(twice.xi - p.xi)) < 1e-12
    assert abs(once.hamiltonian(sc)) < 1e-12 * (1 + once.tau ** 2)
    assert abs(pairing(1.0, (once.tau, once.xi), nu) + pairing(1.0, (p.tau, p.xi), nu)) < 1e-12


def test_two_ball_segment_is_trapped():
    sc = builtin("two-ball-trap").scenario()
    tr = trace_ray(null_ray(sc, 0.0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), 50.0, sc,
                   max_reflections=40)
    assert tr.status in ("trapped", "timeout") and tr.reflections >= 40


def test_two_ball_scan_reports_witness():
    sc = builtin("two-ball-trap").scenario()
    rep = nontrapping_scan(sc, 1.0, 30.0, RaySampling(positions=4, directions=0, times=1))
    assert rep.trapping_suspected
    assert "witnesses = " in rep.to_text()


def test_moving_ball_scan_finite():
    sc = builtin("moving-ball").scenario()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = nontrapping_scan(sc, 1.0, 20.0, RaySampling(positions=8, directions=4, times=2))
    assert not rep.witnesses
    assert rep.t1_estimate is not None and math.isfinite(rep.t1_estimate)


def test_trace_csv_header():
    tr = trace_ray(null_ray(FREE3, 0.0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), 5.0, FREE3)
    assert tr.to_csv().splitlines()[0] == "sigma,t,x1,x2,x3,tau,xi1,xi2,xi3,event_flag"


def test_trace_rejects_bad_start():
    sc = builtin("two-ball-trap").scenario()
    with pytest.raises(RayError):
        trace_ray(null_ray(sc, 0.0, [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]), 1.0, sc)
    past = RayState(0.0, np.zeros(3), 1.0, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(RayError):
        trace_ray(past, 1.0, FREE3)


def test_sampling_is_reproducible():
    a = sample_rays(FREE3, 1.0, RaySampling(positions=5, directions=3, times=2, seed=4))
    b = sample_rays(FREE3, 1.0, RaySampling(positions=5, directions=3, times=2, seed=4))
    assert len(a) == 2 * 5 * (6 + 3)
    assert all(np.array_equal(p[1], q[1]) and np.array_equal(p[2], q[2]) for p, q in zip(a, b))
    assert all(np.linalg.norm(p[1]) < 1.0 for p in a)
