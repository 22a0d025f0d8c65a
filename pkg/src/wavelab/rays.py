"""Null bicharacteristics of ``-tau^2 + a(t, x)|xi|^2`` with reflection at a moving boundary.

Flow (``sigma`` is the Hamiltonian parameter)::

    dt/dsigma = -2 tau      dx/dsigma = 2 a xi
    dtau/dsigma = -a_t |xi|^2      dxi/dsigma = -grad_x a |xi|^2

Forward rays carry ``tau < 0``. After each RK4 step ``tau`` is reset to
``sign(tau) sqrt(a) |xi|`` so the ray stays on the null cone.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .geometry import Scenario, boundary_normal

STEP, REFLECTION, ESCAPE, STOP, GRAZING, CAPPED = 0, 1, 2, 3, 4, 5


class RayError(RuntimeError):
    pass


class NotTimelikeError(RayError):
    """The boundary normal has ``G(nu, nu) <= 0``: the boundary moves at least as fast as waves."""


class ObstacleHit(RayError):
    def __init__(self, state: "RayState"):
        super().__init__("flow step landed inside the obstacle")
        self.state = state


class GrazingRayWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RayState:
    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray
    sigma: float = 0.0

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.t], self.x, [self.tau], self.xi])

    @classmethod
    def unpack(cls, y: np.ndarray, sigma: float) -> "RayState":
        n = (y.size - 2) // 2
        return cls(float(y[0]), y[1:1 + n].copy(), float(y[1 + n]), y[2 + n:].copy(), sigma)

    def hamiltonian(self, scenario: Scenario) -> float:
        a = _a(scenario, self.t, self.x)
        return -self.tau ** 2 + a * float(self.xi @ self.xi)

    def null_residual(self, scenario: Scenario) -> float:
        """``|H| / (tau^2 + |xi|^2)``."""
        return abs(self.hamiltonian(scenario)) / (self.tau ** 2 + float(self.xi @ self.xi))


@dataclass(frozen=True)
class ReflectionEvent:
    t: float
    x: np.ndarray
    incoming: tuple
    outgoing: tuple
    normal: tuple


def _a(s: Scenario, t: float, x: np.ndarray) -> float:
    return float(s.metric(t, x[None, :])[0])


def null_ray(scenario: Scenario, t: float, x, direction, frequency: float = 1.0,
             sigma: float = 0.0) -> RayState:
    """Forward null ray at ``(t, x)`` moving along ``direction``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    xi = frequency * d
    tau = -math.sqrt(_a(scenario, t, x)) * frequency
    return RayState(float(t), x.copy(), tau, xi, sigma)


def _rhs(s: Scenario, y: np.ndarray) -> np.ndarray:
    n = (y.size - 2) // 2
    t, x, tau, xi = y[0], y[1:1 + n], y[1 + n], y[2 + n:]
    pts = x[None, :]
    a = float(s.metric(t, pts)[0])
    q = float(xi @ xi)
    out = np.empty_like(y)
    out[0] = -2.0 * tau
    out[1:1 + n] = 2.0 * a * xi
    out[1 + n] = -float(s.metric.dt(t, pts)[0]) * q
    out[2 + n:] = -s.metric.grad(t, pts)[0] * q
    return out


def _rk4(s: Scenario, y: np.ndarray, h: float) -> np.ndarray:
    k1 = _rhs(s, y)
    k2 = _rhs(s, y + 0.5 * h * k1)
    k3 = _rhs(s, y + 0.5 * h * k2)
    k4 = _rhs(s, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _renormalize(s: Scenario, st: RayState) -> RayState:
    a = _a(s, st.t, st.x)
    tau = math.copysign(math.sqrt(a * float(st.xi @ st.xi)), st.tau)
    return RayState(st.t, st.x, tau, st.xi, st.sigma)


def _distance(s: Scenario, t: float, x: np.ndarray) -> float:
    return math.inf if s.obstacle is None else float(s.obstacle.distance(t, x[None, :])[0])


def flow_step(state: RayState, dsigma: float, scenario: Scenario, renormalize: bool = True,
              check_obstacle: bool = True) -> RayState:
    """One RK4 step of the Hamiltonian flow; raises :class:`ObstacleHit` if it ends inside."""
    y = _rk4(scenario, state.pack(), dsigma)
    out = RayState.unpack(y, state.sigma + dsigma)
    if renormalize:
        out = _renormalize(scenario, out)
    if check_obstacle and scenario.obstacle is not None and _distance(scenario, out.t, out.x) < 0:
        raise ObstacleHit(out)
    return out


def pairing(a: float, p: tuple, q: tuple) -> float:
    """Lorentzian pairing ``G((tau, xi), (tau', xi')) = -tau tau' + a xi . xi'``."""
    return -p[0] * q[0] + a * float(np.dot(p[1], q[1]))


def reflect(state: RayState, normal: tuple, scenario: Scenario) -> RayState:
    """G-orthogonal reflection ``p' = p - 2 G(p, nu) / G(nu, nu) nu``.

    For a static boundary this is the mirror law with ``tau`` unchanged; it is
    an involution and keeps the ray null.
    """
    nu_t, nu_x = float(normal[0]), np.asarray(normal[1], dtype=float)
    a = _a(scenario, state.t, state.x)
    p = (state.tau, state.xi)
    nn = pairing(a, (nu_t, nu_x), (nu_t, nu_x))
    if nn <= 0:
        raise NotTimelikeError(f"G(nu, nu) = {nn:.3e} <= 0 at t={state.t}, x={state.x.tolist()}")
    c = 2.0 * pairing(a, p, (nu_t, nu_x)) / nn
    return RayState(state.t, state.x.copy(), state.tau - c * nu_t, state.xi - c * nu_x, state.sigma)


@dataclass
class RayTrace:
    """Recorded trajectory: one row per accepted step plus event flags."""

    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "running"
    escape_time: Optional[float] = None
    start_time: float = 0.0
    final: Optional[RayState] = None

    @property
    def reflections(self) -> int:
        return len(self.events)

    def record(self, st: RayState, flag: int) -> None:
        self.rows.append((st.sigma, st.t, *st.x.tolist(), st.tau, *st.xi.tolist(), flag))

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        n = (len(self.rows[0]) - 4) // 2
        xs = [f"x{i + 1}" for i in range(n)]
        ks = [f"xi{i + 1}" for i in range(n)]
        head = ",".join(["sigma", "t", *xs, "tau", *ks, "event_flag"])
        lines = [head]
        for row in self.rows:
            lines.append(",".join(f"{v:.17g}" for v in row[:-1]) + f",{row[-1]}")
        return "\n".join(lines) + "\n"


def _locate(scenario: Scenario, state: RayState, dsigma: float, tol: float,
            max_iter: int = 200) -> RayState:
    """Bisect the step fraction until the end point sits outside within ``tol`` of the boundary."""
    lo, hi = 0.0, 1.0
    best = state
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        cand = flow_step(state, mid * dsigma, scenario, check_obstacle=False)
        d = _distance(scenario, cand.t, cand.x)
        if d >= 0:
            lo, best = mid, cand
            if d <= tol:
                return cand
        else:
            hi = mid
        if hi - lo < 1e-16:
            break
    return best


def trace_ray(init: RayState, t_max: float, scenario: Scenario, dt: float = 0.02,
              max_reflections: int = 64, escape_radius: Optional[float] = None,
              exit_radius: Optional[float] = None, tol: Optional[float] = None,
              grazing_tol: float = 1e-6, record: bool = True) -> RayTrace:
    """Integrate with event-located reflections until escape, ``t >= t_max`` or the reflection cap.

    Escape means ``|x| > escape_radius`` (default: ``rho`` and the obstacle
    bound) with outward radial velocity; beyond it the metric is flat and no
    obstacle remains, so the ray never returns. ``escape_time`` is the last
    exit time from ``|x| <= exit_radius``.
    """
    rho = scenario.rho
    tol = 1e-10 * rho if tol is None else tol
    r_esc = rho if escape_radius is None else escape_radius
    if scenario.obstacle is not None:
        r_esc = max(r_esc, scenario.obstacle.bound_radius)
    r_exit = r_esc if exit_radius is None else exit_radius
    r_esc = max(r_esc, r_exit)
    if init.tau >= 0:
        raise RayError("forward rays need tau < 0")
    if _distance(scenario, init.t, init.x) < 0:
        raise RayError("ray starts inside the obstacle")
    out = RayTrace(start_time=init.t)
    st = init
    if record:
        out.record(st, STEP)
    last_exit = init.t if np.linalg.norm(init.x) > r_exit else None
    while True:
        dsigma = dt / (-2.0 * st.tau)
        try:
            nxt = flow_step(st, dsigma, scenario)
            flag = STEP
        except ObstacleHit:
            hit = _locate(scenario, st, dsigma, tol)
            nu_t, nu_x = boundary_normal(scenario.obstacle, hit.t, hit.x, tol=max(1e-8, 100 * tol))
            a = _a(scenario, hit.t, hit.x)
            p = (hit.tau, hit.xi)
            size = math.sqrt(hit.tau ** 2 + a * float(hit.xi @ hit.xi))
            if abs(pairing(a, p, (nu_t, nu_x))) <= grazing_tol * size:
                warnings.warn(f"grazing ray at t={hit.t:.6g}; discarded", GrazingRayWarning)
                out.status = "grazing"
                if record:
                    out.record(hit, GRAZING)
                out.final = hit
                return out
            nxt = reflect(hit, (nu_t, nu_x), scenario)
            out.events.append(ReflectionEvent(hit.t, hit.x.copy(), p, (nxt.tau, nxt.xi.copy()),
                                              (nu_t, nu_x.copy())))
            flag = REFLECTION
        r0, r1 = float(np.linalg.norm(st.x)), float(np.linalg.norm(nxt.x))
        if r0 <= r_exit < r1:
            # linear interpolation of the crossing time
            last_exit = st.t + (nxt.t - st.t) * (r_exit - r0) / (r1 - r0)
        elif r1 <= r_exit:
            last_exit = None
        st = nxt
        outward = float(st.x @ st.xi) > 0
        if r1 > r_esc and outward:
            out.status = "escaped"
            out.escape_time = last_exit if last_exit is not None else st.t
            flag = ESCAPE
        elif out.reflections > max_reflections:
            out.status = "trapped"
            flag = CAPPED
        elif st.t >= t_max:
            out.status = "timeout"
            flag = STOP
        if record:
            out.record(st, flag)
        if out.status != "running":
            out.final = st
            return out


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaySampling:
    """Start times, positions in the ball and directions for a scan.

    Positions are the centre plus Halton points inside the ball; directions are
    the coordinate axes (both signs) plus quasi-uniform points on the sphere.
    """

    positions: int = 24
    directions: int = 8
    times: int = 2
    seed: int = 0


def _sphere_points(n: int, count: int) -> list[np.ndarray]:
    if n == 1:
        return []
    if n == 2:
        return [np.array([math.cos(a), math.sin(a)]) for a in
                (2 * math.pi * (np.arange(count) + 0.5) / count)]
    golden = math.pi * (3.0 - math.sqrt(5.0))
    out = []
    for i in range(count):
        z = 1.0 - 2.0 * (i + 0.5) / count
        r = math.sqrt(1.0 - z * z)
        out.append(np.array([r * math.cos(golden * i), r * math.sin(golden * i), z]))
    return out


def sample_rays(scenario: Scenario, radius: float, sampling: RaySampling) -> list[tuple]:
    """``(t0, x0, direction)`` triples in a fixed, reproducible order."""
    n = scenario.n
    eng = qmc.Halton(d=n, scramble=True, seed=sampling.seed)
    pts = [np.zeros(n)]
    while len(pts) < sampling.positions:
        cand = (2.0 * eng.random(64) - 1.0) * radius
        for c in cand:
            if np.linalg.norm(c) < radius and len(pts) < sampling.positions:
                pts.append(c)
    dirs = []
    for i in range(n):
        for sgn in (1.0, -1.0):
            e = np.zeros(n)
            e[i] = sgn
            dirs.append(e)
    dirs += _sphere_points(n, sampling.directions)
    times = [scenario.period * j / sampling.times for j in range(sampling.times)]
    return [(t0, x0, d) for t0 in times for x0 in pts for d in dirs]


@dataclass(frozen=True)
class NonTrappingReport:
    radius: float
    samples: int
    skipped: int
    t1_estimate: Optional[float]
    witnesses: tuple
    grazing_discards: int
    t_budget: float

    @property
    def trapping_suspected(self) -> bool:
        return bool(self.witnesses)

    def to_text(self) -> str:
        t1 = "nan" if self.t1_estimate is None else f"{self.t1_estimate:.17g}"
        lines = [f"radius = {self.radius:.17g}", f"T1_estimate = {t1}",
                 f"samples = {self.samples}", f"skipped_inside_obstacle = {self.skipped}",
                 f"witnesses = {len(self.witnesses)}", f"grazing_discards = {self.grazing_discards}",
                 f"t_budget = {self.t_budget:.17g}"]
        for i, w in enumerate(self.witnesses):
            x0 = " ".join(f"{v:.17g}" for v in w.rows[0][2:2 + (len(w.rows[0]) - 4) // 2])
            lines.append(f"witness {i}: status={w.status} t0={w.start_time:.17g} x0={x0} "
                         f"reflections={w.reflections}")
        return "\n".join(lines) + "\n"


def nontrapping_scan(scenario: Scenario, radius: float, t_budget: float,
                     sampling: RaySampling = RaySampling(), dt: float = 0.02,
                     max_reflections: int = 64, threads: int = 1) -> NonTrappingReport:
    """Trace every sample; ``T1(r)`` is the largest escape delay, witnesses are the rays that stay."""
    triples = sample_rays(scenario, radius, sampling)
    skipped = 0
    jobs = []
    for t0, x0, d in triples:
        if _distance(scenario, t0, x0) <= 0:
            skipped += 1
            continue
        jobs.append((t0, x0, d))

    def run(job):
        t0, x0, d = job
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GrazingRayWarning)
            return trace_ray(null_ray(scenario, t0, x0, d), t0 + t_budget, scenario, dt=dt,
                             max_reflections=max_reflections, exit_radius=radius)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(run, jobs))
    else:
        traces = [run(j) for j in jobs]
    worst = None
    witnesses = []
    grazing = 0
    for tr in traces:
        if tr.status == "escaped":
            delay = tr.escape_time - tr.start_time
            worst = delay if worst is None else max(worst, delay)
        elif tr.status == "grazing":
            grazing += 1
        else:
            witnesses.append(tr)
    return NonTrappingReport(radius, len(jobs), skipped, worst, tuple(witnesses), grazing, t_budget)
