"""Time-periodic metrics, moving obstacles and the scenarios built from them.

A metric is a scalar field ``a(t, x)`` sampled through vectorised callables
that take a time and a point array of shape ``(..., n)``. Obstacles are
signed distance functions ``d(t, x)``, negative inside ``O(t)``. Both are
plain data; the solver and the ray tracer only ever call the evaluators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

Evaluator = Callable[[float, np.ndarray], np.ndarray]

_FD_STEP = 1e-6


class ScenarioError(ValueError):
    """Invalid parameters for a metric, obstacle, scenario or glued family."""


class MalformedScenarioError(ScenarioError):
    """An evaluator returned non-finite values."""


class DegenerateBoundaryError(ScenarioError):
    """The spatial gradient of the signed distance vanishes at a boundary point."""


# ---------------------------------------------------------------------------
# smooth profiles
# ---------------------------------------------------------------------------

def smooth_bump(s: np.ndarray) -> np.ndarray:
    """C-infinity bump ``exp(1 - 1/(1 - s^2))`` on ``|s| < 1``, exactly 0 outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


def smooth_bump_derivative(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    q = 1.0 - si * si
    out[inside] = np.exp(1.0 - 1.0 / q) * (-2.0 * si / (q * q))
    return out


def splice_window(s: np.ndarray) -> np.ndarray:
    """Window on ``(0, 1)`` with value 1 at ``s = 1/2``, flat to all orders at 0 and 1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    out[inside] = np.exp(4.0 - 1.0 / (si * (1.0 - si)))
    return out


def splice_window_derivative(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    p = si * (1.0 - si)
    out[inside] = np.exp(4.0 - 1.0 / p) * (1.0 - 2.0 * si) / (p * p)
    return out


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: 1 for ``s <= 0``, 0 for ``s >= 1``, monotone in between."""
    s = np.asarray(s, dtype=float)
    out = np.where(s <= 0.0, 1.0, 0.0)
    mid = (s > 0.0) & (s < 1.0)
    sm = s[mid]
    fa = np.exp(-1.0 / (1.0 - sm))
    fb = np.exp(-1.0 / sm)
    out[mid] = fa / (fa + fb)
    return out


def radial_cutoff(x: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """Smooth radial weight, 1 on ``|x| <= inner`` and 0 on ``|x| >= outer``."""
    if not outer > inner >= 0:
        raise ValueError("need 0 <= inner < outer")
    return smooth_step((_radius(np.asarray(x, dtype=float)) - inner) / (outer - inner))


def _radius(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _check_finite(values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise MalformedScenarioError(f"{what} returned non-finite values")
    return values


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricField:
    """Scalar metric ``a(t, x)``, ``T``-periodic in time and equal to 1 for ``|x| >= rho``.

    ``frozen_interval = (lo, hi)`` declares that on ``lo <= t mod T < hi`` the
    metric does not depend on time; the solver uses it to share coefficient
    arrays between time steps.
    """

    n: int
    period: float
    flat_radius: float
    lower: float
    upper: float
    value: Evaluator
    time_derivative: Optional[Evaluator] = None
    gradient: Optional[Evaluator] = None
    static: bool = False
    frozen_interval: Optional[tuple[float, float]] = None
    kind: str = "custom"

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ScenarioError(f"dimension must be 1, 2 or 3, got {self.n}")
        if not self.period > 0:
            raise ScenarioError("metric period must be positive")
        if not self.flat_radius > 0:
            raise ScenarioError("flat radius must be positive")
        if not 0 < self.lower <= self.upper:
            raise ScenarioError(f"need 0 < c <= C, got c={self.lower}, C={self.upper}")

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.value(t, np.asarray(x, dtype=float))

    def dt(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.static:
            return np.zeros(x.shape[:-1])
        if self.time_derivative is not None:
            return self.time_derivative(t, x)
        return (self.value(t + _FD_STEP, x) - self.value(t - _FD_STEP, x)) / (2 * _FD_STEP)

    def grad(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return self.gradient(t, x)
        out = np.empty(x.shape)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = _FD_STEP
            out[..., i] = (self.value(t, x + e) - self.value(t, x - e)) / (2 * _FD_STEP)
        return out

    def phase(self, t: float) -> float:
        return math.fmod(t, self.period) if t >= 0 else t - self.period * math.floor(t / self.period)

    def is_frozen(self, t: float) -> bool:
        if self.static:
            return True
        if self.frozen_interval is None:
            return False
        lo, hi = self.frozen_interval
        return lo <= self.phase(t) < hi


def flat_metric(n: int, period: float = 1.0, flat_radius: float = 1.0) -> MetricField:
    def value(t, x):
        return np.ones(np.shape(x)[:-1])

    def gradient(t, x):
        return np.zeros(np.shape(x))

    return MetricField(n=n, period=period, flat_radius=flat_radius, lower=1.0, upper=1.0,
                       value=value, gradient=gradient, time_derivative=None, static=True,
                       kind="flat")


def bump_metric(n: int, period: float, rho: float, amplitude: float,
                modulation: float = 0.0, phase: float = 0.0) -> MetricField:
    """``a = 1 + A(t) * bump(|x|/rho)`` with ``A(t) = amplitude + modulation*sin(2 pi t/T + phase)``.

    Positive amplitude raises the wave speed inside (defocusing, non-trapping);
    a negative amplitude close to -1 makes a slow cavity.
    """
    omega = 2.0 * math.pi / period
    static = modulation == 0.0

    def amp(t):
        return amplitude + modulation * math.sin(omega * t + phase)

    def value(t, x):
        return 1.0 + amp(t) * smooth_bump(_radius(x) / rho)

    def time_derivative(t, x):
        return modulation * omega * math.cos(omega * t + phase) * smooth_bump(_radius(x) / rho)

    def gradient(t, x):
        r = _radius(x)
        db = smooth_bump_derivative(r / rho) / rho
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
        return amp(t) * db[..., None] * unit

    a_lo = amplitude - abs(modulation)
    a_hi = amplitude + abs(modulation)
    lower = 1.0 + min(0.0, a_lo)
    upper = 1.0 + max(0.0, a_hi)
    if lower <= 0:
        raise ScenarioError(f"bump metric would reach a <= 0 (min amplitude {a_lo})")
    return MetricField(n=n, period=period, flat_radius=rho, lower=lower, upper=upper,
                       value=value, time_derivative=None if static else time_derivative,
                       gradient=gradient, static=static,
                       kind="bump" if static else "pulsating-bump")


# ---------------------------------------------------------------------------
# obstacles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObstacleMotion:
    """Moving obstacle ``O(t) = {d(t, .) <= 0}`` given by a signed distance.

    ``speed_ratio`` is the declared bound on ``|nu_t| / |nu_x|``; when it is
    ``None`` validation only requires the sampled ratio to stay below 1.
    """

    n: int
    period: float
    bound_radius: float
    distance: Evaluator
    time_derivative: Optional[Evaluator] = None
    gradient: Optional[Evaluator] = None
    speed_ratio: Optional[float] = None
    static: bool = False
    frozen_interval: Optional[tuple[float, float]] = None
    kind: str = "custom"

    def __post_init__(self):
        if self.speed_ratio is not None and not 0 <= self.speed_ratio < 1:
            raise ScenarioError("boundary speed ratio must lie in [0, 1)")
        if not self.bound_radius > 0:
            raise ScenarioError("obstacle bound radius must be positive")

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.distance(t, np.asarray(x, dtype=float))

    def dt(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.static:
            return np.zeros(x.shape[:-1])
        if self.time_derivative is not None:
            return self.time_derivative(t, x)
        return (self.distance(t + _FD_STEP, x) - self.distance(t - _FD_STEP, x)) / (2 * _FD_STEP)

    def grad(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return self.gradient(t, x)
        out = np.empty(x.shape)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = _FD_STEP
            out[..., i] = (self.distance(t, x + e) - self.distance(t, x - e)) / (2 * _FD_STEP)
        return out

    def is_frozen(self, t: float) -> bool:
        if self.static:
            return True
        if self.frozen_interval is None:
            return False
        lo, hi = self.frozen_interval
        return lo <= math.fmod(t, self.period) % self.period < hi


@dataclass(frozen=True)
class BallPath:
    """A ball whose centre oscillates along one axis and whose radius pulsates.

    centre(t) = centre + center_amplitude * sin(2 pi t / T) * e_axis
    radius(t) = radius + radius_amplitude * sin(2 pi t / T)
    """

    center: tuple[float, ...]
    radius: float
    center_amplitude: float = 0.0
    axis: int = 0
    radius_amplitude: float = 0.0

    def reach(self) -> float:
        return (float(np.linalg.norm(self.center)) + abs(self.center_amplitude)
                + self.radius + abs(self.radius_amplitude))


def balls_obstacle(n: int, period: float, balls: Sequence[BallPath],
                   speed_ratio: Optional[float] = None, kind: str = "balls") -> ObstacleMotion:
    """Union of (possibly moving) balls; the signed distance is the minimum over balls."""
    if not balls:
        raise ScenarioError("need at least one ball")
    omega = 2.0 * math.pi / period
    centers = np.array([np.asarray(b.center, dtype=float) for b in balls])
    if centers.shape[1] != n:
        raise ScenarioError(f"ball centres must have {n} coordinates")
    for b in balls:
        if b.radius - abs(b.radius_amplitude) <= 0:
            raise ScenarioError("ball radius must stay positive")
    static = all(b.center_amplitude == 0 and b.radius_amplitude == 0 for b in balls)

    def _centre(i, t):
        c = centers[i].copy()
        c[balls[i].axis] += balls[i].center_amplitude * math.sin(omega * t)
        return c

    def _centre_rate(i, t):
        v = np.zeros(n)
        v[balls[i].axis] = balls[i].center_amplitude * omega * math.cos(omega * t)
        return v

    def _rad(i, t):
        return balls[i].radius + balls[i].radius_amplitude * math.sin(omega * t)

    def _rad_rate(i, t):
        return balls[i].radius_amplitude * omega * math.cos(omega * t)

    def _each(t, x):
        return np.stack([_radius(x - _centre(i, t)) - _rad(i, t) for i in range(len(balls))])

    def distance(t, x):
        return np.min(_each(t, x), axis=0)

    def time_derivative(t, x):
        d = _each(t, x)
        k = np.argmin(d, axis=0)
        out = np.empty(d.shape[1:])
        for i in range(len(balls)):
            sel = k == i
            rel = x[sel] - _centre(i, t)
            r = _radius(rel)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[..., None] > 0, rel / r[..., None], 0.0)
            out[sel] = -unit @ _centre_rate(i, t) - _rad_rate(i, t)
        return out

    def gradient(t, x):
        d = _each(t, x)
        k = np.argmin(d, axis=0)
        out = np.empty(x.shape)
        for i in range(len(balls)):
            sel = k == i
            rel = x[sel] - _centre(i, t)
            r = _radius(rel)
            with np.errstate(invalid="ignore", divide="ignore"):
                out[sel] = np.where(r[..., None] > 0, rel / r[..., None], 0.0)
        return out

    return ObstacleMotion(n=n, period=period, bound_radius=max(b.reach() for b in balls),
                          distance=distance, time_derivative=None if static else time_derivative,
                          gradient=gradient, speed_ratio=speed_ratio, static=static, kind=kind)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    metric: MetricField
    obstacle: Optional[ObstacleMotion] = None
    label: str = "scenario"
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.obstacle is not None:
            if self.obstacle.n != self.metric.n:
                raise ScenarioError("metric and obstacle dimensions differ")
            if not math.isclose(self.obstacle.period, self.metric.period, rel_tol=1e-14):
                raise ScenarioError(
                    f"metric period {self.metric.period} != obstacle period {self.obstacle.period}")
            if not self.obstacle.bound_radius < self.metric.flat_radius:
                raise ScenarioError(
                    f"need rho1 < rho, got rho1={self.obstacle.bound_radius}, "
                    f"rho={self.metric.flat_radius}")

    @property
    def n(self) -> int:
        return self.metric.n

    @property
    def period(self) -> float:
        return self.metric.period

    @property
    def rho(self) -> float:
        return self.metric.flat_radius

    @property
    def static(self) -> bool:
        return self.metric.static and (self.obstacle is None or self.obstacle.static)

    def is_frozen(self, t: float) -> bool:
        return self.metric.is_frozen(t) and (self.obstacle is None or self.obstacle.is_frozen(t))


@dataclass(frozen=True)
class GluedFamily:
    """Static pair ``(a1, O)`` with a transient deformation on ``[0, T1)`` of each period.

    The metric transient is ``amplitude * w(t/T1) * bump(|x|/hump_radius)``; the
    obstacle transient swells the obstacle by ``obstacle_swell * w(t/T1)``.
    """

    base: Scenario
    t1: float
    period: float
    amplitude: float = 0.0
    hump_radius: Optional[float] = None
    obstacle_swell: float = 0.0
    label: Optional[str] = None


def glued_scenario(f: GluedFamily) -> Scenario:
    """Build the ``T``-periodic scenario equal to the static pair on ``[T1, T]``."""
    if not f.t1 > 0:
        raise ScenarioError("splice time T1 must be positive")
    if f.period < f.t1:
        raise ScenarioError(f"total period T={f.period} is shorter than T1={f.t1}")
    base = f.base
    if not base.static:
        raise ScenarioError("glued family needs a static base metric and obstacle")
    a1 = base.metric
    rho = a1.flat_radius
    hump = rho if f.hump_radius is None else f.hump_radius
    if hump > rho:
        raise ScenarioError("transient hump must live inside |x| < rho")
    t1, period, amp = f.t1, f.period, f.amplitude
    frozen = (t1, period) if period > t1 else None

    def _s(t):
        return math.fmod(t, period) % period / t1

    def value(t, x):
        s = _s(t)
        base_val = a1.value(t, x)
        if s >= 1.0 or amp == 0.0:
            return base_val
        w = float(splice_window(np.array(s)))
        return base_val + amp * w * smooth_bump(_radius(x) / hump)

    def time_derivative(t, x):
        s = _s(t)
        if s >= 1.0 or amp == 0.0:
            return np.zeros(np.shape(x)[:-1])
        dw = float(splice_window_derivative(np.array(s))) / t1
        return amp * dw * smooth_bump(_radius(x) / hump)

    def gradient(t, x):
        g = a1.grad(t, x)
        s = _s(t)
        if s >= 1.0 or amp == 0.0:
            return g
        w = float(splice_window(np.array(s)))
        r = _radius(x)
        db = smooth_bump_derivative(r / hump) / hump
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
        return g + amp * w * db[..., None] * unit

    lower = a1.lower + min(0.0, amp)
    upper = a1.upper + max(0.0, amp)
    if lower <= 0:
        raise ScenarioError("transient drives the metric to a <= 0")
    metric_static = amp == 0.0
    metric = MetricField(n=a1.n, period=period, flat_radius=rho, lower=lower, upper=upper,
                         value=value, time_derivative=None if metric_static else time_derivative,
                         gradient=gradient, static=metric_static,
                         frozen_interval=None if metric_static else frozen, kind="glued")

    obstacle = None
    if base.obstacle is not None:
        o = base.obstacle
        swell = f.obstacle_swell
        if swell == 0.0:
            obstacle = replace(o, period=period)
        else:
            def distance(t, x):
                s = _s(t)
                d = o.distance(t, x)
                if s >= 1.0:
                    return d
                return d - swell * float(splice_window(np.array(s)))

            def obstacle_rate(t, x):
                s = _s(t)
                if s >= 1.0:
                    return np.zeros(np.shape(x)[:-1])
                return -swell * float(splice_window_derivative(np.array(s))) / t1 * np.ones(
                    np.shape(x)[:-1])

            obstacle = ObstacleMotion(n=o.n, period=period, bound_radius=o.bound_radius + abs(swell),
                                      distance=distance, time_derivative=obstacle_rate,
                                      gradient=o.gradient, speed_ratio=o.speed_ratio, static=False,
                                      frozen_interval=frozen, kind="glued")
    label = f.label or f"{base.label}-glued-T{period:g}"
    notes = base.notes + (f"glued: T1={t1:g}, T={period:g}, amplitude={amp:g}, "
                          f"obstacle_swell={f.obstacle_swell:g}",)
    return Scenario(metric=metric, obstacle=obstacle, label=label, notes=notes)


# ---------------------------------------------------------------------------
# boundary normal
# ---------------------------------------------------------------------------

def boundary_normal(o: ObstacleMotion, t: float, x: np.ndarray, tol: float = 1e-8,
                    eps: float = 1e-12) -> tuple[float, np.ndarray]:
    """Unit space-time normal ``(nu_t, nu_x)`` at a boundary point, pointing into ``Omega``.

    It is proportional to ``(d_t, grad_x d)``; ``d`` grows into the exterior.
    """
    x = np.asarray(x, dtype=float)
    d = float(o.distance(t, x[None, :])[0])
    if abs(d) > tol:
        raise ScenarioError(f"point is not on the boundary: |d| = {abs(d):.3e} > {tol:.1e}")
    g = o.grad(t, x[None, :])[0]
    gn = float(np.linalg.norm(g))
    if gn < eps:
        raise DegenerateBoundaryError(f"|grad_x d| = {gn:.3e} at t={t}, x={x.tolist()}")
    dt = float(o.dt(t, x[None, :])[0])
    scale = math.sqrt(dt * dt + gn * gn)
    return dt / scale, g / scale


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sampling:
    """How densely ``validate_scenario`` samples the evaluators."""

    times: int = 16
    points_per_axis: int = 17
    box: Optional[float] = None
    boundary_directions: int = 64
    periodicity_tol: float = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    witness: Optional[tuple[float, ...]] = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    label: str
    checks: tuple[CheckResult, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"scenario = {self.label}", f"ok = {str(self.ok).lower()}"]
        for c in self.checks:
            w = "" if c.witness is None else " witness=(" + ", ".join(f"{v:.17g}" for v in c.witness) + ")"
            lines.append(f"[{c.name}] passed={str(c.passed).lower()} margin={c.margin:.17g}{w}"
                         + (f" {c.detail}" if c.detail else ""))
        return "\n".join(lines) + "\n"


def _sample_points(n: int, half_width: float, per_axis: int) -> np.ndarray:
    axis = np.linspace(-half_width, half_width, per_axis)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _directions(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        ang = 2 * math.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = math.pi * (1 + 5 ** 0.5) * k
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _project_to_boundary(o: ObstacleMotion, t: float, pts: np.ndarray, iters: int = 30) -> np.ndarray:
    x = pts.copy()
    for _ in range(iters):
        d = _check_finite(o.distance(t, x), "obstacle distance")
        g = _check_finite(o.grad(t, x), "obstacle gradient")
        g2 = np.sum(g * g, axis=-1)
        g2 = np.where(g2 > 0, g2, 1.0)
        x = x - (d / g2)[:, None] * g
    d = o.distance(t, x)
    return x[np.abs(d) < 1e-9]


def boundary_samples(o: ObstacleMotion, t: float, sampling: Sampling, half_width: float) -> np.ndarray:
    """Quasi-uniform points on ``dO(t)`` found by Newton projection of nearby seeds."""
    grid = _sample_points(o.n, half_width, max(sampling.points_per_axis, 9))
    d = _check_finite(o.distance(t, grid), "obstacle distance")
    spacing = 2 * half_width / (max(sampling.points_per_axis, 9) - 1)
    seeds = [grid[np.abs(d) < 2 * spacing]]
    inside = grid[d < 0]
    anchors = inside if len(inside) else grid[[int(np.argmin(d))]]
    dirs = _directions(o.n, sampling.boundary_directions)
    # one ray fan per anchor cluster is enough; subsample anchors to bound the cost
    step = max(1, len(anchors) // 8)
    for a in anchors[::step]:
        seeds.append(a + 0.5 * o.bound_radius * dirs)
    seeds = np.concatenate(seeds, axis=0)
    if len(seeds) == 0:
        return np.empty((0, o.n))
    return _project_to_boundary(o, t, seeds)


def validate_scenario(s: Scenario, sampling: Sampling = Sampling()) -> ValidationReport:
    """Check every structural hypothesis of a scenario on a sample set."""
    m = s.metric
    n = m.n
    rho = m.flat_radius
    half = sampling.box if sampling.box is not None else 1.5 * rho
    pts = _sample_points(n, half, sampling.points_per_axis)
    r = _radius(pts)
    shell = np.concatenate([k * _directions(n, sampling.boundary_directions)
                            for k in (rho, rho * (1 + 1e-9), 1.25 * rho, 2.0 * rho)])
    times = m.period * np.arange(sampling.times) / sampling.times
    checks: list[CheckResult] = []

    lo_margin, lo_wit = math.inf, None
    hi_margin, hi_wit = math.inf, None
    flat_err, flat_wit = 0.0, None
    per_err, per_wit = 0.0, None
    outside = np.concatenate([pts[r >= rho], shell])
    for t in times:
        a = _check_finite(m(t, pts), "metric")
        i = int(np.argmin(a))
        if a[i] - m.lower < lo_margin:
            lo_margin, lo_wit = a[i] - m.lower, (t, *pts[i])
        j = int(np.argmax(a))
        if m.upper - a[j] < hi_margin:
            hi_margin, hi_wit = m.upper - a[j], (t, *pts[j])
        ao = _check_finite(m(t, outside), "metric")
        k = int(np.argmax(np.abs(ao - 1.0)))
        if abs(ao[k] - 1.0) > flat_err:
            flat_err, flat_wit = abs(ao[k] - 1.0), (t, *outside[k])
        a_shift = _check_finite(m(t + m.period, pts), "metric")
        diff = np.abs(a_shift - a)
        k = int(np.argmax(diff))
        if diff[k] > per_err:
            per_err, per_wit = float(diff[k]), (t, *pts[k])
    checks.append(CheckResult("metric_lower_bound", lo_margin >= 0, lo_margin,
                              None if lo_margin >= 0 else lo_wit, "a - c"))
    checks.append(CheckResult("metric_upper_bound", hi_margin >= 0, hi_margin,
                              None if hi_margin >= 0 else hi_wit, "C - a"))
    checks.append(CheckResult("metric_flat_outside", flat_err == 0.0, -flat_err,
                              flat_wit if flat_err else None, "a = 1 for |x| >= rho"))
    tol = sampling.periodicity_tol
    checks.append(CheckResult("metric_periodic", per_err <= tol, tol - per_err,
                              per_wit if per_err > tol else None, "a(t+T,x) = a(t,x)"))

    o = s.obstacle
    if o is not None:
        checks.append(CheckResult("periods_match", math.isclose(o.period, m.period, rel_tol=1e-14),
                                  0.0, None))
        checks.append(CheckResult("rho1_below_rho", o.bound_radius < rho, rho - o.bound_radius, None))
        reach, reach_wit = 0.0, None
        oper_err, oper_wit = 0.0, None
        speed, speed_wit = 0.0, None
        slow_margin = math.inf
        box_pts = _sample_points(n, max(half, 1.2 * o.bound_radius), sampling.points_per_axis)
        for t in times:
            d = _check_finite(o(t, box_pts), "obstacle distance")
            d_shift = _check_finite(o(t + o.period, box_pts), "obstacle distance")
            diff = np.abs(d_shift - d)
            k = int(np.argmax(diff))
            if diff[k] > oper_err:
                oper_err, oper_wit = float(diff[k]), (t, *box_pts[k])
            bpts = boundary_samples(o, t, sampling, max(half, 1.2 * o.bound_radius))
            cand = np.concatenate([box_pts[d <= 0], bpts])
            if len(cand):
                rr = _radius(cand)
                k = int(np.argmax(rr))
                if rr[k] > reach:
                    reach, reach_wit = float(rr[k]), (t, *cand[k])
            if len(bpts):
                dt = _check_finite(o.dt(t, bpts), "obstacle time derivative")
                g = _check_finite(o.grad(t, bpts), "obstacle gradient")
                gn = np.sqrt(np.sum(g * g, axis=-1))
                if np.any(gn < 1e-12):
                    k = int(np.argmin(gn))
                    raise DegenerateBoundaryError(f"degenerate boundary gradient at t={t}, "
                                                  f"x={bpts[k].tolist()}")
                ratio = np.abs(dt) / gn
                k = int(np.argmax(ratio))
                if ratio[k] > speed:
                    speed, speed_wit = float(ratio[k]), (t, *bpts[k])
                a_b = m(t, bpts)
                slow_margin = min(slow_margin, float(np.min(np.sqrt(a_b) - ratio)))
        checks.append(CheckResult("obstacle_bounded", reach <= o.bound_radius,
                                  o.bound_radius - reach,
                                  reach_wit if reach > o.bound_radius else None, "|x| <= rho1 on O(t)"))
        checks.append(CheckResult("obstacle_periodic", oper_err <= tol, tol - oper_err,
                                  oper_wit if oper_err > tol else None, "O(t+T) = O(t)"))
        bound = 1.0 if o.speed_ratio is None else o.speed_ratio
        ok = speed < bound
        checks.append(CheckResult("boundary_timelike", ok, bound - speed, None if ok else speed_wit,
                                  f"max |nu_t|/|nu_x| = {speed:.17g} vs kappa = {bound:.17g}; "
                                  f"min sqrt(a) - ratio = {slow_margin:.6g}"))
    return ValidationReport(label=s.label, checks=tuple(checks))
