"""Grids, step plans, wave states and the periodic coefficient schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geometry import Scenario, ScenarioError

BOUNDARY_MODES = ("reflecting", "sponge")
NORM_VARIANTS = ("paper", "metric")


class EvolveError(RuntimeError):
    """Base class for solver failures."""


class CFLViolation(EvolveError):
    pass


class BlowUpError(EvolveError):
    def __init__(self, step_index: int, message: str = ""):
        self.step_index = step_index
        super().__init__(message or f"non-finite field detected at step {step_index}")


class LatticeError(ValueError):
    """A requested time is not on the step lattice, or runs backwards."""


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on ``[-L, L]^n`` with ``cells`` cells per axis."""

    n: int
    cells: int
    half_width: float

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.n}")
        if self.cells < 3:
            raise GridError("need at least 3 cells per axis")
        if not self.half_width > 0:
            raise GridError("half width must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells,) * self.n

    @property
    def size(self) -> int:
        return self.cells ** self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    def axis(self) -> np.ndarray:
        return -self.half_width + (np.arange(self.cells) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    def faces(self, axis: int) -> np.ndarray:
        """Face midpoints normal to ``axis``; ``cells + 1`` entries along that axis."""
        centre = self.axis()
        face = -self.half_width + np.arange(self.cells + 1) * self.h
        axes = [face if i == axis else centre for i in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def radius(self) -> np.ndarray:
        c = self.centers()
        return np.sqrt(np.sum(c * c, axis=-1))

    def check_scenario(self, scenario: Scenario) -> None:
        if scenario.n != self.n:
            raise GridError(f"grid dimension {self.n} != scenario dimension {scenario.n}")
        if not self.half_width > scenario.rho + 1.0:
            raise GridError(f"need L > rho + 1 = {scenario.rho + 1.0:g}, got L = {self.half_width:g}")


@dataclass(frozen=True)
class StepPlan:
    """Time step, steps per period, CFL number and outer-boundary treatment.

    ``filter_strength > 0`` adds a per-step grid-scale velocity filter (see
    ``kernels.grid_filter``); it belongs with the sponge as part of the absorbing
    surrogate, since lattice modes near the Nyquist wavenumber have almost zero
    group velocity and would otherwise never reach the layer.
    """

    dt: float
    steps_per_period: int
    cfl: float
    boundary: str = "reflecting"
    sponge_width: float = 0.0
    sponge_strength: float = 0.0
    sponge_power: int = 2
    filter_strength: float = 0.0
    filter_order: int = 2

    def __post_init__(self):
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        if not 0 < self.cfl <= 1:
            raise CFLViolation(f"CFL number must lie in (0, 1], got {self.cfl}")
        if self.steps_per_period < 1:
            raise ValueError("need at least one step per period")
        if self.boundary == "sponge" and not (self.sponge_width > 0 and self.sponge_strength > 0):
            raise ValueError("sponge mode needs positive width and strength")
        if not 0 <= self.filter_strength <= 0.5:
            raise ValueError("filter strength must lie in [0, 0.5]")
        if self.filter_order not in (1, 2, 3):
            raise ValueError("filter order must be 1, 2 or 3")

    @classmethod
    def for_scenario(cls, scenario: Scenario, grid: Grid, cfl: float = 0.9,
                     boundary: str = "reflecting", sponge_width: float = 0.0,
                     sponge_strength: float = 0.0, sponge_power: int = 2,
                     steps_per_period: Optional[int] = None, filter_strength: float = 0.0,
                     filter_order: int = 2) -> "StepPlan":
        """Smallest number of steps per period that respects the CFL bound."""
        speed = math.sqrt(grid.n * scenario.metric.upper)
        if steps_per_period is None:
            steps_per_period = math.ceil(scenario.period * speed / (cfl * grid.h) * (1 - 1e-13))
        dt = scenario.period / steps_per_period
        plan = cls(dt=dt, steps_per_period=steps_per_period, cfl=cfl, boundary=boundary,
                   sponge_width=sponge_width, sponge_strength=sponge_strength,
                   sponge_power=sponge_power, filter_strength=filter_strength,
                   filter_order=filter_order)
        plan.check(scenario, grid)
        return plan

    def check(self, scenario: Scenario, grid: Grid) -> None:
        speed = math.sqrt(grid.n * scenario.metric.upper)
        if self.dt * speed > self.cfl * grid.h * (1 + 1e-12):
            raise CFLViolation(f"dt*sqrt(n*C) = {self.dt * speed:.6g} exceeds "
                               f"CFL*h = {self.cfl * grid.h:.6g}")
        if not math.isclose(self.dt * self.steps_per_period, scenario.period, rel_tol=1e-12):
            raise CFLViolation("steps_per_period * dt must equal the period")
        if self.boundary == "sponge" and self.sponge_width >= grid.half_width - scenario.rho - 1.0:
            raise GridError("sponge layer overlaps the cut-off region |x| <= rho + 1")

    def lattice_speed(self, h: float) -> float:
        """Speed of the discrete light cone.

        The stencil moves data one cell per step; each filter pass adds
        ``filter_order`` more cells.
        """
        cells = 1 + (self.filter_order if self.filter_strength > 0 else 0)
        return cells * h / self.dt


@dataclass(frozen=True)
class WaveState:
    """Cauchy data ``(u, u_t)`` on the grid at lattice step ``step``."""

    u: np.ndarray
    v: np.ndarray
    t: float
    step: int
    mask_id: int = 0

    def __post_init__(self):
        for arr in (self.u, self.v):
            arr.flags.writeable = False

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    def scaled(self, weight) -> "WaveState":
        return WaveState(self.u * weight, self.v * weight, self.t, self.step, self.mask_id)

    def is_zero(self) -> bool:
        return not (np.any(self.u) or np.any(self.v))


@dataclass(frozen=True)
class EnergyReading:
    value: float
    region: str
    variant: str

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("energy must be non-negative")


class Schedule:
    """Face coefficients, masks and damping per step of one period.

    Arrays are cached by phase index ``k mod N_T``; phases in the frozen part of
    the period share one set of arrays, and a static scenario has exactly one.
    """

    def __init__(self, scenario: Scenario, grid: Grid, plan: StepPlan):
        grid.check_scenario(scenario)
        plan.check(scenario, grid)
        self.scenario = scenario
        self.grid = grid
        self.plan = plan
        self._faces_cache: dict[int, tuple[np.ndarray, ...]] = {}
        self._mask_cache: dict[int, np.ndarray] = {}
        self._frozen_faces = None
        self._frozen_mask = None
        self._face_points = [grid.faces(i) for i in range(grid.n)]
        self._centers = grid.centers()
        self.ones = np.ones(grid.size)
        self.ones.flags.writeable = False
        self.damp = self._damping()

    def phase(self, k: int) -> int:
        return k % self.plan.steps_per_period

    def phase_time(self, k: int) -> float:
        return self.phase(k) * self.plan.dt

    def _frozen(self, k: int) -> bool:
        return self.scenario.is_frozen(self.phase_time(k))

    def faces(self, k: int) -> tuple[np.ndarray, ...]:
        p = self.phase(k)
        got = self._faces_cache.get(p)
        if got is not None:
            return got
        metric = self.scenario.metric
        frozen = metric.is_frozen(self.phase_time(p))
        if frozen and self._frozen_faces is not None:
            got = self._frozen_faces
        else:
            t = self.phase_time(p)
            got = []
            for pts in self._face_points:
                a = np.ascontiguousarray(metric(t, pts), dtype=float)
                if not np.all(np.isfinite(a)):
                    raise ScenarioError(f"metric returned non-finite values at t={t}")
                a.flags.writeable = False
                got.append(a)
            got = tuple(got)
            if frozen:
                self._frozen_faces = got
        self._faces_cache[p] = got
        return got

    def mask(self, k: int) -> np.ndarray:
        """Flat 0/1 array of active cells at step ``k``."""
        o = self.scenario.obstacle
        if o is None:
            return self.ones
        p = self.phase(k)
        got = self._mask_cache.get(p)
        if got is not None:
            return got
        frozen = o.is_frozen(self.phase_time(p))
        if frozen and self._frozen_mask is not None:
            got = self._frozen_mask
        else:
            d = o(self.phase_time(p), self._centers)
            got = np.ascontiguousarray((d > 0).astype(float).ravel())
            got.flags.writeable = False
            if frozen:
                self._frozen_mask = got
        self._mask_cache[p] = got
        return got

    def mask_id(self, k: int) -> int:
        o = self.scenario.obstacle
        if o is None or o.static:
            return 0
        return self.phase(k)

    def check_mask_motion(self) -> None:
        """Each step may flip only cells adjacent to the previous obstacle boundary."""
        if self.scenario.obstacle is None or self.scenario.obstacle.static:
            return
        shape = self.grid.shape
        for k in range(self.plan.steps_per_period):
            prev = self.mask(k).reshape(shape).astype(bool)
            new = self.mask(k + 1).reshape(shape).astype(bool)
            flipped = prev != new
            if not flipped.any():
                continue
            edge = np.zeros(shape, dtype=bool)
            for ax in range(self.grid.n):
                for s in (1, -1):
                    rolled = np.roll(prev, s, axis=ax)
                    edge |= rolled != prev
            if np.any(flipped & ~edge):
                raise GridError(f"obstacle mask moves by more than one cell layer at step {k}")

    def _damping(self) -> np.ndarray:
        plan, grid = self.plan, self.grid
        if plan.boundary != "sponge":
            return self.ones
        sigma = self.sponge_profile()
        damp = np.exp(-0.5 * plan.dt * sigma).ravel()
        damp.flags.writeable = False
        return damp

    def sponge_profile(self) -> np.ndarray:
        plan, grid = self.plan, self.grid
        sigma = np.zeros(grid.shape)
        if plan.boundary != "sponge":
            return sigma
        inner = grid.half_width - plan.sponge_width
        c = self._centers
        for ax in range(grid.n):
            depth = np.clip((np.abs(c[..., ax]) - inner) / plan.sponge_width, 0.0, None)
            sigma += plan.sponge_strength * depth ** plan.sponge_power
        return sigma
