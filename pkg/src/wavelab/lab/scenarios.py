"""Builtin scenarios with their default grids, step plans and experiment settings."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from ..evolve import Grid, Propagator, StepPlan
from ..geometry import (BallPath, GluedFamily, Scenario, ScenarioError, balls_obstacle,
                        bump_metric, flat_metric, glued_scenario)

# shared absorbing setup for the 3D decay scenarios
SPONGE_3D = dict(cfl=0.9, boundary="sponge", sponge_width=2.0, sponge_strength=3.0,
                 sponge_power=1, filter_strength=0.2, filter_order=2)

GLUED_T1 = 0.25
GLUED_AMPLITUDE = 0.25


@dataclass(frozen=True)
class Builtin:
    """A named scenario plus the numerical setup it ships with."""

    name: str
    description: str
    build: Callable[[], Scenario]
    grid: Grid
    plan: dict = field(default_factory=dict)
    decay: dict = field(default_factory=dict)
    family: Optional[Callable[[], GluedFamily]] = None

    def scenario(self) -> Scenario:
        return self.build()

    def step_plan(self, scenario: Optional[Scenario] = None, **overrides) -> StepPlan:
        args = dict(self.plan)
        args.update(overrides)
        return StepPlan.for_scenario(scenario or self.build(), self.grid, **args)

    def propagator(self, **overrides) -> Propagator:
        sc = self.build()
        return Propagator(sc, self.grid, self.step_plan(sc, **overrides))


def static_nontrap_scenario() -> Scenario:
    # slow radial bump: r / sqrt(a) stays increasing, so no circular rays
    return Scenario(bump_metric(3, 1.0, 1.0, -0.3), label="static-nontrap",
                    notes=("a1 = 1 - 0.3 bump(|x|)",))


def glued_family(k: int) -> GluedFamily:
    base = static_nontrap_scenario()
    return GluedFamily(base=base, t1=GLUED_T1, period=k * GLUED_T1, amplitude=GLUED_AMPLITUDE,
                       hump_radius=1.0, label=f"glued-T{k}")


def glued(k: int) -> Scenario:
    return glued_scenario(glued_family(k))


def family_steps(family: GluedFamily, grid: Grid, plan: dict) -> int:
    """Steps per period that put ``T1`` on the lattice: ``T/T1`` times the CFL count for ``T1``."""
    probe = glued_scenario(replace(family, period=family.t1))
    args = {k: v for k, v in plan.items() if k != "steps_per_period"}
    per_t1 = StepPlan.for_scenario(probe, grid, **args).steps_per_period
    return int(round(family.period / family.t1)) * per_t1


def pump_cavity_scenario() -> Scenario:
    beta, eps, period = 0.6, 0.5, 0.4
    return Scenario(bump_metric(3, period, 1.0, -beta, -beta * eps), label="pump-cavity",
                    notes=(f"a = 1 - {beta:g}(1 + {eps:g} sin(2 pi t/T)) bump(|x|), T = {period:g}",))


def two_ball_scenario() -> Scenario:
    balls = [BallPath((0.5, 0.0, 0.0), 0.3), BallPath((-0.5, 0.0, 0.0), 0.3)]
    return Scenario(flat_metric(3, 1.0, 1.0), balls_obstacle(3, 1.0, balls), label="two-ball-trap",
                    notes=("the segment between the balls carries a periodic ray",))


def moving_ball_scenario() -> Scenario:
    # centre speed 0.2 * 2 pi / 4 ~ 0.31 < 1
    balls = [BallPath((0.0, 0.0, 0.0), 0.3, center_amplitude=0.2)]
    return Scenario(flat_metric(3, 4.0, 1.0), balls_obstacle(3, 4.0, balls, speed_ratio=0.5),
                    label="moving-ball")


def tiny1d_scenario() -> Scenario:
    return Scenario(bump_metric(1, 1.0, 1.0, -0.5, 0.3), label="tiny1d")


def free_scenario(n: int = 3) -> Scenario:
    return Scenario(flat_metric(n, 1.0, 1.0), label="free" if n == 3 else f"free{n}d")


def free3d_radial_scenario() -> Scenario:
    return Scenario(flat_metric(3, 1.0, 1.0), label="free3d-radial",
                    notes=("evaluated on the radial path w = r u",))


_DECAY_3D = dict(horizon=100.0, ensemble=32, model="auto")

BUILTINS: dict[str, Builtin] = {}


def _register(b: Builtin) -> None:
    BUILTINS[b.name] = b


_register(Builtin("free", "a = 1 without obstacle (3D)", free_scenario, Grid(3, 30, 5.0),
                  dict(SPONGE_3D), dict(_DECAY_3D)))
_register(Builtin("static-nontrap", "static slow radial bump a1 = 1 - 0.3 bump (3D)",
                  static_nontrap_scenario, Grid(3, 30, 5.0), dict(SPONGE_3D), dict(_DECAY_3D)))
_register(Builtin("pump-cavity", "pulsating slow cavity with a parametric resonance (3D)",
                  pump_cavity_scenario, Grid(3, 50, 3.0),
                  dict(cfl=0.9, boundary="sponge", sponge_width=0.9, sponge_strength=6.0,
                       sponge_power=1, filter_strength=0.2, filter_order=2),
                  dict(horizon=16.0, ensemble=32, model="auto")))
_register(Builtin("two-ball-trap", "two static balls with a trapped segment (3D)", two_ball_scenario,
                  Grid(3, 30, 5.0), dict(SPONGE_3D), dict(_DECAY_3D)))
_register(Builtin("moving-ball", "ball oscillating along x1 (3D)", moving_ball_scenario,
                  Grid(3, 30, 5.0), dict(SPONGE_3D), dict(_DECAY_3D)))
_register(Builtin("tiny1d", "small 1D pulsating bump with a dense-oracle spectrum", tiny1d_scenario,
                  Grid(1, 120, 4.0),
                  dict(cfl=0.9, boundary="sponge", sponge_width=1.0, sponge_strength=6.0),
                  dict(horizon=40.0, ensemble=32, model="auto")))
_register(Builtin("free3d-radial", "a = 1 in 3D on the radial path", free3d_radial_scenario,
                  Grid(3, 30, 5.0), dict(SPONGE_3D),
                  dict(support=1.0, time=3.0, rho=1.0, nodes_per_unit=100, refinements=2)))

_GLUED = re.compile(r"^glued-T(\d+)$")


def builtin(name: str) -> Builtin:
    """Look up a builtin; ``glued-T{k}`` is generated for any ``k >= 1``."""
    if name in BUILTINS:
        return BUILTINS[name]
    m = _GLUED.match(name)
    if m and int(m.group(1)) >= 1:
        k = int(m.group(1))
        grid = Grid(3, 30, 5.0)
        plan = dict(SPONGE_3D, steps_per_period=family_steps(glued_family(k), grid, SPONGE_3D))
        return Builtin(name, f"glued family, T = {k} T1, T1 = {GLUED_T1:g}", lambda: glued(k),
                       grid, plan, dict(_DECAY_3D), family=lambda: glued_family(k))
    known = ", ".join(sorted(BUILTINS) + ["glued-T{k}"])
    raise ScenarioError(f"unknown builtin scenario {name!r}; known: {known}")


def builtin_names() -> list[str]:
    return sorted(BUILTINS) + ["glued-T1", "glued-T2", "glued-T4", "glued-T8"]
