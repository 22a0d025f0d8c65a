"""INI experiment files: scenario definition, plan and per-command options.

A file either names a builtin::

    [scenario]
    builtin = static-nontrap

or defines the scenario inline with ``[metric]``, optional ``[obstacle]`` and
optional ``[glue]`` sections. ``[grid]``/``[plan]`` override the numerical
setup and ``[decay]``, ``[floquet]``, ``[rays]``, ``[evolve]`` carry command
options. Errors name the offending line.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from typing import Optional

from ..evolve import Grid
from ..geometry import (BallPath, GluedFamily, Scenario, ScenarioError, balls_obstacle,
                        bump_metric, flat_metric, glued_scenario)
from .scenarios import Builtin, builtin, family_steps

SECTIONS = ("scenario", "metric", "obstacle", "glue", "grid", "plan", "decay", "floquet", "rays",
            "evolve")
PLAN_KEYS = {"cfl": float, "boundary": str, "sponge_width": float, "sponge_strength": float,
             "sponge_power": int, "filter_strength": float, "filter_order": int,
             "steps_per_period": int}


class ConfigError(ValueError):
    """Input error with an optional 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = f"{path or '<config>'}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


@dataclass
class ExperimentConfig:
    """Resolved experiment: scenario, grid, plan arguments and raw command options."""

    label: str
    scenario: Scenario
    grid: Grid
    plan: dict
    options: dict = field(default_factory=dict)
    family: Optional[GluedFamily] = None
    builtin_name: Optional[str] = None
    seed: int = 0
    text: str = ""

    def section(self, name: str) -> dict:
        return dict(self.options.get(name, {}))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _key_lines(text: str) -> dict:
    """``(section, key) -> line`` so value errors can point at the file."""
    out = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = i
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = i
    return out


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, lines: dict, path: Optional[str]):
        self.p = parser
        self.lines = lines
        self.path = path

    def error(self, section: str, key: Optional[str], message: str) -> ConfigError:
        line = self.lines.get((section, key), self.lines.get((section, None)))
        return ConfigError(message, line, self.path)

    def get(self, section: str, key: str, kind=float, default=None, required: bool = False):
        if not self.p.has_option(section, key):
            if required:
                raise self.error(section, None, f"[{section}] needs '{key}'")
            return default
        raw = self.p.get(section, key).strip()
        try:
            if kind is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return kind(raw)
        except ValueError:
            raise self.error(section, key, f"[{section}] {key} = {raw!r} is not a valid "
                                           f"{kind.__name__}") from None

    def floats(self, section: str, key: str) -> list[list[float]]:
        """``a b c; d e f`` as a list of float lists."""
        raw = self.p.get(section, key)
        try:
            return [[float(v) for v in part.split()] for part in raw.split(";") if part.strip()]
        except ValueError:
            raise self.error(section, key, f"[{section}] {key} must hold numbers") from None


def _metric(r: _Reader):
    kind = r.get("metric", "kind", str, required=True).lower()
    n = r.get("metric", "n", int, 3)
    period = r.get("metric", "period", float, 1.0)
    rho = r.get("metric", "rho", float, 1.0)
    try:
        if kind in ("flat", "free"):
            return flat_metric(n, period, rho)
        if kind in ("bump", "pulsating-bump"):
            return bump_metric(n, period, rho, r.get("metric", "amplitude", float, 0.0),
                               r.get("metric", "modulation", float, 0.0),
                               r.get("metric", "phase", float, 0.0))
    except ScenarioError as exc:
        raise r.error("metric", None, str(exc)) from None
    raise r.error("metric", "kind", f"unknown metric kind {kind!r} (flat, bump, pulsating-bump)")


def _obstacle(r: _Reader, n: int, period: float):
    kind = r.get("obstacle", "kind", str, "balls").lower()
    if kind not in ("ball", "balls"):
        raise r.error("obstacle", "kind", f"unknown obstacle kind {kind!r} (balls)")
    if not r.p.has_option("obstacle", "center_path") or not r.p.has_option("obstacle", "radius_path"):
        raise r.error("obstacle", None, "[obstacle] needs center_path and radius_path")
    centers = r.floats("obstacle", "center_path")
    radii = r.floats("obstacle", "radius_path")
    if len(centers) != len(radii):
        raise r.error("obstacle", "radius_path", "center_path and radius_path list different ball counts")
    balls = []
    for c, rad in zip(centers, radii):
        # centre coordinates, then optional oscillation amplitude and axis
        if len(c) not in (n, n + 1, n + 2) or len(rad) not in (1, 2):
            raise r.error("obstacle", "center_path", f"each ball needs {n} centre coordinates "
                          "[amplitude [axis]] and radius [pulsation]")
        balls.append(BallPath(tuple(c[:n]), rad[0], c[n] if len(c) > n else 0.0,
                              int(c[n + 1]) if len(c) > n + 1 else 0, rad[1] if len(rad) > 1 else 0.0))
    try:
        return balls_obstacle(n, period, balls, r.get("obstacle", "speed_ratio", float, None))
    except ScenarioError as exc:
        raise r.error("obstacle", None, str(exc)) from None


def parse_config(text: str, path: Optional[str] = None, scenario_name: Optional[str] = None,
                 seed: Optional[int] = None) -> ExperimentConfig:
    """Parse an experiment file; ``scenario_name`` (the ``--scenario`` flag) wins over the file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, path) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("missing section header", exc.lineno, path) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(str(exc.message) if hasattr(exc, "message") else str(exc),
                          getattr(exc, "lineno", None), path) from None
    lines = _key_lines(text)
    r = _Reader(parser, lines, path)
    for sec in parser.sections():
        if sec.lower() not in SECTIONS:
            raise r.error(sec.lower(), None, f"unknown section [{sec}]")

    base: Optional[Builtin] = None
    name = scenario_name or r.get("scenario", "builtin", str, None)
    family = None
    if name:
        try:
            base = builtin(name)
        except ScenarioError as exc:
            raise r.error("scenario", "builtin", str(exc)) from None
        scenario = base.scenario()
        family = base.family() if base.family else None
        label = name
    elif parser.has_section("metric"):
        metric = _metric(r)
        obstacle = _obstacle(r, metric.n, metric.period) if parser.has_section("obstacle") else None
        label = r.get("scenario", "label", str, "custom")
        try:
            scenario = Scenario(metric, obstacle, label=label)
        except ScenarioError as exc:
            raise r.error("obstacle" if obstacle else "metric", None, str(exc)) from None
    else:
        raise ConfigError("config needs [scenario] builtin = NAME or a [metric] section", None, path)

    if parser.has_section("glue"):
        t1 = r.get("glue", "t1", float, required=True)
        total = r.get("glue", "total_period", float, required=True)
        try:
            family = GluedFamily(base=scenario, t1=t1, period=total,
                                 amplitude=r.get("glue", "amplitude", float, 0.0),
                                 hump_radius=r.get("glue", "hump_radius", float, None),
                                 obstacle_swell=r.get("glue", "obstacle_swell", float, 0.0),
                                 label=r.get("scenario", "label", str, None))
            scenario = glued_scenario(family)
        except ScenarioError as exc:
            raise r.error("glue", None, str(exc)) from None
        label = scenario.label

    if base is not None:
        grid = base.grid
        plan = dict(base.plan)
    else:
        grid = Grid(scenario.n, 40, max(3.0, scenario.rho + 2.0))
        plan = dict(cfl=0.9, boundary="reflecting")
    if parser.has_section("grid"):
        cells = r.get("grid", "cells", int, grid.cells)
        half_width = r.get("grid", "half_width", float, grid.half_width)
        try:
            grid = Grid(scenario.n, cells, half_width)
        except ValueError as exc:
            raise r.error("grid", None, str(exc)) from None
    if parser.has_section("plan"):
        for key in parser.options("plan"):
            if key not in PLAN_KEYS:
                raise r.error("plan", key, f"unknown plan key {key!r}")
            plan[key] = r.get("plan", key, PLAN_KEYS[key])

    if family is not None and not parser.has_option("plan", "steps_per_period"):
        # keep T1 on the step lattice for the grid actually used
        try:
            plan["steps_per_period"] = family_steps(family, grid, plan)
        except ValueError as exc:
            raise r.error("plan" if parser.has_section("plan") else "grid", None, str(exc)) from None

    options = {}
    for sec in ("decay", "floquet", "rays", "evolve"):
        if parser.has_section(sec):
            options[sec] = {k: parser.get(sec, k) for k in parser.options(sec)}
    options["_lines"] = lines
    if base is not None:
        options.setdefault("decay", {})
        for k, v in base.decay.items():
            options["decay"].setdefault(k, str(v))
    if seed is None:
        seed = r.get("scenario", "seed", int, 0)
    return ExperimentConfig(label, scenario, grid, plan, options, family, name, seed, text)


def option(cfg: ExperimentConfig, section: str, key: str, kind=float, default=None):
    """Typed command option with a line-numbered error."""
    raw = cfg.options.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        if kind is bool:
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        return kind(str(raw).strip())
    except ValueError:
        line = cfg.options.get("_lines", {}).get((section, key))
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}", line) from None


def load_config(path: Optional[str], scenario_name: Optional[str] = None,
                seed: Optional[int] = None) -> ExperimentConfig:
    if path is None:
        if scenario_name is None:
            raise ConfigError("give --config PATH or --scenario NAME")
        return parse_config(f"[scenario]\nbuiltin = {scenario_name}\n", None, None, seed)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path, scenario_name, seed)
