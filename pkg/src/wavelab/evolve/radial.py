"""Radially symmetric 3D waves with ``a = 1`` through ``w = r u``.

For radial data the 3D equation reduces to ``w_tt = w_rr`` on ``r > 0`` with
``w(0) = 0``, which is solved on a node-centred 1D mesh with the same
kick-drift-kick scheme as the full grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numba
import numpy as np


@numba.njit(cache=True)
def _leapfrog(w, v, nsteps, dt, inv_h2):
    m = w.shape[0]
    lw = np.empty(m)
    for i in range(1, m - 1):
        lw[i] = inv_h2 * (w[i + 1] - 2.0 * w[i] + w[i - 1])
    lw[0] = 0.0
    lw[m - 1] = 0.0
    half = 0.5 * dt
    for _ in range(nsteps):
        for i in range(1, m - 1):
            v[i] += half * lw[i]
            w[i] += dt * v[i]
        for i in range(1, m - 1):
            lw[i] = inv_h2 * (w[i + 1] - 2.0 * w[i] + w[i - 1])
        for i in range(1, m - 1):
            v[i] += half * lw[i]


@dataclass
class RadialSolver:
    """Radial 3D free wave on ``0 <= r <= R`` with ``nodes`` intervals.

    Attributes:
        radius: Outer radius ``R``; a reflecting wall sits there.
        nodes: Number of mesh intervals, so ``h = R / nodes``.
        cfl: Ratio ``dt / h`` (1 is exact transport, below 1 is dispersive).
    """

    radius: float
    nodes: int
    cfl: float = 0.5

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        self.h = self.radius / self.nodes
        self.dt = self.cfl * self.h
        self.r = np.arange(self.nodes + 1) * self.h
        self.w = np.zeros(self.nodes + 1)
        self.v = np.zeros(self.nodes + 1)
        self.t = 0.0
        self.steps = 0

    def set_data(self, u0: Callable[[np.ndarray], np.ndarray],
                 u1: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> None:
        """Load ``u(0) = u0(r)``, ``u_t(0) = u1(r)`` as ``w = r u``."""
        r = self.r
        self.w = r * np.asarray(u0(r), dtype=float)
        self.v = np.zeros_like(r) if u1 is None else r * np.asarray(u1(r), dtype=float)
        self.w[0] = self.w[-1] = 0.0
        self.v[0] = self.v[-1] = 0.0
        self.t = 0.0
        self.steps = 0

    def advance(self, t: float) -> None:
        """Advance to the nearest lattice time not below ``t``."""
        nsteps = max(0, math.ceil((t - self.t) / self.dt - 1e-9))
        _leapfrog(self.w, self.v, nsteps, self.dt, 1.0 / self.h ** 2)
        self.steps += nsteps
        self.t = self.steps * self.dt

    def local_energy(self, rho: Optional[float] = None) -> float:
        """``4 pi int_0^rho (w_r - w/r)^2 + w_t^2 dr`` by the midpoint rule (whole mesh if None)."""
        h = self.h
        k = self.nodes if rho is None else min(self.nodes, int(round(rho / h)))
        if k == 0:
            return 0.0
        w, v = self.w[: k + 1], self.v[: k + 1]
        rm = 0.5 * (self.r[1: k + 1] + self.r[:k])
        grad = np.diff(w) / h - 0.5 * (w[1:] + w[:-1]) / rm
        vel = 0.5 * (v[1:] + v[:-1])
        return float(4.0 * math.pi * h * np.sum(grad * grad + vel * vel))

    def profile(self, radii: np.ndarray) -> np.ndarray:
        """Interpolated ``u(r)`` at the requested radii (``r > 0``)."""
        radii = np.asarray(radii, dtype=float)
        w = np.interp(radii, self.r, self.w)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(radii > 0, w / np.where(radii > 0, radii, 1.0), np.nan)
        if np.any(radii == 0) and self.nodes >= 1:
            u = np.where(radii == 0, self.w[1] / self.h, u)
        return u


def exact_radial(u0: Callable[[np.ndarray], np.ndarray], r: np.ndarray, t: float) -> np.ndarray:
    """d'Alembert solution ``w(r, t)`` for data ``(u0, 0)``; ``r u0`` is extended oddly."""

    def big_f(s):
        s = np.asarray(s, dtype=float)
        return s * u0(np.abs(s))

    return 0.5 * (big_f(r - t) + big_f(r + t))


@dataclass(frozen=True)
class HuygensResult:
    """Local energy ratio ``E(|x| <= rho, t) / E(0)`` at several mesh sizes."""

    mesh_sizes: tuple
    ratios: tuple
    orders: tuple
    time: float

    @property
    def worst_ratio(self) -> float:
        return max(self.ratios)

    @property
    def min_order(self) -> float:
        return min(self.orders) if self.orders else float("nan")


def huygens_check(u0: Callable[[np.ndarray], np.ndarray], support: float, t: float,
                  rho: float = 1.0, base_nodes_per_unit: int = 100, refinements: int = 2,
                  cfl: float = 0.5) -> HuygensResult:
    """Run the radial path at ``h, h/2, ...`` and report the residual local energy.

    The outer wall is placed so that reflections cannot re-enter ``r <= rho`` by time ``t``.
    """
    radius = math.ceil(0.5 * (t + support + rho) + 1.0)
    sizes, ratios = [], []
    for level in range(refinements + 1):
        nodes = radius * base_nodes_per_unit * 2 ** level
        solver = RadialSolver(radius, nodes, cfl)
        solver.set_data(u0)
        e0 = solver.local_energy()
        solver.advance(t)
        sizes.append(solver.h)
        ratios.append(solver.local_energy(rho) / e0 if e0 > 0 else 0.0)
    orders = []
    for a, b, ha, hb in zip(ratios, ratios[1:], sizes, sizes[1:]):
        orders.append(math.log(a / b) / math.log(ha / hb) if a > 0 and b > 0 else float("inf"))
    return HuygensResult(tuple(sizes), tuple(ratios), tuple(orders), t)
