"""Discrete propagator ``U(t, s)`` for the Dirichlet mixed problem.

One step is kick-drift-kick Verlet for ``u_tt = div(a grad u)``:

    v  <- damp * v + dt/2 * L_k u
    u  <- P_{k+1} (u + dt * v);  v <- P_{k+1} v
    v  <- damp * P_{k+1} (v + dt/2 * L_{k+1} u)
    v  <- P_{k+1} F v            (only with a grid filter F)

``L_k`` is the flux-form five/seven-point operator with face coefficients
``a(t_k)``, ``P_k`` zeroes cells inside the obstacle and ``damp`` is the
sponge factor (1 in reflecting mode). Eliminating ``v`` gives the standard
three-level leapfrog, and with a static metric and mask the quadratic form
``v.v + u.K u - dt^2/4 |K u|^2`` (``K = -L``) is conserved exactly.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Union

import numpy as np

from ..geometry import Scenario
from . import kernels
from .grid import (BlowUpError, EnergyReading, Grid, LatticeError, NORM_VARIANTS, Schedule,
                   StepPlan, WaveState)

Source = Union[np.ndarray, Callable[[float], np.ndarray]]

_FINITE_CHECK_EVERY = 64


class Propagator:
    """Evolution operator of one (scenario, grid, plan) triple."""

    def __init__(self, scenario: Scenario, grid: Grid, plan: StepPlan):
        self.scenario = scenario
        self.grid = grid
        self.plan = plan
        self.schedule = Schedule(scenario, grid, plan)
        self.schedule.check_mask_motion()
        self.inv_h2 = 1.0 / grid.h ** 2

    # -- lattice bookkeeping -------------------------------------------------

    @property
    def dt(self) -> float:
        return self.plan.dt

    @property
    def steps_per_period(self) -> int:
        return self.plan.steps_per_period

    def step_index(self, t: float) -> int:
        k = int(round(t / self.plan.dt))
        if abs(k * self.plan.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise LatticeError(f"t = {t!r} is not on the step lattice (dt = {self.plan.dt!r})")
        return k

    def state(self, u: np.ndarray, v: Optional[np.ndarray] = None, t: float = 0.0) -> WaveState:
        """Masked state at lattice time ``t`` from arrays of grid shape."""
        k = self.step_index(t)
        return self.state_at_step(u, v, k)

    def state_at_step(self, u: np.ndarray, v: Optional[np.ndarray], k: int) -> WaveState:
        shape = self.grid.shape
        u = np.asarray(u, dtype=float).reshape(shape)
        v = np.zeros(shape) if v is None else np.asarray(v, dtype=float).reshape(shape)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("state contains non-finite entries")
        m = self.schedule.mask(k).reshape(shape)
        return WaveState(u * m, v * m, k * self.plan.dt, k, self.schedule.mask_id(k))

    def zero_state(self, t: float = 0.0) -> WaveState:
        return self.state(np.zeros(self.grid.shape), None, t)

    def from_vector(self, vec: np.ndarray, k: int = 0) -> WaveState:
        size = self.grid.size
        return self.state_at_step(vec[:size], vec[size:], k)

    # -- time stepping -------------------------------------------------------

    def apply_operator(self, u: np.ndarray, k: int, out: Optional[np.ndarray] = None) -> np.ndarray:
        """``L_k u = div_h(a(t_k) grad_h u)`` on grid-shaped arrays."""
        if out is None:
            out = np.empty(self.grid.shape)
        return kernels.div_a_grad(np.ascontiguousarray(u), self.schedule.faces(k), self.inv_h2, out)

    def _run(self, u: np.ndarray, v: np.ndarray, k0: int, k1: int,
             source: Optional[Callable[[int], np.ndarray]] = None) -> None:
        """Advance the grid-shaped buffers ``u, v`` in place from step ``k0`` to ``k1``."""
        sched = self.schedule
        dt = self.plan.dt
        half = 0.5 * dt
        damp = sched.damp
        uf = u.reshape(-1)
        vf = v.reshape(-1)
        shape = self.grid.shape
        strength = self.plan.filter_strength
        lu = self.apply_operator(u, k0)
        luf = lu.reshape(-1)
        for k in range(k0, k1):
            mask = sched.mask(k + 1)
            if source is None:
                kernels.kick_drift(uf, vf, luf, damp, mask, half, dt)
            else:
                kernels.kick_drift(uf, vf, luf + source(k), damp, mask, half, dt)
            self.apply_operator(u, k + 1, lu)
            if source is None:
                kernels.kick_damp(vf, luf, damp, mask, half)
            else:
                kernels.kick_damp(vf, luf + source(k + 1), damp, mask, half)
            if strength > 0:
                vf[:] = mask * kernels.grid_filter(vf, shape, strength, self.plan.filter_order)
            if (k - k0) % _FINITE_CHECK_EVERY == _FINITE_CHECK_EVERY - 1 or k == k1 - 1:
                if not (kernels.all_finite(uf) and kernels.all_finite(vf)):
                    raise BlowUpError(k + 1)

    def evolve_steps(self, state: WaveState, nsteps: int) -> WaveState:
        if nsteps < 0:
            raise LatticeError("cannot evolve backwards")
        k0 = state.step
        u = np.array(state.u, dtype=float, order="C")
        v = np.array(state.v, dtype=float, order="C")
        m = self.schedule.mask(k0).reshape(self.grid.shape)
        u *= m
        v *= m
        if nsteps:
            self._run(u, v, k0, k0 + nsteps)
        k1 = k0 + nsteps
        return WaveState(u, v, k1 * self.plan.dt, k1, self.schedule.mask_id(k1))

    def step(self, state: WaveState) -> WaveState:
        return self.evolve_steps(state, 1)

    def evolve(self, state: WaveState, t: float) -> WaveState:
        """``U(t, s) f`` for a state ``f`` at lattice time ``s <= t``."""
        k1 = self.step_index(t)
        if k1 < state.step:
            raise LatticeError(f"target t={t} precedes the state time {state.t}")
        return self.evolve_steps(state, k1 - state.step)

    def trajectory(self, state: WaveState, nsteps: int, every: int = 1):
        """Yield the state every ``every`` steps, starting with ``state`` itself."""
        yield state
        done = 0
        while done < nsteps:
            chunk = min(every, nsteps - done)
            state = self.evolve_steps(state, chunk)
            done += chunk
            yield state

    # -- energies ------------------------------------------------------------

    def energy(self, state: WaveState, cutoff: Optional[np.ndarray] = None,
               variant: str = "paper", scheme_consistent: bool = True) -> EnergyReading:
        """Midpoint-rule energy of a state, optionally weighted by ``cutoff**2``.

        ``paper``: sum |grad u|^2 + |u_t|^2. ``metric``: sum a|grad u|^2 + |u_t|^2,
        minus ``dt^2/4 * |div(a grad u)|^2`` when ``scheme_consistent`` so that the value
        is the invariant of the time stepper for static coefficients.
        """
        if variant not in NORM_VARIANTS:
            raise ValueError(f"variant must be one of {NORM_VARIANTS}")
        grid = self.grid
        faces = self.schedule.faces(state.step) if variant == "metric" else None
        w2 = None if cutoff is None else np.asarray(cutoff, dtype=float).reshape(grid.shape) ** 2
        total = _grad_energy(state.u, faces, w2) * self.inv_h2
        total += float(np.sum(state.v * state.v if w2 is None else w2 * state.v * state.v))
        if variant == "metric" and scheme_consistent:
            lu = self.apply_operator(np.ascontiguousarray(state.u), state.step)
            lu *= self.schedule.mask(state.step).reshape(grid.shape)
            total -= 0.25 * self.plan.dt ** 2 * float(np.sum(lu * lu if w2 is None else w2 * lu * lu))
        value = total * grid.cell_volume
        if not math.isfinite(value):
            raise BlowUpError(state.step, "non-finite energy")
        return EnergyReading(max(value, 0.0), "whole" if cutoff is None else "cutoff", variant)

    def energy_norm(self, state: WaveState) -> float:
        return math.sqrt(self.energy(state).value)

    # -- component propagators and Duhamel -----------------------------------

    def component_V(self, h: np.ndarray, s: float, t: float) -> WaveState:
        """Solution with data ``(0, h)`` at ``s``; the full state carries ``V`` and ``d_t V``."""
        return self.evolve(self.state(np.zeros(self.grid.shape), h, s), t)

    def component_U(self, h: np.ndarray, s: float, t: float) -> WaveState:
        """Solution with data ``(h, 0)`` at ``s``."""
        return self.evolve(self.state(h, None, s), t)

    def duhamel_solve(self, g: Source, s: float, t: float, mode: str = "direct") -> WaveState:
        """Zero-data solution of ``v_tt - div(a grad v) = g``.

        ``direct`` adds the source to each half-kick; ``quadrature`` sums
        ``component_V(g(tau_j), tau_j, t)`` with trapezoid weights over the step lattice.
        """
        k0, k1 = self.step_index(s), self.step_index(t)
        if k1 < k0:
            raise LatticeError("t must not precede s")
        dt = self.plan.dt
        shape = self.grid.shape

        def g_at(k: int) -> np.ndarray:
            val = g(k * dt) if callable(g) else g
            return np.asarray(val, dtype=float).reshape(shape)

        if mode == "direct":
            u = np.zeros(shape)
            v = np.zeros(shape)
            if k1 > k0:
                cache: dict[int, np.ndarray] = {}

                def src(k: int) -> np.ndarray:
                    if k not in cache:
                        cache.clear()
                        cache[k] = g_at(k).reshape(-1)
                    return cache[k]

                self._run(u, v, k0, k1, source=src)
            return WaveState(u, v, k1 * dt, k1, self.schedule.mask_id(k1))
        if mode == "quadrature":
            acc_u = np.zeros(shape)
            acc_v = np.zeros(shape)
            for k in range(k0, k1 + 1):
                w = 0.5 if k in (k0, k1) else 1.0
                if k0 == k1:
                    w = 0.0
                if w == 0.0:
                    continue
                piece = self.evolve_steps(self.state_at_step(np.zeros(shape), w * dt * g_at(k), k),
                                          k1 - k)
                acc_u += piece.u
                acc_v += piece.v
            return WaveState(acc_u, acc_v, k1 * dt, k1, self.schedule.mask_id(k1))
        raise ValueError("mode must be 'direct' or 'quadrature'")

    # -- transpose (for norm estimates) ----------------------------------------

    def evolve_transpose(self, p: np.ndarray, q: np.ndarray, k0: int, k1: int) -> tuple[np.ndarray, np.ndarray]:
        """Apply the Euclidean transpose of the map from step ``k0`` to ``k1``."""
        sched = self.schedule
        shape = self.grid.shape
        dt = self.plan.dt
        half = 0.5 * dt
        damp = sched.damp.reshape(shape)
        p = np.array(p, dtype=float).reshape(shape)
        q = np.array(q, dtype=float).reshape(shape)
        strength = self.plan.filter_strength
        for k in range(k1 - 1, k0 - 1, -1):
            m1 = sched.mask(k + 1).reshape(shape)
            if strength > 0:
                q = kernels.grid_filter(m1 * q, shape, strength, self.plan.filter_order)
            q = damp * q
            q = m1 * q
            p = p + half * self.apply_operator(q, k + 1)
            p = m1 * p
            q = m1 * q
            q = q + dt * p
            p = p + half * self.apply_operator(q, k)
            q = damp * q
        # forward evolution masks its input first
        m0 = sched.mask(k0).reshape(shape)
        return p * m0, q * m0


def _grad_energy(u: np.ndarray, faces, w2: Optional[np.ndarray]) -> float:
    """Weighted sum of squared jumps of ``u`` across all faces, zero ghosts outside."""
    total = 0.0
    n = u.ndim
    for ax in range(n):
        pad = [(0, 0)] * n
        pad[ax] = (1, 1)
        jumps = np.diff(np.pad(u, pad), axis=ax)
        term = jumps * jumps
        if faces is not None:
            term = term * faces[ax]
        if w2 is not None:
            wp = np.pad(w2, pad, mode="edge")
            term = term * 0.5 * (wp[_slc(ax, n, 1, None)] + wp[_slc(ax, n, None, -1)])
        total += float(np.sum(term))
    return total


def _slc(ax: int, n: int, start, stop):
    s = [slice(None)] * n
    s[ax] = slice(start, stop)
    return tuple(s)
