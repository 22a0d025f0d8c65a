"""Local energy decay: ensembles, profiles, rate fits, series envelopes and the glued-family sweep."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from .evolve import Grid, Propagator, RadialSolver, StepPlan, WaveState
from .floquet import CutoffPair, FloquetOperator, PoleReport, detect_poles, sort_eigenvalues
from .geometry import GluedFamily, Scenario, glued_scenario, radial_cutoff

ENERGY_FLOOR = 1e-24
# log-scale RMS misfit below which an exponential fit counts as a clean rate
RESIDUAL_THRESHOLD = 1.0
MODELS = ("exp", "even", "growth")


class DecayError(ValueError):
    pass


class HorizonError(DecayError):
    def __init__(self, message: str, safe_horizon: float):
        super().__init__(message)
        self.safe_horizon = safe_horizon


class LocalizationError(DecayError):
    def __init__(self, message: str, required_half_width: float):
        super().__init__(message)
        self.required_half_width = required_half_width


# ---------------------------------------------------------------------------
# ensembles and profiles
# ---------------------------------------------------------------------------

def decay_cutoff(prop: Propagator, inner: Optional[float] = None,
                 outer: Optional[float] = None) -> np.ndarray:
    """``chi`` equal to 1 on ``|x| <= rho + 1/2`` and supported in ``|x| <= rho + 1``."""
    rho = prop.scenario.rho
    inner = rho + 0.5 if inner is None else inner
    outer = rho + 1.0 if outer is None else outer
    return radial_cutoff(prop.grid.centers(), inner, outer)


def random_ensemble(prop: Propagator, chi: np.ndarray, count: int, seed: int = 0,
                    smoothing: float = 1.5) -> list[WaveState]:
    """Smoothed white-noise Cauchy data times ``chi``, normalised to unit energy.

    Smoothing (Gaussian, in cells) keeps the data resolved so the ensemble does
    not mostly probe lattice-scale modes.
    """
    rng = np.random.default_rng(seed)
    shape = prop.grid.shape
    out = []
    for _ in range(count):
        u = ndimage.gaussian_filter(rng.standard_normal(shape), smoothing, mode="constant") * chi
        v = ndimage.gaussian_filter(rng.standard_normal(shape), smoothing, mode="constant") * chi
        st = prop.state(u, v)
        e = prop.energy(st).value
        out.append(st.scaled(1.0 / math.sqrt(e)) if e > 0 else st)
    return out


def eigenvector_states(prop: Propagator, spectrum_vectors: Sequence[np.ndarray],
                       chi: np.ndarray) -> list[WaveState]:
    """Real and imaginary parts of eigenvectors, cut off by ``chi`` and normalised."""
    out = []
    size = prop.grid.size
    w = chi.ravel()
    for vec in spectrum_vectors:
        for part in (np.real(vec), np.imag(vec)):
            if not np.any(part):
                continue
            st = prop.state((part[:size] * w).reshape(prop.grid.shape),
                            (part[size:] * w).reshape(prop.grid.shape))
            e = prop.energy(st).value
            if e > 0:
                out.append(st.scaled(1.0 / math.sqrt(e)))
    return out


def dominant_vectors(m: FloquetOperator, k: int = 2, tol: float = 1e-10, seed: int = 0) -> list:
    """Eigenvectors of the dominant eigenvalues of ``M``, ordered like ``arnoldi_spectrum``."""
    rng = np.random.default_rng(seed)
    try:
        vals, vecs = spla.eigs(m.linear_operator(), k=k, which="LM", tol=tol,
                               ncv=min(m.dim, max(2 * k + 1, 40)), v0=rng.standard_normal(m.dim))
    except spla.ArpackNoConvergence as exc:
        # the vectors only enrich the ensemble; keep whatever converged
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    return [vecs[:, i] for i in sort_eigenvalues(list(vals))]


@dataclass(frozen=True)
class DecayProfile:
    """Local energies ``|chi U(t_k, 0) f_j|^2`` per ensemble member."""

    label: str
    cutoff: str
    times: tuple
    members: np.ndarray
    initial: tuple
    norm_variant: str = "paper"

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise DecayError("sample times must be strictly increasing")

    @property
    def ensemble(self) -> int:
        return int(self.members.shape[0])

    @property
    def e_mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    @property
    def e_max(self) -> np.ndarray:
        return self.members.max(axis=0)

    def to_csv(self) -> str:
        lines = ["t,E_mean,E_max,ensemble,norm_variant"]
        for t, mean, mx in zip(self.times, self.e_mean, self.e_max):
            lines.append(f"{t:.17g},{mean:.17g},{mx:.17g},{self.ensemble},{self.norm_variant}")
        return "\n".join(lines) + "\n"


def safe_reflecting_horizon(prop: Propagator) -> float:
    """Time before outer-wall reflections can re-enter ``|x| <= rho + 1``."""
    return (prop.grid.half_width - prop.scenario.rho - 1.0) / math.sqrt(prop.scenario.metric.upper)


def decay_profile(prop: Propagator, chi: np.ndarray, ensemble: Sequence[WaveState],
                  horizon: float, sample_every: Optional[int] = None,
                  cutoff_label: str = "chi", threads: int = 1) -> DecayProfile:
    """Evolve every member to ``horizon`` and record its local energy every ``sample_every`` steps.

    Members run on ``threads`` workers; rows keep the ensemble order, so the
    result does not depend on the thread count.
    """
    if prop.plan.boundary == "reflecting":
        safe = safe_reflecting_horizon(prop)
        if horizon >= safe:
            raise HorizonError(f"horizon {horizon:g} reaches wall reflections; safe horizon is "
                               f"{safe:.6g}", safe)
    every = prop.steps_per_period if sample_every is None else sample_every
    nsteps = int(math.ceil(horizon / prop.dt - 1e-9))
    nsamples = nsteps // every + 1

    def run(f: WaveState) -> np.ndarray:
        return np.array([prop.energy(st, cutoff=chi).value
                         for st in prop.trajectory(f, (nsamples - 1) * every, every)])

    if threads > 1 and len(ensemble) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(run, ensemble))
    else:
        out = [run(f) for f in ensemble]
    rows = np.array(out).reshape(len(ensemble), nsamples)
    initial = [prop.energy(f).value for f in ensemble]
    times = tuple(i * every * prop.dt for i in range(nsamples))
    return DecayProfile(prop.scenario.label, cutoff_label, times, rows, tuple(initial))


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of a rate model to ``E(t)`` (squared norms).

    ``rate`` is the norm rate: ``delta`` for ``exp``, ``gamma`` for ``growth``;
    for ``even`` it is the boundedness constant ``C``. ``residual`` is the RMS of
    the log-scale misfit.
    """

    model: str
    rate: float
    log_c: float
    residual: float
    window: tuple
    samples: int
    spread: float = 0.0

    def to_text(self) -> str:
        return (f"model = {self.model}\nrate = {self.rate:.17g}\nlog_c = {self.log_c:.17g}\n"
                f"residual = {self.residual:.17g}\nwindow = {self.window[0]:.17g} {self.window[1]:.17g}\n"
                f"samples = {self.samples}\nspread = {self.spread:.17g}\n")


def even_envelope(t: np.ndarray) -> np.ndarray:
    """``1 / ((t + 1) ln^2(t + e))``."""
    t = np.asarray(t, dtype=float)
    return 1.0 / ((t + 1.0) * np.log(t + math.e) ** 2)


def fit_rate(profile_or_times, energies: Optional[np.ndarray] = None, model: str = "auto",
             transient: Optional[float] = None, min_samples: int = 10,
             period: Optional[float] = None, use: str = "max") -> RateFit:
    """Fit ``exp``/``growth`` in log space or test the ``even`` envelope.

    Accepts a :class:`DecayProfile` (its ``E_max`` or ``E_mean``) or raw
    ``(times, energies)``. Samples before ``transient`` (default ``2T``) and
    below the floor ``1e-24 E(0)`` are dropped.
    """
    if isinstance(profile_or_times, DecayProfile):
        prof = profile_or_times
        t = np.asarray(prof.times)
        e = prof.e_max if use == "max" else prof.e_mean
    else:
        t = np.asarray(profile_or_times, dtype=float)
        e = np.asarray(energies, dtype=float)
    if transient is None:
        transient = 2.0 * period if period is not None else 0.0
    if model not in MODELS + ("auto",):
        raise ValueError(f"model must be one of {MODELS} or 'auto'")
    e0 = e[0] if e[0] > 0 else np.max(e)
    keep = t >= transient
    # cut at the first floor hit so the fit stays in the pre-floor window
    low = np.flatnonzero(keep & ~(e > ENERGY_FLOOR * e0))
    if low.size:
        keep[low[0]:] = False
    tt, ee = t[keep], e[keep]
    if tt.size < min_samples:
        raise DecayError(f"need at least {min_samples} samples past t = {transient:g} above "
                         f"the energy floor, got {tt.size}")
    window = (float(tt[0]), float(tt[-1]))
    if model == "even":
        stat = ee / even_envelope(tt) ** 2
        c = float(np.max(stat))
        logs = np.log(stat)
        return RateFit("even", c, float(np.log(c)), float(np.std(logs)), window, int(tt.size),
                       float(np.max(stat) / np.min(stat) - 1.0))
    slope, intercept = np.polyfit(tt, np.log(ee), 1)
    res = float(np.sqrt(np.mean((np.log(ee) - (slope * tt + intercept)) ** 2)))
    if model == "auto":
        model = "growth" if slope > 0 else "exp"
    if model == "exp":
        return RateFit("exp", max(0.0, -0.5 * slope), float(intercept), res, window, int(tt.size))
    return RateFit("growth", max(0.0, 0.5 * slope), float(intercept), res, window, int(tt.size))


# ---------------------------------------------------------------------------
# series envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeriesDecayReport:
    """``|psi1 U(NT, 0) psi2|`` estimates over ``N`` and derived envelope tests."""

    n_values: tuple
    norms: tuple
    envelope_stat: tuple
    envelope_bounded: bool
    geometric_factor: float
    partial_sums: tuple
    epsilon: float
    partial_bounded: bool

    def to_text(self) -> str:
        lines = [f"geometric_factor = {self.geometric_factor:.17g}",
                 f"envelope_bounded = {str(self.envelope_bounded).lower()}",
                 f"partial_bounded = {str(self.partial_bounded).lower()}",
                 f"epsilon = {self.epsilon:.17g}", "N,norm,envelope_stat,partial_sum"]
        for row in zip(self.n_values, self.norms, self.envelope_stat, self.partial_sums):
            lines.append(f"{row[0]},{row[1]:.17g},{row[2]:.17g},{row[3]:.17g}")
        return "\n".join(lines) + "\n"


def series_decay_check(m: FloquetOperator, cutoffs: CutoffPair, n_max: int, probes: int = 8,
                       seed: int = 0, epsilon: float = 0.05,
                       extra: Sequence[np.ndarray] = ()) -> SeriesDecayReport:
    """Randomised estimates of ``|psi1 M^N psi2|`` in the energy norm for ``N = 0..n_max``.

    The envelope statistic is ``norm_N (N + 1) ln^2(N + e)``; it is called
    bounded when its maximum over the second half of the range does not exceed
    1.5 times its maximum over the first half. Partial sums are
    ``sum_{N' <= N} norm_N' exp(-N' epsilon)``, the majorant of the resolvent
    series at ``Im theta = epsilon``.
    """
    prop = m.prop
    rng = np.random.default_rng(seed)
    vecs = [rng.standard_normal(m.dim) for _ in range(probes)] + [np.asarray(x, float) for x in extra]
    states = []
    for x in vecs:
        x = cutoffs.right(x)
        st = prop.from_vector(x, 0)
        e = prop.energy(st).value
        states.append(x / math.sqrt(e) if e > 0 else x)
    norms = []
    for big_n in range(n_max + 1):
        worst = 0.0
        for j, x in enumerate(states):
            y = cutoffs.left(x)
            e = prop.energy(prop.from_vector(y, 0)).value
            worst = max(worst, math.sqrt(e))
            if big_n < n_max:
                states[j] = m.apply(x)
        norms.append(worst)
    ns = np.arange(n_max + 1)
    stat = np.asarray(norms) * (ns + 1) * np.log(ns + math.e) ** 2
    half = max(1, (n_max + 1) // 2)
    bounded = bool(np.max(stat[half:]) <= 1.5 * np.max(stat[:half])) if n_max >= 1 else True
    positive = np.asarray(norms) > 0
    if positive.sum() >= 2:
        slope = np.polyfit(ns[positive][-max(2, half):], np.log(np.asarray(norms)[positive][-max(2, half):]), 1)[0]
        factor = float(math.exp(slope))
    else:
        factor = 0.0
    partial = np.cumsum(np.asarray(norms) * np.exp(-epsilon * ns))
    # bounded majorant: the terms shrink geometrically faster than exp(epsilon) grows
    partial_ok = bool(factor * math.exp(-epsilon) < 1.0)
    return SeriesDecayReport(tuple(int(k) for k in ns), tuple(norms), tuple(stat.tolist()), bounded,
                             factor, tuple(partial.tolist()), epsilon, partial_ok)


# ---------------------------------------------------------------------------
# localisation identity and the glued-family sweep
# ---------------------------------------------------------------------------

def localization_radius(family_scenario: Scenario, prop: Propagator, t1: float,
                        perturbation_radius: Optional[float] = None) -> float:
    """Radius where ``psi = 1``: ``rho + 1/2 + T1 * (lattice speed) + 2h``.

    The lattice light cone replaces the unit wave speed of the continuum
    statement; the two extra cells cover the stencil reach of the first and
    last half-kicks.
    """
    rho = family_scenario.rho if perturbation_radius is None else perturbation_radius
    h = prop.grid.h
    return rho + 0.5 + t1 * prop.plan.lattice_speed(h) + 2 * h


@dataclass(frozen=True)
class LocalizationResult:
    left_residual: float
    right_residual: float
    psi_radius: float
    trials: int
    difference: float = 0.0

    @property
    def exact(self) -> bool:
        return self.left_residual == 0.0 and self.right_residual == 0.0


def localization_check(prop_u: Propagator, prop_v: Propagator, t1: float, trials: int = 4,
                 seed: int = 0, radius: Optional[float] = None) -> LocalizationResult:
    """Max-norm of ``(1 - psi)(U(T1,0) - V(T1)) f`` and ``(U(T1,0) - V(T1))(1 - psi) f``.

    ``prop_v`` evolves the static pair. ``psi`` is 1 on ``|x| <= radius`` and
    vanishes at ``radius + 1/2``; the grid must contain its support.
    """
    if radius is None:
        radius = localization_radius(prop_u.scenario, prop_u, t1)
    need = radius + 0.5
    if not prop_u.grid.half_width > need:
        raise LocalizationError(f"grid half width {prop_u.grid.half_width:g} cannot contain psi; "
                                f"need L > {need:.6g}", need)
    psi = radial_cutoff(prop_u.grid.centers(), radius, need)
    k1 = prop_u.step_index(t1)
    rng = np.random.default_rng(seed)
    shape = prop_u.grid.shape
    left = right = diff = 0.0
    for _ in range(trials):
        u0, v0 = rng.standard_normal(shape), rng.standard_normal(shape)
        a = prop_u.evolve_steps(prop_u.state(u0, v0), k1)
        b = prop_v.evolve_steps(prop_v.state(u0, v0), k1)
        diff = max(diff, float(np.max(np.abs(a.u - b.u))), float(np.max(np.abs(a.v - b.v))))
        left = max(left, float(np.max(np.abs((1 - psi) * (a.u - b.u)))),
                   float(np.max(np.abs((1 - psi) * (a.v - b.v)))))
        w = 1 - psi
        a = prop_u.evolve_steps(prop_u.state(w * u0, w * v0), k1)
        b = prop_v.evolve_steps(prop_v.state(w * u0, w * v0), k1)
        right = max(right, float(np.max(np.abs(a.u - b.u))), float(np.max(np.abs(a.v - b.v))))
    return LocalizationResult(left, right, radius, trials, diff)


@dataclass(frozen=True)
class SweepRow:
    period: float
    delta_est: Optional[float]
    delta_fit: Optional[float]
    localization_residual: float
    spectral_radius: float
    flagged: int


@dataclass(frozen=True)
class SweepReport:
    label: str
    t1: float
    rows: tuple

    @property
    def threshold(self) -> Optional[float]:
        """Smallest swept ``T`` from which every ``delta_est`` is defined and non-negative."""
        found = None
        for row in reversed(self.rows):
            if row.delta_est is None or row.delta_est < 0:
                break
            found = row.period
        return found

    @property
    def nondecreasing(self) -> bool:
        vals = [r.delta_est for r in self.rows if r.period >= (self.threshold or math.inf)]
        return all(b >= a for a, b in zip(vals, vals[1:]))

    def to_csv(self) -> str:
        lines = ["T,delta_est,delta_fit,lemma5_residual"]
        for r in self.rows:
            de = "nan" if r.delta_est is None else f"{r.delta_est:.17g}"
            df = "nan" if r.delta_fit is None else f"{r.delta_fit:.17g}"
            lines.append(f"{r.period:.17g},{de},{df},{r.localization_residual:.17g}")
        return "\n".join(lines) + "\n"


def theorem6_sweep(family: GluedFamily, periods: Sequence[float], grid: Grid,
                   plan_args: dict, steps_per_t1: Optional[int] = None, k: int = 4,
                   fit: bool = True, ensemble: int = 8, horizon_periods: Optional[float] = None,
                   horizon: float = 30.0, seed: int = 0, localization_trials: int = 2) -> SweepReport:
    """For each ``T``: localization residual, ``delta_est(T)`` and optionally a fitted rate.

    All periods share one time step: ``T1`` gets ``steps_per_t1`` steps and each
    ``T`` must be an integer multiple of ``T1``.
    """
    base = family.base
    t1 = family.t1
    rows = []
    # step counts are derived per T here, so a count tied to one period does not apply
    plan_args = {k2: v for k2, v in plan_args.items() if k2 != "steps_per_period"}
    if steps_per_t1 is None:
        probe = glued_scenario(replace(family, period=t1))
        steps_per_t1 = StepPlan.for_scenario(probe, grid, **plan_args).steps_per_period
    for period in periods:
        ratio = period / t1
        if abs(ratio - round(ratio)) > 1e-9:
            raise DecayError("every swept T must be an integer multiple of T1")
        sc = glued_scenario(replace(family, period=period))
        plan = StepPlan.for_scenario(sc, grid, steps_per_period=int(round(ratio)) * steps_per_t1,
                                     **plan_args)
        prop = Propagator(sc, grid, plan)
        static = Scenario(replace(base.metric, period=period),
                          None if base.obstacle is None else replace(base.obstacle, period=period),
                          label=base.label)
        prop_v = Propagator(static, grid, plan)
        lem = localization_check(prop, prop_v, t1, trials=localization_trials, seed=seed)
        m = FloquetOperator(prop)
        report = detect_poles(m, k=k, require_sponge=plan.boundary == "sponge")
        delta_fit = None
        if fit and report.delta_est is not None:
            chi = decay_cutoff(prop)
            members = random_ensemble(prop, chi, ensemble, seed)
            members += eigenvector_states(prop, dominant_vectors(m, k=2, seed=seed)[:1], chi)
            hz = horizon if horizon_periods is None else horizon_periods * period
            hz = max(hz, 12 * period)
            prof = decay_profile(prop, chi, members, hz)
            delta_fit = float(fit_rate(prof, model="exp", period=period).rate)
        spec_r = max((abs(p.mu) for p in report.poles), default=0.0)
        rows.append(SweepRow(period, report.delta_est, delta_fit,
                             max(lem.left_residual, lem.right_residual), spec_r, len(report.flagged)))
    return SweepReport(family.label or base.label, t1, tuple(rows))


# ---------------------------------------------------------------------------
# one-call experiment and the decay/growth verdict
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayRun:
    """Profile, fit and pole report of one scenario, with the dichotomy verdict."""

    profile: DecayProfile
    fit: RateFit
    poles: Optional[PoleReport]

    @property
    def decays(self) -> bool:
        return self.fit.model == "exp" and self.fit.rate > 0 and self.fit.residual < RESIDUAL_THRESHOLD

    @property
    def flagged(self) -> bool:
        return self.poles is not None and bool(self.poles.flagged)

    @property
    def verdict(self) -> str:
        """``decay``, ``growth``, ``both`` (a contradiction) or ``neither``."""
        if self.decays and self.flagged:
            return "both"
        if self.decays:
            return "decay"
        if self.flagged:
            return "growth"
        return "neither"


def decay_run(prop: Propagator, horizon: float, ensemble: int = 32, seed: int = 0,
              model: str = "auto", with_poles: bool = True, threads: int = 1,
              k: int = 6) -> DecayRun:
    """Random ensemble plus the dominant Floquet vector, evolved, sampled per period and fitted."""
    chi = decay_cutoff(prop)
    members = random_ensemble(prop, chi, ensemble, seed)
    poles = None
    if with_poles:
        m = FloquetOperator(prop)
        poles = detect_poles(m, k=k, require_sponge=prop.plan.boundary == "sponge")
        members += eigenvector_states(prop, dominant_vectors(m, k=2, seed=seed)[:1], chi)
    profile = decay_profile(prop, chi, members, horizon, threads=threads)
    fit = fit_rate(profile, model=model, period=prop.scenario.period)
    return DecayRun(profile, fit, poles)


def radial_profile(u0, support: float, horizon: float, rho: float = 1.0,
                   nodes_per_unit: int = 100, samples: int = 50, cfl: float = 0.5,
                   label: str = "free3d-radial") -> DecayProfile:
    """Free 3D local energy ``E(|x| <= rho, t)`` of radial data on the ``w = r u`` path.

    The outer wall sits far enough out that reflections cannot return by ``horizon``.
    """
    radius = math.ceil(0.5 * (horizon + support + rho) + 1.0)
    solver = RadialSolver(radius, radius * nodes_per_unit, cfl)
    solver.set_data(u0)
    e0 = solver.local_energy()
    every = max(1, int(round(horizon / samples / solver.dt)))
    times, values = [0.0], [solver.local_energy(rho)]
    while solver.t < horizon - 1e-12:
        solver.advance(solver.t + every * solver.dt)
        times.append(solver.t)
        values.append(solver.local_energy(rho))
    return DecayProfile(label, f"indicator |x| <= {rho:g}", tuple(times),
                        np.array([values]), (e0,))
