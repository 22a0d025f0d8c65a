"""One-period evolution map, its spectrum and the cut-off resolvent.

The monodromy map ``M = U(T, 0)`` acts on stacked state vectors ``[u, v]``.
Its eigenvalues ``mu`` correspond to resolvent poles through
``theta = i Log mu`` (so ``exp(-i theta) = mu``, ``Im theta = ln|mu|``).
The cut-off resolvent is ``R(theta) = psi1 (M - exp(-i theta))^{-1} psi2``,
evaluated either by its geometric series in ``M`` or by a Krylov solve.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .evolve import Propagator, WaveState
from .evolve.norms import GrowthBound
from .geometry import radial_cutoff, smooth_step

DENSE_LIMIT = 20000


class FloquetError(RuntimeError):
    pass


class DimensionError(FloquetError, ValueError):
    pass


class SeriesDivergenceError(FloquetError, ValueError):
    """``Im theta`` is too small for the series to converge under the fitted growth bound."""


class PoleProximityError(FloquetError):
    def __init__(self, message: str, nearest: Optional[complex] = None):
        super().__init__(message)
        self.nearest = nearest


# ---------------------------------------------------------------------------
# operator and cut-offs
# ---------------------------------------------------------------------------

class FloquetOperator:
    """Matrix-free ``U(T, 0)`` on vectors ``[u, v]`` of length ``2 * grid.size``."""

    def __init__(self, prop: Propagator):
        self.prop = prop
        self.matvecs = 0

    @property
    def dim(self) -> int:
        return 2 * self.prop.grid.size

    @property
    def period(self) -> float:
        return self.prop.scenario.period

    @property
    def boundary(self) -> str:
        return self.prop.plan.boundary

    def apply(self, x: np.ndarray, periods: int = 1) -> np.ndarray:
        """``M^periods x`` for real or complex ``x``."""
        x = np.asarray(x)
        if np.iscomplexobj(x):
            return self.apply(x.real, periods) + 1j * self.apply(x.imag, periods)
        self.matvecs += periods
        state = self.prop.from_vector(x.astype(float), 0)
        out = self.prop.evolve_steps(state, periods * self.prop.steps_per_period)
        return out.vector()

    def linear_operator(self, dtype=float) -> spla.LinearOperator:
        return spla.LinearOperator((self.dim, self.dim), matvec=self.apply, dtype=dtype)


def apply_floquet(m: FloquetOperator, f: WaveState) -> WaveState:
    """``U(T, 0) f`` for a state at time 0."""
    if f.step != 0:
        raise ValueError("the Floquet map acts on states at t = 0")
    return m.prop.evolve_steps(f, m.prop.steps_per_period)


@dataclass(frozen=True)
class CutoffPair:
    """Grid weights ``psi1, psi2`` in ``[0, 1]`` applied to both state components."""

    psi1: np.ndarray
    psi2: np.ndarray
    descriptor: str = "custom"

    def __post_init__(self):
        for w in (self.psi1, self.psi2):
            if np.any(w < 0) or np.any(w > 1):
                raise ValueError("cut-off weights must lie in [0, 1]")

    def left(self, x: np.ndarray) -> np.ndarray:
        return x * np.concatenate([self.psi1.ravel(), self.psi1.ravel()])

    def right(self, x: np.ndarray) -> np.ndarray:
        return x * np.concatenate([self.psi2.ravel(), self.psi2.ravel()])


def default_cutoffs(prop: Propagator, inner: Optional[float] = None,
                    outer: Optional[float] = None) -> CutoffPair:
    """``psi1 = psi2``, equal to 1 on ``|x| <= rho + 1`` and 0 beyond ``rho + 2``.

    The taper must end before the sponge layer starts.
    """
    rho = prop.scenario.rho
    inner = rho + 1.0 if inner is None else inner
    outer = rho + 2.0 if outer is None else outer
    grid, plan = prop.grid, prop.plan
    free = grid.half_width - (plan.sponge_width if plan.boundary == "sponge" else 0.0)
    if outer > free + 1e-12:
        raise ValueError(f"cut-off support |x| <= {outer:g} does not fit inside |x| <= {free:g}")
    w = radial_cutoff(grid.centers(), inner, outer)
    return CutoffPair(w, w, f"radial[{inner:g},{outer:g}]")


# ---------------------------------------------------------------------------
# dense oracle and Arnoldi
# ---------------------------------------------------------------------------

def dense_floquet_matrix(m: FloquetOperator, max_dim: int = DENSE_LIMIT) -> np.ndarray:
    """Columns are ``M`` applied to the canonical basis."""
    if m.dim > max_dim:
        raise DimensionError(f"state dimension {m.dim} exceeds the dense limit {max_dim}")
    out = np.empty((m.dim, m.dim))
    e = np.zeros(m.dim)
    for j in range(m.dim):
        e[j] = 1.0
        out[:, j] = m.apply(e)
        e[j] = 0.0
    return out


def theta_of(mu: complex, branch: int = 0) -> complex:
    """``theta = i Log mu + 2 pi branch``; ``exp(-i theta) = mu``."""
    return 1j * cmath.log(mu) + 2.0 * math.pi * branch


def sort_eigenvalues(mus: Sequence[complex]) -> list[int]:
    """Indices ordering by descending ``|mu|``, then ``Re mu``, then ``Im mu``."""
    keys = [(-round(abs(mu), 12), -round(mu.real, 12), -mu.imag) for mu in mus]
    return sorted(range(len(mus)), key=lambda i: keys[i])


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: tuple
    residuals: tuple
    krylov_dim: int
    converged: bool = True
    compressed: bool = False
    matvecs: int = 0

    @property
    def spectral_radius(self) -> float:
        return max((abs(mu) for mu in self.eigenvalues), default=0.0)

    @property
    def thetas(self) -> tuple:
        return tuple(theta_of(mu) for mu in self.eigenvalues)

    def to_text(self) -> str:
        lines = [f"krylov_dim = {self.krylov_dim}", f"converged = {str(self.converged).lower()}",
                 f"compressed = {str(self.compressed).lower()}",
                 f"spectral_radius = {self.spectral_radius:.17g}"]
        for mu, res, th in zip(self.eigenvalues, self.residuals, self.thetas):
            lines.append(f"mu = {mu.real:.17g} {mu.imag:+.17g}i  |mu| = {abs(mu):.17g}  "
                         f"theta = {th.real:.17g} {th.imag:+.17g}i  residual = {res:.3e}")
        return "\n".join(lines) + "\n"


def arnoldi_spectrum(m: FloquetOperator, cutoffs: Optional[CutoffPair] = None, k: int = 6,
                     tol: float = 1e-10, ncv: Optional[int] = None, maxiter: Optional[int] = None,
                     seed: int = 0) -> SpectrumReport:
    """Dominant eigenpairs of ``M`` (or ``psi1 M psi2``) by implicitly restarted Arnoldi.

    Every returned pair carries the explicit relative residual ``|A x - mu x| / |x|``.
    """
    n = m.dim
    if not 0 < k < n - 1:
        raise ValueError(f"need 0 < k < dim - 1 = {n - 1}")
    if cutoffs is None:
        op = m.apply
    else:
        def op(x):
            return cutoffs.left(m.apply(cutoffs.right(x)))
    # one extra pair member so a conjugate pair cut at k is ordered deterministically
    want = k + 1 if k + 1 < n - 1 else k
    ncv = min(n, max(2 * want + 1, 40) if ncv is None else max(ncv, want + 2))
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    start = m.matvecs
    lin = spla.LinearOperator((n, n), matvec=op, dtype=float)
    converged = True
    try:
        vals, vecs = spla.eigs(lin, k=want, which="LM", tol=tol, ncv=ncv, v0=v0,
                               maxiter=maxiter if maxiter is not None else 50 * n)
    except spla.ArpackNoConvergence as exc:
        converged = False
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    order = sort_eigenvalues(list(vals))[:k]
    mus, residuals = [], []
    for i in order:
        x = vecs[:, i]
        ax = op(x.real) + 1j * op(x.imag)
        residuals.append(float(np.linalg.norm(ax - vals[i] * x) / np.linalg.norm(x)))
        mus.append(complex(vals[i]))
    if any(r > max(100 * tol, 1e-8) for r in residuals):
        converged = False
    return SpectrumReport(tuple(mus), tuple(residuals), ncv, converged, cutoffs is not None,
                          m.matvecs - start)


def dense_spectrum(matrix: np.ndarray) -> tuple:
    vals = sla.eigvals(matrix)
    return tuple(complex(vals[i]) for i in sort_eigenvalues(list(vals)))


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResolventProbe:
    """Action of ``R(theta)`` on supplied vectors plus a certificate.

    For the series method ``certificate`` is the tail bound relative to
    ``|psi2 f|``; for the solve method it is the worst relative residual of
    ``(M - z) x = psi2 f``.
    """

    theta: complex
    method: str
    outputs: tuple
    n_max: int
    certificate: float
    norm_estimate: float
    amplification: tuple = ()
    iterations: tuple = ()


def series_terms_needed(theta: complex, period: float, bound: GrowthBound, tol: float,
                        margin: float = 0.0) -> tuple[int, float]:
    """Smallest ``N`` with tail ``B q^(N+1)/(1-q) <= tol`` for ``q = exp(A T - Im theta)``."""
    need = bound.A * period + margin
    if not theta.imag > need:
        raise SeriesDivergenceError(
            f"Im theta = {theta.imag:.6g} must exceed A*T + margin = {need:.6g}")
    q = math.exp(bound.A * period - theta.imag)
    n = 0
    scale = bound.B * math.exp(-theta.imag) / (1.0 - q)
    while scale * q ** (n + 1) > tol:
        n += 1
    return n, scale * q ** (n + 1)


def _series_coefficients(m: FloquetOperator, cutoffs: CutoffPair, f: np.ndarray, n_max: int) -> list:
    """``psi1 M^N psi2 f`` for ``N = 0..n_max``."""
    x = cutoffs.right(np.asarray(f, dtype=float))
    out = []
    for big_n in range(n_max + 1):
        out.append(cutoffs.left(x))
        if big_n < n_max:
            x = m.apply(x)
    return out


def resolvent_series(m: FloquetOperator, cutoffs: CutoffPair, theta: complex,
                     probes: Sequence[np.ndarray], bound: GrowthBound,
                     n_max: Optional[int] = None, tol: float = 1e-13,
                     margin: float = 0.0) -> ResolventProbe:
    """``R(theta) f = -exp(i theta) sum_N psi1 M^N psi2 f exp(i N theta)``."""
    theta = complex(theta)
    auto, tail = series_terms_needed(theta, m.period, bound, tol, margin)
    if n_max is None:
        n_max = auto
    else:
        q = math.exp(bound.A * m.period - theta.imag)
        tail = bound.B * math.exp(-theta.imag) * q ** (n_max + 1) / (1.0 - q)
    pref = -cmath.exp(1j * theta)
    outs = []
    for f in probes:
        coeffs = _series_coefficients(m, cutoffs, f, n_max)
        acc = np.zeros(m.dim, dtype=complex)
        for big_n, c in enumerate(coeffs):
            acc += cmath.exp(1j * big_n * theta) * c
        outs.append(pref * acc)
    norm = max((np.linalg.norm(o) / max(np.linalg.norm(cutoffs.right(f)), 1e-300)
                for o, f in zip(outs, probes)), default=0.0)
    return ResolventProbe(theta, "series", tuple(outs), n_max, tail, float(norm))


def resolvent_solve(m: FloquetOperator, cutoffs: CutoffPair, theta: complex,
                    probes: Sequence[np.ndarray], rtol: float = 1e-13,
                    spectrum: Optional[SpectrumReport] = None, pole_tol: float = 1e-8,
                    restart: int = 60, maxiter: int = 200) -> ResolventProbe:
    """GMRES solve of ``(M - exp(-i theta)) x = psi2 f``, output ``psi1 x``."""
    theta = complex(theta)
    z = cmath.exp(-1j * theta)

    def nearest() -> Optional[complex]:
        spec = spectrum if spectrum is not None else arnoldi_spectrum(m, k=min(6, m.dim - 2), tol=1e-8)
        if not spec.eigenvalues:
            return None
        return min(spec.eigenvalues, key=lambda mu: abs(mu - z))

    if spectrum is not None and spectrum.eigenvalues:
        mu = nearest()
        if abs(mu - z) <= pole_tol * max(1.0, abs(z)):
            raise PoleProximityError(f"exp(-i theta) = {z:.6g} is within {abs(mu - z):.3e} of "
                                     f"eigenvalue {mu:.6g}", mu)
    lin = spla.LinearOperator((m.dim, m.dim), matvec=lambda x: m.apply(x) - z * x, dtype=complex)
    outs, residuals, amps, iters = [], [], [], []
    for f in probes:
        b = cutoffs.right(np.asarray(f, dtype=float)).astype(complex)
        bn = np.linalg.norm(b)
        if bn == 0:
            outs.append(np.zeros(m.dim, dtype=complex))
            residuals.append(0.0)
            amps.append(0.0)
            iters.append(0)
            continue
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(lin, b, rtol=rtol, atol=0.0, restart=restart, maxiter=maxiter,
                             callback=cb, callback_type="pr_norm")
        res = float(np.linalg.norm(lin.matvec(x) - b) / bn)
        if info != 0 and res > 1e3 * rtol:
            raise PoleProximityError(f"GMRES stalled at relative residual {res:.3e}; "
                                     f"exp(-i theta) is close to the spectrum", nearest())
        outs.append(cutoffs.left(x))
        residuals.append(res)
        amps.append(float(np.linalg.norm(x) / bn))
        iters.append(count[0])
    norm = max((np.linalg.norm(o) / max(np.linalg.norm(cutoffs.right(f)), 1e-300)
                for o, f in zip(outs, probes)), default=0.0)
    return ResolventProbe(theta, "solve", tuple(outs), 0, max(residuals, default=0.0), float(norm),
                          tuple(amps), tuple(iters))


# ---------------------------------------------------------------------------
# periodized generating series
# ---------------------------------------------------------------------------

def time_window(tau: np.ndarray, period: float) -> np.ndarray:
    """Smooth ``gamma1``: 1 for ``tau >= -T/20`` and 0 for ``tau <= -T/10``."""
    return smooth_step((-np.asarray(tau, dtype=float) - period / 20.0) / (period / 20.0))


def fbg_series(m: FloquetOperator, cutoffs: CutoffPair, theta: complex, t: float,
               probes: Sequence[np.ndarray], bound: GrowthBound, tol: float = 1e-13,
               n_max: Optional[int] = None) -> ResolventProbe:
    """``exp(i t theta / T) sum_k gamma1(t + kT) psi1 U(t + kT, 0) psi2 exp(i k theta)``.

    ``t`` must be a non-negative lattice time. Terms with ``t + kT < 0`` would
    need backward evolution and are only allowed where ``gamma1`` vanishes.
    """
    theta = complex(theta)
    prop = m.prop
    period = m.period
    kt = prop.step_index(t)
    n_t = prop.steps_per_period
    if kt < 0:
        raise ValueError("t must be non-negative")
    k_min = -(kt // n_t)
    first = kt + k_min * n_t
    if first > 0:
        back = (first - n_t) * prop.dt
        if time_window(np.array(back), period) > 0:
            raise ValueError("the requested t needs backward evolution inside the time window")
    auto, tail = series_terms_needed(theta, period, bound, tol)
    terms = auto + 1 if n_max is None else n_max + 1
    pref = cmath.exp(1j * t * theta / period)
    outs = []
    for f in probes:
        state = prop.from_vector(cutoffs.right(np.asarray(f, dtype=float)), 0)
        state = prop.evolve_steps(state, first)
        acc = np.zeros(m.dim, dtype=complex)
        for j in range(terms):
            k = k_min + j
            w = float(time_window(np.array((first + j * n_t) * prop.dt), period))
            acc += w * cmath.exp(1j * k * theta) * cutoffs.left(state.vector())
            if j < terms - 1:
                state = prop.evolve_steps(state, n_t)
        outs.append(pref * acc)
    norm = max((np.linalg.norm(o) for o in outs), default=0.0)
    return ResolventProbe(theta, "fbg", tuple(outs), terms - 1, tail, float(norm))


def inversion_check(m: FloquetOperator, cutoffs: CutoffPair, f: np.ndarray, d: int,
                    bound: GrowthBound, nodes: int = 64, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``psi1 U(dT, 0) psi2 f`` from the transform on ``Im theta = (A + 1) T``.

    The contour integral over ``Re theta in [-pi, pi]`` is evaluated by the
    periodic trapezoid rule, which is exact once ``nodes`` exceeds the number
    of retained series terms. Returns ``(recovered, direct)``.
    """
    im = (bound.A + 1.0) * m.period
    n_max, _ = series_terms_needed(complex(0.0, im), m.period, bound, tol)
    n_max = max(n_max, d)
    if nodes <= n_max:
        nodes = n_max + 1
    coeffs = _series_coefficients(m, cutoffs, f, n_max)
    c = np.array(coeffs)
    acc = np.zeros(m.dim, dtype=complex)
    for j in range(nodes):
        theta = -math.pi + 2.0 * math.pi * j / nodes + 1j * im
        phases = np.exp(1j * np.arange(n_max + 1) * theta)
        acc += cmath.exp(-1j * d * theta) * (phases @ c)
    recovered = acc / nodes
    return recovered, coeffs[d]


# ---------------------------------------------------------------------------
# poles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pole:
    mu: complex
    theta: complex
    residual: float

    @property
    def flagged(self) -> bool:
        return self.theta.imag >= 0


@dataclass(frozen=True)
class PoleReport:
    label: str
    boundary: str
    sponge: tuple
    poles: tuple
    period: float
    converged: bool = True

    @property
    def flagged(self) -> tuple:
        return tuple(p for p in self.poles if p.flagged)

    @property
    def delta_est(self) -> Optional[float]:
        """``-max Im theta`` when every pole lies below the real axis, else ``None``."""
        if not self.poles or self.flagged:
            return None
        return -max(p.theta.imag for p in self.poles)

    @property
    def growth_exponent(self) -> Optional[float]:
        """``max Im theta`` when a pole is flagged (``ln |mu_max|``)."""
        if not self.flagged:
            return None
        return max(p.theta.imag for p in self.poles)

    def to_text(self) -> str:
        width, strength = self.sponge
        lines = [f"scenario = {self.label}", f"boundary = {self.boundary}",
                 f"sponge_width = {width:.17g}", f"sponge_strength = {strength:.17g}",
                 f"period = {self.period:.17g}", f"converged = {str(self.converged).lower()}",
                 f"flagged = {len(self.flagged)}"]
        d = self.delta_est
        lines.append("delta_est = " + ("none" if d is None else f"{d:.17g}"))
        for p in self.poles:
            lines.append(f"pole re_mu={p.mu.real:.17g} im_mu={p.mu.imag:.17g} "
                         f"re_theta={p.theta.real:.17g} im_theta={p.theta.imag:.17g} "
                         f"residual={p.residual:.17g}" + (" FLAGGED" if p.flagged else ""))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["re_mu,im_mu,re_theta,im_theta,residual"]
        for p in self.poles:
            lines.append(f"{p.mu.real:.17g},{p.mu.imag:.17g},{p.theta.real:.17g},"
                         f"{p.theta.imag:.17g},{p.residual:.17g}")
        return "\n".join(lines) + "\n"


def detect_poles(m: FloquetOperator, cutoffs: Optional[CutoffPair] = None,
                 im_range: Optional[tuple[float, float]] = None, k: int = 8, tol: float = 1e-10,
                 spectrum: Optional[SpectrumReport] = None, require_sponge: bool = True) -> PoleReport:
    """Map the dominant sponge-mode eigenvalues to ``theta`` on the branch ``Re theta in [-pi, pi]``.

    ``im_range = (lo, hi)`` keeps poles with ``lo <= Im theta <= hi``.
    """
    if require_sponge and m.boundary != "sponge":
        raise ValueError("pole detection needs the sponge boundary mode")
    spec = spectrum if spectrum is not None else arnoldi_spectrum(m, cutoffs, k=k, tol=tol)
    poles = []
    for mu, res in zip(spec.eigenvalues, spec.residuals):
        if mu == 0:
            continue
        th = theta_of(mu)
        if im_range is not None and not (im_range[0] <= th.imag <= im_range[1]):
            continue
        poles.append(Pole(mu, th, res))
    plan = m.prop.plan
    return PoleReport(m.prop.scenario.label, plan.boundary,
                      (plan.sponge_width, plan.sponge_strength), tuple(poles), m.period,
                      spec.converged)
