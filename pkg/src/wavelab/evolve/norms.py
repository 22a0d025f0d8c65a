"""Randomized lower estimates of ``||U(t, s)||`` in a discrete energy norm.

The norm of a state at step ``k`` is ``x^T G_k x`` with ``G_k = diag(K_k - dt^2 K_k^2 / 4, I)``
(``metric``, the form the stepper conserves for static coefficients) or
``diag(K_0, I)`` (``paper``, ``K_0`` the unit-coefficient Dirichlet Laplacian), both
restricted to the active cells of step ``k``. Power iteration on
``G_s^{-1} U^T G_t U`` converges to the squared norm from below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .propagator import Propagator

_DIRECT_LIMIT = 60000


def stiffness_matrix(faces: tuple, h: float) -> sp.csr_matrix:
    """``K = -div_h(a grad_h)`` on the whole grid with zero Dirichlet ghosts."""
    n = len(faces)
    m = faces[0].shape[0] - 1
    diff = sp.diags([-np.ones(m), np.ones(m)], [0, -1], shape=(m + 1, m), format="csr")
    eye = sp.identity(m, format="csr")
    k = None
    for ax in range(n):
        mats = [eye] * n
        mats[ax] = diff
        d = mats[0]
        for mat in mats[1:]:
            d = sp.kron(d, mat, format="csr")
        term = d.T @ sp.diags(np.asarray(faces[ax]).ravel()) @ d
        k = term if k is None else k + term
    return (k / h ** 2).tocsr()


class _SPDSolver:
    def __init__(self, a: sp.csr_matrix):
        self.a = a.tocsc()
        self.direct = a.shape[0] <= _DIRECT_LIMIT
        self._solve = spla.factorized(self.a) if self.direct else None

    def __call__(self, b: np.ndarray) -> np.ndarray:
        if self.direct:
            return self._solve(b)
        x, info = spla.cg(self.a, b, rtol=1e-12, maxiter=10 * self.a.shape[0])
        if info != 0:
            raise RuntimeError("conjugate gradients did not converge in the norm estimate")
        return x


class EnergyForm:
    """Quadratic energy form of the states at one lattice step."""

    def __init__(self, prop: Propagator, k: int, variant: str = "metric"):
        if variant not in ("metric", "paper"):
            raise ValueError("variant must be 'metric' or 'paper'")
        grid = prop.grid
        self.active = np.flatnonzero(prop.schedule.mask(k))
        if variant == "metric":
            faces = prop.schedule.faces(k)
        else:
            faces = tuple(np.ones_like(f) for f in prop.schedule.faces(k))
        kfull = stiffness_matrix(faces, grid.h)
        idx = self.active
        self.k = kfull[idx][:, idx].tocsr()
        eye = sp.identity(idx.size, format="csr")
        # the u block is K (I - dt^2 K / 4); both factors are SPD under the CFL bound
        self.shift = (eye - 0.25 * prop.plan.dt ** 2 * self.k).tocsr() if variant == "metric" else None
        self._sk = None
        self._ss = None

    @property
    def dim(self) -> int:
        return 2 * self.active.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        m = self.active.size
        xu = self.k @ x[:m]
        if self.shift is not None:
            xu = self.shift @ xu
        return np.concatenate([xu, x[m:]])

    def solve(self, y: np.ndarray) -> np.ndarray:
        m = self.active.size
        if self._sk is None:
            self._sk = _SPDSolver(self.k)
            self._ss = None if self.shift is None else _SPDSolver(self.shift)
        yu = self._sk(y[:m])
        if self._ss is not None:
            yu = self._ss(yu)
        return np.concatenate([yu, y[m:]])

    def norm2(self, x: np.ndarray) -> float:
        return float(x @ self.apply(x))


@dataclass(frozen=True)
class NormSample:
    """Lower estimate of ``||U(t, s)||`` from power iteration over several random starts."""

    s: float
    t: float
    value: float
    trials: tuple
    variant: str


def operator_norm_estimate(prop: Propagator, s: float, t: float, trials: int = 3,
                           iterations: int = 25, seed: int = 0, variant: str = "metric",
                           rtol: float = 1e-10) -> NormSample:
    """Power-iteration lower bound for the energy-norm operator norm of ``U(t, s)``."""
    k0, k1 = prop.step_index(s), prop.step_index(t)
    form_s = EnergyForm(prop, k0, variant)
    form_t = form_s if k1 == k0 or (prop.schedule.mask_id(k0) == prop.schedule.mask_id(k1)
                                    and prop.schedule.faces(k0) is prop.schedule.faces(k1)) \
        else EnergyForm(prop, k1, variant)
    size = prop.grid.size
    rng = np.random.default_rng(seed)

    def forward(x):
        full = np.zeros(2 * size)
        full[form_s.active] = x[: form_s.active.size]
        full[size + form_s.active] = x[form_s.active.size:]
        out = prop.evolve_steps(prop.from_vector(full, k0), k1 - k0)
        return np.concatenate([out.u.ravel()[form_t.active], out.v.ravel()[form_t.active]])

    def backward(z):
        p = np.zeros(size)
        q = np.zeros(size)
        p[form_t.active] = z[: form_t.active.size]
        q[form_t.active] = z[form_t.active.size:]
        p, q = prop.evolve_transpose(p, q, k0, k1)
        return np.concatenate([p.ravel()[form_s.active], q.ravel()[form_s.active]])

    found = []
    for _ in range(trials):
        x = rng.standard_normal(form_s.dim)
        x /= math.sqrt(form_s.norm2(x))
        best = 0.0
        prev = None
        for _ in range(iterations):
            y = forward(x)
            lam = form_t.norm2(y)
            best = max(best, lam)
            if prev is not None and abs(lam - prev) <= rtol * max(lam, 1e-300):
                break
            prev = lam
            x = form_s.solve(backward(form_t.apply(y)))
            nx = form_s.norm2(x)
            if not nx > 0:
                break
            x /= math.sqrt(nx)
        found.append(math.sqrt(best))
    return NormSample(s, t, max(found), tuple(found), variant)


@dataclass(frozen=True)
class GrowthBound:
    """Fitted envelope ``B exp(A |t - s|)`` over one period."""

    B: float
    A: float
    times: tuple
    estimates: tuple

    def bound(self, dt: float) -> float:
        return self.B * math.exp(self.A * abs(dt))


def fit_growth_bound(prop: Propagator, samples: int = 4, s: float = 0.0, **kwargs) -> GrowthBound:
    """Sample ``||U(s + j T/m, s)||`` for ``j = 0..m`` and fit ``(B, A)``.

    ``A`` is the least-squares log slope clipped at zero and ``B`` the smallest
    constant that makes the envelope dominate every sample.
    """
    n_t = prop.steps_per_period
    k0 = prop.step_index(s)
    ks = sorted({k0 + (j * n_t) // samples for j in range(samples + 1)})
    times, values = [], []
    for k in ks:
        t = k * prop.dt
        times.append(t - k0 * prop.dt)
        values.append(1.0 if k == k0 else operator_norm_estimate(prop, k0 * prop.dt, t, **kwargs).value)
    tt = np.asarray(times)
    lv = np.log(np.maximum(values, 1e-300))
    slope = float(np.polyfit(tt, lv, 1)[0]) if len(tt) > 1 else 0.0
    a_fit = max(0.0, slope)
    b_fit = float(max(np.exp(lv - a_fit * tt)))
    return GrowthBound(max(b_fit, 1.0), a_fit, tuple(times), tuple(values))
