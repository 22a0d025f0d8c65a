"""Compiled stencil and update kernels.

Every kernel writes each output cell from a fixed expression of its
neighbours, so results do not depend on the number of threads.
"""

from __future__ import annotations

import warnings

import numpy as np

import numba

# an outdated system TBB only disables one optional threading layer
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

_jit = numba.njit(cache=True, nogil=True, fastmath=False)
_pjit = numba.njit(cache=True, nogil=True, fastmath=False, parallel=True)


@_jit
def div_a_grad_1d(u, ax, inv_h2, out):
    m = u.shape[0]
    for i in range(m):
        c = u[i]
        up = u[i + 1] if i + 1 < m else 0.0
        um = u[i - 1] if i > 0 else 0.0
        out[i] = inv_h2 * (ax[i + 1] * (up - c) - ax[i] * (c - um))


@_pjit
def div_a_grad_2d(u, ax, ay, inv_h2, out):
    mx, my = u.shape
    for i in numba.prange(mx):
        for j in range(my):
            c = u[i, j]
            up = u[i + 1, j] if i + 1 < mx else 0.0
            um = u[i - 1, j] if i > 0 else 0.0
            acc = ax[i + 1, j] * (up - c) - ax[i, j] * (c - um)
            up = u[i, j + 1] if j + 1 < my else 0.0
            um = u[i, j - 1] if j > 0 else 0.0
            acc += ay[i, j + 1] * (up - c) - ay[i, j] * (c - um)
            out[i, j] = inv_h2 * acc


@_pjit
def div_a_grad_3d(u, ax, ay, az, inv_h2, out):
    mx, my, mz = u.shape
    for i in numba.prange(mx):
        for j in range(my):
            for k in range(mz):
                c = u[i, j, k]
                up = u[i + 1, j, k] if i + 1 < mx else 0.0
                um = u[i - 1, j, k] if i > 0 else 0.0
                acc = ax[i + 1, j, k] * (up - c) - ax[i, j, k] * (c - um)
                up = u[i, j + 1, k] if j + 1 < my else 0.0
                um = u[i, j - 1, k] if j > 0 else 0.0
                acc += ay[i, j + 1, k] * (up - c) - ay[i, j, k] * (c - um)
                up = u[i, j, k + 1] if k + 1 < mz else 0.0
                um = u[i, j, k - 1] if k > 0 else 0.0
                acc += az[i, j, k + 1] * (up - c) - az[i, j, k] * (c - um)
                out[i, j, k] = inv_h2 * acc


def div_a_grad(u: np.ndarray, faces: tuple, inv_h2: float, out: np.ndarray) -> np.ndarray:
    """``out = div_h(a grad_h u)`` with zero Dirichlet ghosts outside the box."""
    if u.ndim == 1:
        div_a_grad_1d(u, faces[0], inv_h2, out)
    elif u.ndim == 2:
        div_a_grad_2d(u, faces[0], faces[1], inv_h2, out)
    else:
        div_a_grad_3d(u, faces[0], faces[1], faces[2], inv_h2, out)
    return out


@_pjit
def second_difference_3d(v, ax, out):
    """``out = v[i-1] - 2 v[i] + v[i+1]`` along axis ``ax`` of a 3D view, zero ghosts."""
    mx, my, mz = v.shape
    for i in numba.prange(mx):
        for j in range(my):
            for k in range(mz):
                c = v[i, j, k]
                if ax == 0:
                    up = v[i + 1, j, k] if i + 1 < mx else 0.0
                    um = v[i - 1, j, k] if i > 0 else 0.0
                elif ax == 1:
                    up = v[i, j + 1, k] if j + 1 < my else 0.0
                    um = v[i, j - 1, k] if j > 0 else 0.0
                else:
                    up = v[i, j, k + 1] if k + 1 < mz else 0.0
                    um = v[i, j, k - 1] if k > 0 else 0.0
                out[i, j, k] = up - 2.0 * c + um


def grid_filter(v: np.ndarray, shape: tuple, strength: float, order: int) -> np.ndarray:
    """``v - strength * sum_axis S_axis^order v`` with ``S = -(second difference) / 4``.

    ``S`` has spectrum ``sin^2(k h / 2)`` in ``[0, 1]``, so the filter removes a
    fraction ``strength`` of the Nyquist mode of each axis and leaves smooth
    fields nearly untouched. Symmetric, so it is its own transpose.
    """
    n = len(shape)
    v3 = v.reshape(shape + (1,) * (3 - n))
    acc = np.zeros_like(v3)
    tmp = np.empty_like(v3)
    for ax in range(n):
        w = v3
        for _ in range(order):
            second_difference_3d(np.ascontiguousarray(w), ax, tmp)
            w = -0.25 * tmp
            tmp = np.empty_like(v3)
        acc += w
    return (v3 - strength * acc).reshape(v.shape)


@_pjit
def kick_drift(u, v, lu, damp, mask, half_dt, dt):
    """Damp and half-kick ``v``, drift ``u``, then apply the new mask (flat arrays)."""
    for i in numba.prange(u.shape[0]):
        vh = damp[i] * v[i] + half_dt * lu[i]
        u[i] = (u[i] + dt * vh) * mask[i]
        v[i] = vh * mask[i]


@_pjit
def kick_damp(v, lu, damp, mask, half_dt):
    """Closing half-kick followed by mask and damping (flat arrays)."""
    for i in numba.prange(v.shape[0]):
        v[i] = damp[i] * ((v[i] + half_dt * lu[i]) * mask[i])


@_jit
def all_finite(a):
    for i in range(a.shape[0]):
        if not np.isfinite(a[i]):
            return False
    return True
