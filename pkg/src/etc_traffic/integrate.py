"""Batched explicit Runge-Kutta 5(4) integration with event location.

Integrates many initial states of one autonomous field in lockstep, each
trajectory with its own adaptive step. Used wherever thousands of
inter-event times are needed (soundness sampling, Monte Carlo transition
checks); the scalar oracle in :mod:`etc_traffic.etc_model` goes through
``scipy.integrate.solve_ivp`` instead and serves as its cross-check.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.integrate import RK45

_A = RK45.A
_B = RK45.B
_C = RK45.C
_E = RK45.E
_P = RK45.P
_ORDER_EXP = -1.0 / 5.0


def _rms(x):
    return np.sqrt(np.mean(x * x, axis=-1))


def _initial_step(fun, y, f, rtol, atol, max_step):
    scale = atol + np.abs(y) * rtol
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    y1 = y + h0[:, None] * f
    f1 = fun(y1)
    d2 = _rms((f1 - f) / scale) / h0
    dm = np.maximum(d1, d2)
    h1 = np.where(dm <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.maximum(dm, 1e-300)) ** 0.2)
    return np.minimum(np.minimum(100 * h0, h1), max_step)


def _dense(y, K, h, theta):
    """Continuous extension at fractions ``theta`` of the step (rows broadcast)."""
    Q = np.einsum("nsd,sk->ndk", K, _P)
    powers = np.stack([theta, theta ** 2, theta ** 3, theta ** 4], axis=-1)
    return y + h[:, None] * np.einsum("ndk,nk->nd", Q, powers)


def integrate_batch(
    fun: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_final,
    event: Callable[[np.ndarray], np.ndarray] | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    max_step: float = np.inf,
    event_tol: float = 1e-12,
    max_steps: int = 100000,
):
    """Integrate ``y' = fun(y)`` for every row of ``y0``.

    Each trajectory stops at its own ``t_final`` or, if ``event`` is given, at
    the first accepted step on which ``event`` changes sign from negative to
    nonnegative; the crossing is then located by bisection on the continuous
    extension until the bracket is narrower than ``event_tol``.

    Returns ``(t_stop, y_stop, triggered)``.
    """
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim != 2:
        raise ValueError("y0 must be a 2-D array of initial states")
    n, d = y.shape
    t_final = np.broadcast_to(np.asarray(t_final, dtype=float), (n,)).copy()
    t = np.zeros(n)
    triggered = np.zeros(n, dtype=bool)
    active = t_final > 0
    if not active.any():
        return t, y, triggered
    f = np.zeros_like(y)
    f[active] = fun(y[active])
    h = np.zeros(n)
    h[active] = _initial_step(fun, y[active], f[active], rtol, atol, max_step)
    g = np.full(n, -np.inf)
    if event is not None:
        g[active] = event(y[active])
    steps = 0
    while active.any():
        steps += 1
        if steps > max_steps:
            raise RuntimeError("integrator exceeded its step budget")
        idx = np.nonzero(active)[0]
        ya, fa, ta = y[idx], f[idx], t[idx]
        ha = np.minimum(h[idx], t_final[idx] - ta)
        K = np.empty((idx.size, 7, d))
        K[:, 0] = fa
        for s in range(1, 6):
            dy = np.einsum("j,njd->nd", _A[s, :s], K[:, :s]) * ha[:, None]
            K[:, s] = fun(ya + dy)
        ynew = ya + ha[:, None] * np.einsum("j,njd->nd", _B, K[:, :6])
        fnew = fun(ynew)
        K[:, 6] = fnew
        scale = atol + np.maximum(np.abs(ya), np.abs(ynew)) * rtol
        err = ha[:, None] * np.einsum("j,njd->nd", _E, K)
        norm = _rms(err / scale)
        if not np.all(np.isfinite(ynew[norm <= 1])):
            raise FloatingPointError("integration produced non-finite states")
        accept = norm <= 1.0
        with np.errstate(divide="ignore"):
            factor = np.where(norm == 0, 10.0, np.clip(0.9 * norm ** _ORDER_EXP, 0.2, 10.0))
        factor = np.where(accept, factor, np.minimum(factor, 1.0))
        h_next = np.minimum(ha * factor, max_step)
        if np.any(h_next[~accept] < 1e-14 * np.maximum(1.0, np.abs(ta[~accept]))):
            raise RuntimeError("step size underflow in batched integrator")
        h[idx] = h_next
        acc = idx[accept]
        if acc.size == 0:
            continue
        a_loc = np.nonzero(accept)[0]
        fired = np.zeros(acc.size, dtype=bool)
        if event is not None:
            g_new = event(ynew[a_loc])
            fired = (g[acc] < 0) & (g_new >= 0)
            g[acc] = g_new
        if fired.any():
            loc = a_loc[fired]
            lo = np.zeros(loc.size)
            hi = np.ones(loc.size)
            hs = ha[loc]
            while np.any((hi - lo) * hs > event_tol):
                mid = 0.5 * (lo + hi)
                gm = event(_dense(ya[loc], K[loc], hs, mid))
                below = gm < 0
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
                if np.all(hi - lo < 1e-15):
                    break
            ycross = _dense(ya[loc], K[loc], hs, hi)
            rows = acc[fired]
            t[rows] = ta[loc] + hi * hs
            y[rows] = ycross
            triggered[rows] = True
            active[rows] = False
        rest = acc[~fired]
        rest_loc = a_loc[~fired]
        t[rest] = ta[rest_loc] + ha[rest_loc]
        y[rest] = ynew[rest_loc]
        f[rest] = fnew[rest_loc]
        done = t[rest] >= t_final[rest] * (1 - 1e-15)
        t[rest[done]] = t_final[rest[done]]
        active[rest[done]] = False
    return t, y, triggered
