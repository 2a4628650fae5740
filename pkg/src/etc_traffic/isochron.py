"""Analytic inner approximations of isochronous manifolds.

For a certified set of coefficients ``delta`` the function

    mu(x, t) = C s^(theta+1) exp(A s^alpha t) y(x/|x|),    s = |x| / rho,

is negative at ``t = 0`` and its zero set in ``x`` (for fixed ``t``) lies
inside the set of states whose inter-event time is at least ``t``. Along a
ray ``x = r u`` the sign of ``mu`` only depends on ``T = (r/rho)^alpha t``,
so every ray has one critical value ``T*(u)`` and all manifold radii follow
from it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .delta import DeltaCertificate
from .expm import expm_batch


def companion_matrix(deltas: Sequence[float]) -> np.ndarray:
    """The ``(p+1) x (p+1)`` matrix with ones on the superdiagonal, row ``p-1``
    holding ``delta_0 .. delta_{p-1}, 1`` and a zero last row."""
    p = len(deltas) - 1
    A = np.zeros((p + 1, p + 1))
    for k in range(p - 1):
        A[k, k + 1] = 1.0
    A[p - 1, :p] = deltas[:p]
    A[p - 1, p] = 1.0
    return A


@dataclass(frozen=True, eq=False)
class MuFunction:
    cert: DeltaCertificate
    rho: float
    alpha: int
    theta: int = 1
    A: np.ndarray = field(init=False, repr=False)
    C: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.rho > self.cert.z_radius * (1 + 1e-12):
            raise ValueError(f"rho = {self.rho} exceeds the radius of Z ({self.cert.z_radius})")
        A = companion_matrix(self.cert.deltas)
        A.setflags(write=False)
        C = np.zeros(self.cert.p + 1)
        C[0] = 1.0
        C.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "_y_single", lru_cache(maxsize=4096)(self._y_tuple))

    @property
    def n(self) -> int:
        return self.cert.n

    @property
    def p(self) -> int:
        return self.cert.p

    # -- direction data ----------------------------------------------------
    def lie_vector(self, directions) -> np.ndarray:
        """``y(u)`` for each row of ``directions`` (normalised internally)."""
        U = _unit_rows(directions, self.n)
        X = np.hstack([self.rho * U, np.zeros_like(U)])
        cols = [self.cert.lie_phis[0].evaluate(X)]
        for k in range(1, self.p):
            cols.append(np.maximum(self.cert.lie_phis[k].evaluate(X), 0.0))
        cols.append(np.full(U.shape[0], self.cert.deltas[self.p]))
        return np.stack(cols, axis=1)

    def _y_tuple(self, u: tuple) -> np.ndarray:
        y = self.lie_vector(np.array(u)[None])[0]
        y.setflags(write=False)
        return y

    def _y(self, U: np.ndarray) -> np.ndarray:
        if U.shape[0] == 1:
            return self._y_single(tuple(U[0].tolist()))[None]
        return self.lie_vector(U)

    def profile(self, T, y) -> np.ndarray:
        """``C exp(A T) y`` row-wise; the sign of ``mu`` along a ray."""
        T = np.atleast_1d(np.asarray(T, dtype=float))
        y = np.atleast_2d(y)
        M = expm_batch(T[:, None, None] * self.A[None])
        return np.einsum("nk,nk->n", M[:, 0, :], np.broadcast_to(y, (T.size, y.shape[1])))

    # -- evaluation ----------------------------------------------------------
    def evaluate(self, X, t) -> np.ndarray:
        """``mu`` at every row of ``X`` and time(s) ``t``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise ValueError("mu is undefined at the origin")
        t = np.broadcast_to(np.asarray(t, dtype=float), norms.shape)
        if np.any(t < 0):
            raise ValueError("time must be nonnegative")
        s = norms / self.rho
        y = self._y(X / norms[:, None])
        return s ** (self.theta + 1) * self.profile(s ** self.alpha * t, y)

    def __call__(self, x, t) -> float:
        return float(self.evaluate(np.asarray(x, dtype=float)[None], t)[0])

    def critical_time(self, directions, rtol: float = 1e-14) -> np.ndarray:
        """First zero ``T*(u)`` of ``T -> C exp(A T) y(u)``, per direction.

        Bracketed by doubling from ``T = 1e-12`` and refined by bisection in
        ``log T`` until the bracket is relatively narrower than ``rtol``.
        """
        U = _unit_rows(directions, self.n)
        y = self._y(U)
        if np.any(y[:, 0] >= 0):
            raise ValueError("trigger is not negative at zero error on the reference sphere")
        lo = np.zeros(U.shape[0])
        hi = np.full(U.shape[0], 1e-12)
        open_ = np.ones(U.shape[0], dtype=bool)
        for _ in range(200):
            g = self.profile(hi[open_], y[open_])
            pos = g > 0
            idx = np.nonzero(open_)[0]
            lo[idx[~pos]] = hi[idx[~pos]]
            hi[idx[~pos]] *= 2.0
            open_[idx[pos]] = False
            if not open_.any():
                break
        if open_.any():
            raise RuntimeError("mu never becomes positive along some ray")
        while np.any(hi - lo > rtol * hi):
            mid = np.where(lo > 0, np.sqrt(lo * hi), 0.5 * hi)
            g = self.profile(mid, y)
            below = g <= 0
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return hi


def _unit_rows(directions, n: int) -> np.ndarray:
    U = np.atleast_2d(np.asarray(directions, dtype=float))
    if U.shape[1] != n:
        raise ValueError(f"directions must have {n} coordinates")
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("direction must be nonzero")
    return U / norms


def mu_eval(m: MuFunction, x, t: float) -> float:
    return m(x, t)


def radius_from_critical_time(m: MuFunction, T_star, tau_star: float):
    return m.rho * (np.asarray(T_star) / tau_star) ** (1.0 / m.alpha)


def manifold_radius_along_ray(m: MuFunction, u, tau_star: float, tol: float = 1e-12,
                              r_max: float = math.inf) -> float:
    """Radius ``r`` at which ``mu(r u, tau_star)`` changes sign.

    ``tol`` is a relative width; the root is found in the rescaled time
    ``T = (r/rho)^alpha tau_star`` where it is independent of ``tau_star``.
    """
    if not tau_star > 0:
        raise ValueError("tau_star must be positive")
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValueError("u must be a unit vector")
    T = m.critical_time(u[None], rtol=min(tol, 1e-6))[0]
    r = float(radius_from_critical_time(m, T, tau_star))
    if r > r_max:
        raise ValueError(f"no sign change of mu within radius {r_max} along {u.tolist()}")
    return r


def manifold_radii(m: MuFunction, directions, tau_star: float) -> np.ndarray:
    return radius_from_critical_time(m, m.critical_time(directions), tau_star)


def region_bands(m: MuFunction, times: Sequence[float], X) -> np.ndarray:
    """Band index (1-based) per row of ``X``; 0 marks points outside band 1."""
    times = _check_times(times)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    inside = np.stack([m.evaluate(X, t) <= 0 for t in times], axis=1)
    return inside.sum(axis=1)


def region_membership(m: MuFunction, times: Sequence[float], x) -> int | None:
    band = int(region_bands(m, times, np.asarray(x, dtype=float)[None])[0])
    return band or None


def _check_times(times) -> list[float]:
    times = [float(t) for t in times]
    if not times or any(t <= 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be positive and strictly increasing")
    return times


def radial_sweep_csv(m: MuFunction, times: Sequence[float], n_angles: int = 360) -> str:
    """Manifold radius per direction and time, for planar systems."""
    if m.n != 2:
        raise ValueError("radial sweeps are only defined for planar systems")
    ang = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    U = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    T = m.critical_time(U)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["angle", "tau_star", "radius"])
    for t in _check_times(times):
        for a, r in zip(ang, radius_from_critical_time(m, T, t)):
            w.writerow([repr(float(a)), repr(t), repr(float(r))])
    return buf.getvalue()
