"""Closed-loop ETC systems, the extended (state, error) dynamics and a
high-accuracy inter-event-time oracle."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .integrate import integrate_batch
from .polynomial import (
    PolyVectorField,
    Polynomial,
    default_names,
    homogeneity_degree,
    parse_polynomial,
)

ORACLE_RTOL = 1e-10
ORACLE_ATOL = 1e-10


@dataclass(frozen=True, eq=False)
class EtcSystem:
    """Homogeneous plant, state-feedback controller and the quadratic trigger
    ``|e|^2 - sigma_sq * |z|^2``."""

    plant: PolyVectorField          # over (x1..xn, u1..um)
    controller: PolyVectorField     # over (x1..xn)
    closed_loop: PolyVectorField    # over (x1..xn)
    n: int
    sigma_sq: float
    alpha: int
    theta: int = 1

    def __post_init__(self):
        if self.sigma_sq <= 0:
            raise ValueError("sigma_sq must be positive")
        verdict = homogeneity_degree(self.closed_loop)
        if not verdict.homogeneous:
            raise ValueError(f"closed loop is not homogeneous (offending term {verdict.offending})")
        if verdict.degree != self.alpha:
            raise ValueError(f"closed loop has degree {verdict.degree}, expected {self.alpha}")
        if self.alpha < 1:
            raise ValueError("homogeneity degree must be at least 1")

    @classmethod
    def from_fields(cls, plant: PolyVectorField, controller: PolyVectorField,
                    sigma_sq: float, alpha: int | None = None) -> "EtcSystem":
        n = plant.dimension
        m = controller.dimension
        if plant.nvars != n + m:
            raise ValueError(f"plant must be a field over {n} states and {m} inputs")
        if controller.nvars != n:
            raise ValueError("controller must be a function of the state only")
        xs = [Polynomial.variable(k, n) for k in range(n)]
        closed = plant.compose(xs + list(controller.components))
        if alpha is None:
            verdict = homogeneity_degree(closed)
            if not verdict.homogeneous:
                raise ValueError(f"closed loop is not homogeneous (offending term {verdict.offending})")
            alpha = verdict.degree
        return cls(plant, controller, closed, n, float(sigma_sq), int(alpha))

    @classmethod
    def from_text(cls, plant: Sequence[str], controller: Sequence[str], sigma_sq: float,
                  alpha: int | None = None) -> "EtcSystem":
        n, m = len(plant), len(controller)
        pnames = default_names(n) + default_names(m, "u")
        plant_f = PolyVectorField([parse_polynomial(t, pnames) for t in plant], n + m)
        ctrl_f = PolyVectorField([parse_polynomial(t, default_names(n)) for t in controller], n)
        return cls.from_fields(plant_f, ctrl_f, sigma_sq, alpha)

    @property
    def trigger(self) -> Polynomial:
        """Triggering function over ``(z, e)`` in R^{2n}."""
        n = self.n
        terms = {}
        for k in range(n):
            ez = [0] * (2 * n)
            ez[k] = 2
            terms[tuple(ez)] = -self.sigma_sq
            ee = [0] * (2 * n)
            ee[n + k] = 2
            terms[tuple(ee)] = 1.0
        return Polynomial(terms, 2 * n)


@dataclass(frozen=True, eq=False)
class ExtendedSystem:
    field: PolyVectorField
    n: int

    def __post_init__(self):
        if self.field.nvars != 2 * self.n or self.field.dimension != 2 * self.n:
            raise ValueError("extended field must be square over R^{2n}")
        for k in range(self.n):
            if self.field[self.n + k] != -self.field[k]:
                raise ValueError("error dynamics must be the negated state dynamics")

    def __call__(self, xi):
        return self.field(xi)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.field.evaluate(points)


def build_extended_field(sys: EtcSystem) -> ExtendedSystem:
    """``F(z, e) = (f(z, v(z + e)), -f(z, v(z + e)))`` over R^{2n}."""
    n = sys.n
    zs = [Polynomial.variable(k, 2 * n) for k in range(n)]
    zpe = [Polynomial.variable(k, 2 * n) + Polynomial.variable(n + k, 2 * n) for k in range(n)]
    u = [c.compose(zpe) for c in sys.controller.components]
    held = sys.plant.compose(zs + u)
    comps = list(held.components) + [-c for c in held.components]
    return ExtendedSystem(PolyVectorField(comps, 2 * n), n)


def triggering_value(sys: EtcSystem, z: Sequence[float], e: Sequence[float]) -> float:
    z = np.asarray(z, dtype=float)
    e = np.asarray(e, dtype=float)
    if z.shape != (sys.n,) or e.shape != (sys.n,):
        raise ValueError(f"state and error must have length {sys.n}")
    return math.fsum(e * e) - sys.sigma_sq * math.fsum(z * z)


def _trigger_batch(sys: EtcSystem):
    n = sys.n
    s2 = sys.sigma_sq

    def g(y):
        return np.sum(y[:, n:] ** 2, axis=1) - s2 * np.sum(y[:, :n] ** 2, axis=1)
    return g


def flow_until_event(sys: EtcSystem, x: Sequence[float], abs_tol: float = 1e-9,
                     t_cap: float = 1.0, max_step: float | None = None,
                     ext: ExtendedSystem | None = None):
    """Integrate the extended system from ``(x, 0)`` until the trigger fires.

    Returns ``(t, state, triggered)``: the event time and the plant state at
    that time, or ``(t_cap, state(t_cap), False)`` when nothing fires first.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"state must have length {sys.n}")
    if not np.any(x):
        raise ValueError("inter-event time is unbounded at the origin")
    if t_cap <= 0:
        raise ValueError("t_cap must be positive")
    ext = ext or build_extended_field(sys)
    n = sys.n
    field_eval = ext.field.evaluate

    def rhs(_t, y):
        return field_eval(y[None, :])[0]

    def phi(_t, y):
        return float(np.dot(y[n:], y[n:]) - sys.sigma_sq * np.dot(y[:n], y[:n]))
    phi.terminal = True
    phi.direction = 1

    y0 = np.concatenate([x, np.zeros(n)])
    sol = solve_ivp(rhs, (0.0, t_cap), y0, method="RK45", rtol=ORACLE_RTOL, atol=ORACLE_ATOL,
                    events=phi, dense_output=True,
                    max_step=np.inf if max_step is None else max_step)
    if sol.status == -1:
        raise RuntimeError(f"integration failed: {sol.message}")
    if sol.status != 1:
        return t_cap, sol.y[:n, -1].copy(), False
    # the terminal step is the first accepted step with a sign change; refine
    # the crossing by bisection on its continuous extension
    t_hi = float(sol.t_events[0][0])
    t_lo = float(sol.t[-2]) if sol.t.size >= 2 else 0.0
    if phi(0, sol.sol(t_lo)) >= 0:
        t_lo = 0.0
    while t_hi - t_lo > abs_tol:
        mid = 0.5 * (t_lo + t_hi)
        if phi(0, sol.sol(mid)) < 0:
            t_lo = mid
        else:
            t_hi = mid
    tau = 0.5 * (t_lo + t_hi)
    return tau, sol.sol(tau)[:n].copy(), True


def inter_event_time_oracle(sys: EtcSystem, x: Sequence[float], abs_tol: float = 1e-9,
                            t_cap: float = 1.0, max_step: float | None = None,
                            ext: ExtendedSystem | None = None) -> float:
    """Inter-event time of state ``x``; ``math.inf`` marks no event before ``t_cap``."""
    tau, _, fired = flow_until_event(sys, x, abs_tol, t_cap, max_step, ext)
    return tau if fired else math.inf


class BatchOracle:
    """Vectorised inter-event times and flows for many states at once."""

    def __init__(self, sys: EtcSystem, ext: ExtendedSystem | None = None,
                 rtol: float = ORACLE_RTOL, atol: float = ORACLE_ATOL):
        self.sys = sys
        self.ext = ext or build_extended_field(sys)
        self.rtol = rtol
        self.atol = atol
        self._trigger = _trigger_batch(sys)

    def _lift(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != self.sys.n:
            raise ValueError(f"states must have {self.sys.n} coordinates")
        if np.any(~xs.any(axis=1)):
            raise ValueError("inter-event time is unbounded at the origin")
        return np.hstack([xs, np.zeros_like(xs)])

    def events(self, xs, t_cap=1.0, abs_tol: float = 1e-12):
        """``(tau, state_at_tau, triggered)``; untriggered rows stop at ``t_cap``."""
        y0 = self._lift(xs)
        t, y, fired = integrate_batch(self.ext.evaluate, y0, t_cap, event=self._trigger,
                                      rtol=self.rtol, atol=self.atol, event_tol=abs_tol)
        return t, y[:, :self.sys.n], fired

    def inter_event_times(self, xs, t_cap=1.0, abs_tol: float = 1e-12) -> np.ndarray:
        t, _, fired = self.events(xs, t_cap, abs_tol)
        return np.where(fired, t, np.inf)

    def flow(self, xs, t) -> np.ndarray:
        """Extended state at time(s) ``t`` starting from ``(x, 0)``."""
        y0 = self._lift(xs)
        _, y, _ = integrate_batch(self.ext.evaluate, y0, t, rtol=self.rtol, atol=self.atol)
        return y


@dataclass
class TraceEvent:
    sample_state: np.ndarray
    inter_event_time: float
    region_index: tuple[int, int] | None = None
    forced: bool = False
    t_k: float = 0.0

    def __post_init__(self):
        if not self.inter_event_time > 0:
            raise ValueError("inter-event time must be positive")


def simulate_etc_trace(
    sys: EtcSystem,
    x0: Sequence[float],
    duration: float,
    classify: Callable[[np.ndarray], tuple[int, int] | None] | None = None,
    caps: Mapping[tuple[int, int], float] | None = None,
    abs_tol: float = 1e-9,
    t_cap: float = 1.0,
    max_step: float | None = None,
) -> list[TraceEvent]:
    """Simulate the sampled loop from ``x0`` for ``duration`` seconds.

    ``classify`` maps a sample to its region; ``caps`` holds the forced
    sampling deadlines of innermost regions. When a sample falls in a capped
    region the loop closes at ``min(natural time, cap)``.
    """
    x = np.asarray(x0, dtype=float)
    if not np.any(x):
        raise ValueError("initial state must be nonzero")
    ext = build_extended_field(sys)
    caps = caps or {}
    events: list[TraceEvent] = []
    t = 0.0
    while t < duration:
        region = classify(x) if classify is not None else None
        cap = caps.get(region) if region is not None else None
        horizon = t_cap if cap is None else min(cap, t_cap)
        tau, x_next, fired = flow_until_event(sys, x, abs_tol, horizon, max_step, ext)
        forced = False
        if not fired:
            if cap is None:
                raise RuntimeError(f"no event within {t_cap} s from {x.tolist()}")
            forced = True
        events.append(TraceEvent(x.copy(), tau, region, forced, t))
        t += tau
        x = x_next
    return events


def trace_to_csv(trace: Sequence[TraceEvent]) -> str:
    n = len(trace[0].sample_state) if trace else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["event_index", "t_k"] + [f"x{k + 1}" for k in range(n)]
               + ["inter_event_time", "region_i", "region_j", "forced"])
    for k, ev in enumerate(trace):
        i, j = ev.region_index if ev.region_index is not None else ("", "")
        w.writerow([k, repr(ev.t_k)] + [repr(float(v)) for v in ev.sample_state]
                   + [repr(ev.inter_event_time), i, j, int(ev.forced)])
    return buf.getvalue()


def trace_from_csv(text: str) -> list[TraceEvent]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        xs = [float(row[k]) for k in row if k.startswith("x") and k[1:].isdigit()]
        region = (int(row["region_i"]), int(row["region_j"])) if row["region_i"] else None
        out.append(TraceEvent(np.array(xs), float(row["inter_event_time"]), region,
                              bool(int(row["forced"])), float(row["t_k"])))
    return out
