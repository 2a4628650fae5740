"""Acceptance suite on the shipped configuration.

Each test records one ``criterion N: PASS|FAIL ...`` line. The lines are
printed as they are produced and again in the pytest terminal summary.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import brentq

from etc_traffic import (
    BatchOracle,
    certify_certificate,
    fallback_certificate,
    flowpipe,
    monte_carlo_validate,
    simulate,
    validate_trace,
    verify_delta,
)
from etc_traffic.abstraction import sample_region, sample_segment

from conftest import TIMES

BUILD_BUDGET_S = 600.0
SLACK = 1e-6
EPS_TARGET = 0.007
EPS_REFERENCE = 0.0035
TRANSITIONS_REFERENCE = 536
SCALING_TAU_RTOL = 1e-3
SCALING_MU_RTOL = 1e-9
SCALING_RADIUS_RTOL = 1e-6
PER_REGION = 1000
GLOBAL_SAMPLES = 10_000
FLOWPIPE_TRAJECTORIES = 500
FLOWPIPE_REGIONS = [(1, 1), (1, 6), (2, 3), (2, 12), (3, 9)]
DELTA_SAMPLES = 100_000


def record(log, k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    log.append(line)
    return ok


def test_criterion_1_structure(built, acceptance_log):
    a, report, seconds = built
    bands = {i: {a.outputs[r.key][0] for r in a.states if r.band == i} for i in (1, 2, 3)}
    ok = (len(a.states) == 48
          and {r.key for r in a.states} == {(i, j) for i in (1, 2, 3) for j in range(1, 17)}
          and bands == {1: {4e-4}, 2: {8e-4}, 3: {20e-4}}
          and seconds < BUILD_BUDGET_S)
    stages = ", ".join(f"{k} {v:.1f}s" for k, v in report.timings.items())
    assert record(acceptance_log, 1, ok,
                  f"{len(a.states)} states, lower bounds {sorted(min(b) for b in bands.values())}, "
                  f"build {seconds:.1f}s < {BUILD_BUDGET_S:.0f}s ({stages})")


def test_criterion_2_soundness(abstraction, acceptance_log):
    rep = monte_carlo_validate(abstraction, PER_REGION, seed=1, slack=SLACK)
    ok = not rep.time_violations
    assert record(acceptance_log, 2, ok,
                  f"{PER_REGION} samples x {len(abstraction.states)} regions, "
                  f"{len(rep.time_violations)} interval violations, "
                  f"worst lower margin {rep.worst_lower_margin:.3g}s")


def test_criterion_3_precision(abstraction, acceptance_log):
    eps = abstraction.epsilon
    widest = max(abstraction.outputs, key=lambda k: abstraction.outputs[k][1] - abstraction.outputs[k][0])
    ok = eps <= EPS_TARGET
    assert record(acceptance_log, 3, ok,
                  f"epsilon = {eps:.6g}s (target <= {EPS_TARGET}, reference {EPS_REFERENCE}); "
                  f"widest interval at region {widest}")


def test_criterion_4_trace(abstraction, acceptance_log):
    trace = simulate(abstraction, [1.5, 2.0], 0.8)
    rep = validate_trace(abstraction, trace, slack=SLACK)
    path = []
    for ev in trace:
        if not path or path[-1] != ev.region_index:
            path.append(ev.region_index)
    shown = " -> ".join(f"({i},{j})" for i, j in path)
    assert record(acceptance_log, 4, rep.passed,
                  f"{rep.events_checked} events, {len(rep.time_violations)} time and "
                  f"{len(rep.path_violations)} path violations; path {shown}")


def test_criterion_5_innermost_mutual(abstraction, acceptance_log):
    missing = [(j, k) for j in range(1, 17) for k in range(1, 17)
               if ((3, j), (3, k)) not in abstraction.transitions]
    assert record(acceptance_log, 5, not missing, f"{256 - len(missing)}/256 pairs present")


def test_criterion_6_transition_completeness(abstraction, acceptance_log):
    rep = monte_carlo_validate(abstraction, GLOBAL_SAMPLES, seed=2, per_region=False, slack=SLACK)
    ok = not rep.transition_violations and not rep.coverage_violations
    assert record(acceptance_log, 6, ok,
                  f"{GLOBAL_SAMPLES} initial states, {len(rep.transition_violations)} missing edges, "
                  f"{len(rep.observed)} distinct edges observed; relation has "
                  f"{len(abstraction.transitions)} edges (reference {TRANSITIONS_REFERENCE})")


def test_criterion_7_scaling(system, mu, acceptance_log):
    rng = np.random.default_rng(7)
    n = 100
    ang = rng.uniform(0, 2 * np.pi, n)
    rad = rng.uniform(0.3, 3.0, n)
    X = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    lam = rng.uniform(0.25, 4.0, n)
    oracle = BatchOracle(system)
    tau = oracle.inter_event_times(X)
    tau_l = oracle.inter_event_times(lam[:, None] * X)
    err_tau = np.max(np.abs(tau_l - lam ** -2 * tau) / tau)

    t = rng.uniform(0, 3e-3, n)
    lhs = mu.evaluate(lam[:, None] * X, t)
    rhs = lam ** 2 * mu.evaluate(X, lam ** 2 * t)
    err_mu = np.max(np.abs(lhs - rhs) / np.abs(rhs))

    # radii found by direct root finding on mu, independent of the closed form
    errs = []
    for a in ang[:20]:
        u = np.array([np.cos(a), np.sin(a)])
        prods = []
        for tk in (2e-4, 4e-4, 8e-4, 20e-4, 50e-4):
            r = brentq(lambda s: mu(s * u, tk), 1e-2, 50.0, xtol=1e-14, rtol=1e-13)
            prods.append(r * tk ** 0.5)
        prods = np.array(prods)
        errs.append(np.max(np.abs(prods / prods[0] - 1)))
    err_r = max(errs)
    ok = (err_tau <= SCALING_TAU_RTOL and err_mu <= SCALING_MU_RTOL
          and err_r <= SCALING_RADIUS_RTOL)
    assert record(acceptance_log, 7, ok,
                  f"tau {err_tau:.2e} <= {SCALING_TAU_RTOL:g}, mu {err_mu:.2e} <= "
                  f"{SCALING_MU_RTOL:g}, radius {err_r:.2e} <= {SCALING_RADIUS_RTOL:g}")


def test_criterion_8_flowpipes(abstraction, ext, system, acceptance_log):
    rng = np.random.default_rng(8)
    oracle = BatchOracle(system, ext)
    escapes = 0
    checked = 0
    for key in FLOWPIPE_REGIONS:
        seg = abstraction.segments[key]
        t_end = abstraction.outputs[key][1]
        res = flowpipe(ext, seg, (0.0, t_end))
        assert res.sound
        X = sample_segment(seg, FLOWPIPE_TRAJECTORIES, rng)
        X = X[np.linalg.norm(X, axis=1) > 0]
        for t in np.linspace(0.0, t_end, 12):
            Y = oracle.flow(X, t) if t > 0 else np.hstack([X, np.zeros_like(X)])
            inside = np.zeros(len(Y), dtype=bool)
            for s in res.covering(t):
                hit = (Y[:, None, :] >= s.lo[None]) & (Y[:, None, :] <= s.hi[None])
                inside |= hit.all(axis=2).any(axis=1)
            escapes += int((~inside).sum())
            checked += len(Y)
    assert record(acceptance_log, 8, escapes == 0,
                  f"{FLOWPIPE_TRAJECTORIES} trajectories x {len(FLOWPIPE_REGIONS)} regions, "
                  f"{checked} state checks, {escapes} escapes")


def test_criterion_9_delta_certificate(abstraction, cert, ext, system, acceptance_log):
    shipped = verify_delta(cert, DELTA_SAMPLES, rng_seed=9)
    rebuilt_same = abstraction.cert.deltas == cert.deltas
    fb = fallback_certificate(ext, system.trigger, cert.p, cert.d, cert.z_radius, cert.epsilon,
                              cert.e_radius)
    fb_ok, why = certify_certificate(fb)
    fb_samples = verify_delta(fb, 20_000, rng_seed=10)
    ok = shipped.passed and rebuilt_same and fb_ok and fb_samples.passed
    assert record(acceptance_log, 9, ok,
                  f"shipped certificate: {DELTA_SAMPLES} samples, worst margins "
                  f"{shipped.worst_margin_a:.3g} / {shipped.worst_margin_b:.3g}, "
                  f"rebuild identical = {rebuilt_same}; fallback {why}")
