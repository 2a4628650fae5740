import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etc_traffic import (
    BatchOracle,
    EtcSystem,
    build_extended_field,
    inter_event_time_oracle,
    lie_derivative,
    parse_polynomial,
    simulate_etc_trace,
    triggering_value,
)
from etc_traffic.etc_model import TraceEvent, flow_until_event, trace_from_csv, trace_to_csv

from conftest import CONTROLLER, SIGMA_SQ

# frozen from inter_event_time_oracle(abs_tol=1e-9) on the shipped system
TAU_15_2 = 7.431232460575054e-4
TAU_1_0 = 3.8172576212605258e-3

nonzero_states = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).filter(
    lambda x: math.hypot(*x) > 0.2)


def test_error_components_negate_state_components(ext):
    for k in range(2):
        assert ext.field[2 + k] == -ext.field[k]


@given(nonzero_states)
def test_zero_error_recovers_closed_loop(x):
    s = EtcSystem.from_text(["-x1^3 + x1*x2^2", "x1*x2^2 - x1^2*x2 + u1"], CONTROLLER, SIGMA_SQ)
    ext = build_extended_field(s)
    np.testing.assert_allclose(ext([*x, 0.0, 0.0])[:2], s.closed_loop(x), rtol=1e-12, atol=1e-12)


def test_printed_field_at_one_one(printed_system):
    F = build_extended_field(printed_system)
    np.testing.assert_array_equal(F([1.0, 1.0, 0.0, 0.0])[:2], [2.0, -2.0])


def test_printed_sign_conserves_product(printed_system):
    # with +x1^3 the closed loop keeps x1*x2 constant, so orbits are unbounded
    prod = parse_polynomial("x1*x2", ["x1", "x2"])
    assert lie_derivative(prod, printed_system.closed_loop).is_zero()


def test_shipped_sign_decreases_norm(system):
    sq = parse_polynomial("x1^2 + x2^2", ["x1", "x2"])
    expected = parse_polynomial("-2*x1^4 - 2*x2^4", ["x1", "x2"])
    assert lie_derivative(sq, system.closed_loop) == expected


def test_trigger_values(system):
    assert triggering_value(system, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(-(0.0127 * 0.3) ** 2,
                                                                            rel=1e-4)
    assert triggering_value(system, [0.0, 0.0], [0.3, 0.4]) == pytest.approx(0.25)


@given(nonzero_states)
def test_trigger_negative_without_error(x):
    s = EtcSystem.from_text(["-x1^3 + x1*x2^2", "x1*x2^2 - x1^2*x2 + u1"], CONTROLLER, SIGMA_SQ)
    assert triggering_value(s, x, [0.0, 0.0]) == pytest.approx(-SIGMA_SQ * (x[0] ** 2 + x[1] ** 2))


def test_frozen_inter_event_times(system):
    assert inter_event_time_oracle(system, [1.5, 2.0], abs_tol=1e-9) == pytest.approx(TAU_15_2,
                                                                                      rel=1e-8)
    assert inter_event_time_oracle(system, [1.0, 0.0], abs_tol=1e-9) == pytest.approx(TAU_1_0,
                                                                                      rel=1e-8)


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_inter_event_time_scaling(system, lam):
    x = np.array([1.5, 2.0])
    tau = inter_event_time_oracle(system, lam * x, abs_tol=1e-12)
    assert tau == pytest.approx(lam ** -2 * TAU_15_2, rel=1e-3)


def test_batch_oracle_matches_scalar_oracle(system):
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, (20, 2))
    batch = BatchOracle(system).inter_event_times(X)
    single = [inter_event_time_oracle(system, x, abs_tol=1e-12) for x in X]
    np.testing.assert_allclose(batch, single, rtol=1e-6)
    assert np.all(batch > 0)


def test_origin_is_rejected(system):
    with pytest.raises(ValueError):
        inter_event_time_oracle(system, [0.0, 0.0])
    with pytest.raises(ValueError):
        BatchOracle(system).inter_event_times([[0.0, 0.0]])
    with pytest.raises(ValueError):
        simulate_etc_trace(system, [0.0, 0.0], 1.0)


def test_no_event_before_cap(system):
    t, _, fired = flow_until_event(system, [1.5, 2.0], t_cap=1e-4)
    assert not fired and t == pytest.approx(1e-4)
    assert inter_event_time_oracle(system, [1.5, 2.0], t_cap=1e-4) == math.inf


def test_zero_duration_gives_empty_trace(system):
    assert simulate_etc_trace(system, [1.5, 2.0], 0.0) == []


def test_trace_times_equal_oracle(system):
    trace = simulate_etc_trace(system, [1.5, 2.0], 0.01)
    assert len(trace) >= 10
    for prev, ev in zip(trace, trace[1:]):
        assert ev.t_k == pytest.approx(prev.t_k + prev.inter_event_time)
    for ev in trace[:: max(1, len(trace) // 5)]:
        tau = inter_event_time_oracle(system, ev.sample_state, abs_tol=1e-9)
        assert ev.inter_event_time == pytest.approx(tau, abs=1e-9)


def test_caps_force_events(system):
    trace = simulate_etc_trace(system, [1.5, 2.0], 1e-3, classify=lambda x: (1, 1),
                               caps={(1, 1): 1e-4})
    assert all(ev.forced for ev in trace)
    assert all(ev.inter_event_time == pytest.approx(1e-4) for ev in trace)


def test_trace_csv_round_trip(system):
    trace = simulate_etc_trace(system, [1.5, 2.0], 0.003)
    back = trace_from_csv(trace_to_csv(trace))
    assert len(back) == len(trace)
    for a, b in zip(trace, back):
        np.testing.assert_array_equal(a.sample_state, b.sample_state)
        assert a.inter_event_time == b.inter_event_time


def test_nonhomogeneous_system_is_rejected():
    with pytest.raises(ValueError, match="homogeneous"):
        EtcSystem.from_text(["x2", "x1^2 + u1"], ["-x2"], 0.1)
    with pytest.raises(ValueError):
        EtcSystem.from_text(["x1^3", "x2^3 + u1"], ["-x2^3"], -1.0)
    with pytest.raises(ValueError):
        TraceEvent(np.ones(2), 0.0)
