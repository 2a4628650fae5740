"""Assembly, exports and validation of the full model (shares one build)."""

import dataclasses
import json
import re

import numpy as np
import pytest

from etc_traffic import (
    Abstraction,
    monte_carlo_validate,
    precision,
    simulate,
    validate_trace,
)
from etc_traffic.etc_model import TraceEvent
from etc_traffic.partition import Region

from conftest import TIMES


def test_state_space(abstraction):
    assert len(abstraction.states) == 48
    for r in abstraction.states:
        assert abstraction.outputs[r.key][0] == TIMES[r.band - 1]
    assert abstraction.forced == frozenset((3, j) for j in range(1, 17))


def test_innermost_mutual_transitions(abstraction):
    for j in range(1, 17):
        for k in range(1, 17):
            assert ((3, j), (3, k)) in abstraction.transitions


def test_epsilon_is_the_longest_interval(abstraction):
    lengths = [hi - lo for lo, hi in abstraction.outputs.values()]
    assert abstraction.epsilon == max(lengths) == precision(abstraction)


def hand_built(a, intervals):
    states = tuple(Region(1, j, lo) for j, (lo, _) in enumerate(intervals, start=1))
    outputs = {(1, j): iv for j, iv in enumerate(intervals, start=1)}
    eps = max(hi - lo for lo, hi in intervals)
    return dataclasses.replace(a, states=states, outputs=outputs, transitions=frozenset(),
                               forced=frozenset(), epsilon=eps)


def test_precision_of_hand_built_models(abstraction):
    assert precision(hand_built(abstraction, [(1.0, 2.0), (3.0, 3.5)])) == 1.0
    assert precision(hand_built(abstraction, [(1.0, 1.0), (2.0, 2.0)])) == 0.0
    with pytest.raises(ValueError, match="epsilon"):
        dataclasses.replace(hand_built(abstraction, [(1.0, 2.0)]), epsilon=0.5)


def test_json_round_trip(abstraction):
    text = abstraction.to_json()
    back = Abstraction.from_json(text)
    assert back.to_json() == text
    assert back.config_digest == abstraction.config_digest
    assert back.transitions == abstraction.transitions
    assert json.loads(text)["initial_states"] == "all"


def test_dot_export(abstraction):
    dot = abstraction.export("dot").decode()
    nodes = re.findall(r'^\s+"R_\d+_\d+" \[label=', dot, flags=re.M)
    edges = re.findall(r"->", dot)
    assert len(nodes) == 48
    assert len(edges) == len(abstraction.transitions)
    assert '"(1,1) [0.0004, ' in dot
    assert dot.endswith("}\n")


def test_csv_exports(abstraction):
    rows = abstraction.export("csv-transitions").decode().splitlines()
    assert rows[0] == "from_i,from_j,to_i,to_j"
    assert len(rows) - 1 == len(abstraction.transitions)
    bounds = abstraction.export("csv-bounds").decode().splitlines()
    assert len(bounds) == 49
    with pytest.raises(ValueError, match="unknown export format"):
        abstraction.export("yaml")


def test_empty_trace_passes(abstraction):
    rep = validate_trace(abstraction, [])
    assert rep.passed and rep.events_checked == 0


def test_reference_trace(abstraction):
    trace = simulate(abstraction, [1.5, 2.0], 0.8)
    rep = validate_trace(abstraction, trace)
    assert rep.passed, rep.to_dict()
    path = [ev.region_index for ev in trace]
    bands = [k[0] for k in path]
    assert bands[0] == 1 and bands[-1] == 3
    assert bands == sorted(bands)


def test_jittered_trace_has_one_violation(abstraction):
    trace = simulate(abstraction, [1.5, 2.0], 0.05)
    k = len(trace) // 2
    ev = trace[k]
    hi = abstraction.outputs[ev.region_index][1]
    trace[k] = dataclasses.replace(ev, inter_event_time=hi + 1e-4)
    rep = validate_trace(abstraction, trace)
    assert len(rep.time_violations) == 1
    assert rep.time_violations[0][0] == k
    assert not rep.path_violations


def test_uncovered_sample_is_a_coverage_violation(abstraction):
    rep = validate_trace(abstraction, [TraceEvent(np.array([50.0, 0.0]), 1e-6)])
    assert not rep.passed
    assert len(rep.coverage_violations) == 1


def test_shrunk_bound_is_caught(abstraction):
    key = (1, 5)
    lo, hi = abstraction.outputs[key]
    outputs = dict(abstraction.outputs)
    outputs[key] = (lo, lo + 0.3 * (hi - lo))
    eps = max(b - a for a, b in outputs.values())
    broken = dataclasses.replace(abstraction, outputs=outputs, epsilon=eps)
    rep = monte_carlo_validate(broken, 200, seed=1)
    assert not rep.passed
    assert {v[0] for v in rep.time_violations} == {key}


def test_zero_samples_pass(abstraction):
    rep = monte_carlo_validate(abstraction, 0)
    assert rep.passed and rep.n_samples == 0


def test_per_region_sampling(abstraction):
    rep = monte_carlo_validate(abstraction, 100, seed=5)
    assert rep.passed, rep.to_dict()
    assert rep.observed <= abstraction.transitions


def test_dilation_base_needs_matching_ratios():
    from etc_traffic.abstraction import dilation_base

    assert dilation_base(TIMES, 1, [0]) is None
    assert dilation_base((4e-4, 8e-4, 16e-4), 1, [0]) == 0
    assert dilation_base((4e-4, 8e-4, 16e-4), 1, []) is None


@pytest.mark.parametrize("j", [1, 6])
def test_scaling_shortcut_matches_direct_computation(ext, system, mu, j):
    from etc_traffic import build_ball_segments, build_cones
    from etc_traffic.abstraction import _upper_bound_job, dilated_result
    from etc_traffic.reach import ReachParams

    times = (4e-4, 8e-4, 16e-4, 32e-4)
    segs = build_ball_segments(mu, build_cones(8), times)
    params = ReachParams()
    base = _upper_bound_job((ext, system, segs[(1, j)], times[0], 20 * times[0], params, segs))
    direct = _upper_bound_job((ext, system, segs[(2, j)], times[1], 20 * times[1], params, segs))
    tau, targets = dilated_result(base[1], base[4], times[1] / times[0], 2, segs)
    assert tau == pytest.approx(direct[1], rel=1e-9)
    assert tau >= direct[1]
    assert targets == direct[2]
