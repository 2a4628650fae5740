import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etc_traffic import BatchOracle, Cone, build_cones, build_regions, classify
from etc_traffic.partition import cone_contains, cone_index, cones_from_matrices, region_index, \
    region_table_csv

from conftest import TIMES, unit


def test_quadrants():
    cones = build_cones(4)
    assert cone_index(cones, [[1.0, 1.0]])[0] == 1
    assert [c.angles for c in cones][1] == pytest.approx((np.pi / 2, np.pi))


def test_sixteen_sectors(cones):
    assert len(cones) == 16
    for c in cones:
        assert c.angles[1] - c.angles[0] == pytest.approx(np.pi / 8)


def test_covering_of_random_directions(cones):
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 2 * np.pi, 10_000)
    U = np.stack([np.cos(a), np.sin(a)], axis=1)
    member = np.stack([c.contains(U) for c in cones], axis=1)
    counts = member.sum(axis=1)
    assert np.all(counts >= 1)
    # two memberships only on a shared boundary
    for k in np.nonzero(counts > 1)[0]:
        frac = a[k] / (np.pi / 8)
        assert abs(frac - round(frac)) < 1e-9


def test_membership_examples(cones):
    c = cones[0]
    assert cone_contains(c, [0.0, 0.0])
    assert cone_contains(c, [1.0, np.tan(np.pi / 16)])
    assert not cone_contains(c, [1.0, -0.01])


@given(st.floats(0, 2 * np.pi, exclude_max=True))
def test_pointed_cones(a):
    cones = build_cones(16)
    x = unit(a)
    for c in cones:
        strict = lambda v: bool(np.all(c.E @ v > 0))
        assert not (strict(x) and strict(-x))


def test_boundary_goes_to_lower_index(cones):
    # on the edge shared by cones 1 and 2, exactly orthogonal to its normal
    normal = cones[1].E[0]
    x = np.array([normal[1], -normal[0]])
    assert cone_contains(cones[0], x) and cone_contains(cones[1], x)
    assert cone_index(cones, x[None])[0] == 1
    assert cone_index(cones, [[1.0, 0.0]])[0] == 1


def test_regions_index_space(cones):
    regions = build_regions(TIMES, cones)
    assert len(regions) == 48
    assert len({r.key for r in regions}) == 48
    assert {r.tau_lower for r in regions if r.band == 2} == {8e-4}


def test_region_soundness(mu, cones, system):
    rng = np.random.default_rng(3)
    X = rng.uniform(-3.5, 3.5, (2000, 2))
    bands, js = classify(mu, cones, TIMES, X)
    tau = BatchOracle(system).inter_event_times(X)
    assert np.all(js >= 1)
    for i, t in enumerate(TIMES, start=1):
        assert np.all(tau[bands == i] >= t)
    x = X[bands == 2][0]
    assert region_index(mu, cones, TIMES, x) == (2, int(js[bands == 2][0]))


def test_origin_is_unclassifiable(mu, cones):
    with pytest.raises(ValueError):
        classify(mu, cones, TIMES, [[0.0, 0.0]])


def test_cones_from_matrices():
    E = [[[1.0, 0.0], [0.0, 1.0]], [[-1.0, 0.0], [0.0, 1.0]], [[0.0, -1.0]]]
    cones = cones_from_matrices(E)
    assert [c.index for c in cones] == [1, 2, 3]
    assert cone_index(cones, [[1.0, 1.0], [-1.0, 1.0], [0.5, -1.0]]).tolist() == [1, 2, 3]
    with pytest.raises(ValueError, match="empty interior"):
        cones_from_matrices([[[1.0, 0.0], [-1.0, 0.0]]])


def test_higher_dimensions_need_matrices():
    with pytest.raises(ValueError):
        build_cones(8, n=3)
    with pytest.raises(ValueError):
        build_cones(1)


def test_cone_equality_and_table(cones):
    again = build_cones(16)
    assert again == cones
    assert len({*cones, *again}) == 16
    assert Cone(cones[0].E, 1) != cones[0]
    table = region_table_csv(build_regions(TIMES, cones), cones).splitlines()
    assert table[0] == "i,j,tau_lower,angle_lo,angle_hi"
    assert len(table) == 49
