import numpy as np
import pytest

from conftest import random_boxes
from queryteam.geometry import Box, relative_scale
from queryteam.partition import (
    QueryTeam,
    assign_object_group,
    build_partition,
    group_sizes_for,
    init_team,
)


def scan_group(partition, scale):
    hits = [k for k, r in enumerate(partition.ranges) if r.s_min < scale <= r.s_max]
    assert len(hits) == 1
    return hits[0]


def test_default_ranges():
    p = build_partition([0.2, 0.4])
    assert [(r.s_min, r.s_max) for r in p.ranges] == [(0.0, 0.2), (0.2, 0.4), (0.4, 1.0)]


def test_empty_bounds_is_single_range():
    p = build_partition([])
    assert p.k == 1
    assert (p.ranges[0].s_min, p.ranges[0].s_max) == (0.0, 1.0)


@pytest.mark.parametrize("bounds", [[0.5, 0.3], [0.2, 0.2], [0.0, 0.5], [0.5, 1.0], [-0.1], [1.5]])
def test_bad_bounds_rejected(bounds):
    with pytest.raises(ValueError):
        build_partition(bounds)


def test_bad_bounds_name_value():
    with pytest.raises(ValueError, match="0.3"):
        build_partition([0.5, 0.3])


def test_boundary_goes_to_lower_range():
    p = build_partition([0.2, 0.4])
    assert p.group_of_scale(0.2) == 0
    assert p.group_of_scale(0.3) == 1
    assert p.group_of_scale(0.4) == 1
    assert p.group_of_scale(1.0) == 2
    assert p.group_of_scale(np.nextafter(0.2, 1)) == 1
    with pytest.raises(ValueError):
        p.group_of_scale(0.0)


def test_random_boxes_single_membership():
    rng = np.random.default_rng(0)
    p = build_partition([0.2, 0.4])
    boxes = random_boxes(rng, 10_000, min_side=0.005)
    for b in boxes:
        box = Box.from_array(b)
        assert assign_object_group(p, box) == scan_group(p, relative_scale(box))


def test_group_sizes():
    assert group_sizes_for([0.65, 0.20, 0.15], 300) == [195, 60, 45]
    assert group_sizes_for([0.65, 0.20, 0.15], 60) == [39, 12, 9]
    assert sum(group_sizes_for([1 / 3] * 3, 100)) == 100
    assert group_sizes_for([0.5, 0.5], 3) == [2, 1]


def test_init_team_rule():
    p = build_partition([0.2, 0.4])
    team = init_team(p, [0.65, 0.20, 0.15], 300, seed=5)
    assert team.group_sizes == [195, 60, 45]
    for i in team.block(1):
        assert team.anchors[i].w == team.anchors[i].h == pytest.approx(0.3)
    for i in team.block(0):
        assert team.anchors[i].w == pytest.approx(0.1)
    assert list(team.group_of[:195]) == [0] * 195
    assert team.offsets == [0, 195, 255, 300]


def test_init_team_deterministic():
    p = build_partition([0.2, 0.4])
    a = init_team(p, [0.65, 0.20, 0.15], 60, seed=9)
    b = init_team(p, [0.65, 0.20, 0.15], 60, seed=9)
    assert np.array_equal(a.anchor_array(), b.anchor_array())


def test_init_team_errors():
    p = build_partition([0.2, 0.4])
    with pytest.raises(ValueError):
        init_team(p, [0.65, 0.20, 0.15], 2, seed=0)
    with pytest.raises(ValueError):
        init_team(p, [0.5, 0.5], 10, seed=0)
    with pytest.raises(ValueError):
        QueryTeam([Box(0.5, 0.5, 0.1, 0.1)], [2])
