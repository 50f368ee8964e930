import numpy as np
import pytest

from queryteam.geometry import Box
from queryteam.partition import QueryTeam
from queryteam.preference import PreferenceStore, clamp_anchor, extract_preferences


def sort_truncate(records, tau):
    # stable sort keeps arrival order among equal confidences
    order = sorted(range(len(records)), key=lambda i: -records[i][1])
    return [records[i] for i in order[:tau]]


def test_first_record():
    s = PreferenceStore(2, tau=3)
    s.record(0, Box(0.5, 0.5, 0.1, 0.1), 0.2)
    assert s.count(0) == 1 and len(s) == 1


def test_top_tau_semantics():
    s = PreferenceStore(1, tau=2)
    for c in (0.9, 0.5, 0.7):
        s.record(0, Box(0.5, 0.5, c / 2, c / 2), c)
    assert [c for _, c in s.entries(0)] == [0.9, 0.7]


def test_unknown_query_and_bad_input():
    s = PreferenceStore(2)
    with pytest.raises(IndexError):
        s.record(2, Box(0.5, 0.5, 0.1, 0.1), 0.5)
    with pytest.raises(ValueError):
        s.record(0, Box(0.5, 0.5, 0.1, 0.1), 1.5)
    with pytest.raises(ValueError):
        PreferenceStore(2, tau=0)


def test_retention_matches_sort_oracle():
    rng = np.random.default_rng(0)
    s = PreferenceStore(1, tau=300)
    records = []
    for _ in range(10_000):
        # coarse confidences force many ties
        box = rng.uniform(0.2, 0.8, 4)
        conf = float(rng.integers(0, 200)) / 200
        records.append((box, conf))
        s.record(0, box, conf)
    kept = s.entries(0)
    oracle = sort_truncate(records, 300)
    assert [c for _, c in kept] == [c for _, c in oracle]
    assert all(np.array_equal(a, b) for (a, _), (b, _) in zip(kept, oracle))


def test_mean_of_singleton_and_pair():
    team = QueryTeam([Box(0.5, 0.5, 0.1, 0.1)] * 2, [2])
    s = PreferenceStore(2, tau=5)
    s.record(0, Box(0.3, 0.6, 0.2, 0.25), 0.8)
    s.record(1, Box(0.4, 0.4, 0.2, 0.2), 0.8)
    s.record(1, Box(0.6, 0.6, 0.4, 0.4), 0.6)
    new = extract_preferences(s, team)
    assert new[0].as_tuple() == (0.3, 0.6, 0.2, 0.25)
    assert new[1].as_tuple() == pytest.approx((0.5, 0.5, 0.3, 0.3), abs=1e-12)


def test_empty_store_keeps_anchor():
    team = QueryTeam([Box(0.5, 0.5, 0.1, 0.1)], [1])
    assert extract_preferences(PreferenceStore(1), team)[0] == team.anchors[0]


def test_random_stores_mean_and_envelope():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        tau = int(rng.integers(1, 8))
        s = PreferenceStore(1, tau=tau)
        records = [(rng.uniform(0.05, 0.95, 4), float(rng.uniform())) for _ in range(rng.integers(1, 15))]
        for box, conf in records:
            s.record(0, box, conf)
        kept = np.array([b for b, _ in sort_truncate(records, tau)])
        mean = s.mean_box(0)
        assert np.abs(mean - kept.mean(axis=0)).max() <= 1e-12
        assert np.all(mean >= kept.min(axis=0) - 1e-15) and np.all(mean <= kept.max(axis=0) + 1e-15)


def test_clamp():
    b = clamp_anchor([1.2, -0.1, 0.0, 3.0])
    assert b.as_tuple() == (1.0, 0.0, 1e-3, 1.0)
