"""Smoke test for the Python extension.

Build and install it first:

    pip install ./crates/python --no-build-isolation
    python python/smoke_test.py
"""

import math

import multisage


def check_ward():
    points = [[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]]
    out = multisage.ward_cluster(points, 1.0)
    clusters = sorted(sorted(c) for c in out["clusters"])
    assert clusters == [[0, 1], [2, 3]], clusters
    assert len(out["merges"]) == 3
    assert out["reducibility_violations"] == 0


def check_medoid_and_importance():
    assert multisage.compute_medoid([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]], [10, 11, 12]) == 11
    day = 86_400
    got = multisage.compute_importance([0, day], 0.5, 2 * day)
    assert math.isclose(got, math.exp(-1.0) + math.exp(-0.5)), got
    try:
        multisage.ward_cluster([[0.0, 0.0]], -1.0)
    except ValueError as e:
        assert "alpha" in str(e)
    else:
        raise AssertionError("negative alpha accepted")


def check_pipeline():
    world = multisage.generate_world(seed=3, n_users=5, n_topics=8, pins_per_topic=60, background_pins=200)
    pins = world.pins
    assert len(pins) == 8 * 60 + 200
    user = world.users[0]
    actions = world.actions(user)
    assert actions and world.interests(user)
    now = max(ts for _, ts, _ in actions)
    profile = multisage.build_profile(pins, actions, now)
    assert profile, "empty profile"
    assert all(pins.embedding(m) is not None for m, _, _ in profile)

    index = multisage.Index(pins, seed=1)
    assert len(index) > 0
    first = pins.ids[0]
    hits = index.query(pins.embedding(first), k=5)
    assert hits[0][0] == first and len(hits) == 5
    recs = index.recommend(profile, e=2, budget=20)
    assert 0 < len(recs) <= 20
    assert recs == index.recommend(profile, e=2, budget=20)


if __name__ == "__main__":
    check_ward()
    check_medoid_and_importance()
    check_pipeline()
    print("python smoke test: ok", multisage.__version__)
