import json

import numpy as np
import pytest

from mapaware.models import RSS_169MHZ, TOA_UWB, bias_mean
from mapaware.scenario import (
    Anchor,
    EmptyScenarioError,
    ScenarioConfig,
    ScenarioError,
    connectivity,
    generate_observations,
    load_scenario,
    region_mask,
    search_region_membership,
    simulate_database,
    simulate_detector,
)

ANCHORS = [Anchor("A1", (1, 1)), Anchor("A2", (19, 1)), Anchor("A3", (19, 14)), Anchor("A4", (1, 14))]


def test_connectivity_splits_by_wall_crossings(two_room):
    sets = connectivity(two_room, ANCHORS, (3, 3))
    assert sets.connected == {"A1", "A2", "A3", "A4"}
    assert sets.los == {"A1", "A3", "A4"} and sets.nlos == {"A2"}  # A3 is seen through the door
    assert sets.detected_nlos == sets.nlos


def test_connectivity_respects_range(two_room):
    short = [Anchor("A1", (1, 1), d_max=3.0), Anchor("A2", (19, 1), d_max=3.0)]
    assert connectivity(two_room, short, (2, 2)).connected == {"A1"}
    assert connectivity(two_room, short, (10, 10)).connected == frozenset()


def test_region_mask_map_aware_versus_bounding_box():
    from mapaware.geometry import IndoorMap

    l_shape = IndoorMap([[0, 0], [10, 0], [10, 4], [4, 4], [4, 10], [0, 10]])
    pts = np.array([[8.0, 8.0], [2.0, 2.0], [8.0, 2.0]])
    xy = [[0.0, 0.0]]
    np.testing.assert_array_equal(region_mask(l_shape, xy, [np.inf], pts, True), [False, True, True])
    np.testing.assert_array_equal(region_mask(l_shape, xy, [np.inf], pts, False), [True, True, True])
    np.testing.assert_array_equal(region_mask(l_shape, xy, [5.0], pts, False), [False, True, False])


def test_search_region_membership_requires_connection(two_room):
    sets = connectivity(two_room, ANCHORS, (3, 3))
    assert search_region_membership(two_room, ANCHORS, sets, (5, 5), True)
    with pytest.raises(EmptyScenarioError):
        search_region_membership(two_room, ANCHORS, connectivity(two_room, [], (1, 1)), (5, 5), True)


def test_detector_flip_rate(two_room):
    truth = connectivity(two_room, ANCHORS, (3, 3))
    rng = np.random.default_rng(0)
    flips = 0
    n = 4000
    for _ in range(n):
        det = simulate_detector(truth, 0.3, rng)
        flips += len(det.detected_nlos ^ truth.nlos)
    rate = flips / (4 * n)
    assert abs(rate - 0.3) < 4 * np.sqrt(0.3 * 0.7 / (4 * n))
    assert simulate_detector(truth, 0.0, rng).detected_nlos == truth.nlos
    with pytest.raises(ScenarioError):
        simulate_detector(truth, 1.5, rng)


def test_generated_observations_follow_the_model(two_room):
    sc = ScenarioConfig(two_room, ANCHORS, TOA_UWB, max_anchors_used=4)
    rng = np.random.default_rng(1)
    res = [generate_observations(sc, (3, 3), rng) for _ in range(3000)]
    a2 = np.array([[o.z for o in r.entries if o.anchor_id == "A2"][0] for r in res])
    d = np.hypot(16, 2)
    expected = d + bias_mean(TOA_UWB, 1)
    assert abs(a2.mean() - expected) < 4 * a2.std() / np.sqrt(len(a2))
    for r in res[:10]:
        for o in r.entries:
            assert o.z == pytest.approx(np.hypot(*(np.subtract(dict((a.id, a.position) for a in ANCHORS)[o.anchor_id], (3, 3)))) + o.true_bias + o.true_noise)
            assert (o.true_bias == 0) == o.true_los


def test_anchor_subset_cap_and_determinism(two_room):
    sc = ScenarioConfig(two_room, ANCHORS, RSS_169MHZ, max_anchors_used=2, p_e_nlos=0.2)
    a = generate_observations(sc, (5, 5), 9)
    b = generate_observations(sc, (5, 5), 9)
    assert len(a) == 2 and a == b


def test_disconnected_agent_raises(two_room):
    far = [Anchor("A1", (1, 1), d_max=1.0)]
    with pytest.raises(EmptyScenarioError):
        generate_observations(ScenarioConfig(two_room, far, TOA_UWB), (15, 10), 0)


def test_scenario_validation(two_room):
    with pytest.raises(ScenarioError, match="unique"):
        ScenarioConfig(two_room, [Anchor("A", (0, 0)), Anchor("A", (1, 1))], TOA_UWB)
    with pytest.raises(ScenarioError):
        ScenarioConfig(two_room, ANCHORS, TOA_UWB, p_e_nlos=-0.1)
    with pytest.raises(ScenarioError):
        Anchor("A", (0, float("nan")))


def test_bundled_scenarios_load(data_dir):
    for path in sorted(data_dir.glob("*_*.json")):
        doc = json.loads(path.read_text())
        if "anchors" in doc:
            sc = load_scenario(path)
            assert sc.technology.value == doc["technology"]


def test_scenario_technology_mismatch(tmp_path, data_dir):
    doc = json.loads((data_dir / "two_room_rss.json").read_text())
    doc["technology"] = "TOA"
    doc["map"] = str(data_dir / doc["map"])
    doc["params"] = str(data_dir / doc["params"])
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ScenarioError, match="does not match"):
        load_scenario(tmp_path / "s.json")


def test_simulated_database_shape_and_bias_means(two_room):
    sites = [(2, 2), (8, 12), (12, 3), (18, 13), (5, 7.5), (15, 7.5)]
    db = simulate_database(two_room, RSS_169MHZ, sites, 400, np.random.default_rng(2))
    assert len(db) == 15
    assert sum(len(l.readings) for l in db.links) == 15 * 400
    for link in db.links:
        r = link.readings - link.distance
        se = r.std() / np.sqrt(len(r))
        assert abs(r.mean() - bias_mean(RSS_169MHZ, link.n_obstructions)) < 4 * se
