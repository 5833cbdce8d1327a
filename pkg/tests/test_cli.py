import csv
import json

import pytest

from mapaware.cli import run
from builders import round_trip_database

from mapaware.fitting import read_database, write_database
from mapaware.geometry import IndoorMap, rectangle, save_map
from mapaware.models import TOA_UWB, load_params


def scenario_file(tmp_path, data_dir, anchors, map_name=None, name="sc.json"):
    doc = {
        "map": map_name or str(data_dir / "two_room_map.json"),
        "params": str(data_dir / "toa_uwb.json"),
        "anchors": [{"id": i, "position": list(p), **({"d_max": r} if r else {})} for i, p, r in anchors],
    }
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_validate_map(data_dir, tmp_path, capsys):
    assert run(["validate-map", "--map", str(data_dir / "office_map.json"), "--out", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["n_walls"] == 12
    assert "ok:" in capsys.readouterr().out


def test_missing_file_is_input_error(tmp_path):
    assert run(["validate-map", "--map", str(tmp_path / "nope.json")]) == 2


def test_unknown_option_is_input_error(data_dir):
    assert run(["validate-map", "--map", str(data_dir / "office_map.json"), "--bogus"]) == 2


def test_simulate_db_row_count(data_dir, tmp_path):
    out = tmp_path / "db.csv"
    rc = run(["simulate-db", "--scenario", str(data_dir / "two_room_toa.json"), "--sites", "6",
              "--readings", "7", "--seed", "1", "--out", str(out)])
    assert rc == 0
    rows = list(csv.reader(open(out)))
    db = read_database(out)
    assert len(db) == 6 * 5 // 2
    assert len(rows) - 1 == len(db) * 7


def test_fit_writes_loadable_params(tmp_path, capsys):
    db = tmp_path / "db.csv"
    write_database(round_trip_database(TOA_UWB, seed=2, n_readings=40), db)
    out = tmp_path / "fit.json"
    rc = run(["fit", "--db", str(db), "--technology", "toa", "--all-links", "--seed", "0", "--out", str(out)])
    assert rc == 0
    assert load_params(out).technology.value == "TOA"
    assert "sigma_n0" in capsys.readouterr().out


def test_fit_without_nlos_links_exits_3(data_dir, tmp_path, capsys):
    open_map = tmp_path / "open.json"
    save_map(IndoorMap(rectangle(0, 0, 10, 10)), open_map)
    sc = scenario_file(tmp_path, data_dir, [("A", (1, 1), None)], map_name=str(open_map))
    db = tmp_path / "db.csv"
    assert run(["simulate-db", "--scenario", str(sc), "--sites", "5", "--readings", "10",
                "--seed", "0", "--out", str(db)]) == 0
    capsys.readouterr()
    rc = run(["fit", "--db", str(db), "--technology", "toa", "--all-links", "--seed", "0",
              "--out", str(tmp_path / "p.json")])
    assert rc == 3
    assert "I_p" in capsys.readouterr().err


def test_localize_requires_observations(data_dir):
    assert run(["localize", "--scenario", str(data_dir / "two_room_toa.json"), "--seed", "1"]) == 2


def test_localize_infeasible_region_exits_4(data_dir, tmp_path, capsys):
    sc = scenario_file(tmp_path, data_dir, [("A", (1, 1), 1.0), ("B", (19, 14), 1.0)])
    obs = tmp_path / "obs.csv"
    obs.write_text("anchor_id,z_m,detected_nlos\nA,0.5,0\nB,0.5,0\n")
    rc = run(["localize", "--scenario", str(sc), "--obs", str(obs), "--seed", "0"])
    assert rc == 4
    assert "infeasible" in capsys.readouterr().err


@pytest.mark.parametrize("mode", ["map-aware", "map-unaware"])
def test_localize_reruns_are_byte_identical(data_dir, tmp_path, mode):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        rc = run(["localize", "--scenario", str(data_dir / "two_room_toa.json"), "--at", "5", "7",
                  "--mode", mode, "--seed", "3", "--out", str(out)])
        assert rc == 0
        outs.append((out.read_bytes(), out.with_suffix(".obs.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_localize_from_observation_file(data_dir, tmp_path):
    first = tmp_path / "a.json"
    run(["localize", "--scenario", str(data_dir / "two_room_toa.json"), "--at", "15", "4",
         "--seed", "5", "--out", str(first)])
    second = tmp_path / "b.json"
    rc = run(["localize", "--scenario", str(data_dir / "two_room_toa.json"),
              "--obs", str(first.with_suffix(".obs.csv")), "--seed", "5", "--out", str(second)])
    assert rc == 0
    a, b = json.loads(first.read_text()), json.loads(second.read_text())
    assert (a["x_m"], a["y_m"]) == (b["x_m"], b["y_m"])


def test_grid_export(data_dir, tmp_path):
    out = tmp_path / "g.csv"
    rc = run(["grid", "--scenario", str(data_dir / "two_room_toa.json"), "--at", "5", "7",
              "--resolution", "1.0", "--seed", "1", "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == ["x_m", "y_m", "log_likelihood"]
    assert 0 < len(rows) <= 20 * 15


def test_evaluate_is_deterministic(data_dir, tmp_path):
    dirs = [tmp_path / "e1", tmp_path / "e2"]
    for d in dirs:
        rc = run(["evaluate", "--scenario", str(data_dir / "two_room_toa.json"), "--pe", "0.1",
                  "--pe", "0.3", "--runs", "3", "--seed", "4", "--out", str(d)])
        assert rc == 0
    for name in ("summary.json", "sites_pe0.1.csv", "sites_pe0.3.csv"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    assert len(json.loads((dirs[0] / "summary.json").read_text())["reports"]) == 2
