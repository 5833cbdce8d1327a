"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -v``) or directly
(``python3 tests/test_acceptance.py``) for the bare summary lines.
"""

import math
import sys
import tempfile
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from builders import recovered_parameters, round_trip_database  # noqa: E402
from oracles import count_exact, integrate_density  # noqa: E402

from mapaware.cli import run as cli  # noqa: E402
from mapaware.estimators import (  # noqa: E402
    MAP_AWARE,
    MAP_UNAWARE,
    estimate_mapbe,
    estimate_mle,
    likelihood_grid,
)
from mapaware.evaluation import EvalConfig, run_evaluation, sweep_pe  # noqa: E402
from mapaware.fitting import anderson_darling, fit_params  # noqa: E402
from mapaware.geometry import IndoorMap, count_obstructions, rectangle, sample_uniform  # noqa: E402
from mapaware.models import (  # noqa: E402
    RSS_169MHZ,
    TOA_UWB,
    NoiseModel,
    Observation,
    ObservationSet,
    log_likelihood_map_aware,
    log_likelihood_map_unaware,
)
from mapaware.scenario import Anchor, ScenarioConfig, generate_observations, load_scenario  # noqa: E402

DATA = Path(str(resources.files("mapaware") / "data"))
TECHS = (TOA_UWB, RSS_169MHZ)


def _line(k, ok, detail):
    return f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


# 1. obstruction counts vs exact rational oracle ------------------------------

def _random_instance(rng):
    # Half the instances live on a coarse integer lattice, which makes touching,
    # collinear and shared-endpoint configurations common.
    lattice = rng.random() < 0.5
    n_walls = int(rng.integers(1, 9))
    if lattice:
        pts = rng.integers(0, 11, size=(2 * n_walls + 2, 2)).astype(float)
    else:
        pts = rng.uniform(0, 10, size=(2 * n_walls + 2, 2))
    walls = pts[2:].reshape(n_walls, 2, 2)
    walls = walls[np.hypot(*(walls[:, 1] - walls[:, 0]).T) > 0]
    return pts[0], pts[1], walls


def criterion_1():
    rng = np.random.default_rng(2024)
    instances = []
    while len(instances) < 10_000:
        a, b, walls = _random_instance(rng)
        if len(walls):
            instances.append((a, b, walls))
    t0 = time.perf_counter()
    got = [count_obstructions(IndoorMap(rectangle(-1, -1, 11, 11), walls=w), a, b) for a, b, w in instances]
    elapsed = time.perf_counter() - t0
    want = [count_exact(a, b, w.reshape(-1, 4)) for a, b, w in instances]
    mismatches = sum(g != w for g, w in zip(got, want))
    ok = mismatches == 0 and elapsed < 10.0
    return ok, f"10^4 instances, {mismatches} mismatches, {elapsed:.2f} s (< 10 s)"


# 2. single-link likelihood normalization -------------------------------------

def criterion_2():
    # Anchor at x = 1, agent at x = 7: three full-height walls between them.
    imap = IndoorMap(rectangle(0, 0, 20, 10), walls=[[[x, 0], [x, 10]] for x in (2, 4, 6)])
    anchors = [Anchor("A", (1.0, 5.0))]
    positions = {0: (1.0, 1.0), 1: (3.0, 5.0), 3: (7.0, 5.0)}
    worst, rows = 0.0, []
    for params in TECHS:
        for n_o, p in positions.items():
            assert count_obstructions(imap, anchors[0].position, p) == n_o

            def logpdf(z, p=p, params=params):
                obs = ObservationSet((Observation("A", float(z)),))
                return log_likelihood_map_aware(imap, params, anchors, obs, p)

            mode = math.dist(anchors[0].position, p)
            span = 60.0 if params is RSS_169MHZ else 10.0
            mass = integrate_density(logpdf, mode - span, mode + 2 * span, points=(mode,))
            worst = max(worst, abs(mass - 1.0))
            rows.append(f"{params.technology.value}/N_o={n_o}:{mass:.9f}")
    return worst <= 1e-6, f"max |mass - 1| = {worst:.2e} (<= 1e-6); " + " ".join(rows)


# 3. model coincidence on LOS links -------------------------------------------

def criterion_3():
    rng = np.random.default_rng(3)
    imap = IndoorMap(rectangle(0, 0, 30, 30))
    worst = 0.0
    for k in range(1000):
        params = TECHS[k % 2]
        params = replace(params, map_unaware=replace(params.map_unaware, noise=params.noise))
        n = int(rng.integers(3, 7))
        anchors = [Anchor(f"A{i}", tuple(rng.uniform(0, 30, 2))) for i in range(n)]
        p = tuple(rng.uniform(0, 30, 2))
        z = [math.dist(a.position, p) + rng.normal(0, 2) for a in anchors]
        obs = ObservationSet(tuple(Observation(a.id, zi, detected_nlos=False) for a, zi in zip(anchors, z)))
        la = log_likelihood_map_aware(imap, params, anchors, obs, p)
        lu = log_likelihood_map_unaware(params, anchors, obs, p)
        worst = max(worst, abs(la - lu))
    return worst <= 1e-9, f"10^3 scenarios, max |l_aware - l_unaware| = {worst:.2e} (<= 1e-9)"


# 4. fitting round trip -------------------------------------------------------

def criterion_4():
    t0 = time.perf_counter()
    worst, bins_ok, rows = 0.0, True, []
    for params in TECHS:
        db = round_trip_database(params, seed=11, n_readings=200)
        _, t, _ = db.flat()
        populated = np.bincount(t)
        bins_ok &= bool(set(np.nonzero(populated)[0]) == {0, 1, 2, 3, 4} and populated.min() >= 1000)
        report = fit_params(db, params.technology, train_fraction=None, path_loss=params.path_loss)
        got = recovered_parameters(report.params)
        for name, want in recovered_parameters(params).items():
            rel = abs(got[name] - want) / abs(want)
            worst = max(worst, rel)
            rows.append(f"{params.technology.value}.{name}:{rel:.1%}")
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.25 and bins_ok and elapsed < 120
    return ok, (f"worst relative error {worst:.1%} (<= 25%), N_o 0..4 with >= 10^3 readings/bin: {bins_ok}, "
                f"{elapsed:.1f} s (< 120 s); " + " ".join(rows))


# 5. Anderson-Darling calibration --------------------------------------------

def criterion_5():
    rng = np.random.default_rng(5)
    gauss = rng.normal(size=(10_000, 100))
    unif = rng.uniform(size=(10_000, 100))
    rej_g = np.mean([not anderson_darling(x).passed for x in gauss])
    rej_u = np.mean([not anderson_darling(x).passed for x in unif])
    # Informational only: the power against the uniform grows quickly with n.
    rej_u200 = np.mean([not anderson_darling(x).passed for x in rng.uniform(size=(2_000, 200))])
    ok = abs(rej_g - 0.05) <= 0.015 and rej_u > 0.99
    return ok, (f"n=100: Gaussian rejection {rej_g:.2%} (5% +- 1.5%), uniform rejection {rej_u:.2%} (> 99%); "
                f"uniform at n=200 for reference: {rej_u200:.2%}")


# 6. estimator vs exhaustive grid ---------------------------------------------

def criterion_6():
    worst, misses = -math.inf, 0
    for name in ("two_room_toa.json", "two_room_rss.json"):
        sc = load_scenario(DATA / name)
        for s in range(100):
            p = sample_uniform(sc.map, s)
            obs = generate_observations(sc, p, np.random.default_rng(1000 + s))
            for est, mode in ((estimate_mapbe, MAP_AWARE), (estimate_mle, MAP_UNAWARE)):
                res = est(sc.map, sc.params, sc.anchors, obs)
                grid = likelihood_grid(sc.map, sc.params, sc.anchors, obs, mode, 0.1)
                gap = float(np.nanmax(grid.values)) - res.log_value
                worst = max(worst, gap)
                misses += gap > 1e-6
    return misses == 0, f"200 trials x 2 estimators, {misses} below grid max - 1e-6, worst shortfall {worst:.2e}"


# 7. noiseless recovery -------------------------------------------------------

def _noiseless(params):
    unaware = replace(params.map_unaware, noise=NoiseModel(0.0, 0.1))
    if params is RSS_169MHZ:
        unaware = replace(unaware, gamma_b=0.0)
    return replace(params, noise=NoiseModel(0.0, params.noise.beta_n),
                   map_aware=replace(params.map_aware, sigma_b0=0.0), map_unaware=unaware)


def criterion_7():
    rng = np.random.default_rng(7)
    imap = load_scenario(DATA / "two_room_toa.json").map
    anchors = [Anchor("A", (0.5, 0.5)), Anchor("B", (9.5, 1.0)), Anchor("C", (2.0, 14.5))]
    hits, total, worst = 0, 0, 0.0
    for params in TECHS:
        p0 = _noiseless(params)
        sc = ScenarioConfig(imap, anchors, p0)
        for _ in range(100):
            p = (rng.uniform(0.5, 9.5), rng.uniform(0.5, 14.5))  # left room: all links LOS
            obs = generate_observations(sc, p, rng)
            errs = [math.dist(est(imap, p0, anchors, obs).p_hat, p) for est in (estimate_mapbe, estimate_mle)]
            worst = max(worst, *errs)
            hits += max(errs) <= 1e-3
            total += 1
    return hits == total, f"{hits}/{total} trials within 1e-3 m (both estimators), worst {worst:.1e} m"


# 8. RSS trend analogue -------------------------------------------------------

def criterion_8():
    sc = load_scenario(DATA / "office_rss.json")
    t0 = time.perf_counter()
    r1, r3 = sweep_pe(EvalConfig(sc, n_runs=2000, rng_seed=sc.rng_seed), [0.1, 0.3])
    elapsed = time.perf_counter() - t0
    ok = r1.ratio > 1.3 and r3.ratio >= r1.ratio and elapsed < 600
    return ok, (f"P_e=0.1: eps_map {r1.eps_map:.3f} m, eps_ml {r1.eps_ml:.3f} m, ratio {r1.ratio:.3f} (> 1.3); "
                f"P_e=0.3: ratio {r3.ratio:.3f} (>= {r1.ratio:.3f}); {elapsed:.0f} s (< 600 s)")


# 9. TOA trend analogue -------------------------------------------------------

def criterion_9():
    toa = load_scenario(DATA / "office_sites_toa.json")
    rss = load_scenario(DATA / "office_sites_rss.json")
    rt = run_evaluation(EvalConfig(toa, n_runs=2000, rng_seed=toa.rng_seed))
    rr = run_evaluation(EvalConfig(rss, n_runs=2000, rng_seed=rss.rng_seed))
    gap = abs(rt.eps_ml - rt.eps_map)
    ok = gap < 0.3 and rt.eps_map < rr.eps_map
    return ok, (f"TOA eps_map {rt.eps_map:.3f} m, eps_ml {rt.eps_ml:.3f} m, |gap| {gap:.3f} m (< 0.3); "
                f"RSS eps_map {rr.eps_map:.3f} m on the same sites (TOA < RSS: {rt.eps_map < rr.eps_map})")


# 10. CLI determinism ---------------------------------------------------------

def _cli_outputs(root: Path):
    root.mkdir()
    toa, office = str(DATA / "two_room_toa.json"), str(DATA / "office_toa.json")
    commands = [
        ["validate-map", "--map", str(DATA / "office_map.json"), "--out", str(root / "map.json")],
        ["simulate-db", "--scenario", office, "--sites", "16", "--readings", "30", "--seed", "3",
         "--out", str(root / "db.csv")],
        ["fit", "--db", str(root / "db.csv"), "--technology", "toa", "--seed", "3", "--out", str(root / "fit.json")],
        ["localize", "--scenario", toa, "--at", "14", "4", "--seed", "3", "--out", str(root / "loc.json")],
        ["localize", "--scenario", toa, "--at", "14", "4", "--mode", MAP_UNAWARE, "--seed", "3",
         "--out", str(root / "loc_ml.json")],
        ["grid", "--scenario", toa, "--at", "14", "4", "--resolution", "0.5", "--seed", "3",
         "--out", str(root / "grid.csv")],
        ["evaluate", "--scenario", toa, "--pe", "0.1", "--pe", "0.3", "--runs", "5", "--seed", "3",
         "--out", str(root / "eval")],
    ]
    codes = [cli(c) for c in commands]
    files = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return codes, files


def criterion_10():
    with tempfile.TemporaryDirectory() as tmp:
        codes_a, a = _cli_outputs(Path(tmp) / "a")
        codes_b, b = _cli_outputs(Path(tmp) / "b")
    differ = sorted(str(k) for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = all(c == 0 for c in codes_a + codes_b) and not differ and len(a) >= 9
    return ok, f"{len(a)} output files from 6 commands, exit codes {codes_a}, differing: {differ or 'none'}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


SLOW = {6, 8, 9}


@pytest.mark.parametrize("k", [pytest.param(k, id=f"criterion_{k}", marks=[pytest.mark.slow] if k in SLOW else [])
                               for k in range(1, 11)])
def test_criterion(k, capsys):
    ok, detail = CRITERIA[k - 1]()
    with capsys.disabled():
        print("\n" + _line(k, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for k, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        print(_line(k, ok, detail), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
