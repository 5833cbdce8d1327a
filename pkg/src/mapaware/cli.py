"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 degenerate fit, 4 infeasible
search region. Set ``MAPAWARE_LOG`` (DEBUG, INFO, WARNING, ...) for
verbosity. Every command takes ``--seed``; without it a random seed is
drawn and logged.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import estimators as est
from . import evaluation as ev
from .fitting import FitError, fit_params, read_database, write_database
from .geometry import MapError, load_map, sample_uniform_many
from .models import ParamsError, Technology, load_params, read_observations, save_params, write_observations
from .scenario import (
    EmptyScenarioError,
    ScenarioError,
    generate_observations,
    load_scenario,
    simulate_database,
)

log = logging.getLogger("mapaware")

EXIT_INPUT = 2
EXIT_FIT = 3
EXIT_INFEASIBLE = 4


class _Exit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _guard(fn):
    """Translate library errors into the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FitError as exc:
            raise _Exit(EXIT_FIT, f"fit failed: {exc}") from exc
        except (est.NoSolutionError, ev.EvaluationError, EmptyScenarioError) as exc:
            raise _Exit(EXIT_INFEASIBLE, f"infeasible: {exc}") from exc
        except (MapError, ParamsError, ScenarioError, est.EstimatorError, OSError, KeyError, ValueError) as exc:
            raise _Exit(EXIT_INPUT, f"invalid input: {exc}") from exc

    return wrapper


def _seed(seed):
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**32))
        log.warning("no --seed given; using seed %d", seed)
    return seed


def _scenario(path, map_path=None, params_path=None, pe=None):
    sc = load_scenario(path)
    if map_path:
        sc = replace(sc, map=load_map(map_path))
    if params_path:
        sc = replace(sc, params=load_params(params_path))
    if pe is not None:
        sc = replace(sc, p_e_nlos=float(pe))
    return sc


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@click.group()
def main():
    """Map-aware indoor localization: fitting, estimation and evaluation."""
    level = os.environ.get("MAPAWARE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command("validate-map")
@click.option("--map", "map_path", required=True, type=click.Path())
@click.option("--out", type=click.Path(), help="Optional JSON summary.")
@_guard
def validate_map(map_path, out):
    """Parse and validate a map file."""
    imap = load_map(map_path)
    doc = {"area_m2": imap.area, "bbox": list(imap.bbox), "n_walls": imap.n_walls,
           "n_holes": len(imap.holes)}
    click.echo(f"ok: area {imap.area:.3f} m^2, {imap.n_walls} walls, {len(imap.holes)} holes")
    if out:
        _write_json(out, doc)


@main.command("simulate-db")
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--map", "map_path", type=click.Path())
@click.option("--params", "params_path", type=click.Path())
@click.option("--sites", "n_sites", default=20, show_default=True, type=click.IntRange(min=2))
@click.option("--readings", "n_readings", default=100, show_default=True, type=click.IntRange(min=1))
@click.option("--max-link", default=float("inf"), type=float, help="Longest measured link, m.")
@click.option("--seed", type=int)
@click.option("--out", required=True, type=click.Path())
@_guard
def simulate_db(scenario_path, map_path, params_path, n_sites, n_readings, max_link, seed, out):
    """Synthesize a measurement database from the scenario's map-aware model."""
    sc = _scenario(scenario_path, map_path, params_path)
    rng = np.random.default_rng(_seed(seed))
    sites = sample_uniform_many(sc.map, n_sites, rng)
    db = simulate_database(sc.map, sc.params, np.round(sites, 6), n_readings, rng, max_link)
    write_database(db, out)
    click.echo(f"wrote {len(db)} links x {n_readings} readings to {out}")


@main.command("fit")
@click.option("--db", "db_path", required=True, type=click.Path())
@click.option("--technology", required=True, type=click.Choice(["toa", "rss"], case_sensitive=False))
@click.option("--map", "map_path", type=click.Path(), help="Map the database was measured on (validated).")
@click.option("--train-fraction", default=0.25, show_default=True, type=float)
@click.option("--all-links", is_flag=True, help="Fit on the whole database (no validation split).")
@click.option("--bin-size", default=2.0, show_default=True, type=float)
@click.option("--significance", default=0.05, show_default=True, type=float)
@click.option("--seed", type=int)
@click.option("--out", required=True, type=click.Path())
@_guard
def fit(db_path, technology, map_path, train_fraction, all_links, bin_size, significance, seed, out):
    """Fit map-aware and map-unaware model parameters to a measurement database."""
    if map_path:
        load_map(map_path)
    db = read_database(db_path)
    tech = Technology(technology.upper())
    path_loss = None
    if tech is Technology.RSS:
        from .models import RSS_169MHZ

        path_loss = RSS_169MHZ.path_loss
    report = fit_params(
        db, tech, train_fraction=None if all_links else train_fraction, rng=_seed(seed),
        delta=bin_size, path_loss=path_loss, significance=significance,
    )
    for k, res in sorted(report.ad.items()):
        if res is not None and not res.passed:
            click.echo(f"warning: obstruction bin {k} fails the normality test "
                       f"(A2* = {res.a2_star:.3f} > {res.threshold:.3f})", err=True)
    save_params(report.params, out)
    doc = report.params.to_dict()
    for block in ("map_aware", "noise"):
        for name, value in doc[block].items():
            click.echo(f"{block:>12s}.{name:<10s} {value:.6g}")
    unaware = doc["map_unaware"]
    for name, value in unaware.items():
        if name != "noise":
            click.echo(f"{'map_unaware':>12s}.{name:<10s} {value:.6g}")
    for name, value in unaware["noise"].items():
        click.echo(f"{'unaware_noise':>12s}.{name:<10s} {value:.6g}")


def _observations(sc, obs_path, at, seed):
    if obs_path and at:
        raise click.UsageError("give either --obs or --at, not both")
    if obs_path:
        return read_observations(obs_path), None
    if not at:
        raise click.UsageError("one of --obs or --at is required")
    rng = np.random.default_rng(_seed(seed))
    return generate_observations(sc, at, rng), tuple(at)


def _estimator_cfg(seed):
    return est.EstimatorConfig(seed=0 if seed is None else seed)


@main.command("localize")
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--map", "map_path", type=click.Path())
@click.option("--params", "params_path", type=click.Path())
@click.option("--obs", "obs_path", type=click.Path(), help="Observation CSV.")
@click.option("--at", nargs=2, type=float, help="Simulate observations at this true position.")
@click.option("--mode", type=click.Choice(est.MODES), default=est.MAP_AWARE, show_default=True)
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(), help="JSON result file.")
@_guard
def localize(scenario_path, map_path, params_path, obs_path, at, mode, seed, out):
    """Estimate the agent position from one observation set."""
    sc = _scenario(scenario_path, map_path, params_path)
    seed = _seed(seed)
    obs, truth = _observations(sc, obs_path, at, seed)
    fn = est.estimate_mapbe if mode == est.MAP_AWARE else est.estimate_mle
    try:
        res = fn(sc.map, sc.params, sc.anchors, obs, _estimator_cfg(seed))
    except est.NoSolutionError as exc:
        ids = ", ".join(obs.anchor_ids)
        raise _Exit(EXIT_INFEASIBLE,
                    f"infeasible: {exc} (anchors {ids}, map bbox {sc.map.bbox})") from exc
    click.echo(f"p_hat = ({res.p_hat.x:.4f}, {res.p_hat.y:.4f}) m  log value {res.log_value:.6g}  "
               f"N_eval {res.n_likelihood_evals}")
    if out:
        extra = {"mode": mode}
        if truth is not None:
            extra["true_x_m"], extra["true_y_m"] = truth
            obs_out = Path(out).with_suffix(".obs.csv")
            write_observations(obs, obs_out)
        est.write_result_json(res, out, extra)


@main.command("grid")
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--map", "map_path", type=click.Path())
@click.option("--params", "params_path", type=click.Path())
@click.option("--obs", "obs_path", type=click.Path())
@click.option("--at", nargs=2, type=float)
@click.option("--mode", type=click.Choice(est.MODES), default=est.MAP_AWARE, show_default=True)
@click.option("--resolution", default=0.1, show_default=True, type=float)
@click.option("--seed", type=int)
@click.option("--out", required=True, type=click.Path())
@_guard
def grid(scenario_path, map_path, params_path, obs_path, at, mode, resolution, seed, out):
    """Export the log-likelihood over the map as x_m,y_m,log_likelihood CSV."""
    sc = _scenario(scenario_path, map_path, params_path)
    obs, _ = _observations(sc, obs_path, at, seed)
    g = est.likelihood_grid(sc.map, sc.params, sc.anchors, obs, mode, resolution)
    g.write_csv(out)
    click.echo(f"wrote {int(g.present.sum())} cells ({len(g.x)} x {len(g.y)} raster) to {out}")


@main.command("evaluate")
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--map", "map_path", type=click.Path())
@click.option("--params", "params_path", type=click.Path())
@click.option("--pe", multiple=True, type=float, help="Detector error probability; repeatable.")
@click.option("--runs", default=20_000, show_default=True, type=click.IntRange(min=1))
@click.option("--threads", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", type=int)
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@_guard
def evaluate(scenario_path, map_path, params_path, pe, runs, threads, seed, out):
    """Monte Carlo RMSE comparison of the map-aware and map-unaware estimators."""
    sc = _scenario(scenario_path, map_path, params_path)
    seed = _seed(seed)
    cfg = ev.EvalConfig(sc, n_runs=runs, rng_seed=seed, threads=threads,
                        estimator=est.EstimatorConfig(seed=seed))
    reports = ev.sweep_pe(cfg, list(pe) if pe else [sc.p_e_nlos])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        ev.write_site_csv(r, out / f"sites_pe{r.p_e_nlos:g}.csv")
        ratio = "n/a" if r.ratio is None else f"{r.ratio:.3f}"
        click.echo(f"P_e={r.p_e_nlos:g}: eps_map {r.eps_map:.3f} m  eps_ml {r.eps_ml:.3f} m  "
                   f"ratio {ratio}  failures {r.failures_map}/{r.failures_ml}")
    ev.write_summary_json(reports, out / "summary.json")


def run(argv=None) -> int:
    """Entry point returning the exit code instead of exiting."""
    try:
        main.main(args=argv, standalone_mode=False)
    except _Exit as exc:
        click.echo(str(exc), err=True)
        return exc.code
    except click.exceptions.NoSuchOption as exc:
        exc.show()
        return EXIT_INPUT
    except click.ClickException as exc:
        exc.show()
        return EXIT_INPUT
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    return 0


def entry():
    sys.exit(run())
