"""Monte Carlo accuracy evaluation of the map-aware and map-unaware estimators."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .estimators import EstimatorConfig, NoSolutionError, estimate_mapbe, estimate_mle
from .geometry import sample_uniform_many
from .scenario import EmptyScenarioError, ScenarioConfig, generate_observations

UNIFORM_SITE = "R"


class EvaluationError(RuntimeError):
    """No run produced a usable estimate."""


@dataclass(frozen=True)
class EvalConfig:
    scenario: ScenarioConfig
    n_runs: int = 20_000
    p_e_values: tuple = ()
    per_site: bool = True
    rng_seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    threads: int = 1

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        for pe in self.p_e_values:
            if not 0.0 <= pe <= 1.0:
                raise ValueError(f"P_e values must lie in [0, 1], got {pe}")


@dataclass
class SiteStats:
    n_runs: int = 0
    n_map: int = 0
    n_ml: int = 0
    sq_map: list = field(default_factory=list)
    sq_ml: list = field(default_factory=list)
    failures_map: int = 0
    failures_ml: int = 0

    @property
    def rmse_map(self) -> float:
        return _rmse(self.sq_map)

    @property
    def rmse_ml(self) -> float:
        return _rmse(self.sq_ml)

    @property
    def failures(self) -> int:
        return self.failures_map + self.failures_ml


def _rmse(sq) -> float:
    return math.sqrt(math.fsum(sq) / len(sq)) if sq else math.nan


@dataclass(frozen=True)
class EvalReport:
    """Per-site and overall RMSE of both estimators.

    ``eps_map``/``eps_ml`` pool all runs; ``eps_map_site_avg``/``eps_ml_site_avg``
    average the per-site RMSEs with equal site weights.
    """

    p_e_nlos: float
    n_runs: int
    n_disconnected: int
    sites: dict
    eps_map: float
    eps_ml: float
    eps_map_site_avg: float
    eps_ml_site_avg: float
    failures_map: int
    failures_ml: int
    mean_evals_map: float
    mean_evals_ml: float
    mean_intersection_tests_map: float

    @property
    def per_site_rmse_map(self) -> dict:
        return {s: st.rmse_map for s, st in self.sites.items()}

    @property
    def per_site_rmse_ml(self) -> dict:
        return {s: st.rmse_ml for s, st in self.sites.items()}

    @property
    def ratio(self) -> float | None:
        return self.eps_ml / self.eps_map if self.eps_map > 0 else None

    def summary(self) -> dict:
        return {
            "p_e_nlos": self.p_e_nlos,
            "n_runs": self.n_runs,
            "n_disconnected": self.n_disconnected,
            "eps_map_m": self.eps_map,
            "eps_ml_m": self.eps_ml,
            "eps_map_site_avg_m": self.eps_map_site_avg,
            "eps_ml_site_avg_m": self.eps_ml_site_avg,
            "ratio_ml_over_map": self.ratio,
            "failures_map": self.failures_map,
            "failures_ml": self.failures_ml,
            "mean_likelihood_evals_map": self.mean_evals_map,
            "mean_likelihood_evals_ml": self.mean_evals_ml,
            "mean_intersection_tests_map": self.mean_intersection_tests_map,
        }


@dataclass(frozen=True)
class _Run:
    site: str
    err_map: float | None
    err_ml: float | None
    evals_map: int
    evals_ml: int
    tests_map: int


def _site_labels(scenario: ScenarioConfig):
    return [f"S{k + 1}" for k in range(len(scenario.sites))]


def _one_run(scenario: ScenarioConfig, est_cfg: EstimatorConfig, seed: int, k: int):
    rng = np.random.default_rng([seed, k])
    if scenario.sites:
        j = int(rng.integers(len(scenario.sites)))
        site, p = f"S{j + 1}", scenario.sites[j]
    else:
        site = UNIFORM_SITE
        p = tuple(sample_uniform_many(scenario.map, 1, rng)[0])
    own = [a for a in scenario.anchors if a.position[0] == p[0] and a.position[1] == p[1]]
    if own:
        # A site reused as a virtual anchor does not range with itself.
        keep = tuple(a for a in scenario.anchors if a not in own)
        if not keep:
            return None
        scenario = replace(scenario, anchors=keep)
    try:
        obs = generate_observations(scenario, p, rng)
    except EmptyScenarioError:
        return None
    cfg = replace(est_cfg, seed=int(rng.integers(2**31)))
    out = {}
    for name, est in (("map", estimate_mapbe), ("ml", estimate_mle)):
        try:
            r = est(scenario.map, scenario.params, scenario.anchors, obs, cfg)
        except NoSolutionError:
            out[name] = (None, 0, 0)
            continue
        err = (r.p_hat.x - p[0]) ** 2 + (r.p_hat.y - p[1]) ** 2
        out[name] = (err, r.n_likelihood_evals, r.n_intersection_tests)
    return _Run(site, out["map"][0], out["ml"][0], out["map"][1], out["ml"][1], out["map"][2])


def run_evaluation(cfg: EvalConfig) -> EvalReport:
    """Draw ``n_runs`` agent sites and observation sets, localize with both estimators.

    Run ``k`` uses the random stream seeded by ``(rng_seed, k)``, so results do
    not depend on the thread count and longer evaluations extend shorter ones.
    """
    sc = cfg.scenario

    def job(k):
        return _one_run(sc, cfg.estimator, cfg.rng_seed, k)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            runs = list(pool.map(job, range(cfg.n_runs)))
    else:
        runs = [job(k) for k in range(cfg.n_runs)]
    return _aggregate(sc, cfg, runs)


def _aggregate(sc: ScenarioConfig, cfg: EvalConfig, runs) -> EvalReport:
    labels = _site_labels(sc) if sc.sites else [UNIFORM_SITE]
    sites = {s: SiteStats() for s in labels}
    n_disc = 0
    evals_map, evals_ml, tests_map = [], [], []
    for r in runs:
        if r is None:
            n_disc += 1
            continue
        st = sites[r.site]
        st.n_runs += 1
        if r.err_map is None:
            st.failures_map += 1
        else:
            st.sq_map.append(r.err_map)
            st.n_map += 1
            evals_map.append(r.evals_map)
            tests_map.append(r.tests_map)
        if r.err_ml is None:
            st.failures_ml += 1
        else:
            st.sq_ml.append(r.err_ml)
            st.n_ml += 1
            evals_ml.append(r.evals_ml)
    if not evals_map and not evals_ml:
        raise EvaluationError(
            f"no usable run out of {cfg.n_runs} ({n_disc} without connected anchors)"
        )
    if not cfg.per_site:
        merged = SiteStats()
        for st in sites.values():
            merged.n_runs += st.n_runs
            merged.n_map += st.n_map
            merged.n_ml += st.n_ml
            merged.sq_map += st.sq_map
            merged.sq_ml += st.sq_ml
            merged.failures_map += st.failures_map
            merged.failures_ml += st.failures_ml
        sites = {UNIFORM_SITE: merged}
    sites = {s: st for s, st in sites.items() if st.n_runs > 0}
    all_map = [e for st in sites.values() for e in st.sq_map]
    all_ml = [e for st in sites.values() for e in st.sq_ml]

    def site_avg(attr):
        vals = [getattr(st, attr) for st in sites.values()]
        vals = [v for v in vals if not math.isnan(v)]
        return math.fsum(vals) / len(vals) if vals else math.nan

    def mean(v):
        return math.fsum(v) / len(v) if v else math.nan

    return EvalReport(
        p_e_nlos=sc.p_e_nlos,
        n_runs=cfg.n_runs,
        n_disconnected=n_disc,
        sites=sites,
        eps_map=_rmse(all_map),
        eps_ml=_rmse(all_ml),
        eps_map_site_avg=site_avg("rmse_map"),
        eps_ml_site_avg=site_avg("rmse_ml"),
        failures_map=sum(st.failures_map for st in sites.values()),
        failures_ml=sum(st.failures_ml for st in sites.values()),
        mean_evals_map=mean(evals_map),
        mean_evals_ml=mean(evals_ml),
        mean_intersection_tests_map=mean(tests_map),
    )


def sweep_pe(cfg: EvalConfig, pe_values=None) -> list:
    """One evaluation per detector error probability, all with the same seed."""
    values = cfg.p_e_values if pe_values is None else pe_values
    reports = []
    for pe in values:
        if not 0.0 <= pe <= 1.0:
            raise ValueError(f"P_e values must lie in [0, 1], got {pe}")
        sc = replace(cfg.scenario, p_e_nlos=float(pe))
        reports.append(run_evaluation(replace(cfg, scenario=sc)))
    return reports


def write_site_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "rmse_map_m", "rmse_ml_m", "n_runs", "failures"])
        for s, st in report.sites.items():
            w.writerow([s, repr(st.rmse_map), repr(st.rmse_ml), st.n_runs, st.failures])


def write_summary_json(reports, path) -> None:
    if isinstance(reports, EvalReport):
        reports = [reports]
    doc = {"reports": [r.summary() for r in reports]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
