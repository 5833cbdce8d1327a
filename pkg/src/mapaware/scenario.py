"""Synthetic localization scenarios: anchors, connectivity and observation draws."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import IndoorMap, MapError, load_map
from .models import (
    ModelParams,
    Observation,
    ObservationSet,
    ParamsError,
    Technology,
    bias_mean,
    bias_std,
    load_params,
)


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


class EmptyScenarioError(RuntimeError):
    """The agent is not connected to any anchor."""


@dataclass(frozen=True)
class Anchor:
    id: str
    position: tuple
    d_max: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 2 or not all(math.isfinite(c) for c in pos):
            raise ScenarioError(f"anchor {self.id!r}: position must be two finite numbers")
        object.__setattr__(self, "position", pos)
        d_max = math.inf if self.d_max is None else float(self.d_max)
        if not d_max > 0:
            raise ScenarioError(f"anchor {self.id!r}: d_max must be > 0")
        object.__setattr__(self, "d_max", d_max)


@dataclass(frozen=True)
class ScenarioConfig:
    map: IndoorMap
    anchors: tuple
    params: ModelParams
    p_e_nlos: float = 0.0
    max_anchors_used: int = 5
    rng_seed: int | None = None
    sites: tuple = ()

    def __post_init__(self):
        anchors = tuple(self.anchors)
        ids = [a.id for a in anchors]
        if len(set(ids)) != len(ids):
            raise ScenarioError("anchor ids must be unique")
        if not anchors:
            raise ScenarioError("scenario has no anchors")
        if not 0.0 <= self.p_e_nlos <= 1.0:
            raise ScenarioError(f"p_e_nlos must lie in [0, 1], got {self.p_e_nlos}")
        if self.max_anchors_used < 1:
            raise ScenarioError("max_anchors_used must be >= 1")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "sites", tuple(tuple(map(float, s)) for s in self.sites))

    @property
    def technology(self) -> Technology:
        return self.params.technology

    @property
    def anchor_map(self) -> dict:
        return {a.id: a for a in self.anchors}


@dataclass(frozen=True)
class ConnectivitySets:
    """Connected anchors, their true LOS/NLOS split and the detector's split.

    When built by :func:`connectivity` the detected split equals the truth
    (an error-free detector); :func:`simulate_detector` replaces it.
    """

    connected: frozenset
    los: frozenset
    nlos: frozenset
    detected_los: frozenset = field(default=None)
    detected_nlos: frozenset = field(default=None)

    def __post_init__(self):
        if self.detected_los is None:
            object.__setattr__(self, "detected_los", self.los)
        if self.detected_nlos is None:
            object.__setattr__(self, "detected_nlos", self.nlos)


def connectivity(imap: IndoorMap, anchors, p) -> ConnectivitySets:
    """Anchors in range of ``p`` and the LOS/NLOS split by wall crossings."""
    anchors = list(anchors)
    pt = np.asarray(p, dtype=float).reshape(1, 2)
    xy = np.array([a.position for a in anchors], dtype=float).reshape(-1, 2)
    dist = np.hypot(xy[:, 0] - pt[0, 0], xy[:, 1] - pt[0, 1])
    in_range = [a for a, d in zip(anchors, dist) if d <= a.d_max]
    if not in_range:
        empty = frozenset()
        return ConnectivitySets(empty, empty, empty)
    counts = imap.obstruction_counts(pt, np.array([a.position for a in in_range]))[0]
    los = frozenset(a.id for a, c in zip(in_range, counts) if c == 0)
    nlos = frozenset(a.id for a, c in zip(in_range, counts) if c > 0)
    return ConnectivitySets(los | nlos, los, nlos)


def region_mask(imap: IndoorMap, anchor_xy, d_max, points, map_aware: bool) -> np.ndarray:
    """Vectorized membership of ``points`` in the search region.

    The region is the intersection of the anchors' coverage discs with R
    (``map_aware``) or with the bounding box of R.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    anchor_xy = np.asarray(anchor_xy, dtype=float).reshape(-1, 2)
    d_max = np.asarray(d_max, dtype=float)
    ok = np.ones(len(points), dtype=bool)
    finite = np.isfinite(d_max)
    if finite.any():
        diff = points[:, None, :] - anchor_xy[None, finite, :]
        ok &= (np.hypot(diff[..., 0], diff[..., 1]) <= d_max[finite]).all(axis=1)
    x0, y0, x1, y1 = imap.bbox
    ok &= (points[:, 0] >= x0) & (points[:, 0] <= x1) & (points[:, 1] >= y0) & (points[:, 1] <= y1)
    if map_aware and ok.any():
        idx = np.flatnonzero(ok)
        ok[idx] = imap.contains_many(points[idx])
    return ok


def search_region_membership(imap: IndoorMap, anchors, sets: ConnectivitySets, q, map_aware: bool) -> bool:
    if not sets.connected:
        raise EmptyScenarioError("search region is undefined without connected anchors")
    amap = anchors if isinstance(anchors, dict) else {a.id: a for a in anchors}
    chosen = [amap[i] for i in sorted(sets.connected)]
    xy = [a.position for a in chosen]
    dm = [a.d_max for a in chosen]
    return bool(region_mask(imap, xy, dm, np.asarray(q, dtype=float), map_aware)[0])


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def simulate_detector(truth: ConnectivitySets, p_e_nlos: float, rng) -> ConnectivitySets:
    """Flip each link's LOS/NLOS label independently with probability ``p_e_nlos``."""
    if not 0.0 <= p_e_nlos <= 1.0:
        raise ScenarioError(f"p_e_nlos must lie in [0, 1], got {p_e_nlos}")
    rng = _rng(rng)
    ids = sorted(truth.connected)
    flips = rng.random(len(ids)) < p_e_nlos
    det_nlos = frozenset(
        i for i, f in zip(ids, flips) if (i in truth.nlos) != bool(f)
    )
    return ConnectivitySets(
        truth.connected, truth.los, truth.nlos, truth.connected - det_nlos, det_nlos
    )


def generate_observations(cfg: ScenarioConfig, p, rng=None) -> ObservationSet:
    """Draw one range per selected connected anchor from the map-aware model.

    Up to ``cfg.max_anchors_used`` connected anchors are chosen at random;
    each observation is ``d + b + n`` with a Gaussian bias on truly NLOS
    links and distance-dependent Gaussian noise. Detector labels are then
    drawn with error probability ``cfg.p_e_nlos``.
    """
    rng = _rng(cfg.rng_seed if rng is None else rng)
    truth = connectivity(cfg.map, cfg.anchors, p)
    if not truth.connected:
        raise EmptyScenarioError(f"no anchor is connected at position {tuple(p)}")
    chosen = [a for a in cfg.anchors if a.id in truth.connected]
    if len(chosen) > cfg.max_anchors_used:
        pick = np.sort(rng.choice(len(chosen), size=cfg.max_anchors_used, replace=False))
        chosen = [chosen[k] for k in pick]

    pt = np.asarray(p, dtype=float).reshape(1, 2)
    xy = np.array([a.position for a in chosen])
    d = np.hypot(xy[:, 0] - pt[0, 0], xy[:, 1] - pt[0, 1])
    counts = cfg.map.obstruction_counts(pt, xy)[0]
    params = cfg.params
    bias = rng.normal(bias_mean(params, counts), bias_std(params, counts))
    bias = np.where(counts > 0, bias, 0.0)
    noise = rng.normal(0.0, params.noise.std(d))
    z = d + bias + noise

    # detector errors drawn in anchor order, so relabelling anchors changes nothing
    flips = rng.random(len(chosen)) < cfg.p_e_nlos
    detected_nlos = [(c > 0) != bool(f) for c, f in zip(counts, flips)]
    return ObservationSet(
        tuple(
            Observation(
                anchor_id=a.id,
                z=float(zi),
                detected_nlos=dn,
                true_los=bool(c == 0),
                true_bias=float(b),
                true_noise=float(n),
            )
            for a, zi, c, b, n, dn in zip(chosen, z, counts, bias, noise, detected_nlos)
        )
    )


# -- configuration files ----------------------------------------------------
def scenario_from_dict(doc: dict, base_dir=".", imap: IndoorMap | None = None,
                       params: ModelParams | None = None) -> ScenarioConfig:
    base = Path(base_dir)
    try:
        if imap is None:
            imap = load_map(base / doc["map"])
        if params is None:
            params = load_params(base / doc["params"])
        anchors = tuple(
            Anchor(a["id"], a["position"], a.get("d_max")) for a in doc["anchors"]
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario document is missing {exc}") from exc
    except (OSError, MapError, ParamsError) as exc:
        raise ScenarioError(str(exc)) from exc
    tech = doc.get("technology")
    if tech is not None and Technology(tech) is not params.technology:
        raise ScenarioError(
            f"scenario technology {tech} does not match parameter file ({params.technology.value})"
        )
    return ScenarioConfig(
        map=imap,
        anchors=anchors,
        params=params,
        p_e_nlos=float(doc.get("p_e_nlos", 0.0)),
        max_anchors_used=int(doc.get("max_anchors_used", 5)),
        rng_seed=doc.get("seed"),
        sites=tuple(doc.get("sites", ())),
    )


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc, base_dir=path.parent)


def simulate_database(imap: IndoorMap, params: ModelParams, sites, n_readings: int, rng=None,
                      d_max: float = math.inf):
    """Synthetic measurement database over all site pairs within ``d_max``.

    Every reading gets independent bias and noise draws from the map-aware
    model. ``sites`` is a sequence of positions or a mapping id -> position.
    """
    from .fitting import Link, MeasurementDatabase

    rng = _rng(rng)
    if not isinstance(sites, dict):
        sites = {f"S{k + 1}": tuple(map(float, s)) for k, s in enumerate(sites)}
    ids = list(sites)
    xy = np.array([sites[s] for s in ids], dtype=float)
    counts = imap.obstruction_counts(xy, xy)
    links = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            d = float(np.hypot(*(xy[a] - xy[b])))
            if not (0 < d <= d_max):
                continue
            n_o = int(counts[a, b])
            bias = rng.normal(bias_mean(params, n_o), bias_std(params, n_o), n_readings)
            if n_o == 0:
                bias = np.zeros(n_readings)
            noise = rng.normal(0.0, float(params.noise.std(d)), n_readings)
            links.append(Link(ids[a], ids[b], n_o, d, d + bias + noise))
    return MeasurementDatabase(tuple(links), dict(sites))
