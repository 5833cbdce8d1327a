"""Range mappings, NLOS bias and noise laws, and observation likelihoods.

All range quantities are in metres. ``ModelParams`` bundles both the
map-aware model (bias driven by the number of crossed walls) and the
map-unaware model (bias driven by a LOS/NLOS detector) for one technology.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import IndoorMap

C0 = 299_792_458.0  # m/s
LOG_2PI = math.log(2.0 * math.pi)

# mixture softening of the exponential NLOS term
MIX_EXP_WEIGHT = 0.8
MIX_GAUSS_WEIGHT = 0.2
MIX_VAR_DIVISOR = 100.0


class Technology(str, Enum):
    TOA = "TOA"
    RSS = "RSS"


class ParamsError(ValueError):
    """Invalid or inconsistent model parameters."""


class DegenerateVarianceError(ValueError):
    """A link has zero total variance, so its Gaussian density is undefined."""


class UnsupportedMappingError(ValueError):
    """Requested range mapping is not defined for this path-loss variant."""


def _check_nonneg(**values):
    for name, v in values.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ParamsError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class NoiseModel:
    """Noise standard deviation ``sigma_n0 * (d / d0) ** beta_n``."""

    sigma_n0: float
    beta_n: float
    d0: float = 1.0

    def __post_init__(self):
        _check_nonneg(sigma_n0=self.sigma_n0)
        if not (self.d0 > 0):
            raise ParamsError(f"d0 must be > 0, got {self.d0}")
        if not math.isfinite(self.beta_n):
            raise ParamsError("beta_n must be finite")

    def std(self, d):
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore"):
            return self.sigma_n0 * np.power(d / self.d0, self.beta_n)


@dataclass(frozen=True)
class ToaBias:
    t_w: float
    eps_r_w: float
    sigma_b0: float
    beta_b: float

    def __post_init__(self):
        _check_nonneg(t_w=self.t_w, sigma_b0=self.sigma_b0)
        if not self.eps_r_w >= 1:
            raise ParamsError(f"eps_r_w must be >= 1, got {self.eps_r_w}")

    @property
    def delay_per_wall(self) -> float:
        return self.t_w * math.sqrt(self.eps_r_w - 1.0)


@dataclass(frozen=True)
class RssBias:
    mu_b0: float
    mu_bm: float
    sigma_b0: float
    sigma_bm: float

    def __post_init__(self):
        _check_nonneg(sigma_b0=self.sigma_b0, sigma_bm=self.sigma_bm)


@dataclass(frozen=True)
class ToaUnaware:
    nu_b: float
    noise: NoiseModel

    def __post_init__(self):
        if not self.nu_b > 0:
            raise ParamsError(f"nu_b must be > 0, got {self.nu_b}")


@dataclass(frozen=True)
class RssUnaware:
    kappa_b: float
    gamma_b: float
    noise: NoiseModel

    def __post_init__(self):
        _check_nonneg(gamma_b=self.gamma_b)


@dataclass(frozen=True)
class PathLossModel:
    """LOS received power versus distance.

    ``variant="linear"`` stores the slope as dP/dz in dB/m (negative for a
    decaying signal); ``variant="log_distance"`` uses ``P0``, ``eta``, ``d0``.
    """

    variant: str
    P0: float
    slope: float | None = None
    eta: float | None = None
    d0: float | None = None

    def __post_init__(self):
        if self.variant == "linear":
            if self.slope is None or self.slope == 0:
                raise ParamsError("linear path-loss model needs a non-zero slope")
        elif self.variant == "log_distance":
            if self.eta is None or self.d0 is None or not self.d0 > 0:
                raise ParamsError("log-distance path-loss model needs eta and d0 > 0")
        else:
            raise ParamsError(f"unknown path-loss variant {self.variant!r}")


@dataclass(frozen=True)
class ModelParams:
    technology: Technology
    map_aware: ToaBias | RssBias
    noise: NoiseModel
    map_unaware: ToaUnaware | RssUnaware
    path_loss: PathLossModel | None = None

    def __post_init__(self):
        tech = Technology(self.technology)
        object.__setattr__(self, "technology", tech)
        want = (ToaBias, ToaUnaware) if tech is Technology.TOA else (RssBias, RssUnaware)
        if not isinstance(self.map_aware, want[0]) or not isinstance(self.map_unaware, want[1]):
            raise ParamsError(f"bias parameter blocks do not match technology {tech.value}")

    def noise_for(self, map_aware: bool) -> NoiseModel:
        return self.noise if map_aware else self.map_unaware.noise

    def is_noiseless(self, map_aware: bool = True) -> bool:
        """True when every link of the chosen model has zero variance."""
        if map_aware:
            return self.noise.sigma_n0 == 0 and self.map_aware.sigma_b0 == 0
        if self.technology is Technology.RSS and self.map_unaware.gamma_b > 0:
            return False
        return self.map_unaware.noise.sigma_n0 == 0

    def with_noise(self, noise: NoiseModel) -> "ModelParams":
        return replace(self, noise=noise)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        unaware = asdict(self.map_unaware)
        doc = {
            "technology": self.technology.value,
            "map_aware": asdict(self.map_aware),
            "noise": asdict(self.noise),
            "map_unaware": unaware,
        }
        if self.path_loss is not None:
            doc["path_loss"] = {k: v for k, v in asdict(self.path_loss).items() if v is not None}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        try:
            tech = Technology(doc["technology"])
            noise = NoiseModel(**doc["noise"])
            mu = dict(doc["map_unaware"])
            mu_noise = NoiseModel(**mu.pop("noise"))
            if tech is Technology.TOA:
                aware = ToaBias(**doc["map_aware"])
                unaware = ToaUnaware(noise=mu_noise, **mu)
            else:
                aware = RssBias(**doc["map_aware"])
                unaware = RssUnaware(noise=mu_noise, **mu)
            path_loss = PathLossModel(**doc["path_loss"]) if doc.get("path_loss") else None
        except (KeyError, TypeError) as exc:
            raise ParamsError(f"malformed parameter document: {exc}") from exc
        return cls(tech, aware, noise, unaware, path_loss)


def load_params(path) -> ModelParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParamsError(f"{path}: not valid JSON ({exc})") from exc
    return ModelParams.from_dict(doc)


def save_params(params: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


# Fitted values for UWB TOA and 169 MHz RSS; d0 = 1 m.
TOA_UWB = ModelParams(
    Technology.TOA,
    map_aware=ToaBias(t_w=0.35, eps_r_w=5.12, sigma_b0=0.31, beta_b=1.14),
    noise=NoiseModel(sigma_n0=0.19, beta_n=0.18, d0=1.0),
    map_unaware=ToaUnaware(nu_b=1.58, noise=NoiseModel(sigma_n0=0.12, beta_n=0.1, d0=1.0)),
)
RSS_169MHZ = ModelParams(
    Technology.RSS,
    map_aware=RssBias(mu_b0=12.6, mu_bm=2.53, sigma_b0=7.07, sigma_bm=3.0),
    noise=NoiseModel(sigma_n0=2.47, beta_n=0.21, d0=1.0),
    map_unaware=RssUnaware(
        kappa_b=21.0, gamma_b=2.81, noise=NoiseModel(sigma_n0=4.47, beta_n=0.19, d0=1.0)
    ),
    path_loss=PathLossModel("linear", P0=-35.4, slope=-0.79),
)
REFERENCE_PARAMS = {Technology.TOA: TOA_UWB, Technology.RSS: RSS_169MHZ}


# -- observations ------------------------------------------------------
@dataclass(frozen=True)
class Observation:
    anchor_id: str
    z: float
    detected_nlos: bool = False
    true_los: bool | None = None
    true_bias: float | None = None
    true_noise: float | None = None


@dataclass(frozen=True)
class ObservationSet:
    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        ids = [e.anchor_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("anchor ids in an observation set must be unique")
        for e in entries:
            if not math.isfinite(e.z):
                raise ValueError(f"observation for anchor {e.anchor_id!r} is not finite")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def anchor_ids(self) -> list[str]:
        return [e.anchor_id for e in self.entries]

    @property
    def z(self) -> np.ndarray:
        return np.array([e.z for e in self.entries], dtype=float)

    @property
    def nlos_mask(self) -> np.ndarray:
        return np.array([e.detected_nlos for e in self.entries], dtype=bool)

    def subset(self, ids: Iterable[str]) -> "ObservationSet":
        keep = set(ids)
        return ObservationSet(tuple(e for e in self.entries if e.anchor_id in keep))

    def __or__(self, other: "ObservationSet") -> "ObservationSet":
        return ObservationSet(self.entries + other.entries)


OBS_FIELDS = ["anchor_id", "z_m", "detected_nlos", "true_los", "true_bias_m", "true_noise_m"]


def _opt(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(int(v))


def write_observations(obs: ObservationSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_FIELDS)
        for e in obs:
            w.writerow(
                [e.anchor_id, repr(float(e.z)), int(e.detected_nlos),
                 _opt(e.true_los), _opt(e.true_bias), _opt(e.true_noise)]
            )


def read_observations(path) -> ObservationSet:
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            def get(key, conv):
                v = (row.get(key) or "").strip()
                return conv(v) if v else None

            entries.append(
                Observation(
                    anchor_id=row["anchor_id"].strip(),
                    z=float(row["z_m"]),
                    detected_nlos=bool(int(row.get("detected_nlos") or 0)),
                    true_los=get("true_los", lambda s: bool(int(s))),
                    true_bias=get("true_bias_m", float),
                    true_noise=get("true_noise_m", float),
                )
            )
    return ObservationSet(tuple(entries))


# -- mappings ----------------------------------------------------------
def psi_toa(tau: float) -> float:
    """Range from a time of arrival in seconds."""
    if tau < 0:
        raise ValueError(f"time of arrival must be >= 0, got {tau}")
    return C0 * tau


def psi_rss(p_rx, model: PathLossModel):
    """Range from received power (dBm) under the linear LOS law, clamped at 0 m."""
    if model.variant != "linear":
        raise UnsupportedMappingError("RSS-to-range mapping is defined for the linear model only")
    r = (np.asarray(p_rx, dtype=float) - model.P0) / model.slope
    r = np.maximum(r, 0.0)
    return float(r) if r.ndim == 0 else r


def log_distance_rss(d, model: PathLossModel):
    """Predicted LOS received power (dBm) at distance ``d``."""
    d = np.asarray(d, dtype=float)
    if model.variant == "linear":
        out = model.P0 + model.slope * d
    else:
        if (d <= 0).any():
            raise ValueError("log-distance model is undefined at d <= 0")
        out = model.P0 - 10.0 * model.eta * np.log10(d / model.d0)
    return float(out) if out.ndim == 0 else out


# -- bias and noise laws -------------------------------------------------
def bias_mean(params: ModelParams, n_obstructions):
    n = np.asarray(n_obstructions, dtype=float)
    b = params.map_aware
    if params.technology is Technology.TOA:
        out = n * b.delay_per_wall
    else:
        out = np.where(n > 0, b.mu_b0 + b.mu_bm * n, 0.0)
    return float(out) if out.ndim == 0 else out


def bias_std(params: ModelParams, n_obstructions):
    n = np.asarray(n_obstructions, dtype=float)
    b = params.map_aware
    if params.technology is Technology.TOA:
        with np.errstate(divide="ignore"):
            out = np.where(n > 0, b.sigma_b0 * np.power(np.maximum(n, 1.0), b.beta_b), 0.0)
    else:
        out = np.where(n > 0, np.maximum(b.sigma_b0 - b.sigma_bm * n, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def noise_std(params: ModelParams, distance, map_aware: bool = True):
    out = params.noise_for(map_aware).std(distance)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def exponential_logpdf(x, t, mu):
    """Log of the translated exponential density with support ``x >= t``."""
    x = np.asarray(x, dtype=float)
    r = x - t
    with np.errstate(invalid="ignore"):
        return np.where(r >= 0, -math.log(mu) - r / mu, -np.inf)


def mixture_log_pdf(r, t, mu):
    """Exponential body for ``r >= t`` blended with a narrow Gaussian tail for ``r <= t``."""
    if not mu > 0:
        raise ValueError("mixture scale must be > 0")
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    dr = r - t
    exp_part = np.where(dr >= 0, math.log(MIX_EXP_WEIGHT / mu) - np.maximum(dr, 0.0) / mu, -np.inf)
    var = mu * mu / MIX_VAR_DIVISOR
    gauss_part = np.where(
        dr <= 0, math.log(MIX_GAUSS_WEIGHT) + gaussian_logpdf(np.minimum(dr, 0.0), 0.0, var), -np.inf
    )
    out = np.logaddexp(exp_part, gauss_part)
    return float(out) if out.ndim == 0 else out


# -- likelihood kernels over many trial points --------------------------
def _distances(points: np.ndarray, anchor_xy: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - anchor_xy[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def map_aware_terms(params: ModelParams, d, counts, z):
    """Per-link mean and variance of the map-aware Gaussian model."""
    mean = d + bias_mean(params, counts)
    var = np.asarray(bias_std(params, counts)) ** 2 + params.noise.std(d) ** 2
    return mean, var


def map_aware_loglik_batch(params, points, anchor_xy, z, counts, strict=True):
    """Map-aware log-likelihood at each row of ``points``.

    ``counts`` is the (P, K) matrix of wall crossings. With ``strict=False``
    zero-variance links yield ``-inf`` instead of raising.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    d = _distances(points, anchor_xy)
    mean, var = map_aware_terms(params, d, counts, z)
    return _gaussian_sum(z, mean, var, strict)


def _gaussian_sum(z, mean, var, strict):
    zero = var <= 0
    if zero.any():
        if strict:
            raise DegenerateVarianceError("zero total variance on at least one link")
        safe = np.where(zero, 1.0, var)
        terms = gaussian_logpdf(z, mean, safe)
        terms = np.where(zero, -np.inf, terms)
    else:
        terms = gaussian_logpdf(z, mean, var)
    return terms.sum(axis=1)


def map_unaware_loglik_batch(params, points, anchor_xy, z, nlos, soften=False, strict=True):
    """Map-unaware log-likelihood at each row of ``points``.

    ``nlos`` flags the links labelled NLOS by the detector. For TOA those
    links use the translated exponential (or its softened mixture when
    ``soften`` is set); for RSS they use a shifted, inflated Gaussian.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    nlos = np.asarray(nlos, dtype=bool)
    d = _distances(points, anchor_xy)
    unaware = params.map_unaware
    sn2 = unaware.noise.std(d) ** 2
    if params.technology is Technology.RSS:
        mean = d + np.where(nlos, unaware.kappa_b, 0.0)
        var = sn2 + np.where(nlos, unaware.gamma_b**2, 0.0)
        return _gaussian_sum(z, mean, var, strict)

    total = np.zeros(len(points))
    los = ~nlos
    if los.any():
        total += _gaussian_sum(z[los], d[:, los], sn2[:, los], strict)
    if nlos.any():
        if soften:
            terms = mixture_log_pdf(z[nlos], d[:, nlos], unaware.nu_b)
        else:
            terms = exponential_logpdf(z[nlos], d[:, nlos], unaware.nu_b)
        total += np.asarray(terms).sum(axis=1)
    return total


# -- scalar API ----------------------------------------------------------
def anchor_positions(anchors, ids: Sequence[str]) -> np.ndarray:
    """Positions of the anchors named in ``ids``; ``anchors`` maps id -> Anchor or is a list."""
    if not isinstance(anchors, dict):
        anchors = {a.id: a for a in anchors}
    try:
        return np.array([anchors[i].position for i in ids], dtype=float).reshape(-1, 2)
    except KeyError as exc:
        raise KeyError(f"observation references unknown anchor {exc.args[0]!r}") from None


def log_likelihood_map_aware(imap: IndoorMap, params: ModelParams, anchors, obs: ObservationSet, p) -> float:
    """Log-density of the observations given trial position ``p`` using the map."""
    if len(obs) == 0:
        raise ValueError("observation set is empty")
    xy = anchor_positions(anchors, obs.anchor_ids)
    pt = np.asarray(p, dtype=float).reshape(1, 2)
    counts = imap.obstruction_counts(pt, xy)
    return float(map_aware_loglik_batch(params, pt, xy, obs.z, counts)[0])


def log_likelihood_map_unaware(params: ModelParams, anchors, obs: ObservationSet, p, soften: bool = False) -> float:
    """Log-density of the observations given ``p`` using detector labels only."""
    if len(obs) == 0:
        raise ValueError("observation set is empty")
    xy = anchor_positions(anchors, obs.anchor_ids)
    pt = np.asarray(p, dtype=float).reshape(1, 2)
    return float(map_unaware_loglik_batch(params, pt, xy, obs.z, obs.nlos_mask, soften=soften)[0])
