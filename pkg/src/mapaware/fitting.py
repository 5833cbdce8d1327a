"""Fitting bias and noise models to link measurements.

The pipeline follows the binned maximum-likelihood approach: residuals
``r = z - d`` are grouped by number of crossed walls (bias statistics) and by
distance bin (noise statistics), then smooth parametric laws are fitted to
the per-bin estimates by weighted least squares.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .models import (
    ModelParams,
    NoiseModel,
    RssBias,
    RssUnaware,
    Technology,
    ToaBias,
    ToaUnaware,
)

logger = logging.getLogger(__name__)

DEFAULT_BIN_SIZE = 2.0
DEFAULT_WALL_THICKNESS = 0.35
NOISE_XTOL = 1e-4

# Anderson-Darling critical values, mean and variance estimated from the
# sample, applied to the small-sample adjusted statistic.
AD_CRITICAL = {0.10: 0.631, 0.05: 0.752, 0.025: 0.873, 0.01: 1.035, 0.005: 1.159}
PAPER_AD_THRESHOLD = 1.159
AD_MIN_SAMPLES = 8


class FitError(ValueError):
    """Not enough populated bins or links to determine a model."""


class InsufficientDataError(FitError):
    pass


# -- database ----------------------------------------------------------------
@dataclass(frozen=True)
class Link:
    m: str
    i: str
    n_obstructions: int
    distance: float
    readings: np.ndarray

    def __post_init__(self):
        if self.m == self.i:
            raise ValueError(f"link ({self.m}, {self.i}) joins a site to itself")
        if not self.distance > 0:
            raise ValueError(f"link ({self.m}, {self.i}) has non-positive distance")
        if self.n_obstructions < 0:
            raise ValueError(f"link ({self.m}, {self.i}) has negative obstruction count")
        readings = np.asarray(self.readings, dtype=float).ravel()
        if readings.size == 0:
            raise ValueError(f"link ({self.m}, {self.i}) has no readings")
        object.__setattr__(self, "readings", readings)

    @property
    def residuals(self) -> np.ndarray:
        return self.readings - self.distance


@dataclass(frozen=True)
class MeasurementDatabase:
    links: tuple
    sites: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))

    def __len__(self):
        return len(self.links)

    @property
    def n_readings(self) -> int:
        return sum(len(l.readings) for l in self.links)

    def flat(self):
        """Per-reading arrays ``(residual, n_obstructions, distance)``."""
        if not self.links:
            return np.zeros(0), np.zeros(0, dtype=int), np.zeros(0)
        r = np.concatenate([l.residuals for l in self.links])
        t = np.concatenate([np.full(len(l.readings), l.n_obstructions) for l in self.links])
        d = np.concatenate([np.full(len(l.readings), l.distance) for l in self.links])
        return r, t, d


DB_FIELDS = ["site_m", "site_i", "n_obstructions", "distance_m", "reading_m"]


def write_database(db: MeasurementDatabase, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DB_FIELDS)
        for l in db.links:
            for v in l.readings:
                w.writerow([l.m, l.i, l.n_obstructions, repr(float(l.distance)), repr(float(v))])


def read_database(path) -> MeasurementDatabase:
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DB_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (row["site_m"].strip(), row["site_i"].strip())
                n_o = int(row["n_obstructions"])
                dist = float(row["distance_m"])
                val = float(row["reading_m"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            entry = groups.setdefault(key, [n_o, dist, []])
            if entry[0] != n_o or entry[1] != dist:
                raise ValueError(f"{path}:{lineno}: inconsistent geometry for link {key}")
            entry[2].append(val)
    links = tuple(Link(m, i, n_o, dist, np.array(vals)) for (m, i), (n_o, dist, vals) in groups.items())
    return MeasurementDatabase(links)


def split_train_validation(db: MeasurementDatabase, train_fraction: float, rng):
    """Random link-level partition into training and validation databases."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(db)
    n_train = max(2, int(math.floor(n * train_fraction)))
    if n_train >= n:
        raise FitError(f"cannot split {n} links with train fraction {train_fraction}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    order = rng.permutation(n)
    train = sorted(order[:n_train])
    val = sorted(order[n_train:])
    return (
        MeasurementDatabase(tuple(db.links[k] for k in train), db.sites),
        MeasurementDatabase(tuple(db.links[k] for k in val), db.sites),
    )


# -- normality gate ----------------------------------------------------------
@dataclass(frozen=True)
class ADResult:
    a2_star: float
    threshold: float
    passed: bool


def anderson_darling(residuals, significance: float = 0.05, threshold: float | None = None) -> ADResult:
    """Anderson-Darling normality test with estimated mean and variance.

    Returns the adjusted statistic ``A2* = A2 (1 + 0.75/n + 2.25/n^2)``.
    The test passes when ``A2*`` is below the critical value for
    ``significance``; an explicit ``threshold`` overrides the table (the
    original gate used 1.159, see ``PAPER_AD_THRESHOLD``).
    """
    x = np.sort(np.asarray(residuals, dtype=float).ravel())
    n = x.size
    if n < AD_MIN_SAMPLES:
        raise InsufficientDataError(f"Anderson-Darling needs at least {AD_MIN_SAMPLES} samples, got {n}")
    if threshold is None:
        try:
            threshold = AD_CRITICAL[significance]
        except KeyError:
            raise ValueError(f"no critical value tabulated for significance {significance}") from None
    s = x.std(ddof=1)
    if s == 0:
        return ADResult(math.inf, threshold, False)
    w = (x - x.mean()) / s
    i = np.arange(1, n + 1)
    a2 = -n - np.sum((2 * i - 1) * (stats.norm.logcdf(w) + stats.norm.logsf(w[::-1]))) / n
    a2_star = float(a2 * (1 + 0.75 / n + 2.25 / n**2))
    return ADResult(a2_star, float(threshold), a2_star < threshold)


# -- binned ML estimates -----------------------------------------------------
@dataclass(frozen=True)
class BiasBin:
    mu_hat: float
    sigma_hat: float
    count: int
    n_readings: int = 0


@dataclass(frozen=True)
class NoiseBin:
    sigma_n_hat: float
    count: int
    n_readings: int = 0


@dataclass
class BinnedStats:
    by_obstruction: dict
    by_distance_bin: dict
    bin_size: float = DEFAULT_BIN_SIZE


def _link_arrays(db: MeasurementDatabase):
    t_o = np.array([l.n_obstructions for l in db.links], dtype=int)
    dist = np.array([l.distance for l in db.links])
    return t_o, dist


def estimate_bias_mean(db: MeasurementDatabase) -> dict:
    """Sample mean of residuals for every populated obstruction count ``t >= 1``."""
    r, t, _ = db.flat()
    return {int(k): float(r[t == k].mean()) for k in np.unique(t) if k >= 1}


def estimate_bias_std(db: MeasurementDatabase, mu_hat: dict) -> dict:
    """Biased (divisor n) standard deviation of residuals per obstruction count."""
    r, t, _ = db.flat()
    out = {}
    for k, mu in mu_hat.items():
        sel = r[t == k]
        if sel.size:
            out[int(k)] = float(math.sqrt(np.mean((sel - mu) ** 2)))
    return out


def _bin_index(d, delta):
    return np.floor(np.asarray(d) / delta).astype(int)


def _minimize_variance_split(sq_sums, counts, fixed_var, upper):
    """argmin_s sum_g S_g / (v_g + s^2) + n_g ln(v_g + s^2) over 0 <= s <= upper."""

    def objective(s):
        tot = fixed_var + s * s
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(tot > 0, sq_sums / tot + counts * np.log(tot), np.where(sq_sums > 0, np.inf, -np.inf))
        return float(terms.sum())

    res = optimize.minimize_scalar(objective, bounds=(0.0, upper), method="bounded",
                                   options={"xatol": NOISE_XTOL})
    s = float(res.x)
    # bounded Brent never evaluates the endpoints
    for edge in (0.0, upper):
        if objective(edge) < objective(s):
            s = edge
    return s


def _group_sums(r, keys, mu_of, var_of):
    """Aggregate (sum of squared centred residuals, count, fixed variance) per key."""
    uniq = np.unique(keys)
    sq = np.empty(len(uniq))
    cnt = np.empty(len(uniq))
    var = np.empty(len(uniq))
    for j, k in enumerate(uniq):
        sel = r[keys == k]
        sq[j] = np.sum((sel - mu_of(k)) ** 2)
        cnt[j] = sel.size
        var[j] = var_of(k)
    return sq, cnt, var


def estimate_noise_std(db: MeasurementDatabase, mu_hat: dict, sigma_hat: dict,
                       delta: float = DEFAULT_BIN_SIZE) -> dict:
    """Per distance bin ML noise standard deviation with bias statistics plugged in.

    Links with zero obstructions contribute with zero bias mean and variance.
    Bins whose links have obstruction counts without a bias estimate are
    estimated from the remaining links.
    """
    if not delta > 0:
        raise ValueError("bin size must be > 0")
    r, t, d = db.flat()
    bins = _bin_index(d, delta)
    mu_all = {0: 0.0, **{int(k): v for k, v in mu_hat.items()}}
    sd_all = {0: 0.0, **{int(k): v for k, v in sigma_hat.items()}}
    out = {}
    for b in np.unique(bins):
        sel = (bins == b) & np.isin(t, list(mu_all))
        if not sel.any():
            continue
        sq, cnt, var = _group_sums(r[sel], t[sel], lambda k: mu_all[int(k)], lambda k: sd_all[int(k)] ** 2)
        upper = math.sqrt(float(np.max(sq / cnt))) + 1.0
        out[int(b)] = _minimize_variance_split(sq, cnt, var, upper)
    return out


def _joint_refine(db: MeasurementDatabase, mu: dict, sd: dict, noise: dict, delta: float,
                  max_iter: int = 500):
    """Joint ML of all bias-spread and noise bin values with the bias means fixed.

    Maximizes the binned Gaussian likelihood where every reading of a link
    with ``t`` walls in distance bin ``b`` has variance
    ``sigma_b(t)^2 + sigma_n(b)^2`` (``sigma_b(0) = 0``).
    """
    r, t, d = db.flat()
    bins = _bin_index(d, delta)
    mu_all = {0: 0.0, **mu}
    keep = np.isin(t, list(mu_all)) & np.isin(bins, list(noise))
    t_keys = sorted(sd)
    b_keys = sorted(noise)
    t_pos = {k: j for j, k in enumerate(t_keys)}
    b_pos = {k: j for j, k in enumerate(b_keys)}

    pairs_t, pairs_b, sq, cnt = [], [], [], []
    tk, bk, rk = t[keep], bins[keep], r[keep]
    codes = tk * (int(bk.max()) + 1) + bk if rk.size else tk
    for code in np.unique(codes):
        sel = codes == code
        ti = int(tk[sel][0])
        bi = int(bk[sel][0])
        pairs_t.append(t_pos.get(ti, -1))
        pairs_b.append(b_pos[bi])
        sq.append(float(np.sum((rk[sel] - mu_all[ti]) ** 2)))
        cnt.append(int(sel.sum()))
    pairs_t = np.array(pairs_t)
    pairs_b = np.array(pairs_b)
    sq = np.array(sq)
    cnt = np.array(cnt, dtype=float)
    has_bias = pairs_t >= 0
    n_t = len(t_keys)
    scale = float(np.sum(cnt))

    # optimize over variances; a small positive start keeps the first steps finite
    def fun(u):
        ub = np.where(has_bias, u[np.maximum(pairs_t, 0)], 0.0)
        v = np.maximum(ub + u[n_t + pairs_b], 1e-12)
        f = np.sum(sq / v + cnt * np.log(v))
        dv = -sq / v**2 + cnt / v
        grad = np.zeros_like(u)
        np.add.at(grad, pairs_t[has_bias], dv[has_bias])
        np.add.at(grad, n_t + pairs_b, dv)
        return f / scale, grad / scale

    x0 = np.array([sd[k] for k in t_keys] + [noise[k] for k in b_keys], dtype=float) ** 2
    floor = 1e-2 * float(np.mean(sq / cnt))
    x0 = np.maximum(x0, floor)
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                            bounds=[(0.0, None)] * len(x0),
                            options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-12})
    # values at the lower bound within solver tolerance are boundary solutions
    x = np.sqrt(res.x)
    x = np.where(x < NOISE_XTOL, 0.0, x)
    return ({k: float(x[t_pos[k]]) for k in t_keys},
            {k: float(x[n_t + b_pos[k]]) for k in b_keys})


def binned_statistics(db: MeasurementDatabase, delta: float = DEFAULT_BIN_SIZE,
                      refine: bool = True) -> BinnedStats:
    """Bias and noise bin estimates for a training database.

    The first pass uses the simplified bias variance (noise neglected) and
    the per-bin noise minimization. With ``refine`` the bias spreads and
    noise values are then re-estimated jointly on the full binned Gaussian
    likelihood, which removes the noise contribution from the spreads.
    """
    mu = estimate_bias_mean(db)
    sd = estimate_bias_std(db, mu)
    noise = estimate_noise_std(db, mu, sd, delta)
    if refine and noise:
        sd, noise = _joint_refine(db, mu, sd, noise, delta)

    t_o, dist = _link_arrays(db)
    n_read = np.array([len(l.readings) for l in db.links])
    bins = _bin_index(dist, delta)
    by_o = {
        k: BiasBin(mu[k], sd[k], int((t_o == k).sum()), int(n_read[t_o == k].sum())) for k in sorted(mu)
    }
    by_d = {
        b: NoiseBin(noise[b], int((bins == b).sum()), int(n_read[bins == b].sum())) for b in sorted(noise)
    }
    return BinnedStats(by_o, by_d, delta)


def ad_gate(db: MeasurementDatabase, significance: float = 0.05, threshold: float | None = None) -> dict:
    """Normality test of the residuals of every populated NLOS obstruction bin.

    Bins with too few samples map to ``None``.
    """
    r, t, _ = db.flat()
    out = {}
    for k in np.unique(t[t > 0]):
        try:
            out[int(k)] = anderson_darling(r[t == k], significance, threshold)
        except InsufficientDataError:
            out[int(k)] = None
    return out


# -- regressions -------------------------------------------------------------
def _wls_line(x, y, w):
    """Weighted least-squares intercept and slope."""
    x, y, w = (np.asarray(v, dtype=float) for v in (x, y, w))
    sw = w.sum()
    xm = np.dot(w, x) / sw
    ym = np.dot(w, y) / sw
    sxx = np.dot(w, (x - xm) ** 2)
    if sxx <= 0:
        raise FitError("regression abscissae are all equal")
    slope = np.dot(w, (x - xm) * (y - ym)) / sxx
    return float(ym - slope * xm), float(slope)


def _clamped_line_fit(t, s, w):
    """Least squares for ``s = max(a - b t, 0)``: best split into sloped and clamped bins."""
    order = np.argsort(t)
    t, s, w = t[order], s[order], w[order]
    best = None
    for k in range(len(t), 1, -1):
        try:
            a, neg_b = _wls_line(t[:k], s[:k], w[:k])
        except FitError:
            continue
        pred = np.maximum(a + neg_b * t, 0.0)
        loss = float(np.dot(w, (s - pred) ** 2))
        if best is None or loss < best[0] - 1e-15:
            best = (loss, a, -neg_b)
    if best is None:
        raise FitError("bias-std regression is underdetermined")
    return best[1], best[2]


def fit_bias_regression(stats: BinnedStats, technology, wall_thickness: float = DEFAULT_WALL_THICKNESS):
    """Parametric bias laws from per-obstruction-count estimates.

    Returns a :class:`ToaBias` or :class:`RssBias`.
    """
    tech = Technology(technology)
    bins = {k: v for k, v in stats.by_obstruction.items() if k >= 1}
    if len(bins) < 2:
        raise FitError(f"bias regression needs >= 2 populated obstruction bins, got {sorted(bins)}")
    t = np.array(sorted(bins), dtype=float)
    mu = np.array([bins[k].mu_hat for k in sorted(bins)])
    sd = np.array([bins[k].sigma_hat for k in sorted(bins)])
    w = np.array([bins[k].count for k in sorted(bins)], dtype=float)

    if tech is Technology.TOA:
        # mean through the origin: N_o * t_w * sqrt(eps - 1)
        slope = max(float(np.dot(w, t * mu) / np.dot(w, t * t)), 0.0)
        eps_r = 1.0 + (slope / wall_thickness) ** 2
        pos = sd > 0
        if pos.sum() < 2:
            raise FitError("bias-std power law needs >= 2 bins with positive spread")
        ln_s0, beta = _wls_line(np.log(t[pos]), np.log(sd[pos]), w[pos])
        return ToaBias(t_w=wall_thickness, eps_r_w=eps_r, sigma_b0=math.exp(ln_s0), beta_b=beta)

    mu_b0, mu_bm = _wls_line(t, mu, w)
    sigma_b0, sigma_bm = _clamped_line_fit(t, sd, w)
    return RssBias(mu_b0=mu_b0, mu_bm=mu_bm, sigma_b0=max(sigma_b0, 0.0), sigma_bm=max(sigma_bm, 0.0))


def fit_noise_regression(stats: BinnedStats, d0: float = 1.0) -> NoiseModel:
    """Log-log fit of ``sigma_n0 (d / d0)^beta_n`` at the distance-bin centres."""
    bins = {k: v for k, v in stats.by_distance_bin.items() if v.sigma_n_hat > 0}
    if len(bins) < 2:
        raise FitError(f"noise regression needs >= 2 populated distance bins, got {sorted(bins)}")
    keys = sorted(bins)
    centres = (np.array(keys, dtype=float) + 0.5) * stats.bin_size
    sig = np.array([bins[k].sigma_n_hat for k in keys])
    w = np.array([bins[k].count for k in keys], dtype=float)
    ln_s0, beta = _wls_line(np.log(centres / d0), np.log(sig), w)
    return NoiseModel(sigma_n0=math.exp(ln_s0), beta_n=beta, d0=d0)


def fit_map_unaware(db: MeasurementDatabase, technology, delta: float = DEFAULT_BIN_SIZE, d0: float = 1.0):
    """Detector-based bias parameters and their noise law.

    Bias statistics come from all links with at least one obstruction.
    Returns a :class:`RssUnaware` or :class:`ToaUnaware`.
    """
    tech = Technology(technology)
    r, t, d = db.flat()
    nlos = t > 0
    if not nlos.any():
        raise FitError("no NLOS links (I_p is empty): map-unaware bias parameters undefined")
    mean = float(r[nlos].mean())
    if tech is Technology.RSS:
        mu_b, sd_b = mean, float(r[nlos].std())
    else:
        # exponential bias: variance nu^2
        mu_b, sd_b = mean, mean

    bins = _bin_index(d, delta)
    sigma = {}
    for b in np.unique(bins):
        sel = bins == b
        sq, cnt, var = _group_sums(
            r[sel], nlos[sel].astype(int),
            lambda k: mu_b if k else 0.0, lambda k: sd_b**2 if k else 0.0,
        )
        upper = math.sqrt(float(np.max(sq / cnt))) + 1.0
        sigma[int(b)] = _minimize_variance_split(sq, cnt, var, upper)
    _, link_dist = _link_arrays(db)
    link_bins = _bin_index(link_dist, delta)
    counts = {b: int((link_bins == b).sum()) for b in sigma}
    noise = fit_noise_regression(
        BinnedStats({}, {b: NoiseBin(s, counts[b]) for b, s in sigma.items()}, delta), d0
    )
    if tech is Technology.RSS:
        return RssUnaware(kappa_b=mu_b, gamma_b=sd_b, noise=noise)
    return ToaUnaware(nu_b=mu_b, noise=noise)


@dataclass
class FitReport:
    params: ModelParams
    stats: BinnedStats
    ad: dict
    train: MeasurementDatabase
    validation: MeasurementDatabase | None


def fit_params(db: MeasurementDatabase, technology, *, train_fraction: float | None = 0.25,
               rng=None, delta: float = DEFAULT_BIN_SIZE, wall_thickness: float = DEFAULT_WALL_THICKNESS,
               path_loss=None, significance: float = 0.05, refine: bool = True) -> FitReport:
    """Full pipeline: split, normality gate, binned ML estimates, regressions.

    ``train_fraction=None`` fits on the whole database.
    """
    tech = Technology(technology)
    if train_fraction is None:
        train, val = db, None
    else:
        train, val = split_train_validation(db, train_fraction, rng)
    if not (train.flat()[1] > 0).any():
        raise FitError("no NLOS links (I_p is empty): bias parameters cannot be fitted")
    gate = ad_gate(train, significance)
    for k, res in gate.items():
        if res is not None and not res.passed:
            logger.warning("obstruction bin %d fails the normality test (A2* = %.3f)", k, res.a2_star)
    stats_ = binned_statistics(train, delta, refine=refine)
    bias = fit_bias_regression(stats_, tech, wall_thickness)
    noise = fit_noise_regression(stats_)
    unaware = fit_map_unaware(train, tech, delta)
    params = ModelParams(tech, bias, noise, unaware, path_loss)
    return FitReport(params, stats_, gate, train, val)
