"""Shared synthetic fixtures for the fitting round trip and evaluation scenarios."""

import numpy as np

from mapaware.geometry import IndoorMap, rectangle
from mapaware.scenario import simulate_database


def corridor_rooms_map():
    """60 m x 20 m floor: an open corridor (y < 4) along five rooms separated by walls."""
    walls = [[[x, 4.0], [x, 20.0]] for x in (12.0, 24.0, 36.0, 48.0)]
    return IndoorMap(rectangle(0, 0, 60, 20), walls=walls)


def corridor_sites(rng):
    """12 corridor sites plus 5 per room; links span N_o = 0..4 and LOS at all distances."""
    sites = [(x, rng.uniform(0.5, 3.5)) for x in np.linspace(0.5, 59.5, 12)]
    for room in range(5):
        for _ in range(5):
            sites.append((room * 12 + rng.uniform(0.5, 11.5), rng.uniform(4.5, 19.5)))
    return sites


def round_trip_database(params, seed, n_readings=200):
    rng = np.random.default_rng(seed)
    imap = corridor_rooms_map()
    return simulate_database(imap, params, corridor_sites(rng), n_readings, rng)


def recovered_parameters(params):
    """Flat dict of the map-aware parameters checked by the round trip."""
    b, n = params.map_aware, params.noise
    if params.technology.value == "TOA":
        out = {"eps_r_w": b.eps_r_w, "sigma_b0": b.sigma_b0, "beta_b": b.beta_b}
    else:
        out = {"mu_b0": b.mu_b0, "mu_bm": b.mu_bm, "sigma_b0": b.sigma_b0, "sigma_bm": b.sigma_bm}
    out.update(sigma_n0=n.sigma_n0, beta_n=n.beta_n)
    return out
