"""Shared test utilities."""

import numpy as np

from angcal import rng as rngmod


def conditional_pairs(n, theta, sigma_norm, link, seed, tag="pairs"):
    """Draw (logit, true-index, label) triples from the exact conditional law.

    For Gaussian designs, the true index given a fitted logit u is
    cos(theta) * u / sigma_norm + sin(theta) * Z with Z standard normal:
    sampling the pair directly gives the population objects the Platt
    and calibration theory is stated about, with no d-dimensional fit.
    """
    gen = rngmod.substream(seed, tag)
    base = gen.standard_normal(n)
    noise = gen.standard_normal(n)
    u = sigma_norm * base
    t = np.cos(theta) * base + np.sin(theta) * noise
    y = (gen.random(n) < link(t)).astype(np.float64)
    return u, t, y


def random_spd(rng, d, cond=10.0):
    """Random symmetric positive-definite matrix with bounded condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigvals = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return (q * eigvals) @ q.T
