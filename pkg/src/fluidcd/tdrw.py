"""Independent checks of the transition probability.

The quantity of interest is the probability that

    dx = v(x) dt + sqrt(2 b(x)) dW,   x(0) = 0,

with (v, b) = (v_plus, b_plus) for x >= 0 and (v_minus, b_minus) for x < 0,
reaches +1 before -1. It is computed two ways: exactly via the scale
function, and by Monte Carlo simulation of the SDE.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError

# Fixed chunking keeps the estimate independent of the worker count.
MC_CHUNKS = 16
# First-order continuity correction for a discretely monitored barrier: -zeta(1/2)/sqrt(2*pi)
BARRIER_SHIFT = 0.5826


@dataclass(frozen=True)
class TdrwParams:
    v_plus: float
    v_minus: float
    b_plus: float = 1.0
    b_minus: float = 1.0
    dt: float = 1e-3
    paths: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not (self.b_plus > 0 and self.b_minus > 0):
            raise ParameterError("diffusivities must be positive")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.paths < 1:
            raise ParameterError("paths must be at least 1")
        for name in ("v_plus", "v_minus", "b_plus", "b_minus", "dt"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")


def _phi(k: float) -> float:
    # (1 - e^-k) / k, stable near k = 0
    if abs(k) < 1e-8:
        return 1.0 - 0.5 * k
    return -math.expm1(-k) / k


def splitting_probability_analytic(p: TdrwParams) -> float:
    """(s(0) - s(-1)) / (s(1) - s(-1)) for the piecewise scale function.

    s(x) = integral_0^x exp(-k y) dy with k = v/b on the side containing y,
    so s(1) = phi(k+) and s(-1) = -phi(-k-), phi(k) = (1 - e^-k)/k.
    """
    right = _phi(p.v_plus / p.b_plus)
    left = _phi(-p.v_minus / p.b_minus)
    return left / (right + left)


@numba.njit(cache=True, nogil=True)
def _first_passage_hits(rng, paths, v_plus, v_minus, b_plus, b_minus, dt):
    # Work in z = x / sigma(x), sigma = sqrt(2b): unit noise on both sides.
    # The kink of this map at 0 makes z a skew Brownian motion whose
    # excursions start positive with probability sigma_- / (sigma_+ + sigma_-).
    s_plus = math.sqrt(2.0 * b_plus)
    s_minus = math.sqrt(2.0 * b_minus)
    drift_plus = v_plus / s_plus * dt
    drift_minus = v_minus / s_minus * dt
    sq = math.sqrt(dt)
    two_over_dt = 2.0 / dt
    shift = 0.5826 * sq
    z_right = 1.0 / s_plus - shift
    z_left = -1.0 / s_minus + shift
    p_up = s_minus / (s_plus + s_minus)
    near = 12.5 * dt  # exp(-25): chance of an unseen touch of 0 is negligible beyond this
    hits = 0
    for _ in range(paths):
        z = 0.0
        while True:
            zp = z + (drift_plus if z >= 0.0 else drift_minus)
            zn = zp + sq * rng.standard_normal()
            prod = zp * zn
            if prod < near:
                # the step touched 0 (for sure if it changed sign, else with bridge probability)
                if prod <= 0.0 or rng.random() < math.exp(-two_over_dt * prod):
                    zn = abs(zn) if rng.random() < p_up else -abs(zn)
            if zn >= z_right:
                hits += 1
                break
            if zn <= z_left:
                break
            z = zn
    return hits


def splitting_probability_mc(p: TdrwParams, workers: int = 1):
    """Monte Carlo estimate of the exit-right probability and its standard error.

    Returns (estimate, standard_error). Paths are split into fixed chunks with
    their own spawned generators, so the result depends only on the seed.
    """
    sig = math.sqrt(2.0 * max(p.b_plus, p.b_minus) * p.dt)
    if max(abs(p.v_plus), abs(p.v_minus)) * p.dt + 4.0 * sig > 2.0:
        raise ParameterError(f"dt={p.dt} too large: single steps can jump across the whole interval")
    chunks = min(MC_CHUNKS, p.paths)
    sizes = [p.paths // chunks + (1 if i < p.paths % chunks else 0) for i in range(chunks)]
    seeds = np.random.SeedSequence(p.seed).spawn(chunks)

    def run(i):
        rng = np.random.default_rng(seeds[i])
        return _first_passage_hits(rng, sizes[i], p.v_plus, p.v_minus, p.b_plus, p.b_minus, p.dt)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = sum(pool.map(run, range(chunks)))
    else:
        hits = sum(run(i) for i in range(chunks))
    est = hits / p.paths
    return est, math.sqrt(est * (1.0 - est) / p.paths)


def random_tuples(count: int, seed: int):
    """Parameter tuples with v in [-1, 0] and b in (0.2, 1]."""
    rng = np.random.default_rng(seed)
    v = -rng.random((count, 2))
    # 1 - U maps [0, 1) onto (0, 1]
    b = 0.2 + 0.8 * (1.0 - rng.random((count, 2)))
    return [(float(v[i, 0]), float(v[i, 1]), float(b[i, 0]), float(b[i, 1])) for i in range(count)]
