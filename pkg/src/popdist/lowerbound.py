"""Constructions behind the minimax lower bound: pairs of distributions with
matching low moments but large W1, their affine transport to subintervals,
and the total variation of the binomial mixtures they induce."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._simplex import solve_lp
from .core import AtomicDistribution, expected_fingerprint
from .metrics import total_variation_fingerprint, wasserstein1
from .polyapprox import shifted_chebyshev


def _chebyshev_rows(s: int, x: np.ndarray) -> np.ndarray:
    return np.vstack([shifted_chebyshev(l, x) for l in range(1, s + 1)])


def _solve_fixed_sign(x: np.ndarray, cheb: np.ndarray, sigma: np.ndarray):
    """Maximize the sigma-signed CDF-difference integral over moment-matched
    pairs on the shared grid x; returns (w1, cdf_diff, p_masses, q_masses).

    For a fixed sign pattern the objective sum_j sigma_j D_j dx_j is linear
    in the atom masses (D_j is the CDF difference at x_j), so each pass is
    one LP; the moment constraints use the Chebyshev basis, which spans the
    same polynomials as x^1..x^s but keeps the rows well conditioned.
    """
    n = x.size
    s = cheb.shape[0]
    dx = np.diff(x)
    weights = np.concatenate([np.cumsum((sigma * dx)[::-1])[::-1], [0.0]])

    a_eq = np.zeros((s + 2, 2 * n))
    a_eq[0, :n] = 1.0
    a_eq[1, n:] = 1.0
    a_eq[2:, :n] = cheb
    a_eq[2:, n:] = -cheb
    b_eq = np.zeros(s + 2)
    b_eq[0] = 1.0
    b_eq[1] = 1.0
    c = np.concatenate([-weights, weights])

    res = solve_lp(c, a_eq=a_eq, b_eq=b_eq)
    p, q = res.x[:n], res.x[n:]
    diff = np.cumsum(p - q)[:-1]
    return float(np.abs(diff) @ dx), diff, p, q


def _maximize_w1_gap(s: int, grid_size: int, max_passes: int = 60):
    """Best moment-matched pair on the unit-interval grid by sign iteration.

    The sign pattern of the CDF difference is iterated to a fixed point from
    three deterministic starts (2s alternating blocks, s+1 alternating
    blocks, and the sign of T~_s); each pass can only increase the W1, and
    in testing the result matches an external LP solver to machine
    precision for s up to 10.
    """
    x = np.arange(grid_size + 1) / grid_size
    cheb = _chebyshev_rows(s, x)
    mid = (x[:-1] + x[1:]) / 2

    starts = []
    block = np.floor(mid * 2 * s).astype(int)
    starts.append(np.where(block % 2 == 0, -1.0, 1.0))
    block = np.floor(mid * (s + 1)).astype(int)
    starts.append(np.where(block % 2 == 0, -1.0, 1.0))
    sign_t = np.sign(shifted_chebyshev(s, mid))
    sign_t[sign_t == 0] = 1.0
    starts.append(sign_t)

    best = (-1.0, None, None)
    for sigma in starts:
        sigma = sigma.copy()
        value = -np.inf
        for _ in range(max_passes):
            w1, diff, p, q = _solve_fixed_sign(x, cheb, sigma)
            if w1 <= value + 1e-13:
                break
            value = w1
            fresh = np.sign(diff)
            sigma = np.where(fresh == 0, sigma, fresh)
        if value > best[0]:
            best = (value, p, q)

    _, p, q = best
    keep_p, keep_q = p > 1e-12, q > 1e-12
    dist_p = AtomicDistribution(x[keep_p], p[keep_p] / p[keep_p].sum())
    dist_q = AtomicDistribution(x[keep_q], q[keep_q] / q[keep_q].sum())
    return dist_p, dist_q


def affine_map(dist: AtomicDistribution, interval: tuple[float, float]) -> AtomicDistribution:
    """Push a distribution on [0, 1] through x -> a + (b-a) x.

    Scales every moment about the left edge by (b-a)^k and the W1 between
    two mapped distributions by (b-a).
    """
    a, b = interval
    return AtomicDistribution(a + (b - a) * dist.locations, dist.masses,
                              dist.total_mass)


def moment_matched_pair(s: int, interval: tuple[float, float] = (0.0, 1.0),
                        grid_size: int = 200) -> tuple[AtomicDistribution, AtomicDistribution]:
    """A pair of distributions on ``interval`` with identical first s moments
    and W1 at least (b-a)/(2s).

    Solved on [0, 1] by maximizing the exact CDF-difference form of W1 over
    the grid simplex subject to the moment-matching equalities, then mapped
    affinely onto the requested interval (which preserves moment matching
    and scales W1 by the interval length).
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    a, b = float(interval[0]), float(interval[1])
    if b <= a:
        raise ValueError("interval must have positive length")
    if grid_size < 4 * s:
        raise ValueError("grid_size must be at least 4s")
    p, q = _maximize_w1_gap(s, grid_size)
    if (a, b) != (0.0, 1.0):
        p, q = affine_map(p, (a, b)), affine_map(q, (a, b))
    return p, q


def binomial_channel_tv(p: AtomicDistribution, q: AtomicDistribution, t: int) -> float:
    """TV distance between the binomial mixtures X ~ Bin(t, p), p ~ P and
    Y ~ Bin(t, q), q ~ Q (the observable footprint of the pair)."""
    return total_variation_fingerprint(expected_fingerprint(p, t),
                                       expected_fingerprint(q, t))


@dataclass(frozen=True)
class Theorem4Scenario:
    n: int
    t: int
    s: int
    interval: tuple[float, float]
    achieved_w1: float
    target_w1: float
    channel_tv: float
    pair: tuple[AtomicDistribution, AtomicDistribution]

    def to_json_dict(self) -> dict:
        def sig12(v):
            return float(f"{v:.12g}")

        return {
            "N": self.n,
            "t": self.t,
            "s": self.s,
            "interval": [sig12(self.interval[0]), sig12(self.interval[1])],
            "achieved_w1": sig12(self.achieved_w1),
            "target_w1": sig12(self.target_w1),
            "channel_tv": sig12(self.channel_tv),
        }


def theorem4_scenario(n: int, t: int, s_cap: int = 40,
                      grid_size: int = 240) -> Theorem4Scenario:
    """Desk-scale form of the medium-regime lower-bound construction.

    Builds the moment-matched pair on [1/2 - sqrt(log N / t),
    1/2 + sqrt(log N / t)] (clamped to [0, 1]) with s = min(ceil(e^4 log N),
    s_cap) matched moments, and reports the achieved W1 against the target
    (1/e^4) / sqrt(t log N) together with the channel TV at t. The paper's
    2 sqrt(t) / N^(e^4) TV bound is astronomically small and is reported,
    not asserted.
    """
    if n < 2 or t < 1:
        raise ValueError("need N >= 2 and t >= 1")
    half_width = math.sqrt(math.log(n) / t)
    lo, hi = max(0.0, 0.5 - half_width), min(1.0, 0.5 + half_width)
    if hi <= lo:
        raise ValueError("degenerate support interval")
    s = min(math.ceil(math.e ** 4 * math.log(n)), s_cap)
    grid = max(grid_size, 6 * s)
    p, q = moment_matched_pair(s, (lo, hi), grid)
    return Theorem4Scenario(
        n=n,
        t=t,
        s=s,
        interval=(lo, hi),
        achieved_w1=wasserstein1(p, q),
        target_w1=(1.0 / math.e ** 4) / math.sqrt(t * math.log(n)),
        channel_tv=binomial_channel_tv(p, q, t),
        pair=(p, q),
    )
