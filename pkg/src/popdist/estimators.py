"""The four estimators: grid NPMLE via EM, empirical plug-in, global moment
matching, and local moment matching, plus the moment LP they share.

The NPMLE solver is the multiplicative EM fixed point on the discretized
simplex. EM's objective decreases monotonically but its tail convergence is
slow, so after the EM stopping rule fires an active-set Newton polish drives
the KKT conditions (sum_s h_s B_s(x_j) / E_s = 1 on the support, <= 1 off
it) to near machine precision. The polish only ever decreases the objective
and needs no external solver.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from ._simplex import NonConvergenceError, solve_lp
from .core import (
    AtomicDistribution,
    Fingerprint,
    ObservationSet,
    bernstein_pmf,
    fingerprint_of,
    grid_distribution,
)
from .metrics import MomentVector

Method = Literal["mle", "empirical", "moment_matching", "local_moment_matching"]

#: Output atoms below this mass are pruned (never during iteration).
OUTPUT_PRUNE_TOL = 1e-12
#: EM stops when the objective decrease over this many iterations drops
#: below the configured tolerance; see MleConfig.tolerance.
EM_STOP_WINDOW = 10


@dataclass(frozen=True)
class EstimateReport:
    """Result of one estimator run."""

    method: Method
    distribution: AtomicDistribution
    iterations: int
    final_objective: float
    converged: bool
    elapsed: float
    objective_trace: np.ndarray | None = None

    def __post_init__(self):
        if self.final_objective < 0:
            raise ValueError("final_objective must be >= 0")

    def to_json_dict(self, include_elapsed: bool = True) -> dict:
        def sig12(v: float) -> float:
            return float(f"{v:.12g}")

        return {
            "method": self.method,
            "atoms": [[sig12(x), sig12(w)] for x, w in self.distribution.atoms],
            "iterations": self.iterations,
            "final_objective": sig12(self.final_objective),
            "converged": self.converged,
            "elapsed_ms": sig12(self.elapsed * 1e3) if include_elapsed else None,
        }


@dataclass(frozen=True)
class MleConfig:
    grid_size: int = 1000
    max_iterations: int = 20000
    tolerance: float = 1e-10
    support_floor: float = 0.0
    polish: bool = True
    kkt_tolerance: float = 5e-12

    def __post_init__(self):
        if self.grid_size < 10:
            raise ValueError("grid_size must be >= 10")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


@dataclass(frozen=True)
class LmmConfig:
    c1: float = 1.0
    c2: float = 1.0
    grid_size: int = 200
    lp_tolerance: float = 1e-9

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")


def _kl(hs: np.ndarray, d: np.ndarray) -> float:
    # clamp: float cancellation can leave ~-1e-17 on realizable fingerprints
    return max(0.0, float(np.sum(hs * np.log(hs / d))))


def _restricted_solve(hs, a, w0, tol=1e-13, max_iter=400):
    """Minimize -sum_s hs log((a w)_s) over the simplex, to KKT accuracy tol.

    Active-set Newton. The KKT multiplier for this objective is identically
    1 (sum_j w_j r_j = 1 holds for every feasible w, where r = a^T(hs/d)),
    so optimality is simply r_j = 1 on the support and r_j <= 1 off it.
    Zero-weight columns with r_j > 1 re-enter the working set on every
    iteration; they can never be starved out by short steps.
    """
    k = a.shape[1]
    w = np.maximum(np.asarray(w0, dtype=float), 0.0)
    w /= w.sum()

    def value(wv):
        d = a @ wv
        if np.any(d <= 0):
            return np.inf
        return float(-(hs @ np.log(d)))

    f = value(w)
    for _ in range(max_iter):
        d = a @ w
        r = a.T @ (hs / d)
        positive = w > 0
        entering = (~positive) & (r > 1.0 + tol)
        if float(np.max(np.abs(r[positive] - 1.0))) <= tol and not np.any(entering):
            return w
        free = positive | entering

        idx = np.flatnonzero(free)
        half = a[:, idx] * (np.sqrt(hs) / d)[:, None]
        h_mat = half.T @ half
        n_f = idx.size
        kkt = np.zeros((n_f + 1, n_f + 1))
        kkt[:n_f, :n_f] = h_mat + (1e-13 * (np.trace(h_mat) / max(n_f, 1) + 1.0)) * np.eye(n_f)
        kkt[:n_f, n_f] = 1.0
        kkt[n_f, :n_f] = 1.0
        rhs = np.concatenate([r[idx] - 1.0, [0.0]])  # -(g_F + 1), g = -r
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        step = np.zeros(k)
        step[idx] = sol[:n_f]
        descent = float(-(r @ step))
        if descent >= 0:
            # fall back to the projected gradient within the free set
            step = np.zeros(k)
            step[idx] = r[idx] - np.mean(r[idx])
            descent = float(-(r @ step))
            if descent >= -1e-18:
                return w

        alpha_cap = 1.0
        shrink = step < 0
        if np.any(shrink & positive):
            rows = shrink & positive
            alpha_cap = min(1.0, float(np.min(-w[rows] / step[rows])))
        alpha, accepted = alpha_cap, False
        for _ in range(60):
            w_new = np.maximum(w + alpha * step, 0.0)
            total = w_new.sum()
            if total > 0:
                w_new = w_new / total
                f_new = value(w_new)
                if f_new <= f + 1e-4 * alpha * descent:
                    w, f = w_new, f_new
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            return w
    return w


def _fw_step(hs, bs, q, d, j):
    """Exact line search toward grid column j: min_a KL at (1-a) q + a e_j.

    The 1-d problem is smooth and convex; safeguarded Newton on the
    derivative. Returns the updated (q, d). Strictly decreases the KL
    whenever r_j > 1.
    """
    col = bs[:, j]

    def deriv(a):
        mix = (1 - a) * d + a * col
        first = float(-(hs @ ((col - d) / mix)))
        second = float((hs @ (((col - d) / mix) ** 2)))
        return first, second

    lo, hi = 0.0, 1.0 - 1e-12
    a = 0.1
    for _ in range(80):
        g1, g2 = deriv(a)
        if g1 > 0:
            hi = a
        else:
            lo = a
        if abs(g1) < 1e-15 or hi - lo < 1e-16:
            break
        a_newton = a - g1 / g2 if g2 > 0 else (lo + hi) / 2
        a = a_newton if lo < a_newton < hi else (lo + hi) / 2
    q_new = (1 - a) * q
    q_new[j] += a
    return q_new, (1 - a) * d + a * col


def _polish_mle(h, b, q, kkt_tol=5e-12, max_rounds=60):
    """Fully corrective support refinement for the grid NPMLE.

    Each round solves the restricted problem on the current support plus
    every locally maximal KKT violator, then rescans; max_j r_j <= 1 +
    kkt_tol certifies the objective is within kkt_tol of the grid optimum
    (for any feasible q': KL(q') >= KL(q) + 1 - max_j r_j). If a round
    stalls short of that, exact line-search steps toward the worst violator
    (Frank-Wolfe steps, guaranteed descent) break the stall before the next
    restricted solve. The objective never increases.
    """
    seen = h > 0
    hs, bs = h[seen], b[seen]
    q = np.asarray(q, dtype=float).copy()
    d = bs @ q

    f_prev = np.inf
    stalls = 0
    for _ in range(max_rounds):
        r = bs.T @ (hs / d)
        worst = float(r.max())
        if worst <= 1.0 + kkt_tol:
            break
        f_cur = float(np.sum(hs * np.log(hs / d)))
        if f_cur >= f_prev - 1e-16:
            stalls += 1
            if stalls > 4:
                break
            for _ in range(100):
                j = int(np.argmax(bs.T @ (hs / d)))
                r_j = float(bs[:, j] @ (hs / d))
                if r_j <= 1.0 + kkt_tol:
                    break
                q, d = _fw_step(hs, bs, q, d, j)
        else:
            stalls = 0
        f_prev = min(f_prev, f_cur)

        r = bs.T @ (hs / d)
        local_max = np.zeros_like(r, dtype=bool)
        local_max[1:-1] = (r[1:-1] >= r[:-2]) & (r[1:-1] >= r[2:])
        local_max[0] = r[0] >= r[1]
        local_max[-1] = r[-1] >= r[-2]
        candidates = np.flatnonzero(local_max & (r > 1.0))
        current = np.flatnonzero(q > 1e-12)
        # The grid optimum needs at most one atom per observed cell, so a
        # heavy EM iterate spread over hundreds of columns is transient;
        # keep the heaviest few per cell and let the exchange re-add any
        # column the cap was wrong about.
        cap = 3 * hs.size + 2
        if current.size > cap:
            current = current[np.argsort(q[current])[::-1][:cap]]
        support = np.unique(np.concatenate([current, candidates]))
        w = _restricted_solve(hs, bs[:, support], q[support])
        q_cand = np.zeros_like(q)
        q_cand[support] = w / w.sum()
        d_cand = bs @ q_cand
        # the truncated start can lose mass, so only keep improvements
        if float(np.sum(hs * np.log(hs / d_cand))) <= f_cur:
            q, d = q_cand, d_cand
    return q


def estimate_mle(obs: ObservationSet, cfg: MleConfig = MleConfig(),
                 init: np.ndarray | None = None) -> EstimateReport:
    """Grid NPMLE: minimize KL(h_obs, E_Q[h]) over the discretized simplex.

    Runs the multiplicative EM fixed point q_j <- q_j * sum_s h_s B_s(x_j) /
    E_q[h_s] from a positive initializer (uniform by default), stopping when
    the objective decrease over EM_STOP_WINDOW iterations falls below
    cfg.tolerance or max_iterations is hit, then applies the KKT polish
    unless cfg.polish is False. The objective trace is non-increasing.
    """
    start = time.perf_counter()
    m = cfg.grid_size
    h = fingerprint_of(obs).fractions
    b = bernstein_pmf(obs.t, np.arange(m + 1) / m)
    seen = h > 0
    hs, bs = h[seen], b[seen]

    if init is None:
        q = np.full(m + 1, 1.0 / (m + 1))
    else:
        q = np.asarray(init, dtype=float)
        if q.shape != (m + 1,) or q.min() <= 0:
            raise ValueError("init must be strictly positive with m+1 entries")
        q = q / q.sum()

    d = bs @ q
    if np.any(d <= 0):
        raise AssertionError("positive initializer must give positive E_q[h_s]")

    trace = [_kl(hs, d)]
    converged = False
    for _ in range(cfg.max_iterations):
        q = q * (bs.T @ (hs / d))
        q /= q.sum()
        d = bs @ q
        trace.append(_kl(hs, d))
        if (len(trace) > EM_STOP_WINDOW
                and trace[-1 - EM_STOP_WINDOW] - trace[-1] < cfg.tolerance):
            converged = True
            break

    if cfg.polish:
        q = _polish_mle(h, b, q, kkt_tol=cfg.kkt_tolerance)
        trace.append(_kl(hs, bs @ q))
        converged = True

    floor = max(cfg.support_floor, OUTPUT_PRUNE_TOL)
    keep = q > floor
    dist = grid_distribution(np.where(keep, q, 0.0) / q[keep].sum(), m)
    final = _kl(hs, bs @ np.where(keep, q, 0.0) / q[keep].sum())
    return EstimateReport(
        method="mle",
        distribution=dist,
        iterations=len(trace) - 1,
        final_objective=final,
        converged=converged,
        elapsed=time.perf_counter() - start,
        objective_trace=np.asarray(trace),
    )


def estimate_empirical(obs: ObservationSet) -> EstimateReport:
    """Plug-in estimator: an atom of mass 1/N at X_i / t for each individual."""
    start = time.perf_counter()
    n_s = np.bincount(obs.counts, minlength=obs.t + 1)
    keep = n_s > 0
    dist = AtomicDistribution(np.arange(obs.t + 1)[keep] / obs.t,
                              n_s[keep] / obs.n)
    return EstimateReport(
        method="empirical",
        distribution=dist,
        iterations=0,
        final_objective=0.0,
        converged=True,
        elapsed=time.perf_counter() - start,
    )


def unbiased_moments(obs: ObservationSet, k: int,
                     t_override: int | None = None) -> np.ndarray:
    """Unbiased raw moment estimates mu_l = mean_i C(X_i,l)/C(t,l), l=1..k.

    C(X,l)/C(t,l) is an unbiased estimator of p^l, so these estimate the
    first k moments of the mixing distribution. Requires k <= t.
    """
    t = obs.t if t_override is None else t_override
    if k > t:
        raise ValueError(f"moments above order t={t} are not unbiasedly estimable")
    h = np.bincount(obs.counts, minlength=t + 1) / obs.n
    table = np.array([[math.comb(v, l) / math.comb(t, l) for l in range(1, k + 1)]
                      for v in range(t + 1)])
    return h @ table


@dataclass(frozen=True)
class MomentLpSolution:
    measure: AtomicDistribution
    residual: float
    iterations: int


def solve_moment_lp(interval: tuple[float, float], grid_size: int,
                    target: MomentVector, mass: float,
                    norm: Literal["linf", "l1"] = "linf",
                    tol: float = 1e-9) -> MomentLpSolution:
    """Find a measure of fixed total mass on a grid over ``interval`` whose
    shifted moments match ``target`` with minimal residual.

    The LP minimizes the maximum absolute moment mismatch (or the L1 sum
    with norm="l1"). Internally the moments are rescaled by powers of the
    interval half-width about the shift so the constraint matrix stays
    well-conditioned for orders up to ~log N; the reported residual is in
    the original (unscaled) moment units. Deterministic: the simplex pivot
    rule is pure index arithmetic, so ties among optima resolve identically
    on every run.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if hi <= lo:
        raise ValueError("interval must have positive length")
    if mass <= 0:
        raise ValueError("mass must be positive")
    k = target.order
    x = np.linspace(lo, hi, grid_size + 1)
    scale = max(hi - target.shift, target.shift - lo)
    if scale <= 0:
        scale = hi - lo
    u = (x - target.shift) / scale
    powers = u[None, :] ** np.arange(1, k + 1)[:, None]
    goal = target.values / (mass * scale ** np.arange(1, k + 1))

    n = x.size
    if norm == "linf":
        # variables: nu_0..nu_n-1 (probability weights), r
        c = np.zeros(n + 1)
        c[-1] = 1.0
        a_ub = np.zeros((2 * k, n + 1))
        a_ub[:k, :n] = powers
        a_ub[:k, -1] = -1.0
        a_ub[k:, :n] = -powers
        a_ub[k:, -1] = -1.0
        b_ub = np.concatenate([goal, -goal])
        a_eq = np.zeros((1, n + 1))
        a_eq[0, :n] = 1.0
        res = solve_lp(c, a_eq=a_eq, b_eq=[1.0], a_ub=a_ub, b_ub=b_ub, tol=tol)
        weights = res.x[:n]
    elif norm == "l1":
        # variables: nu, r_1..r_k
        c = np.concatenate([np.zeros(n), np.ones(k)])
        a_ub = np.zeros((2 * k, n + k))
        a_ub[:k, :n] = powers
        a_ub[:k, n:] = -np.eye(k)
        a_ub[k:, :n] = -powers
        a_ub[k:, n:] = -np.eye(k)
        b_ub = np.concatenate([goal, -goal])
        a_eq = np.zeros((1, n + k))
        a_eq[0, :n] = 1.0
        res = solve_lp(c, a_eq=a_eq, b_eq=[1.0], a_ub=a_ub, b_ub=b_ub, tol=tol)
        weights = res.x[:n]
    else:
        raise ValueError(f"unknown norm {norm!r}")

    raw_resid = np.abs(powers @ weights - goal) * mass * scale ** np.arange(1, k + 1)
    keep = weights > OUTPUT_PRUNE_TOL
    if not np.any(keep):
        keep = weights == weights.max()
    w = weights[keep] * (mass / weights[keep].sum())
    measure = AtomicDistribution(x[keep], w, total_mass=mass)
    return MomentLpSolution(measure=measure,
                            residual=float(raw_resid.max()),
                            iterations=res.iterations)


def estimate_moment_matching(obs: ObservationSet, k: int,
                             grid_size: int = 1000,
                             norm: Literal["linf", "l1"] = "linf",
                             lp_tolerance: float = 1e-9) -> EstimateReport:
    """Global moment matching: fit a grid distribution on [0, 1] to the first
    k unbiased moment estimates by linear programming."""
    if not 1 <= k <= obs.t:
        raise ValueError(f"k must be in [1, t]; got k={k}, t={obs.t}")
    start = time.perf_counter()
    mu = unbiased_moments(obs, k)
    target = MomentVector(k, mu, shift=0.0)
    sol = solve_moment_lp((0.0, 1.0), grid_size, target, 1.0,
                          norm=norm, tol=lp_tolerance)
    return EstimateReport(
        method="moment_matching",
        distribution=sol.measure,
        iterations=sol.iterations,
        final_objective=sol.residual,
        converged=True,
        elapsed=time.perf_counter() - start,
    )


def _lmm_bins(t: int, n: int, cfg: LmmConfig) -> tuple[int, np.ndarray, np.ndarray]:
    """Bin count M and edges for local moment matching.

    log N means natural log floored at 1 so N = 1 degenerates to a single
    global bin; the last right edge is clamped to 1 so every individual is
    assigned somewhere.
    """
    log_n = max(1.0, math.log(n))
    m_bins = max(1, math.isqrt(int(t / (cfg.c2 * log_n))))
    j = np.arange(1, m_bins + 1)
    left = np.minimum((j - 1) ** 2 * cfg.c1 * log_n / t, 1.0)
    right = np.minimum(j ** 2 * cfg.c1 * log_n / t, 1.0)
    right[-1] = 1.0
    return m_bins, left, right


def estimate_local_moment_matching(trials, cfg: LmmConfig = LmmConfig()) -> EstimateReport:
    """Local moment matching from raw per-trial outcomes.

    Splits each individual's trials into a first batch (bin assignment via
    the plug-in estimate) and a second batch (unbiased shifted moments per
    bin), then recovers one measure per bin on its widened interval with the
    moment LP and returns the normalized sum. Requires a TrialMatrix; counts
    alone cannot be split into batches.
    """
    from .simulate import TrialMatrix  # deferred: simulate imports estimators

    if isinstance(trials, ObservationSet):
        raise ValueError(
            "raw trials required: local moment matching splits each "
            "individual's trials into two batches, which success counts "
            "alone do not determine"
        )
    if not isinstance(trials, TrialMatrix):
        raise TypeError(f"expected TrialMatrix, got {type(trials).__name__}")
    t = trials.t
    n = trials.n
    if t < 4:
        raise ValueError("local moment matching needs t >= 4 for a batch split")
    if n < 2:
        raise ValueError("local moment matching needs N >= 2")

    start = time.perf_counter()
    t_first = t // 2
    t_second = t - t_first
    first = trials.outcomes[:, :t_first].sum(axis=1)
    second = trials.outcomes[:, t_first:].sum(axis=1)

    log_n = max(1.0, math.log(n))
    m_bins, left, right = _lmm_bins(t, n, cfg)
    k = min(math.ceil(cfg.c2 * log_n), t // 2)

    plug_in = first / t_first
    # half-open bins [l_j, r_j), last bin closed
    bin_of = np.searchsorted(right[:-1], plug_in, side="right")

    comb_table = np.array(
        [[math.comb(v, l) / math.comb(t_second, l) for l in range(k + 1)]
         for v in range(t_second + 1)]
    )

    pieces: list[AtomicDistribution] = []
    residual = 0.0
    iterations = 0
    for j in range(m_bins):
        members = second[bin_of == j]
        n_j = members.size
        if n_j == 0:
            continue
        l_j = left[j]
        if m_bins == 1:
            lo, hi = 0.0, 1.0
        else:
            log_term = cfg.c1 * log_n / t
            lo = max(0.0, (j - 0.5) ** 2 * log_term)
            hi = min(1.0, (j + 2) ** 2 * log_term)
        # unbiased raw moments of the second batch, shifted to l_j and
        # scaled by the bin's mass n_j/N (the LP matches the moments of an
        # unnormalized measure with that total)
        raw = comb_table[members].mean(axis=0)  # E[C(X,l)/C(t'',l)], l=0..k
        shifted = np.empty(k)
        for order in range(1, k + 1):
            shifted[order - 1] = sum(
                math.comb(order, l) * (-l_j) ** (order - l) * raw[l]
                for l in range(order + 1)
            )
        target = MomentVector(k, shifted * (n_j / n), shift=l_j)
        sol = solve_moment_lp((lo, hi), cfg.grid_size, target, n_j / n,
                              tol=cfg.lp_tolerance)
        pieces.append(sol.measure)
        residual = max(residual, sol.residual)
        iterations += sol.iterations

    locations = np.concatenate([p.locations for p in pieces])
    masses = np.concatenate([p.masses for p in pieces])
    dist = AtomicDistribution(locations, masses / masses.sum())
    return EstimateReport(
        method="local_moment_matching",
        distribution=dist,
        iterations=iterations,
        final_objective=residual,
        converged=True,
        elapsed=time.perf_counter() - start,
    )
