"""Distances between distributions and fingerprints: Wasserstein-1, KL,
total variation, and raw/shifted moment vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AtomicDistribution, Fingerprint


@dataclass(frozen=True)
class MomentVector:
    """Moments E[(x - shift)^k] for k = 1..order (shift 0 gives raw moments)."""

    order: int
    values: np.ndarray
    shift: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.order,):
            raise ValueError(f"expected {self.order} moment values")
        bound = max(abs(1.0 - self.shift), abs(self.shift))
        caps = bound ** np.arange(1, self.order + 1)
        if np.any(np.abs(v) > caps + 1e-8):
            k = int(np.argmax(np.abs(v) - caps))
            raise ValueError(
                f"moment {k + 1} = {v[k]!r} exceeds the [0,1]-support bound {caps[k]!r}"
            )
        object.__setattr__(self, "values", v)


def wasserstein1(p: AtomicDistribution, q: AtomicDistribution) -> float:
    """Exact W1 between atomic distributions on [0, 1].

    Integrates |F_P - F_Q| by merging both atom location sets into shared
    breakpoints; no grid snapping, so empirical estimators with atoms at
    arbitrary X_i/t positions are handled exactly.
    """
    xs = np.union1d(p.locations, q.locations)
    fp = p.cdf(xs)
    fq = q.cdf(xs)
    return float(np.abs(fp[:-1] - fq[:-1]) @ np.diff(xs))


def kl_divergence(a: Fingerprint, b: Fingerprint) -> float:
    """KL(A, B) in nats; +inf when A puts mass where B has none."""
    if a.t != b.t:
        raise ValueError(f"fingerprint degrees differ: {a.t} != {b.t}")
    pa, pb = a.fractions, b.fractions
    seen = pa > 0
    if np.any(pb[seen] == 0):
        return float("inf")
    return float(np.sum(pa[seen] * np.log(pa[seen] / pb[seen])))


def total_variation_fingerprint(a: Fingerprint, b: Fingerprint) -> float:
    """TV distance with the standard 1/2-normalized convention."""
    if a.t != b.t:
        raise ValueError(f"fingerprint degrees differ: {a.t} != {b.t}")
    return float(0.5 * np.sum(np.abs(a.fractions - b.fractions)))


def moments(p: AtomicDistribution, k_max: int, shift: float = 0.0) -> MomentVector:
    """Shifted moments mu_k = sum_i mass_i (x_i - shift)^k, k = 1..k_max."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    centered = p.locations - shift
    powers = centered[None, :] ** np.arange(1, k_max + 1)[:, None]
    return MomentVector(k_max, powers @ p.masses, shift)


def shift_moments(mv: MomentVector, new_shift: float) -> MomentVector:
    """Re-express moments about a different shift via binomial expansion.

    Uses mu_k' = sum_l C(k,l) (shift - new_shift)^(k-l) mu_l with mu_0 = total
    mass 1; valid for probability distributions.
    """
    from math import comb

    d = mv.shift - new_shift
    old = np.concatenate([[1.0], mv.values])
    new = np.empty(mv.order)
    for k in range(1, mv.order + 1):
        new[k - 1] = sum(comb(k, l) * d ** (k - l) * old[l] for l in range(k + 1))
    return MomentVector(mv.order, new, new_shift)


def pinsker_check(a: Fingerprint, b: Fingerprint) -> bool:
    """Whether KL(A,B) >= ||A-B||_1^2 / 2 holds (Pinsker, natural-log form).

    Equivalent to the base-2 statement KL_2 >= ||A-B||_1^2 / (2 ln 2).
    Used by the property suite only.
    """
    kl = kl_divergence(a, b)
    if not np.isfinite(kl):
        return True
    l1 = float(np.sum(np.abs(a.fractions - b.fractions)))
    return kl >= 0.5 * l1 * l1 - 1e-12


def metric_record(metric: str, value: float, details: dict | None = None) -> dict:
    """JSON-ready record for a metric result: {metric, value, details}."""
    return {"metric": metric, "value": value, "details": details or {}}
