"""Core domain types: observation sets, fingerprints, atomic distributions on
[0, 1], and the Bernstein evaluation matrix shared by every estimator.

All types are immutable after construction and all operations are pure
functions, so everything here is safe to share across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Atoms closer than this (in location) are merged on construction.
ATOM_MERGE_TOL = 1e-12
#: Tolerance for total-mass validation of a distribution.
MASS_TOL = 1e-10
#: Tolerance for fingerprint normalization.
FINGERPRINT_SUM_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def log_binomial(t: int, s) -> np.ndarray:
    """log C(t, s) via a log-factorial table; exact enough for t up to ~10^4."""
    log_fact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, t + 1)))])
    s = np.asarray(s)
    return log_fact[t] - log_fact[s] - log_fact[t - s]


def bernstein_pmf(t: int, x) -> np.ndarray:
    """Evaluate all Bernstein basis polynomials of degree t at points x.

    Returns an array of shape (t+1, len(x)) whose (s, j) entry is
    C(t,s) x_j^s (1-x_j)^(t-s), i.e. the Binomial(t, x_j) pmf at s.
    Computed in log space so that degrees of 1000 and more stay finite.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((x < 0) | (x > 1)):
        raise ValueError("evaluation points must lie in [0, 1]")
    s = np.arange(t + 1)
    log_coeff = log_binomial(t, s)

    interior = (x > 0) & (x < 1)
    out = np.zeros((t + 1, x.size))
    if np.any(interior):
        xi = x[interior]
        log_pmf = (
            log_coeff[:, None]
            + s[:, None] * np.log(xi)[None, :]
            + (t - s)[:, None] * np.log1p(-xi)[None, :]
        )
        out[:, interior] = np.exp(log_pmf)
    out[0, x == 0] = 1.0
    out[t, x == 1] = 1.0
    return out


@dataclass(frozen=True)
class ObservationSet:
    """N individuals, each summarized by a success count out of t trials."""

    t: int
    counts: np.ndarray

    def __post_init__(self):
        if self.t < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise ValueError("counts must be a non-empty 1-d sequence")
        if counts.min() < 0 or counts.max() > self.t:
            bad = int(np.argmax((counts < 0) | (counts > self.t)))
            raise ValueError(
                f"count {counts[bad]} at index {bad} outside [0, {self.t}]"
            )
        object.__setattr__(self, "counts", _readonly(counts))

    @property
    def n(self) -> int:
        return int(self.counts.size)


@dataclass(frozen=True)
class Fingerprint:
    """Fractions h_0..h_t of individuals that showed each success count.

    ``total_count`` is the population size N for observed fingerprints and
    None for model (expected) fingerprints.
    """

    t: int
    fractions: np.ndarray
    total_count: int | None = None

    def __post_init__(self):
        if self.t < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")
        h = np.asarray(self.fractions, dtype=float)
        if h.shape != (self.t + 1,):
            raise ValueError(f"expected {self.t + 1} fractions, got shape {h.shape}")
        if h.min() < -1e-15 or h.max() > 1 + 1e-12:
            raise ValueError("fractions must lie in [0, 1]")
        h = np.clip(h, 0.0, 1.0)
        total = h.sum()
        if abs(total - 1.0) > FINGERPRINT_SUM_TOL:
            raise ValueError(f"fractions sum to {total!r}, expected 1")
        if self.total_count is not None:
            scaled = h * self.total_count
            if np.max(np.abs(scaled - np.round(scaled))) > 1e-9:
                raise ValueError("fractions * N must be integral for observed data")
        object.__setattr__(self, "fractions", _readonly(h))


@dataclass(frozen=True)
class AtomicDistribution:
    """Finite measure on [0, 1] stored as atoms with strictly increasing
    locations. ``total_mass`` is 1 for probability distributions; the moment
    LP also produces unnormalized bin measures with other totals.

    Atoms closer than ``ATOM_MERGE_TOL`` are merged (masses summed) and
    zero-mass atoms are dropped on construction.
    """

    locations: np.ndarray
    masses: np.ndarray
    total_mass: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.masses, dtype=float)
        if x.shape != w.shape or x.ndim != 1 or x.size == 0:
            raise ValueError("locations and masses must be matching 1-d arrays")
        if x.min() < -1e-15 or x.max() > 1 + 1e-15:
            raise ValueError("atom locations must lie in [0, 1]")
        if w.min() < -1e-12:
            raise ValueError("atom masses must be nonnegative")
        x = np.clip(x, 0.0, 1.0)

        order = np.argsort(x, kind="stable")
        x, w = x[order], np.clip(w[order], 0.0, None)

        # merge near-coincident locations, then drop empty atoms
        keep = np.empty(x.size, dtype=bool)
        keep[0] = True
        keep[1:] = np.diff(x) > ATOM_MERGE_TOL
        group = np.cumsum(keep) - 1
        merged_x = x[keep]
        merged_w = np.bincount(group, weights=w)
        nz = merged_w > 0
        if not np.any(nz):
            raise ValueError("distribution has no mass")
        merged_x, merged_w = merged_x[nz], merged_w[nz]

        total = merged_w.sum()
        if abs(total - self.total_mass) > MASS_TOL * max(1.0, self.total_mass):
            raise ValueError(
                f"masses sum to {total!r}, expected {self.total_mass!r}"
            )
        object.__setattr__(self, "locations", _readonly(merged_x))
        object.__setattr__(self, "masses", _readonly(merged_w))
        object.__setattr__(self, "total_mass", float(total))

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]],
                   total_mass: float = 1.0) -> "AtomicDistribution":
        pairs = list(atoms)
        return cls(np.array([a[0] for a in pairs]),
                   np.array([a[1] for a in pairs]), total_mass)

    @classmethod
    def point_mass(cls, x: float) -> "AtomicDistribution":
        return cls(np.array([x]), np.array([1.0]))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations.tolist(), self.masses.tolist()))

    def cdf(self, x) -> np.ndarray:
        """Right-continuous CDF (or mass function of [0, x] for measures)."""
        cum = np.cumsum(self.masses)
        idx = np.searchsorted(self.locations, np.asarray(x, dtype=float),
                              side="right")
        return np.concatenate([[0.0], cum])[idx]

    def mean(self) -> float:
        return float(self.locations @ self.masses) / self.total_mass

    def normalized(self) -> "AtomicDistribution":
        if abs(self.total_mass - 1.0) <= MASS_TOL:
            return self
        return AtomicDistribution(self.locations, self.masses / self.total_mass)


@dataclass(frozen=True)
class BernsteinMatrix:
    """Bernstein basis values on a uniform grid: entry (s, j) = B_s^t(j/m).

    Columns are Binomial(t, j/m) pmfs, so each column sums to 1; the matrix
    maps grid masses to the expected fingerprint.
    """

    t: int
    grid: np.ndarray
    entries: np.ndarray

    def __post_init__(self):
        if np.any(self.entries < 0):
            raise ValueError("Bernstein matrix entries must be nonnegative")
        col_err = np.max(np.abs(self.entries.sum(axis=0) - 1.0))
        if col_err > 1e-10:
            raise ValueError(f"columns must sum to 1; max deviation {col_err:g}")
        object.__setattr__(self, "grid", _readonly(self.grid))
        object.__setattr__(self, "entries", _readonly(self.entries))

    def apply(self, grid_masses: np.ndarray) -> np.ndarray:
        return self.entries @ np.asarray(grid_masses, dtype=float)


def fingerprint_of(obs: ObservationSet) -> Fingerprint:
    """Observed fingerprint: h_s = (# individuals with count s) / N."""
    n_s = np.bincount(obs.counts, minlength=obs.t + 1)
    return Fingerprint(obs.t, n_s / obs.n, total_count=obs.n)


def bernstein_matrix(t: int, m: int) -> BernsteinMatrix:
    """Bernstein evaluation matrix of degree t on the uniform grid {j/m}."""
    if t < 1 or m < 1:
        raise ValueError("t and m must both be >= 1")
    grid = np.arange(m + 1) / m
    return BernsteinMatrix(t, grid, bernstein_pmf(t, grid))


def expected_fingerprint(q: AtomicDistribution, t: int) -> Fingerprint:
    """Expected fingerprint E_Q[h] when biases are drawn from Q."""
    if abs(q.total_mass - 1.0) > MASS_TOL:
        raise ValueError("expected_fingerprint needs a probability distribution")
    h = bernstein_pmf(t, q.locations) @ q.masses
    return Fingerprint(t, h / h.sum())


def grid_distribution(masses: np.ndarray, m: int | None = None) -> AtomicDistribution:
    """Probability distribution on the uniform grid {j/m} with given masses."""
    masses = np.asarray(masses, dtype=float)
    if m is None:
        m = masses.size - 1
    if masses.shape != (m + 1,):
        raise ValueError("need m+1 masses for grid {j/m}")
    return AtomicDistribution(np.arange(m + 1) / m, masses)


def snap_to_grid(dist: AtomicDistribution, m: int) -> AtomicDistribution:
    """Move each atom to its nearest grid node j/m, summing masses."""
    nearest = np.round(dist.locations * m) / m
    return AtomicDistribution(nearest, dist.masses, dist.total_mass)
