"""Chebyshev fits of Lipschitz functions, Bernstein degree raising, the
Chebyshev-in-Bernstein coefficient table, and executable checks of every
coefficient bound the estimator's error analysis leans on.

Coefficient sums alternate in sign and cancel catastrophically (the summands
reach ~4^t while the results stay polynomial in t), so every table entry is
computed with exact integer arithmetic and stored as sign plus
log-magnitude; floating point only enters when a bound is compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .core import bernstein_pmf


def shifted_chebyshev(m: int, x) -> np.ndarray:
    """Shifted Chebyshev polynomial T~_m on [0, 1] via the recurrence
    T~_m(x) = (4x - 2) T~_{m-1}(x) - T~_{m-2}(x)."""
    if m < 0:
        raise ValueError("degree must be >= 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t_prev = np.ones_like(x)
    if m == 0:
        return t_prev
    t_cur = 2 * x - 1
    for _ in range(m - 1):
        t_prev, t_cur = t_cur, (4 * x - 2) * t_cur - t_prev
    return t_cur


def _cheb_nodes(k: int) -> np.ndarray:
    i = np.arange(k + 1)
    return (1 + np.cos((2 * i + 1) * np.pi / (2 * (k + 1)))) / 2


@dataclass(frozen=True)
class ChebyshevFit:
    """Coefficients a_0..a_k of a shifted-Chebyshev interpolant plus its
    measured sup-norm error on a dense grid.

    For Lipschitz-1 targets with |f| <= 1/2 the coefficient norm satisfies
    ||a||_2 <= 1 in theory; interpolation (used here, unlike the
    existential construction behind the guarantee) can overshoot slightly,
    so coefficient_norm is reported rather than asserted.
    """

    degree: int
    coefficients: np.ndarray
    uniform_error: float

    @property
    def coefficient_norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        total = np.zeros_like(x)
        for m, a in enumerate(self.coefficients):
            total += a * shifted_chebyshev(m, x)
        return total


def chebyshev_fit(f: Callable[[np.ndarray], np.ndarray], k: int) -> ChebyshevFit:
    """Degree-k Chebyshev interpolant of f on [0, 1].

    Interpolates at the k+1 shifted Chebyshev points; coefficients come from
    the discrete cosine projection, which is exact on those nodes. The
    uniform error is measured on a 10k-point grid.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    nodes = _cheb_nodes(k)
    values = np.asarray(f(nodes), dtype=float)
    theta = (2 * np.arange(k + 1) + 1) * np.pi / (2 * (k + 1))
    coeffs = np.empty(k + 1)
    for m in range(k + 1):
        proj = np.cos(m * theta) @ values
        coeffs[m] = (1.0 if m == 0 else 2.0) * proj / (k + 1)
    dense = np.linspace(0.0, 1.0, 10 * k + 1)
    fit = ChebyshevFit(k, coeffs, 0.0)
    err = float(np.max(np.abs(fit(dense) - np.asarray(f(dense), dtype=float))))
    return ChebyshevFit(k, coeffs, err)


def _log_abs_int(value: int) -> float:
    """log |value| for arbitrarily large integers; -inf for zero."""
    if value == 0:
        return float("-inf")
    a = abs(value)
    bits = a.bit_length()
    if bits <= 900:
        return math.log(a)
    shift = bits - 900
    return math.log(a >> shift) + shift * math.log(2)


@dataclass(frozen=True)
class CoeffTable:
    """Chebyshev-in-Bernstein coefficients C(t, m, j) for T~_m = sum_j
    C(t,m,j) B_j^t, stored as sign and log-magnitude."""

    t: int
    m_max: int
    signs: np.ndarray      # (m_max+1, t+1) int8
    log_mags: np.ndarray   # (m_max+1, t+1); -inf where the entry is zero

    def value(self, m: int, j: int) -> float:
        return float(self.signs[m, j] * np.exp(self.log_mags[m, j]))

    def values(self, m: int) -> np.ndarray:
        return self.signs[m] * np.exp(self.log_mags[m])

    def max_abs(self, m: int) -> float:
        return float(np.exp(self.log_mags[m].max()))

    def log_l2_norm(self, m: int) -> float:
        """log sqrt(sum_j C(t,m,j)^2), computed stably in log space."""
        top = float(self.log_mags[m].max())
        if not np.isfinite(top):
            return float("-inf")
        return top + 0.5 * math.log(float(np.sum(np.exp(2 * (self.log_mags[m] - top)))))


def coeff_table(t: int, m_max: int | None = None) -> CoeffTable:
    """All C(t, m, j) for m <= m_max via the closed-form alternating sum
    C(t,m,j) = sum_l (-1)^(m-l) C(2m,2l) C(t-m,j-l) / C(t,j), evaluated in
    exact integer arithmetic."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if m_max is None:
        m_max = t
    if m_max > t:
        raise ValueError("m_max must be <= t")
    signs = np.zeros((m_max + 1, t + 1), dtype=np.int8)
    log_mags = np.full((m_max + 1, t + 1), -np.inf)
    for m in range(m_max + 1):
        for j in range(t + 1):
            total = 0
            for l in range(max(0, j - (t - m)), min(j, m) + 1):
                term = math.comb(2 * m, 2 * l) * math.comb(t - m, j - l)
                total += -term if (m - l) % 2 else term
            if total:
                signs[m, j] = 1 if total > 0 else -1
                log_mags[m, j] = _log_abs_int(total) - _log_abs_int(math.comb(t, j))
    return CoeffTable(t, m_max, signs, log_mags)


def degree_raise(m: int, i: int, t: int) -> np.ndarray:
    """Coefficients expressing B_i^m in the degree-t Bernstein basis:
    B_i^m = sum_j [C(m,i) C(t-m,j-i) / C(t,j)] B_j^t."""
    if not 0 <= i <= m <= t:
        raise ValueError("need 0 <= i <= m <= t")
    out = np.zeros(t + 1)
    for j in range(i, min(i + t - m, t) + 1):
        out[j] = float(
            Fraction(math.comb(m, i) * math.comb(t - m, j - i), math.comb(t, j))
        )
    return out


@dataclass(frozen=True)
class CoeffBoundRow:
    t: int
    m: int
    max_abs_coeff: float
    lemma_bound: float       # (t+1) e^(m^2/t), bounds both max|C| and the l2 norm
    conjecture_bound: float  # e^(m^2/t)
    l2_norm: float
    lemma_ok: bool
    conjecture_ok: bool


@dataclass(frozen=True)
class CoeffBoundReport:
    t: int
    rows: tuple[CoeffBoundRow, ...]
    max_ratio: float          # max over m of max|C| / lemma bound
    all_lemma_ok: bool
    conjecture_observed: bool # True if the conjectured bound held for every m


def verify_coeff_bound(t: int) -> CoeffBoundReport:
    """Check |C(t,m,j)| <= (t+1) e^(m^2/t) and the matching l2-norm bound
    for all m, j <= t; the conjectured plain e^(m^2/t) bound is recorded,
    never asserted. Comparisons run in log space."""
    table = coeff_table(t, t)
    rows = []
    max_ratio = 0.0
    for m in range(t + 1):
        log_bound = math.log(t + 1) + m * m / t
        log_max = float(table.log_mags[m].max())
        log_l2 = table.log_l2_norm(m)
        lemma_ok = (log_max <= log_bound + 1e-12) and (log_l2 <= log_bound + 1e-12)
        conj_ok = log_max <= m * m / t + 1e-12
        max_ratio = max(max_ratio, math.exp(log_max - log_bound))
        rows.append(CoeffBoundRow(
            t=t, m=m,
            max_abs_coeff=math.exp(log_max),
            lemma_bound=math.exp(log_bound),
            conjecture_bound=math.exp(min(m * m / t, 700.0)),
            l2_norm=math.exp(log_l2),
            lemma_ok=lemma_ok,
            conjecture_ok=conj_ok,
        ))
    return CoeffBoundReport(
        t=t,
        rows=tuple(rows),
        max_ratio=max_ratio,
        all_lemma_ok=all(r.lemma_ok for r in rows),
        conjecture_observed=all(r.conjecture_ok for r in rows),
    )


def assemble_bernstein_coeffs(fit: ChebyshevFit, t: int) -> np.ndarray:
    """Bernstein-basis coefficients b_j = sum_m a_m C(t, m, j) of a
    Chebyshev fit re-expressed in the degree-t basis.

    Asserts the bound max_j |b_j| <= sqrt(k) (t+1) e^(k^2/t) that the
    estimator's error analysis uses (its k = t form is sqrt(t) 2^t).
    """
    k = fit.degree
    if k > t:
        raise ValueError(f"fit degree {k} exceeds target degree {t}")
    table = coeff_table(t, k)
    c_values = np.array([table.values(m) for m in range(k + 1)])
    b = fit.coefficients @ c_values
    bound = math.sqrt(k) * (t + 1) * math.exp(min(k * k / t, 700.0))
    if k == t:
        bound = min(bound, math.sqrt(t) * 2.0 ** t)
    worst = float(np.max(np.abs(b)))
    if worst > bound * (1 + 1e-9):
        raise AssertionError(
            f"assembled coefficient bound violated: max |b_j| = {worst:g} "
            f"exceeds {bound:g} for k={k}, t={t}"
        )
    return b


def kravchuk_coefficients(k: int, t: int) -> list[int]:
    """Integer coefficients K_j(k; t): sum_j K_j z^j = (1+z)^(t-k) (1-z)^k."""
    if not 0 <= k <= t:
        raise ValueError("need 0 <= k <= t")
    poly = [1]
    for _ in range(t - k):
        poly = [a + b for a, b in zip(poly + [0], [0] + poly)]
    for _ in range(k):
        poly = [a - b for a, b in zip(poly + [0], [0] + poly)]
    return poly


@dataclass(frozen=True)
class KravchukReport:
    t: int
    k: int
    derivative_sum: float   # sum_j |B_j^(k)(1/2)| / k!
    bound: float            # sqrt(t) e^k t^(k/2) / k^(k/2)
    bound_ok: bool
    generating_identity_ok: bool


def kravchuk_bound_check(t: int, k: int) -> KravchukReport:
    """Exact check of sum_j |B_j^(k)(1/2)/k!| against sqrt(t) e^k (t/k)^(k/2).

    The derivative values are B_j^(k)(1/2)/k! = (-1)^k 2^(k-t) C(t,k)
    K_j(k;t), obtained from the generating function of the Bernstein basis;
    everything up to the final comparison is exact rational arithmetic.
    Also validates the Kravchuk generating identity at z in {-1/2, 1/2, 2}.
    """
    if not 1 <= k <= t:
        raise ValueError("need 1 <= k <= t")
    coeffs = kravchuk_coefficients(k, t)
    abs_sum = Fraction(math.comb(t, k) * sum(abs(c) for c in coeffs), 2 ** (t - k))
    log_sum = _log_abs_int(abs_sum.numerator) - _log_abs_int(abs_sum.denominator)
    log_bound = 0.5 * math.log(t) + k + 0.5 * k * math.log(t / k)

    identity_ok = True
    for z in (Fraction(-1, 2), Fraction(1, 2), Fraction(2)):
        lhs = sum(c * z ** j for j, c in enumerate(coeffs))
        rhs = (1 + z) ** (t - k) * (1 - z) ** k
        if lhs != rhs:
            identity_ok = False

    return KravchukReport(
        t=t,
        k=k,
        derivative_sum=math.exp(log_sum) if log_sum < 700 else float("inf"),
        bound=math.exp(log_bound) if log_bound < 700 else float("inf"),
        bound_ok=log_sum <= log_bound + 1e-12,
        generating_identity_ok=identity_ok,
    )


def bernstein_classic_error(f: Callable[[np.ndarray], np.ndarray], t: int,
                            grid_points: int = 2001) -> float:
    """Sup-norm error of the classical Bernstein operator b_j = f(j/t)."""
    x = np.linspace(0.0, 1.0, grid_points)
    basis = bernstein_pmf(t, x)
    approx = np.asarray(f(np.arange(t + 1) / t), dtype=float) @ basis
    return float(np.max(np.abs(approx - np.asarray(f(x), dtype=float))))
