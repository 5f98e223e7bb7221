"""Stirling numbers, Touchard polynomials and Poisson count laws.

Everything probability-valued is evaluated in log space and exponentiated
at the end, so masses of order 10^3 and counts of order 10^4 are safe.
"""

from __future__ import annotations

import math
from functools import lru_cache

MAX_N = 64


@lru_cache(maxsize=None)
def stirling_table(max_n: int = MAX_N) -> tuple[tuple[int, ...], ...]:
    """Rows ``S(n, 0..n)`` for ``n <= max_n`` as exact integers."""
    rows = [(1,)]
    for n in range(1, max_n + 1):
        prev = rows[-1]
        row = [0] * (n + 1)
        for l in range(1, n + 1):
            up = prev[l] if l < len(prev) else 0
            row[l] = l * up + prev[l - 1]
        rows.append(tuple(row))
    return tuple(rows)


def stirling2(n: int, l: int, max_n: int = MAX_N) -> int:
    """Number of partitions of ``n`` labelled items into ``l`` nonempty blocks."""
    if not (0 <= l <= n <= max_n):
        raise ValueError(f"need 0 <= l <= n <= {max_n}, got n={n}, l={l}")
    return stirling_table(max_n)[n][l]


def bell(n: int) -> int:
    return sum(stirling_table()[n])


def touchard(n: int, x: float) -> float:
    """T_n(x) = sum_l S(n, l) x^l, the n-th raw moment of Poisson(x)."""
    if not 0 <= n <= MAX_N:
        raise ValueError(f"n must lie in [0, {MAX_N}]")
    if n == 0:
        return 1.0
    row = stirling_table()[n]
    # Horner in x over l = n..1
    acc = 0.0
    for l in range(n, 0, -1):
        acc = acc * x + row[l]
    return acc * x


def log_poisson_count_pmf(n: int, mass: float) -> float:
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    if n < 0:
        return -math.inf
    if mass == 0.0:
        return 0.0 if n == 0 else -math.inf
    return n * math.log(mass) - mass - math.lgamma(n + 1)


def poisson_count_pmf(n: int, mass: float) -> float:
    """P(N = n) for N ~ Poisson(mass), with mass = intensity * volume."""
    return math.exp(log_poisson_count_pmf(n, mass))


def log_stirling_factor(n: int) -> float:
    """log of n! (e/n)^n, which is >= 0 for n >= 1."""
    return math.lgamma(n + 1) + n * (1.0 - math.log(n))


def subpoisson_pmf_bound(n: int, kappa: float, volume: float) -> float:
    """Upper bound n! (e/n)^n pi_kappa(N = n) on the count law of a sub-Poissonian state."""
    if n < 1:
        raise ValueError("the bound is stated for n >= 1")
    return math.exp(log_stirling_factor(n) + log_poisson_count_pmf(n, kappa * volume))


def poisson_mgf(beta: float, mass: float) -> float:
    """E exp(beta N) for N ~ Poisson(mass)."""
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    return math.exp(mass * math.expm1(beta))


def poisson_mgf_series(beta: float, mass: float, terms: int = 30) -> float:
    """Truncated series sum_{n < terms} beta^n T_n(mass) / n!."""
    total = 0.0
    for n in range(terms):
        total += beta ** n * touchard(n, mass) / math.factorial(n)
    return total
