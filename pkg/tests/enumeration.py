"""Переборные оракулы для малых N: композиции, разбиения множеств, числа Стирлинга."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from typing import Callable, Dict, Iterator, List, Optional, Tuple

from scipy import special


def compositions(N: int, k: int) -> Iterator[Tuple[int, ...]]:
    """Упорядоченные наборы k положительных целых с суммой N."""
    for cuts in itertools.combinations(range(1, N), k - 1):
        bounds = (0,) + cuts + (N,)
        yield tuple(b - a for a, b in zip(bounds, bounds[1:]))


def set_partition_sizes(N: int) -> Counter:
    """Число разбиений {1..N} для каждого мультимножества размеров блоков."""
    counts: Counter = Counter()

    def grow(position: int, sizes: List[int]) -> None:
        if position == N:
            counts[tuple(sorted(sizes, reverse=True))] += 1
            return
        for block in range(len(sizes)):
            sizes[block] += 1
            grow(position + 1, sizes)
            sizes[block] -= 1
        sizes.append(1)
        grow(position + 1, sizes)
        sizes.pop()

    grow(0, [])
    return counts


def unsigned_stirling_first(N: int) -> List[List[int]]:
    """|s(n, k)| для n, k = 0..N: |s(n+1, k)| = n|s(n, k)| + |s(n, k-1)|."""
    table = [[0] * (N + 1) for _ in range(N + 1)]
    table[0][0] = 1
    for n in range(N):
        for k in range(1, n + 2):
            table[n + 1][k] = n * table[n][k] + table[n][k - 1]
    return table


def weight(n: int, gamma_K: Optional[float]) -> float:
    """w_n: 1/n для DPM (gamma_K=None), иначе Γ(n+γ)/Γ(n+1)."""
    if gamma_K is None:
        return 1.0 / n
    return math.exp(special.gammaln(n + gamma_K) - special.gammaln(n + 1.0))


def brute_c(N: int, k: int, gamma_K: Optional[float]) -> float:
    return sum(math.prod(weight(n, gamma_K) for n in sizes) for sizes in compositions(N, k))


def conditional_law(N: int, k: int, gamma_K: Optional[float]) -> Dict[Tuple[int, ...], float]:
    """p(N_1, ..., N_k | N, K+ = k) для DPM и статической MFM перебором композиций."""
    raw = {sizes: math.prod(weight(n, gamma_K) for n in sizes) for sizes in compositions(N, k)}
    total = sum(raw.values())
    return {sizes: value / total for sizes, value in raw.items()}


def brute_moments(
    law: Dict[Tuple[int, ...], float],
    statistic: Callable[[Tuple[int, ...]], float],
) -> Tuple[float, float]:
    mean = sum(p * statistic(sizes) for sizes, p in law.items())
    second = sum(p * statistic(sizes) ** 2 for sizes, p in law.items())
    return mean, second - mean * mean


def brute_marginal(law: Dict[Tuple[int, ...], float], N: int) -> List[float]:
    """P(N_1 = n) для n = 1..N."""
    out = [0.0] * N
    for sizes, p in law.items():
        out[sizes[0] - 1] += p
    return out
