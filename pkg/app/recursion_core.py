"""Логарифмические рекурсии для сумм C_{N,k}, величин V и весов смеси по K.

Все величины хранятся в логарифмической шкале: w_n = Γ(n+γ)/Γ(n+1) переполняет
double уже при n порядка 170, поэтому произведение на треугольную тёплицеву
матрицу выполняется как logsumexp по строкам.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, special

from app.config import get_settings
from app.model_priors import (
    GAMMA_FLOOR,
    ComponentCountPrior,
    ModelSpec,
    TruncationError,
    TruncationPolicy,
    TruncationWarning,
    gamma_at,
    truncation_bound,
)

__all__ = [
    "CTable",
    "ComponentTables",
    "DPM",
    "MixingWeights",
    "WeightVector",
    "build_c_table",
    "component_tables",
    "log_V",
    "marginal_log_V",
    "mixing_weights",
    "static_V_table",
    "weight_terms",
]

logger = logging.getLogger(__name__)

# Маркер DPM вместо γ_K: веса w_n = 1/n.
DPM = None


def _check_gamma(gamma_K: Optional[float]) -> None:
    if gamma_K is not None and gamma_K < GAMMA_FLOOR:
        raise ValueError(f"γ_K={gamma_K} меньше допустимого {GAMMA_FLOOR}.")


@dataclass(frozen=True)
class WeightVector:
    """ln w_n для n = 1..n_max; log_w[n-1] = ln w_n."""

    n_max: int
    gamma_K: Optional[float]
    log_w: np.ndarray

    @classmethod
    def build(cls, n_max: int, gamma_K: Optional[float]) -> "WeightVector":
        _check_gamma(gamma_K)
        n = np.arange(1, n_max + 1, dtype=float)
        if gamma_K is DPM:
            log_w = -np.log(n)
        else:
            log_w = special.gammaln(n + gamma_K) - special.gammaln(n + 1.0)
        log_w.setflags(write=False)
        return cls(n_max=n_max, gamma_K=gamma_K, log_w=log_w)


@dataclass(frozen=True)
class CTable:
    """Состояние рекурсии: для каждого k вектор (ln C_{N,k}, ln C_{N-1,k}, ..., ln C_{k,k})."""

    N: int
    gamma_K: Optional[float]
    k_max: int
    weights: WeightVector
    vectors: Sequence[np.ndarray] = field(repr=False)

    def vector(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.k_max:
            raise ValueError(f"k={k} вне диапазона таблицы 1..{self.k_max}.")
        return self.vectors[k - 1]

    def log_c(self, m: int, k: int) -> float:
        """ln C_{m,k} с соглашением C_{m,0} = 1 при m = 0 и 0 иначе."""
        if k == 0:
            return 0.0 if m == 0 else -math.inf
        if m < k or m > self.N:
            return -math.inf
        return float(self.vector(k)[self.N - m])

    def column(self, k: int) -> np.ndarray:
        """ln C_{m,k} для m = 0..N (индекс массива равен m)."""
        out = np.full(self.N + 1, -np.inf)
        if k == 0:
            out[0] = 0.0
            return out
        out[k:] = self.vector(k)[::-1]
        return out


def build_c_table(N: int, gamma_K: Optional[float], k_max: int) -> CTable:
    """Строит ln C^{K,γ_K}_{m,k} по рекуррентному соотношению c_k = (0 | W_k) c_{k-1}."""
    if N < 1:
        raise ValueError(f"N должно быть положительным: {N}.")
    if not 1 <= k_max <= N:
        raise ValueError(f"k_max={k_max} должно лежать в диапазоне 1..N={N}.")

    weights = WeightVector.build(N, gamma_K)
    logger.debug("Построение C-таблицы: N=%s, γ_K=%s, k_max=%s.", N, gamma_K, k_max)

    # Верхняя треугольная тёплицева матрица W_1 в логарифмах: под диагональю -inf.
    first_column = np.full(N, -np.inf)
    first_column[0] = weights.log_w[0]
    log_W1 = linalg.toeplitz(first_column, weights.log_w)

    vectors: List[np.ndarray] = [weights.log_w[::-1].copy()]
    for k in range(2, k_max + 1):
        previous = vectors[-1][1:]
        W_k = log_W1[k - 1:, k - 1:]
        current = special.logsumexp(W_k + previous[np.newaxis, :], axis=1)
        vectors.append(current)

    for vector in vectors:
        vector.setflags(write=False)
    return CTable(N=N, gamma_K=gamma_K, k_max=k_max, weights=weights, vectors=tuple(vectors))


def log_V(N: int, k: int, K: int, gamma_K: float) -> float:
    """ln V^{K,γ_K}_{N,k} = ln[Γ(γK) K! / (Γ(γK+N) (K-k)!)]; -inf при k > K."""
    if k > K:
        return -math.inf
    gK = gamma_K * K
    return float(
        special.gammaln(gK)
        + special.gammaln(K + 1.0)
        - special.gammaln(gK + N)
        - special.gammaln(K - k + 1.0)
    )


def _log_V_over_K(N: int, k: int, Ks: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    gK = gammas * Ks
    value = (
        special.gammaln(gK)
        + special.gammaln(Ks + 1.0)
        - special.gammaln(gK + N)
        - special.gammaln(np.maximum(Ks - k, 0) + 1.0)
    )
    return np.where(Ks >= k, value, -np.inf)


def marginal_log_V(gamma: float, prior_k: ComponentCountPrior, N: int, k: int, K_max: int) -> float:
    """ln Σ_{K=k}^{K_max} p(K) V^{K,γ}_{N,k} прямым усечённым суммированием."""
    if k > K_max:
        return -math.inf
    Ks = np.arange(max(k, 1), K_max + 1, dtype=float)
    terms = prior_k.log_pmf(Ks) + _log_V_over_K(N, k, Ks, np.full_like(Ks, gamma))
    return float(special.logsumexp(terms))


def static_V_table(
    gamma: float,
    prior_k: ComponentCountPrior,
    N: int,
    k_max: int,
    K_max: int | None = None,
) -> np.ndarray:
    """Таблица V^γ_{n,k} (n = 0..N, k = 0..k_max) по рекурсии Миллера–Харрисона.

    V_{n+1,k+1} = V_{n,k}/γ - (n/γ + k) V_{n+1,k}; затравка V_{n,0} = Σ_K p(K) / (γK)_n,
    где (x)_n = x(x+1)...(x+n-1). Вычисления ведутся в точных дробях (Fraction от γ и p(K)),
    в float округляется только результат.
    Служит для сверки с marginal_log_V; ячейки с n < k равны NaN.
    """
    if prior_k.is_infinity:
        raise ValueError("Рекурсия V^γ определена только для MFM с конечными K.")
    _check_gamma(gamma)
    if not 0 <= k_max <= N:
        raise ValueError(f"k_max={k_max} должно лежать в диапазоне 0..N={N}.")
    if K_max is None:
        K_max = truncation_bound(prior_k, 1, TruncationPolicy.from_settings()).k_max

    g = Fraction(gamma)
    Ks = np.arange(1, K_max + 1)
    log_p = prior_k.log_pmf(Ks)
    masses = [(Fraction(math.exp(lp)), g * int(K)) for K, lp in zip(Ks, log_p) if math.isfinite(lp)]

    exact: List[List[Fraction]] = [[Fraction(0)] * (k_max + 1) for _ in range(N + 1)]
    rising = [Fraction(1)] * len(masses)
    for n in range(N + 1):
        exact[n][0] = sum((p / r for (p, _), r in zip(masses, rising)), Fraction(0))
        rising = [r * (gK + n) for (_, gK), r in zip(masses, rising)]
    for k in range(k_max):
        for n in range(k, N):
            exact[n + 1][k + 1] = exact[n][k] / g - (n / g + k) * exact[n + 1][k]

    table = np.full((N + 1, k_max + 1), np.nan)
    for n in range(N + 1):
        for k in range(min(n, k_max) + 1):
            table[n, k] = float(exact[n][k])
    return table


@dataclass(frozen=True)
class ComponentTables:
    """C-таблицы по всем K усечённой суммы.

    Для DPM и статической MFM таблица одна и общая для всех K; для динамической
    MFM таблица строится для каждого K отдельно.
    """

    spec: ModelSpec
    Ks: np.ndarray
    log_prior: np.ndarray
    gammas: np.ndarray
    tables: Sequence[CTable]
    covered_mass: float
    shared: bool

    def table_for(self, index: int) -> CTable:
        return self.tables[0] if self.shared else self.tables[index]

    @property
    def K_top(self) -> int:
        """Наибольшее K усечённой суммы; для DPM равно N."""
        if self.spec.is_dpm:
            return self.spec.N
        return int(self.Ks.max())


def component_tables(spec: ModelSpec, k_max: int) -> ComponentTables:
    """Строит C-таблицы до k_max для всех K от 1 до K_max политики усечения."""
    N = spec.N
    k_max = min(k_max, N)

    if spec.is_dpm:
        table = build_c_table(N, DPM, k_max)
        return ComponentTables(
            spec=spec,
            Ks=np.array([math.inf]),
            log_prior=np.zeros(1),
            gammas=np.array([np.nan]),
            tables=(table,),
            covered_mass=1.0,
            shared=True,
        )

    bound = spec.k_bound()
    k_max = min(k_max, bound.k_max)
    Ks = np.arange(1, bound.k_max + 1)
    log_prior = spec.prior_k.log_pmf(Ks)
    support = np.isfinite(log_prior)
    Ks, log_prior = Ks[support], log_prior[support]
    if not Ks.size:
        raise TruncationError(
            f"Носитель p(K) ({spec.prior_k.spec_string()}) не пересекается с 1..K_max={bound.k_max}."
        )
    gammas = np.array([gamma_at(spec.gammas, int(K)) for K in Ks], dtype=float)

    if spec.gammas.is_static:
        tables: Sequence[CTable] = (build_c_table(N, spec.gammas.value, k_max),)
    else:
        def build(K: int) -> CTable:
            return build_c_table(N, gamma_at(spec.gammas, K), min(k_max, K))

        threads = get_settings().threads
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                tables = tuple(pool.map(build, (int(K) for K in Ks)))
        else:
            tables = tuple(build(int(K)) for K in Ks)

    return ComponentTables(
        spec=spec,
        Ks=Ks,
        log_prior=log_prior,
        gammas=gammas,
        tables=tables,
        covered_mass=bound.covered_mass,
        shared=spec.gammas.is_static,
    )


@dataclass(frozen=True)
class MixingWeights:
    """Ненормированные ln w̃^{K,γ_K}_{N,k}, ln C^{K}_{N,k} по K и ln нормировки."""

    k: int
    Ks: np.ndarray
    log_w_tilde: np.ndarray
    log_c: np.ndarray
    log_normalizer: float
    covered_mass: float
    truncated: bool

    @property
    def log_w(self) -> np.ndarray:
        """Нормированные веса: Σ_K w^{K}·C^{K}_{N,k} = 1."""
        return self.log_w_tilde - self.log_normalizer


def weight_terms(tables: ComponentTables, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Позиции K в таблицах, K, ln w̃^{K,γ_K}_{N,k} и ln C^{K,γ_K}_{N,k} для K >= k.

    Для DPM: единственный член с ln w̃ = 0.
    """
    N = tables.spec.N
    if tables.spec.is_dpm:
        log_c = np.array([tables.tables[0].log_c(N, k)])
        return np.zeros(1, dtype=int), tables.Ks, np.zeros(1), log_c

    indices = np.flatnonzero(tables.Ks >= k)
    Ks = tables.Ks[indices].astype(float)
    gammas = tables.gammas[indices]
    # Γ(γ_K)^k = Γ(1+γ_K)^k / γ_K^k.
    log_w_tilde = (
        tables.log_prior[indices]
        + k * np.log(gammas)
        - k * special.gammaln(1.0 + gammas)
        + _log_V_over_K(N, k, Ks, gammas)
    )
    log_c = np.array([tables.table_for(int(i)).log_c(N, k) for i in indices], dtype=float)
    return indices, Ks, log_w_tilde, log_c


def mixing_weights(spec: ModelSpec, k: int, tables: ComponentTables | None = None) -> MixingWeights:
    """Веса w̃ = p(K) γ_K^k Γ(γ_K K) K! / (Γ(1+γ_K)^k Γ(γ_K K+N) (K-k)!) для K = k..K_max.

    Для DPM возвращается единственный тривиальный вес 1.
    """
    if not 1 <= k <= spec.N:
        raise ValueError(f"k={k} должно лежать в диапазоне 1..N={spec.N}.")
    tables = tables or component_tables(spec, k)

    _, Ks, log_w_tilde, log_c = weight_terms(tables, k)
    log_normalizer = float(special.logsumexp(log_w_tilde + log_c)) if Ks.size else -math.inf

    truncated = tables.covered_mass < spec.trunc.min_covered_mass_warn
    if truncated:
        message = f"Покрытая масса p(K) {tables.covered_mass:.6f} ниже порога для весов при k={k}."
        logger.warning(message)
        warnings.warn(message, TruncationWarning, stacklevel=2)

    return MixingWeights(
        k=k,
        Ks=Ks,
        log_w_tilde=log_w_tilde,
        log_c=log_c,
        log_normalizer=log_normalizer,
        covered_mass=tables.covered_mass,
        truncated=truncated,
    )
