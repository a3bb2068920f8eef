"""Вероятности разбиений (EPPF) и условные априорные распределения размеров кластеров.

EPPF вычисляется для неупорядоченного разбиения с данными размерами блоков;
переход к помеченным размерам (множитель N!/k! · Π 1/N_j!) выполняется только
в kplus_prior и тестовых оракулах.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np
from scipy import special

from app.model_priors import ModelSpec, gamma_at, log_pmf_K
from app.recursion_core import DPM, build_c_table, component_tables, log_V, mixing_weights

__all__ = [
    "LabelledSizes",
    "conditional_sizes_prior",
    "log_eppf",
    "log_eppf_dpm",
    "log_eppf_given_K",
    "log_eppf_mfm",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelledSizes:
    sizes: Tuple[int, ...]
    N: int

    def __post_init__(self) -> None:
        if not self.sizes:
            raise ValueError("Нужен хотя бы один кластер.")
        if any(size < 1 for size in self.sizes):
            raise ValueError(f"Размеры кластеров должны быть положительными: {self.sizes}.")
        if sum(self.sizes) != self.N:
            raise ValueError(f"Сумма размеров {sum(self.sizes)} не равна N={self.N}.")

    @classmethod
    def of(cls, sizes: Iterable[int]) -> "LabelledSizes":
        values = tuple(int(size) for size in sizes)
        return cls(sizes=values, N=sum(values))

    @classmethod
    def parse(cls, text: str, N: int | None = None) -> "LabelledSizes":
        """Разбирает список через запятую, например `3,2,1`."""
        try:
            values = tuple(int(part) for part in text.split(",") if part.strip())
        except ValueError as exc:
            raise ValueError(f"Не удалось разобрать размеры кластеров: {text!r}.") from exc
        return cls(sizes=values, N=sum(values) if N is None else N)

    @property
    def k(self) -> int:
        return len(self.sizes)

    def as_array(self) -> np.ndarray:
        """Размеры по возрастанию: суммы не зависят от порядка блоков."""
        return np.sort(np.asarray(self.sizes, dtype=float))


def log_eppf_dpm(sizes: LabelledSizes, alpha: float) -> float:
    """ln[α^k Γ(α)/Γ(α+N) Π Γ(N_j)]: распределение Юэнса."""
    n = sizes.as_array()
    return float(
        sizes.k * math.log(alpha)
        + special.gammaln(alpha)
        - special.gammaln(alpha + sizes.N)
        + np.sum(special.gammaln(n))
    )


def log_eppf_given_K(sizes: LabelledSizes, K: int, gamma_K: float) -> float:
    """ln p(C | N, K, γ_K) = ln[V^{K,γ_K}_{N,k} / Γ(γ_K)^k · Π Γ(N_j+γ_K)]."""
    k = sizes.k
    if k > K:
        return -math.inf
    n = sizes.as_array()
    log_v = log_V(sizes.N, k, K, gamma_K)
    return float(log_v - k * special.gammaln(gamma_K) + np.sum(special.gammaln(n + gamma_K)))


def log_eppf_mfm(sizes: LabelledSizes, spec: ModelSpec) -> float:
    """ln Σ_{K>=k} p(K) p(C | N, K, γ_K) с усечением по K_max."""
    if spec.is_dpm:
        raise ValueError("log_eppf_mfm определена только для MFM; для DPM используйте log_eppf_dpm.")
    if sizes.N != spec.N:
        raise ValueError(f"Сумма размеров {sizes.N} не равна N={spec.N}.")

    bound = spec.k_bound()
    terms = [
        log_pmf_K(spec.prior_k, K) + log_eppf_given_K(sizes, K, gamma_at(spec.gammas, K))
        for K in range(sizes.k, bound.k_max + 1)
        if math.isfinite(log_pmf_K(spec.prior_k, K))
    ]
    if not terms:
        return -math.inf
    return float(special.logsumexp(terms))


def log_eppf(sizes: LabelledSizes, spec: ModelSpec) -> float:
    if spec.is_dpm:
        return log_eppf_dpm(sizes, spec.alpha)
    return log_eppf_mfm(sizes, spec)


def _log_w(n: np.ndarray, gamma_K) -> np.ndarray:
    if gamma_K is DPM:
        return -np.log(n)
    return special.gammaln(n + gamma_K) - special.gammaln(n + 1.0)


def conditional_sizes_prior(sizes: LabelledSizes, spec: ModelSpec) -> float:
    """p(N_1, ..., N_k | N, K+ = k, γ) для помеченных размеров кластеров.

    DPM: Π(1/N_j) / C^∞_{N,k} (не зависит от α); статическая MFM: Π w_{N_j} / C^γ_{N,k}
    (не зависит от p(K)); динамическая MFM: Σ_K w^{K,α}_{N,k} Π Γ(N_j+α/K)/Γ(N_j+1).
    """
    if sizes.N != spec.N:
        raise ValueError(f"Сумма размеров {sizes.N} не равна N={spec.N}.")
    n = sizes.as_array()
    k = sizes.k

    if spec.is_dpm or spec.gammas.is_static:
        gamma = DPM if spec.is_dpm else spec.gammas.value
        table = build_c_table(spec.N, gamma, k)
        return math.exp(float(np.sum(_log_w(n, gamma))) - table.log_c(spec.N, k))

    tables = component_tables(spec, k)
    weights = mixing_weights(spec, k, tables)
    if not weights.Ks.size:
        return 0.0
    log_products = np.array([np.sum(_log_w(n, spec.gammas.value / K)) for K in weights.Ks])
    return math.exp(float(special.logsumexp(weights.log_w + log_products)))
