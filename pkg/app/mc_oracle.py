"""Монте-Карло оракул: разбиения из порождающей модели (MFM) и китайского ресторана (DPM).

Генератор: numpy PCG64. Поток блока i задаётся SeedSequence(seed, spawn_key=(i,)),
размер блока берётся из настроек, поэтому оценки не зависят от числа потоков.
Гамма-величины с формой γ < 1 получаются сдвигом формы:
ln G(γ) = ln G(γ+1) + ln(U)/γ, нормировка весов Дирихле через logsumexp.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Tuple, Union

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence
from scipy import special

from app.config import get_settings
from app.model_priors import ModelSpec, gamma_at
from app.partition_functionals import Functional
from app.tables import SummaryTable

__all__ = [
    "BudgetExceeded",
    "ConditionalEstimate",
    "EmpiricalPmf",
    "PartitionSample",
    "WeightedEstimate",
    "estimate_conditional_functional",
    "estimate_kplus_pmf",
    "estimate_weighted_entropy",
    "relative_entropy",
    "simulate_partition",
    "simulate_partitions",
]

logger = logging.getLogger(__name__)

ValueFn = Callable[[np.ndarray], float]


class BudgetExceeded(RuntimeError):
    """Отбор с отклонением исчерпал бюджет розыгрышей."""


@dataclass(frozen=True)
class PartitionSample:
    assignments: np.ndarray
    k_plus: int
    sizes: Tuple[int, ...]

    @classmethod
    def from_assignments(cls, assignments: np.ndarray) -> "PartitionSample":
        counts = np.bincount(assignments)
        sizes = tuple(sorted((int(c) for c in counts if c > 0), reverse=True))
        return cls(assignments=assignments, k_plus=len(sizes), sizes=sizes)


def block_rng(seed: int, block: int) -> Generator:
    return Generator(PCG64(SeedSequence(seed, spawn_key=(block,))))


def _log_dirichlet(rng: Generator, gamma_K: float, K: int) -> np.ndarray:
    """ln η для η ~ Dirichlet(γ_K, ..., γ_K); годится для любых γ_K > 0."""
    log_g = np.log(rng.standard_gamma(gamma_K + 1.0, size=K)) + np.log(rng.random(K)) / gamma_K
    return log_g - special.logsumexp(log_g)


def _crp_assignments(rng: Generator, N: int, alpha: float) -> np.ndarray:
    labels = np.empty(N, dtype=np.int64)
    sizes: List[int] = []
    uniforms = rng.random(N)
    for i in range(N):
        target = uniforms[i] * (i + alpha)
        acc = 0.0
        for table, size in enumerate(sizes):
            acc += size
            if target < acc:
                break
        else:
            table = len(sizes)
            sizes.append(0)
        sizes[table] += 1
        labels[i] = table
    return labels


def _mfm_assignments(rng: Generator, spec: ModelSpec) -> np.ndarray:
    K = int(spec.prior_k.sample(rng, 1)[0])
    log_eta = _log_dirichlet(rng, gamma_at(spec.gammas, K), K)
    cdf = np.cumsum(np.exp(log_eta))
    labels = np.searchsorted(cdf, rng.random(spec.N) * cdf[-1], side="right")
    return np.minimum(labels, K - 1)


def _draw(rng: Generator, spec: ModelSpec) -> np.ndarray:
    if spec.is_dpm:
        return _crp_assignments(rng, spec.N, spec.alpha)
    return _mfm_assignments(rng, spec)


def _blocks(n_draws: int, block_size: int) -> List[Tuple[int, int]]:
    return [(block, min(block_size, n_draws - block * block_size))
            for block in range(math.ceil(n_draws / block_size))]


def simulate_partitions(spec: ModelSpec, n_draws: int, rng_seed: int) -> Iterator[PartitionSample]:
    """Последовательность разбиений; i-е разбиение одно и то же при любом n_draws >= i."""
    if n_draws < 1:
        raise ValueError(f"Число розыгрышей должно быть положительным: {n_draws}.")
    for block, size in _blocks(n_draws, get_settings().mc_block_size):
        rng = block_rng(rng_seed, block)
        for _ in range(size):
            yield PartitionSample.from_assignments(_draw(rng, spec))


def simulate_partition(spec: ModelSpec, rng_seed: int) -> PartitionSample:
    return next(simulate_partitions(spec, 1, rng_seed))


def relative_entropy(sizes: np.ndarray) -> float:
    """-Σ (N_j/N) ln(N_j/N) / ln k; для одного кластера 0."""
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size <= 1:
        return 0.0
    share = sizes / sizes.sum()
    return float(-np.sum(share * np.log(share)) / math.log(sizes.size))


def _value_fn(f: Union[Functional, str]) -> Tuple[str, ValueFn]:
    if isinstance(f, Functional):
        return f.name, f
    if f == "entropy":
        return "entropy", relative_entropy
    if f == "singletons":
        return "singletons", Functional.singletons()
    raise ValueError(f"Неизвестный функционал: {f!r}.")


def _run_block(
    spec: ModelSpec,
    seed: int,
    block: int,
    size: int,
    value_fn: Optional[ValueFn],
) -> Tuple[np.ndarray, np.ndarray]:
    rng = block_rng(seed, block)
    k_plus = np.empty(size, dtype=np.int64)
    values = np.empty(size if value_fn is not None else 0)
    for i in range(size):
        counts = np.bincount(_draw(rng, spec))
        sizes = counts[counts > 0]
        k_plus[i] = sizes.size
        if value_fn is not None:
            values[i] = value_fn(sizes)
    return k_plus, values


def _run(
    spec: ModelSpec,
    seed: int,
    blocks: List[Tuple[int, int]],
    value_fn: Optional[ValueFn] = None,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Результаты блоков в порядке номеров блоков."""
    threads = get_settings().threads
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda item: _run_block(spec, seed, item[0], item[1], value_fn), blocks))
    return [_run_block(spec, seed, block, size, value_fn) for block, size in blocks]


@dataclass(frozen=True)
class EmpiricalPmf:
    N: int
    freqs: np.ndarray
    se: np.ndarray
    n_draws: int

    def to_table(self) -> SummaryTable:
        table = SummaryTable(columns=("k", "freq", "se"), meta={"n": self.N, "draws": self.n_draws})
        table.extend((k, float(f), float(s)) for k, (f, s) in enumerate(zip(self.freqs, self.se), start=1))
        return table


def estimate_kplus_pmf(spec: ModelSpec, n_draws: int, rng_seed: int) -> EmpiricalPmf:
    """Частоты K+ = k, k = 1..N, и биномиальные стандартные ошибки."""
    if n_draws < 1:
        raise ValueError(f"Число розыгрышей должно быть положительным: {n_draws}.")
    counts = np.zeros(spec.N + 1)
    for k_plus, _ in _run(spec, rng_seed, _blocks(n_draws, get_settings().mc_block_size)):
        counts += np.bincount(k_plus, minlength=spec.N + 1)
    freqs = counts[1:] / n_draws
    se = np.sqrt(freqs * (1.0 - freqs) / n_draws)
    logger.info("Оценка P(K+) для %s: %s розыгрышей, seed=%s.", spec.model_class, n_draws, rng_seed)
    return EmpiricalPmf(N=spec.N, freqs=freqs, se=se, n_draws=n_draws)


@dataclass(frozen=True)
class ConditionalEstimate:
    k: int
    mean: float
    variance: float
    se: float
    n_accepted: int
    n_draws: int


def estimate_conditional_functional(
    spec: ModelSpec,
    k: int,
    f: Union[Functional, str],
    n_accepted: int,
    rng_seed: int,
    draw_budget: Optional[int] = None,
) -> ConditionalEstimate:
    """Условные моменты функционала при K+ = k отбором с отклонением.

    f = "entropy" означает относительную энтропию, иначе Ψ = Σ ψ(N_j).
    """
    if not 1 <= k <= spec.N:
        raise ValueError(f"k={k} должно лежать в диапазоне 1..N={spec.N}.")
    if n_accepted < 1:
        raise ValueError(f"Число принятых розыгрышей должно быть положительным: {n_accepted}.")
    settings = get_settings()
    budget = settings.mc_draw_budget if draw_budget is None else draw_budget
    block_size = settings.mc_block_size
    _, value_fn = _value_fn(f)

    accepted: List[np.ndarray] = []
    total_accepted = 0
    draws = 0
    block = 0
    while total_accepted < n_accepted:
        if draws >= budget:
            raise BudgetExceeded(
                f"Принято {total_accepted} из {n_accepted} розыгрышей с K+ = {k} за {draws} попыток: "
                f"бюджет {budget} исчерпан."
            )
        wave = [(b, min(block_size, budget - draws - (b - block) * block_size))
                for b in range(block, block + settings.threads)]
        wave = [(b, size) for b, size in wave if size > 0]
        for k_plus, values in _run(spec, rng_seed, wave, value_fn):
            picked = values[k_plus == k]
            accepted.append(picked)
            total_accepted += picked.size
            draws += k_plus.size
        block += len(wave)

    sample = np.concatenate(accepted)[:n_accepted]
    mean = float(np.mean(sample))
    variance = float(np.var(sample, ddof=1)) if sample.size > 1 else 0.0
    logger.info("Условная оценка при K+ = %s: принято %s из %s розыгрышей.", k, n_accepted, draws)
    return ConditionalEstimate(
        k=k,
        mean=mean,
        variance=variance,
        se=math.sqrt(variance / sample.size),
        n_accepted=n_accepted,
        n_draws=draws,
    )


@dataclass(frozen=True)
class WeightedEstimate:
    mean: float
    within_variance: float
    total_variance: float
    se: float
    n_draws: int


def estimate_weighted_entropy(spec: ModelSpec, n_draws: int, rng_seed: int) -> WeightedEstimate:
    """Безусловные моменты относительной энтропии.

    within_variance = Σ_k P̂(K+ = k)·V̂ar(ℰ | K+ = k); total_variance добавляет
    разброс условных средних между k.
    """
    if n_draws < 1:
        raise ValueError(f"Число розыгрышей должно быть положительным: {n_draws}.")
    results = _run(spec, rng_seed, _blocks(n_draws, get_settings().mc_block_size), relative_entropy)
    k_plus = np.concatenate([k for k, _ in results])
    values = np.concatenate([v for _, v in results])

    within = 0.0
    for k in np.unique(k_plus):
        group = values[k_plus == k]
        within += group.size / n_draws * float(np.var(group))
    total = float(np.var(values))
    return WeightedEstimate(
        mean=float(np.mean(values)),
        within_variance=within,
        total_variance=total,
        se=math.sqrt(total / n_draws),
        n_draws=n_draws,
    )
