"""Маргинальные распределения размеров кластеров и моменты аддитивных функционалов разбиения.

Функционал Ψ(N_1, ..., N_k) = Σ ψ(N_j) задаётся ядром ψ на n = 1..N. Все суммы по n
и по K считаются в логарифмах; для ядер со знаком используется logsumexp с
учётом знака, нулевые значения ψ пропускаются.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, special

from app.kplus_prior import KPlusPmf, kplus_pmf
from app.model_priors import ModelSpec
from app.recursion_core import CTable, ComponentTables, build_c_table, component_tables, mixing_weights

__all__ = [
    "Functional",
    "FunctionalStats",
    "VARIANCE_TOLERANCE",
    "WEIGHTED_MASS",
    "expected_psi",
    "expected_psi_product",
    "functional_stats",
    "marginal_size_pmf",
    "relative_entropy_stats",
    "singleton_stats",
    "weighted_stats",
]

logger = logging.getLogger(__name__)

VARIANCE_TOLERANCE = 1e-9
# Взвешенные статистики суммируются по k, пока не покрыта эта масса P(K+).
WEIGHTED_MASS = 1.0 - 1e-8


@dataclass(frozen=True)
class Functional:
    """Ядро ψ аддитивного функционала; kernel принимает массив n и возвращает ψ(n)."""

    name: str
    kernel: Optional[Callable[[np.ndarray], np.ndarray]] = None
    table: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if (self.kernel is None) == (self.table is None):
            raise ValueError("Функционал задаётся либо ядром, либо таблицей значений.")

    @classmethod
    def entropy(cls) -> "Functional":
        return cls(name="entropy", kernel=_entropy_kernel)

    @classmethod
    def singletons(cls) -> "Functional":
        return cls(name="singletons", kernel=_singleton_kernel)

    @classmethod
    def from_table(cls, values: Iterable[float], name: str = "custom") -> "Functional":
        """values[n-1] = ψ(n)."""
        return cls(name=name, table=tuple(float(value) for value in values))

    @classmethod
    def from_file(cls, path: Union[str, Path], name: str = "custom") -> "Functional":
        """Читает ψ из CSV: строки `n,value` (n = 1, 2, ...) или по одному значению в строке."""
        path = Path(path)
        pairs: List[Tuple[int, float]] = []
        with path.open("r", encoding="utf-8", newline="") as handle:
            for line_no, row in enumerate(csv.reader(handle), start=1):
                cells = [cell.strip() for cell in row if cell.strip()]
                if not cells or cells[0].startswith("#"):
                    continue
                try:
                    if len(cells) == 1:
                        pairs.append((len(pairs) + 1, float(cells[0])))
                    else:
                        pairs.append((int(cells[0]), float(cells[1])))
                except ValueError:
                    if line_no == 1:
                        continue  # заголовок
                    raise ValueError(f"{path}:{line_no}: не удалось разобрать строку {row!r}.") from None
        pairs.sort()
        expected = list(range(1, len(pairs) + 1))
        if [n for n, _ in pairs] != expected:
            raise ValueError(f"В {path} значения ψ должны идти для n = 1, 2, ... без пропусков.")
        return cls.from_table((value for _, value in pairs), name=name)

    def values(self, N: int) -> np.ndarray:
        """ψ(n) для n = 1..N."""
        if self.table is not None:
            if len(self.table) < N:
                raise ValueError(f"Ядро {self.name!r} задано для n <= {len(self.table)}, нужно до N={N}.")
            out = np.asarray(self.table[:N], dtype=float)
        else:
            out = np.asarray(self.kernel(np.arange(1, N + 1, dtype=float)), dtype=float)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"Ядро {self.name!r} содержит неконечные значения.")
        return out

    def __call__(self, sizes: Sequence[int]) -> float:
        sizes = np.asarray(sizes, dtype=int)
        psi = self.values(int(sizes.max()))
        return float(np.sum(psi[sizes - 1]))


def _entropy_kernel(n: np.ndarray) -> np.ndarray:
    return n * np.log(n)


def _singleton_kernel(n: np.ndarray) -> np.ndarray:
    return (n == 1).astype(float)


@dataclass(frozen=True)
class FunctionalStats:
    k: Union[int, str]
    mean: float
    variance: float
    raw_variance: float
    name: str = ""

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


def _clamp_variance(raw: float, scale: float, context: str) -> float:
    if raw >= 0.0:
        return raw
    if raw < -VARIANCE_TOLERANCE * max(1.0, scale):
        message = f"Отрицательная дисперсия {raw:.3e} для {context}: обнулена."
        logger.warning(message)
        warnings.warn(message, RuntimeWarning, stacklevel=3)
    return 0.0


@dataclass(frozen=True)
class _Term:
    log_weight: float
    table: CTable


def _terms(spec: ModelSpec, k: int, tables: Optional[ComponentTables] = None) -> List[_Term]:
    """Слагаемые смеси по K: нормированный ln w^{K}_{N,k} и C-таблица.

    DPM и статическая MFM сводятся к одному слагаемому с весом 1/C_{N,k}:
    условные величины не зависят ни от α, ни от p(K).
    """
    N = spec.N
    if not 1 <= k <= N:
        raise ValueError(f"k={k} должно лежать в диапазоне 1..N={N}.")

    if spec.is_dpm or spec.gammas.is_static:
        table = None
        if tables is not None and tables.tables[0].k_max >= k:
            table = tables.tables[0]
        if table is None:
            gamma = None if spec.is_dpm else spec.gammas.value
            table = build_c_table(N, gamma, k)
        return [_Term(log_weight=-table.log_c(N, k), table=table)]

    tables = tables if tables is not None else component_tables(spec, k)
    weights = mixing_weights(spec, k, tables)
    if not weights.Ks.size:
        raise ValueError(f"P(K+ = {k}) = 0 при K_max={tables.K_top}: условные величины не определены.")
    indices = np.flatnonzero(tables.Ks >= k)
    return [
        _Term(log_weight=float(log_w), table=tables.table_for(int(index)))
        for index, log_w in zip(indices, weights.log_w)
    ]


def _signed_log(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(values)), np.sign(values)


def _signed_sum(log_mag: np.ndarray, signs: np.ndarray, axis=None) -> Tuple[np.ndarray, np.ndarray]:
    """ln|Σ s·e^a| и знак суммы; нулевые знаки пропускаются."""
    signs = np.where(np.isfinite(log_mag), signs, 0.0)
    log_mag = np.where(signs != 0.0, log_mag, -np.inf)
    if np.all(signs >= 0.0):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = special.logsumexp(log_mag, axis=axis)
        return out, np.where(np.isfinite(out), 1.0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out, sign = special.logsumexp(log_mag, axis=axis, b=signs, return_sign=True)
    finite = np.isfinite(out)
    return np.where(finite, out, -np.inf), np.where(finite, sign, 0.0)


def _to_linear(log_mag, sign) -> float:
    return float(sign * math.exp(log_mag)) if sign != 0.0 else 0.0


def marginal_size_pmf(spec: ModelSpec, k: int, tables: Optional[ComponentTables] = None) -> np.ndarray:
    """P(N_j = n | N, K+ = k) для n = 1..N-k+1: Σ_K w^{K}_{N,k} · w_n^{K} · C^{K}_{N-n,k-1}."""
    N = spec.N
    size = N - k + 1
    log_terms = []
    for term in _terms(spec, k, tables):
        lc = term.table.column(k - 1)
        n = np.arange(1, size + 1)
        log_terms.append(term.log_weight + term.table.weights.log_w[:size] + lc[N - n])
    return np.exp(special.logsumexp(np.vstack(log_terms), axis=0))


def _moment(spec: ModelSpec, k: int, psi: np.ndarray, tables: Optional[ComponentTables]) -> float:
    """Σ_K w_K Σ_n ψ(n) w_n^{K} C^{K}_{N-n,k-1}."""
    N = spec.N
    size = N - k + 1
    log_psi, sign_psi = _signed_log(psi[:size])
    n = np.arange(1, size + 1)
    logs, signs = [], []
    for term in _terms(spec, k, tables):
        lc = term.table.column(k - 1)
        log_a = log_psi + term.table.weights.log_w[:size] + lc[N - n]
        value, sign = _signed_sum(log_a, sign_psi)
        logs.append(term.log_weight + float(value))
        signs.append(float(sign))
    value, sign = _signed_sum(np.asarray(logs), np.asarray(signs))
    return _to_linear(float(value), float(sign))


def expected_psi(
    spec: ModelSpec,
    k: int,
    f: Functional,
    tables: Optional[ComponentTables] = None,
) -> float:
    """𝔼(ψ(N_j) | N, K+ = k), одинаково для всех j."""
    return _moment(spec, k, f.values(spec.N), tables)


def _cross_moment_toeplitz(spec: ModelSpec, k: int, psi: np.ndarray, tables: Optional[ComponentTables]) -> float:
    """Σ_K w_K č^T A_k ã, где A_k: нижняя треугольная тёплицева матрица из ψ̃(x) = ψ(x) w_x^{K}."""
    N = spec.N
    log_psi, sign_psi = _signed_log(psi)
    # Строка n, столбец m: ψ̃(n - m) при n - m >= 1.
    sign_matrix = linalg.toeplitz(np.concatenate(([0.0], sign_psi[:-1])), np.zeros(N))
    sign_product = sign_matrix * sign_psi[np.newaxis, :]
    n = np.arange(1, N + 1)

    logs, signs = [], []
    for term in _terms(spec, k, tables):
        log_a = log_psi + term.table.weights.log_w
        log_A = linalg.toeplitz(np.concatenate(([-np.inf], log_a[:-1])), np.full(N, -np.inf))
        conv_log, conv_sign = _signed_sum(log_A + log_a[np.newaxis, :], sign_product, axis=1)
        lc = term.table.column(k - 2)
        value, sign = _signed_sum(conv_log + lc[N - n], conv_sign)
        logs.append(term.log_weight + float(value))
        signs.append(float(sign))
    value, sign = _signed_sum(np.asarray(logs), np.asarray(signs))
    return _to_linear(float(value), float(sign))


def expected_psi_product(
    spec: ModelSpec,
    k: int,
    f: Functional,
    tables: Optional[ComponentTables] = None,
) -> float:
    """𝔼(ψ(N_1) ψ(N_2) | N, K+ = k) для двух разных кластеров; k >= 2."""
    if k < 2:
        raise ValueError(f"Смешанный момент определён только для k >= 2, получено k={k}.")
    psi = f.values(spec.N)
    if k == 2:
        # N_2 = N - N_1.
        N = spec.N
        marginal = marginal_size_pmf(spec, 2, tables)
        n = np.arange(1, N)
        return float(np.dot(psi[n - 1] * psi[N - n - 1], marginal))
    return _cross_moment_toeplitz(spec, k, psi, tables)


def _raw_moments(
    spec: ModelSpec,
    k: int,
    f: Functional,
    tables: Optional[ComponentTables],
) -> Tuple[float, float, float]:
    psi = f.values(spec.N)
    first = _moment(spec, k, psi, tables)
    second = _moment(spec, k, psi * psi, tables)
    cross = expected_psi_product(spec, k, f, tables) if k >= 2 else 0.0
    return first, second, cross


def functional_stats(
    spec: ModelSpec,
    k: int,
    f: Functional,
    tables: Optional[ComponentTables] = None,
) -> FunctionalStats:
    """Среднее k·𝔼ψ и дисперсия k·𝔼ψ² + k(k-1)·𝔼ψψ' - k²(𝔼ψ)² функционала Ψ при K+ = k."""
    first, second, cross = _raw_moments(spec, k, f, tables)
    mean = k * first
    raw = k * second + k * (k - 1) * cross - mean * mean
    variance = _clamp_variance(raw, mean * mean, f"{f.name} при k={k}")
    return FunctionalStats(k=k, mean=mean, variance=variance, raw_variance=raw, name=f.name)


def relative_entropy_stats(
    spec: ModelSpec,
    k: int,
    tables: Optional[ComponentTables] = None,
) -> FunctionalStats:
    """Среднее и дисперсия относительной энтропии разбиения при K+ = k.

    ℰ = ln N - Ψ/N с ψ(n) = n ln n, делённое на ln k; при k = 1 энтропия равна 0.
    """
    if not 1 <= k <= spec.N:
        raise ValueError(f"k={k} должно лежать в диапазоне 1..N={spec.N}.")
    if k == 1:
        return FunctionalStats(k=1, mean=0.0, variance=0.0, raw_variance=0.0, name="entropy")

    N = spec.N
    psi = functional_stats(spec, k, Functional.entropy(), tables)
    log_k = math.log(k)
    mean = (math.log(N) - psi.mean / N) / log_k
    scale = (N * log_k) ** 2
    return FunctionalStats(
        k=k,
        mean=mean,
        variance=psi.variance / scale,
        raw_variance=psi.raw_variance / scale,
        name="entropy",
    )


def singleton_stats(
    spec: ModelSpec,
    k: int,
    tables: Optional[ComponentTables] = None,
) -> FunctionalStats:
    return functional_stats(spec, k, Functional.singletons(), tables)


def _weighted_cut(pmf: KPlusPmf) -> int:
    cumulative = np.cumsum(pmf.probs)
    hits = np.flatnonzero(cumulative >= WEIGHTED_MASS)
    return int(hits[0]) + 1 if hits.size else pmf.N


def weighted_stats(
    spec: ModelSpec,
    f: Union[Functional, str] = "entropy",
    pmf: Optional[KPlusPmf] = None,
) -> FunctionalStats:
    """Σ_k 𝔼_k·P(K+ = k) и Σ_k 𝕍_k·P(K+ = k) по k = 1..k_cut.

    Дисперсия взвешивается буквально, без разброса условных средних между k.
    """
    if isinstance(f, str):
        if f not in ("entropy", "singletons"):
            raise ValueError(f"Неизвестный функционал: {f!r}.")
        f = Functional.entropy() if f == "entropy" else Functional.singletons()

    pmf = pmf if pmf is not None else kplus_pmf(spec)
    k_cut = _weighted_cut(pmf)
    tables = component_tables(spec, k_cut)
    logger.debug("Взвешенные статистики %s: k_cut=%s, N=%s.", f.name, k_cut, spec.N)

    mean = 0.0
    variance = 0.0
    raw = 0.0
    for k in range(1, k_cut + 1):
        weight = pmf.prob(k)
        if weight <= 0.0:
            continue
        if f.name == "entropy" and f.kernel is _entropy_kernel:
            stats = relative_entropy_stats(spec, k, tables)
        else:
            stats = functional_stats(spec, k, f, tables)
        mean += weight * stats.mean
        variance += weight * stats.variance
        raw += weight * stats.raw_variance

    return FunctionalStats(k="weighted", mean=mean, variance=variance, raw_variance=raw, name=f.name)
