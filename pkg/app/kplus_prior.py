from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy import special

from app.config import get_settings
from app.model_priors import ModelSpec, TruncationError, TruncationWarning, prior_k_table
from app.recursion_core import DPM, build_c_table, component_tables, weight_terms
from app.tables import SummaryTable

__all__ = [
    "KPlusPmf",
    "KPlusSummary",
    "kplus_pmf",
    "kplus_pmf_dpm",
    "kplus_summaries",
    "prior_k_column",
]

logger = logging.getLogger(__name__)

# Ниже этой покрытой массы сводки не имеют смысла.
MIN_SUMMARY_MASS = 0.5

# Допуск сравнения F(k) >= q на ошибку округления накопленной суммы.
QUANTILE_SLACK = 1e-12


@dataclass(frozen=True)
class KPlusPmf:
    """Априорное распределение числа кластеров данных; probs[k-1] = P(K+ = k)."""

    N: int
    probs: np.ndarray
    covered_mass: float
    model: str
    k_max_used: Optional[int] = None
    prior_covered_mass: float = 1.0
    truncated: bool = False

    def prob(self, k: int) -> float:
        if not 1 <= k <= self.N:
            return 0.0
        return float(self.probs[k - 1])

    @property
    def mode(self) -> int:
        # При равенстве вероятностей argmax берёт наименьшее k.
        return int(np.argmax(self.probs)) + 1

    def tail(self, k: int) -> float:
        """P(K+ > k) по сырым вероятностям."""
        return float(np.sum(self.probs[k:]))

    def to_table(self, prior_k: Optional[np.ndarray] = None) -> SummaryTable:
        if prior_k is None:
            table = SummaryTable(columns=("k", "prob"))
            table.extend((k, float(p)) for k, p in enumerate(self.probs, start=1))
        else:
            table = SummaryTable(columns=("k", "prob", "prior_k"))
            padded = np.zeros(self.N)
            upto = min(self.N, prior_k.size)
            padded[:upto] = prior_k[:upto]
            table.extend((k, float(p), float(q)) for k, (p, q) in enumerate(zip(self.probs, padded), start=1))
        table.meta.update(self.to_json())
        table.meta.pop("probs", None)
        return table

    def to_json(self) -> Dict[str, Any]:
        return {
            "n": self.N,
            "covered_mass": self.covered_mass,
            "probs": [float(p) for p in self.probs],
        }


@dataclass(frozen=True)
class KPlusSummary:
    mean: float
    sd: float
    quantile: int
    q: float
    p_homogeneity: float
    covered_mass: float
    mode: int


def kplus_pmf_dpm(N: int, alpha: float) -> KPlusPmf:
    """P(K+ = k) = N!/k! · α^k Γ(α)/Γ(α+N) · C^∞_{N,k}; усечения по K нет."""
    if N < 1:
        raise ValueError(f"N должно быть положительным: {N}.")
    if not alpha > 0:
        raise ValueError(f"α должно быть положительным: {alpha}.")

    table = build_c_table(N, DPM, N)
    k = np.arange(1, N + 1, dtype=float)
    log_c = np.array([table.log_c(N, int(j)) for j in k])
    log_probs = (
        special.gammaln(N + 1.0)
        - special.gammaln(k + 1.0)
        + k * math.log(alpha)
        + special.gammaln(alpha)
        - special.gammaln(alpha + N)
        + log_c
    )
    probs = np.exp(log_probs)
    return KPlusPmf(N=N, probs=probs, covered_mass=float(min(1.0, probs.sum())), model="dpm")


def kplus_pmf(spec: ModelSpec) -> KPlusPmf:
    """Априорное P(K+ = k | N, γ) для k = 1..N."""
    if spec.is_dpm:
        return kplus_pmf_dpm(spec.N, spec.alpha)

    N = spec.N
    tables = component_tables(spec, N)
    k_top = min(N, tables.K_top)
    log_factor = special.gammaln(N + 1.0)

    probs = np.zeros(N)
    for k in range(1, k_top + 1):
        _, Ks, log_w_tilde, log_c = weight_terms(tables, k)
        if not Ks.size:
            continue
        # Суммирование по K в порядке возрастания K.
        log_sum = special.logsumexp(log_w_tilde + log_c)
        probs[k - 1] = math.exp(log_factor - special.gammaln(k + 1.0) + log_sum)

    covered = float(min(1.0, probs.sum()))
    truncated = covered < spec.trunc.min_covered_mass_warn
    if truncated:
        message = f"Сумма P(K+ = k) равна {covered:.6f}: увеличьте K_max (сейчас {tables.K_top})."
        logger.warning(message)
        warnings.warn(message, TruncationWarning, stacklevel=2)

    logger.debug(
        "P(K+) для %s: N=%s, K_max=%s, покрытая масса %.12f.",
        spec.model_class,
        N,
        tables.K_top,
        covered,
    )
    return KPlusPmf(
        N=N,
        probs=probs,
        covered_mass=covered,
        model=spec.model_class,
        k_max_used=tables.K_top,
        prior_covered_mass=tables.covered_mass,
        truncated=truncated,
    )


def kplus_summaries(pmf: KPlusPmf, q: float | None = None) -> KPlusSummary:
    """Среднее, SD, q-квантиль и P(K+ = 1) после перенормировки на покрытую массу.

    Квантиль: наименьшее k с F(k) >= q; F сравнивается с допуском QUANTILE_SLACK,
    так что уровень q = P(K+ <= k), посчитанный точно, даёт именно это k.
    """
    q = get_settings().default_quantile if q is None else q
    if not 0.0 < q < 1.0:
        raise ValueError(f"Уровень квантиля должен лежать в (0, 1): {q}.")

    total = float(pmf.probs.sum())
    if total < MIN_SUMMARY_MASS:
        raise TruncationError(f"Покрытая масса {total:.6f} < {MIN_SUMMARY_MASS}: сводки не определены.")

    probs = pmf.probs / total
    k = np.arange(1, pmf.N + 1, dtype=float)
    mean = float(np.dot(k, probs))
    variance = max(0.0, float(np.dot((k - mean) ** 2, probs)))
    cdf = np.cumsum(probs)
    # Наименьшее k с F(k) >= q - QUANTILE_SLACK.
    hits = np.flatnonzero(cdf >= q - QUANTILE_SLACK)
    quantile = int(hits[0]) + 1 if hits.size else pmf.N

    return KPlusSummary(
        mean=mean,
        sd=math.sqrt(variance),
        quantile=quantile,
        q=q,
        p_homogeneity=float(probs[0]),
        covered_mass=total,
        mode=pmf.mode,
    )


def prior_k_column(spec: ModelSpec) -> Optional[np.ndarray]:
    """p(K) для K = 1..N рядом с P(K+); для DPM None."""
    if spec.is_dpm:
        return None
    return prior_k_table(spec.prior_k, spec.N)
