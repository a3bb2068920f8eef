from __future__ import annotations

import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy import special, stats

from app.config import Settings, get_settings

__all__ = [
    "BetaNegBinomialPrior",
    "ComponentCountPrior",
    "DirichletSequence",
    "GAMMA_FLOOR",
    "GeometricPrior",
    "InfinitePrior",
    "ModelSpec",
    "PointMassPrior",
    "TruncationBound",
    "TruncationError",
    "TruncationPolicy",
    "TruncationWarning",
    "UniformPrior",
    "gamma_at",
    "geometric_from_mean",
    "log_pmf_K",
    "parse_prior_k",
    "parse_sequence",
    "prior_k_table",
    "reference_spec",
    "truncation_bound",
]

logger = logging.getLogger(__name__)

# Ниже этого значения Γ(γ) вырождается и веса теряют смысл.
GAMMA_FLOOR = 1e-8


class TruncationWarning(UserWarning):
    """Покрытая масса априорного распределения K ниже порога предупреждения."""


class TruncationError(RuntimeError):
    """Усечённая сумма по K не даёт пригодного результата."""


class ComponentCountPrior(ABC):
    """Априорное распределение числа компонент K на положительных целых."""

    @abstractmethod
    def log_pmf(self, K: ArrayLike) -> np.ndarray:
        """Возвращает ln p(K); вне носителя -inf."""

    @abstractmethod
    def survival(self, K: ArrayLike) -> np.ndarray:
        """Возвращает хвостовую массу P(K' > K)."""

    @abstractmethod
    def mean(self) -> float:
        """Априорное среднее K (не K-1)."""

    @abstractmethod
    def spec_string(self) -> str:
        """Строка в грамматике CLI, из которой распределение восстанавливается."""

    @property
    def support_max(self) -> Optional[int]:
        """Верхняя граница носителя или None для бесконечного носителя."""
        return None

    @property
    def support_min(self) -> int:
        """Нижняя граница носителя."""
        return 1

    @property
    def is_infinity(self) -> bool:
        return False

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Независимые выборки K."""


@dataclass(frozen=True)
class UniformPrior(ComponentCountPrior):
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo < 1 or self.hi < self.lo:
            raise ValueError(f"Некорректные границы равномерного распределения: [{self.lo}, {self.hi}].")

    def _dist(self):
        return stats.randint(self.lo, self.hi + 1)

    def log_pmf(self, K: ArrayLike) -> np.ndarray:
        return np.asarray(self._dist().logpmf(K), dtype=float)

    def survival(self, K: ArrayLike) -> np.ndarray:
        return np.asarray(self._dist().sf(K), dtype=float)

    def mean(self) -> float:
        return (self.lo + self.hi) / 2.0

    def spec_string(self) -> str:
        return f"uniform:{self.lo}:{self.hi}"

    @property
    def support_max(self) -> Optional[int]:
        return self.hi

    @property
    def support_min(self) -> int:
        return self.lo

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.integers(self.lo, self.hi + 1, size=size)


@dataclass(frozen=True)
class GeometricPrior(ComponentCountPrior):
    """Геометрическое распределение для K-1 с вероятностью успеха p."""

    p: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"Вероятность успеха геометрического распределения вне (0, 1): {self.p}.")

    def _dist(self):
        # scipy.stats.geom задан на {1, 2, ...}, что совпадает со сдвигом K = X + 1.
        return stats.geom(self.p)

    def log_pmf(self, K: ArrayLike) -> np.ndarray:
        return np.asarray(self._dist().logpmf(K), dtype=float)

    def survival(self, K: ArrayLike) -> np.ndarray:
        return np.asarray(self._dist().sf(K), dtype=float)

    def mean(self) -> float:
        return 1.0 / self.p

    def spec_string(self) -> str:
        return f"geometric:{self.p!r}"

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.geometric(self.p, size=size)


@dataclass(frozen=True)
class BetaNegBinomialPrior(ComponentCountPrior):
    """BNB(r, a, b) для K-1.

    P(X=x) = Γ(r+x) / (x! Γ(r)) · B(a+r, b+x) / B(a, b).
    """

    r: float
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.r <= 0 or self.a <= 0 or self.b <= 0:
            raise ValueError(f"Параметры BNB должны быть положительными: ({self.r}, {self.a}, {self.b}).")

    def log_pmf(self, K: ArrayLike) -> np.ndarray:
        K = np.asarray(K, dtype=float)
        x = K - 1.0
        valid = (x >= 0) & (x == np.floor(x))
        x_safe = np.where(valid, x, 0.0)
        value = (
            special.gammaln(self.r + x_safe)
            - special.gammaln(x_safe + 1.0)
            - special.gammaln(self.r)
            + special.betaln(self.a + self.r, self.b + x_safe)
            - special.betaln(self.a, self.b)
        )
        return np.where(valid, value, -np.inf)

    def survival(self, K: ArrayLike) -> np.ndarray:
        K = np.asarray(K, dtype=float)
        top = int(max(1.0, float(np.max(K)))) if K.size else 1
        grid = np.arange(1, top + 1)
        cdf = np.cumsum(np.exp(self.log_pmf(grid)))
        index = np.clip(K.astype(int), 0, top) - 1
        tail = np.where(index >= 0, 1.0 - cdf[np.maximum(index, 0)], 1.0)
        return np.clip(tail, 0.0, 1.0)

    def mean(self) -> float:
        if self.a <= 1:
            return math.inf
        return 1.0 + self.r * self.b / (self.a - 1.0)

    def spec_string(self) -> str:
        return f"bnb:{self.r!r}:{self.a!r}:{self.b!r}"

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = rng.beta(self.a, self.b, size=size)
        return rng.negative_binomial(self.r, p, size=size) + 1


@dataclass(frozen=True)
class PointMassPrior(ComponentCountPrior):
    k0: int

    def __post_init__(self) -> None:
        if self.k0 < 1:
            raise ValueError(f"Точечная масса должна стоять на положительном K: {self.k0}.")

    def log_pmf(self, K: ArrayLike) -> np.ndarray:
        K = np.asarray(K)
        return np.where(K == self.k0, 0.0, -np.inf)

    def survival(self, K: ArrayLike) -> np.ndarray:
        K = np.asarray(K)
        return np.where(K < self.k0, 1.0, 0.0)

    def mean(self) -> float:
        return float(self.k0)

    def spec_string(self) -> str:
        return f"fixed:{self.k0}"

    @property
    def support_max(self) -> Optional[int]:
        return self.k0

    @property
    def support_min(self) -> int:
        return self.k0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.k0, dtype=np.int64)


@dataclass(frozen=True)
class InfinitePrior(ComponentCountPrior):
    """Вырожденное распределение с массой в бесконечности (DPM)."""

    def log_pmf(self, K: ArrayLike) -> np.ndarray:
        return np.full(np.shape(K), -np.inf)

    def survival(self, K: ArrayLike) -> np.ndarray:
        return np.ones(np.shape(K))

    def mean(self) -> float:
        return math.inf

    def spec_string(self) -> str:
        return "infinity"

    @property
    def is_infinity(self) -> bool:
        return True

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise ValueError("Из массы в бесконечности нельзя выбрать K; для DPM используйте процесс китайского ресторана.")


def geometric_from_mean(mean: float) -> GeometricPrior:
    """Геометрическое распределение для K-1 с заданным средним: p = 1/(1+mean)."""
    if mean <= 0:
        raise ValueError(f"Среднее геометрического распределения должно быть положительным: {mean}.")
    return GeometricPrior(p=1.0 / (1.0 + mean))


@dataclass(frozen=True)
class DirichletSequence:
    """Последовательность параметров Дирихле γ_K: static(γ) или dynamic(α)."""

    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind not in ("static", "dynamic"):
            raise ValueError(f"Неизвестный тип последовательности: {self.kind}.")
        if not self.value > 0:
            raise ValueError(f"Параметр последовательности должен быть положительным: {self.value}.")

    @classmethod
    def static(cls, gamma: float) -> "DirichletSequence":
        return cls(kind="static", value=gamma)

    @classmethod
    def dynamic(cls, alpha: float) -> "DirichletSequence":
        return cls(kind="dynamic", value=alpha)

    @property
    def is_static(self) -> bool:
        return self.kind == "static"

    def spec_string(self) -> str:
        return f"{self.kind}:{self.value!r}"


def gamma_at(seq: DirichletSequence, K: int) -> float:
    if K < 1:
        raise ValueError(f"K должно быть положительным: {K}.")
    if seq.is_static:
        return seq.value
    return seq.value / K


def log_pmf_K(prior: ComponentCountPrior, K: int) -> float:
    if K < 1:
        return -math.inf
    return float(prior.log_pmf(K))


@dataclass(frozen=True)
class TruncationPolicy:
    tail_mass_epsilon: float = 1e-10
    hard_cap: int = 500
    min_covered_mass_warn: float = 0.999

    def __post_init__(self) -> None:
        if not 0.0 < self.tail_mass_epsilon < 1.0:
            raise ValueError("tail_mass_epsilon должен лежать в интервале (0, 1).")
        if self.hard_cap < 1:
            raise ValueError("hard_cap должен быть положительным.")
        if not 0.0 < self.min_covered_mass_warn < 1.0:
            raise ValueError("min_covered_mass_warn должен лежать в интервале (0, 1).")

    @classmethod
    def from_settings(cls, settings: Settings | None = None) -> "TruncationPolicy":
        settings = settings or get_settings()
        return cls(
            tail_mass_epsilon=settings.tail_mass_epsilon,
            hard_cap=settings.k_hard_cap,
            min_covered_mass_warn=settings.min_covered_mass_warn,
        )


@dataclass(frozen=True)
class TruncationBound:
    k_max: int
    covered_mass: float


def truncation_bound(
    prior: ComponentCountPrior,
    k_lower: int,
    policy: TruncationPolicy,
) -> TruncationBound:
    """Наименьшее K_max >= k_lower с хвостом p(K) не больше epsilon, ограниченное hard_cap."""
    if prior.is_infinity:
        raise ValueError("Для массы в бесконечности усечение по K не определено; используйте путь DPM.")
    if k_lower < 1:
        raise ValueError(f"k_lower должно быть положительным: {k_lower}.")

    if prior.support_max is not None:
        k_max = max(k_lower, prior.support_max)
    else:
        grid = np.arange(k_lower, max(k_lower, policy.hard_cap) + 1)
        tail = prior.survival(grid)
        hits = np.flatnonzero(tail <= policy.tail_mass_epsilon)
        k_max = int(grid[hits[0]]) if hits.size else int(grid[-1])

    if k_max > policy.hard_cap:
        # Не ниже нижней границы носителя: точечная масса K0 всегда даёт K_max = K0.
        k_max = max(k_lower, policy.hard_cap, prior.support_min)
        logger.debug("K_max ограничено hard_cap=%s: K_max=%s.", policy.hard_cap, k_max)

    covered = float(1.0 - prior.survival(k_max))
    logger.debug("Усечение %s: K_max=%s, покрытая масса %.12f.", prior.spec_string(), k_max, covered)
    if covered < policy.min_covered_mass_warn:
        message = (
            f"Покрытая масса p(K) до K_max={k_max} равна {covered:.6f} "
            f"< {policy.min_covered_mass_warn}."
        )
        logger.warning(message)
        warnings.warn(message, TruncationWarning, stacklevel=2)
    return TruncationBound(k_max=k_max, covered_mass=covered)


@dataclass(frozen=True)
class ModelSpec:
    """Единственный вход всех вычислений: N, p(K), γ_K и политика усечения."""

    N: int
    prior_k: ComponentCountPrior
    gammas: DirichletSequence
    trunc: TruncationPolicy = TruncationPolicy()

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError(f"Размер выборки N должен быть положительным: {self.N}.")
        if self.prior_k.is_infinity and self.gammas.is_static:
            raise ValueError("Статическая последовательность γ с массой K в бесконечности не определена.")
        if self.gammas.is_static and self.gammas.value < GAMMA_FLOOR:
            raise ValueError(f"γ={self.gammas.value} меньше допустимого {GAMMA_FLOOR}.")

    @classmethod
    def dpm(cls, N: int, alpha: float, trunc: TruncationPolicy | None = None) -> "ModelSpec":
        return cls(N=N, prior_k=InfinitePrior(), gammas=DirichletSequence.dynamic(alpha),
                   trunc=trunc or TruncationPolicy.from_settings())

    @classmethod
    def static(
        cls,
        N: int,
        gamma: float,
        prior_k: ComponentCountPrior,
        trunc: TruncationPolicy | None = None,
    ) -> "ModelSpec":
        return cls(N=N, prior_k=prior_k, gammas=DirichletSequence.static(gamma),
                   trunc=trunc or TruncationPolicy.from_settings())

    @classmethod
    def dynamic(
        cls,
        N: int,
        alpha: float,
        prior_k: ComponentCountPrior,
        trunc: TruncationPolicy | None = None,
    ) -> "ModelSpec":
        return cls(N=N, prior_k=prior_k, gammas=DirichletSequence.dynamic(alpha),
                   trunc=trunc or TruncationPolicy.from_settings())

    @property
    def is_dpm(self) -> bool:
        return self.prior_k.is_infinity

    @property
    def model_class(self) -> str:
        if self.is_dpm:
            return "dpm"
        return self.gammas.kind

    @property
    def alpha(self) -> float:
        if self.gammas.is_static:
            raise ValueError("У статической MFM нет параметра α.")
        return self.gammas.value

    def with_n(self, N: int) -> "ModelSpec":
        return replace(self, N=N)

    def with_parameter(self, value: float) -> "ModelSpec":
        """Копия с заменённым γ (static) или α (dynamic, DPM)."""
        return replace(self, gammas=DirichletSequence(kind=self.gammas.kind, value=value))

    def k_bound(self) -> TruncationBound:
        """K_max и покрытая масса для MFM."""
        return truncation_bound(self.prior_k, 1, self.trunc)


def prior_k_table(prior: ComponentCountPrior, k_max: int) -> np.ndarray:
    """p(K) для K = 1..k_max (нули для DPM)."""
    return np.exp(prior.log_pmf(np.arange(1, k_max + 1)))


def _parse_float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ValueError(f"Не удалось разобрать {what}: {text!r}.") from exc


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ValueError(f"Не удалось разобрать {what}: {text!r}.") from exc


def parse_prior_k(text: str) -> ComponentCountPrior:
    """Разбирает `uniform:1:30`, `geometric:P`, `geometric-mean:M`, `bnb:R:A:B`, `fixed:K`, `infinity`."""
    parts = [part.strip() for part in text.strip().split(":")]
    kind, args = parts[0].lower(), parts[1:]

    if kind == "infinity" and not args:
        return InfinitePrior()
    if kind == "uniform" and len(args) == 2:
        return UniformPrior(_parse_int(args[0], "lo"), _parse_int(args[1], "hi"))
    if kind == "geometric" and len(args) == 1:
        return GeometricPrior(_parse_float(args[0], "p"))
    if kind == "geometric-mean" and len(args) == 1:
        return geometric_from_mean(_parse_float(args[0], "mean"))
    if kind == "bnb" and len(args) == 3:
        r, a, b = (_parse_float(value, "параметр BNB") for value in args)
        return BetaNegBinomialPrior(r, a, b)
    if kind == "fixed" and len(args) == 1:
        return PointMassPrior(_parse_int(args[0], "K"))

    raise ValueError(f"Неизвестное описание априорного распределения K: {text!r}.")


def parse_sequence(text: str) -> DirichletSequence:
    """Разбирает `static:1.0` или `dynamic:0.4`."""
    parts = [part.strip() for part in text.strip().split(":")]
    if len(parts) != 2:
        raise ValueError(f"Неизвестное описание последовательности γ: {text!r}.")
    return DirichletSequence(kind=parts[0].lower(), value=_parse_float(parts[1], "параметр γ"))


def reference_spec(name: str, N: int, trunc: TruncationPolicy | None = None) -> ModelSpec:
    """Стандартные спецификации: dpm (α=1/3), static (γ=1, U[1,30]), dynamic (α=2/5, BNB(1,4,3))."""
    if name == "dpm":
        return ModelSpec.dpm(N, 1.0 / 3.0, trunc=trunc)
    if name == "static":
        return ModelSpec.static(N, 1.0, UniformPrior(1, 30), trunc=trunc)
    if name == "dynamic":
        return ModelSpec.dynamic(N, 2.0 / 5.0, BetaNegBinomialPrior(1.0, 4.0, 3.0), trunc=trunc)
    raise ValueError(f"Неизвестная стандартная спецификация: {name!r}.")
