"""Командная строка: отдельные расчёты, развёртки по γ/α/N и симуляция.

Коды выхода: 0 успех, 2 неверные флаги или параметры, 3 усечение или
исчерпанный бюджет Монте-Карло.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from app.config import get_settings
from app.eppf import LabelledSizes, log_eppf
from app.kplus_prior import kplus_pmf, kplus_summaries, prior_k_column
from app.mc_oracle import BudgetExceeded, estimate_kplus_pmf, simulate_partitions
from app.model_priors import (
    InfinitePrior,
    ModelSpec,
    TruncationError,
    TruncationPolicy,
    parse_prior_k,
    reference_spec,
)
from app.partition_functionals import (
    Functional,
    FunctionalStats,
    functional_stats,
    marginal_size_pmf,
    relative_entropy_stats,
    weighted_stats,
)
from app.tables import SummaryTable

__all__ = ["SweepRequest", "build_parser", "build_spec", "configure_logging", "main", "parse_grid"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

DEFAULT_KPLUS = (2, 4, 6, 8)
SWEEP_TARGETS = ("kplus", "entropy", "singletons", "weighted-entropy", "marginal")
SWEEP_AXES = ("gamma", "alpha", "n")


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s - %(message)s",
    )


def parse_int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(f"Ожидался список целых через запятую: {text!r}.") from exc
    if not values:
        raise ValueError("Список значений пуст.")
    return values


def parse_grid(text: str, integer: bool = False) -> List[float]:
    """Сетка: `0.1,1,3`, `lin:A:B:COUNT` или `log:A:B:COUNT`."""
    parts = text.split(":")
    try:
        if parts[0] in ("lin", "log") and len(parts) == 4:
            lo, hi, count = float(parts[1]), float(parts[2]), int(parts[3])
            if parts[0] == "lin":
                grid = np.linspace(lo, hi, count)
            else:
                grid = np.geomspace(lo, hi, count)
            values = [float(value) for value in grid]
        else:
            values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(f"Не удалось разобрать сетку: {text!r}.") from exc
    if integer:
        values = [float(int(round(value))) for value in values]
    return values


@dataclass(frozen=True)
class SweepRequest:
    target: str
    axis: str
    grid: Tuple[float, ...]
    spec: ModelSpec
    k_list: Tuple[int, ...] = DEFAULT_KPLUS
    quantile: Optional[float] = None

    def __post_init__(self) -> None:
        if self.target not in SWEEP_TARGETS:
            raise ValueError(f"Неизвестная цель развёртки: {self.target!r}.")
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"Неизвестная ось развёртки: {self.axis!r}.")
        if not self.grid:
            raise ValueError("Сетка развёртки пуста.")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError(f"Сетка развёртки должна строго возрастать: {list(self.grid)}.")
        if any(value <= 0 for value in self.grid):
            raise ValueError("Значения сетки должны быть положительными.")
        if self.axis == "gamma" and self.spec.model_class != "static":
            raise ValueError("Ось gamma допустима только для статической MFM.")
        if self.axis == "alpha" and self.spec.model_class == "static":
            raise ValueError("Ось alpha допустима только для DPM и динамической MFM.")

    def spec_at(self, value: float) -> ModelSpec:
        if self.axis == "n":
            return self.spec.with_n(int(value))
        return self.spec.with_parameter(value)


def _sweep_point(request: SweepRequest, value: float) -> List[Tuple[Optional[object], str, float]]:
    spec = request.spec_at(value)
    rows: List[Tuple[Optional[object], str, float]] = []
    if request.target == "kplus":
        summary = kplus_summaries(kplus_pmf(spec), request.quantile)
        rows += [
            (None, "mean", summary.mean),
            (None, "sd", summary.sd),
            (None, "quantile", summary.quantile),
            (None, "p_homogeneity", summary.p_homogeneity),
            (None, "covered_mass", summary.covered_mass),
        ]
    elif request.target == "weighted-entropy":
        stats = weighted_stats(spec, "entropy")
        rows += [("weighted", "mean", stats.mean), ("weighted", "sd", stats.sd)]
    else:
        for k in request.k_list:
            if k > spec.N:
                continue
            if request.target == "marginal":
                pmf = marginal_size_pmf(spec, k)
                rows += [(k, f"n{n}", float(p)) for n, p in enumerate(pmf, start=1)]
                continue
            if request.target == "entropy":
                stats = relative_entropy_stats(spec, k)
            else:
                stats = functional_stats(spec, k, Functional.singletons())
            rows += [(k, "mean", stats.mean), (k, "sd", stats.sd)]
    return rows


def run_sweep(request: SweepRequest) -> SummaryTable:
    """Длинная таблица axis,k,stat,value: сначала точка сетки, затем k."""
    table = SummaryTable(
        columns=("axis", "k", "stat", "value"),
        meta={"target": request.target, "axis_name": request.axis, "model": request.spec.model_class},
    )
    for value in request.grid:
        axis_value = int(value) if request.axis == "n" else value
        try:
            rows = _sweep_point(request, value)
        except (ValueError, TruncationError) as exc:
            raise type(exc)(f"Точка сетки {request.axis}={axis_value}: {exc}") from exc
        table.extend((axis_value, k, stat, stat_value) for k, stat, stat_value in rows)
        logger.info("Развёртка %s: %s=%s готова.", request.target, request.axis, axis_value)
    return table


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("модель")
    group.add_argument("--preset", choices=("dpm", "static", "dynamic"), help="Стандартная спецификация модели.")
    group.add_argument("--model", choices=("dpm", "static", "dynamic"))
    group.add_argument("--n", type=int, help="Размер выборки N.")
    group.add_argument("--alpha", type=float, help="α для DPM и динамической MFM.")
    group.add_argument("--gamma", type=float, help="γ для статической MFM.")
    group.add_argument("--prior-k", dest="prior_k", help="uniform:1:30, geometric:P, geometric-mean:M, bnb:R:A:B, fixed:K.")
    group.add_argument("--kmax", type=int, help="Верхняя граница K_max усечения.")
    group.add_argument("--eps", type=float, help="Допустимая масса хвоста p(K).")


def _add_output_flags(parser: argparse.ArgumentParser, default_format: str = "csv") -> None:
    parser.add_argument("--format", choices=("csv", "json"), default=default_format)
    parser.add_argument("--out", type=Path, help="Файл результата; по умолчанию stdout.")


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", dest="log_level", default=settings.log_level)

    parser = argparse.ArgumentParser(
        prog="python -m app.main",
        description="Априорные распределения числа кластеров и разбиений для DPM и MFM.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    kplus = commands.add_parser("kplus", parents=[common], help="Распределение P(K+ = k).")
    _add_model_flags(kplus)
    kplus.add_argument("--quantile", type=float, default=settings.default_quantile)
    kplus.add_argument("--with-prior-k", dest="with_prior_k", action="store_true", help="Добавить столбец p(K).")
    _add_output_flags(kplus)

    functional = commands.add_parser("functional", parents=[common], help="Среднее и SD функционала разбиения.")
    _add_model_flags(functional)
    functional.add_argument("--kind", choices=("entropy", "singletons", "custom"), default="entropy")
    functional.add_argument("--psi-file", dest="psi_file", type=Path, help="CSV со значениями ψ(n) для kind=custom.")
    functional.add_argument("--kplus", default=",".join(str(k) for k in DEFAULT_KPLUS))
    functional.add_argument("--weighted", action="store_true", help="Взвесить по P(K+ = k).")
    _add_output_flags(functional)

    sweep = commands.add_parser("sweep", parents=[common], help="Развёртка по γ, α или N.")
    _add_model_flags(sweep)
    sweep.add_argument("--target", choices=SWEEP_TARGETS, required=True)
    sweep.add_argument("--axis", choices=SWEEP_AXES, required=True)
    sweep.add_argument("--grid", required=True, help="0.1,1,3 или lin:A:B:COUNT / log:A:B:COUNT.")
    sweep.add_argument("--kplus", default=",".join(str(k) for k in DEFAULT_KPLUS))
    sweep.add_argument("--quantile", type=float, default=settings.default_quantile)
    _add_output_flags(sweep)

    simulate = commands.add_parser("simulate", parents=[common], help="Монте-Карло разбиения.")
    _add_model_flags(simulate)
    simulate.add_argument("--draws", type=int, default=1000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--summary", action="store_true", help="Частоты K+ вместо отдельных розыгрышей.")
    _add_output_flags(simulate)

    marginal = commands.add_parser("marginal", parents=[common], help="P(N_j = n | K+ = k).")
    _add_model_flags(marginal)
    marginal.add_argument("--kplus", type=int, required=True)
    _add_output_flags(marginal)

    eppf = commands.add_parser("eppf", parents=[common], help="Вероятность разбиения с данными размерами блоков.")
    _add_model_flags(eppf)
    eppf.add_argument("--sizes", required=True, help="Размеры блоков через запятую, например 3,2,1.")

    return parser


def _preset_values(name: str) -> Dict[str, object]:
    spec = reference_spec(name, 1)
    values: Dict[str, object] = {
        "model": spec.model_class,
        "prior_k": None if spec.is_dpm else spec.prior_k.spec_string(),
    }
    values["gamma" if spec.model_class == "static" else "alpha"] = spec.gammas.value
    return values


def build_spec(args: argparse.Namespace, N: Optional[int] = None) -> ModelSpec:
    """ModelSpec из флагов; явные флаги перекрывают значения --preset."""
    values = {name: getattr(args, name, None) for name in ("model", "alpha", "gamma", "prior_k")}
    preset = getattr(args, "preset", None)
    if preset is not None:
        defaults = _preset_values(preset)
        if values["model"] in (None, defaults["model"]):
            for name, value in defaults.items():
                if values[name] is None:
                    values[name] = value

    N = N if N is not None else args.n
    if N is None:
        raise ValueError("Не задан размер выборки --n.")
    model = values["model"]
    if model is None:
        raise ValueError("Не задана модель: укажите --model или --preset.")

    trunc = TruncationPolicy.from_settings()
    if args.eps is not None:
        trunc = replace(trunc, tail_mass_epsilon=args.eps)
    if args.kmax is not None:
        trunc = replace(trunc, hard_cap=args.kmax)

    if model == "dpm":
        if values["gamma"] is not None:
            raise ValueError("Для DPM задаётся --alpha, а не --gamma.")
        if values["prior_k"] not in (None, "infinity"):
            raise ValueError("Для DPM --prior-k не задаётся.")
        if values["alpha"] is None:
            raise ValueError("Для DPM нужен --alpha.")
        return ModelSpec.dpm(N, values["alpha"], trunc=trunc)

    if values["prior_k"] is None:
        raise ValueError(f"Для модели {model} нужен --prior-k.")
    prior_k = parse_prior_k(values["prior_k"])
    if model == "static":
        if values["alpha"] is not None:
            raise ValueError("Для статической MFM задаётся --gamma, а не --alpha.")
        if values["gamma"] is None:
            raise ValueError("Для статической MFM нужен --gamma.")
        return ModelSpec.static(N, values["gamma"], prior_k, trunc=trunc)

    if values["gamma"] is not None:
        raise ValueError("Для динамической MFM задаётся --alpha, а не --gamma.")
    if values["alpha"] is None:
        raise ValueError("Для динамической MFM нужен --alpha.")
    if isinstance(prior_k, InfinitePrior):
        return ModelSpec.dpm(N, values["alpha"], trunc=trunc)
    return ModelSpec.dynamic(N, values["alpha"], prior_k, trunc=trunc)


def _emit(table: SummaryTable, args: argparse.Namespace, stdout: TextIO) -> None:
    text = table.write(args.format, args.out)
    if args.out is None:
        stdout.write(text)
    else:
        logger.info("Результат записан в %s.", args.out)


def cmd_kplus(args: argparse.Namespace, stdout: TextIO) -> int:
    spec = build_spec(args)
    pmf = kplus_pmf(spec)
    summary = kplus_summaries(pmf, args.quantile)
    table = pmf.to_table(prior_k_column(spec) if args.with_prior_k else None)
    table.meta["model"] = spec.model_class
    table.meta["summary"] = {
        "mean": summary.mean,
        "sd": summary.sd,
        "quantile": summary.quantile,
        "q": summary.q,
        "p_homogeneity": summary.p_homogeneity,
        "covered_mass": summary.covered_mass,
    }
    logger.info(
        "P(K+): среднее %.6f, SD %.6f, %s-квантиль %s, P(K+ = 1) %.6f, покрытая масса %.12f, K_max %s.",
        summary.mean,
        summary.sd,
        summary.q,
        summary.quantile,
        summary.p_homogeneity,
        summary.covered_mass,
        pmf.k_max_used,
    )
    _emit(table, args, stdout)
    return EXIT_OK


def _functional_for(args: argparse.Namespace) -> Optional[Functional]:
    if args.kind == "custom":
        if args.psi_file is None:
            raise ValueError("Для --kind custom нужен --psi-file.")
        return Functional.from_file(args.psi_file)
    if args.psi_file is not None:
        raise ValueError("--psi-file допустим только с --kind custom.")
    if args.kind == "singletons":
        return Functional.singletons()
    return None


def cmd_functional(args: argparse.Namespace, stdout: TextIO) -> int:
    spec = build_spec(args)
    f = _functional_for(args)
    table = SummaryTable(columns=("k", "mean", "sd"), meta={"kind": args.kind, "model": spec.model_class})

    results: List[FunctionalStats]
    if args.weighted:
        results = [weighted_stats(spec, f if f is not None else "entropy")]
    else:
        results = []
        for k in parse_int_list(args.kplus):
            if not 1 <= k <= spec.N:
                raise ValueError(f"k={k} должно лежать в диапазоне 1..N={spec.N}.")
            if f is None:
                results.append(relative_entropy_stats(spec, k))
            else:
                results.append(functional_stats(spec, k, f))
    table.extend((stats.k, stats.mean, stats.sd) for stats in results)
    _emit(table, args, stdout)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, stdout: TextIO) -> int:
    grid = parse_grid(args.grid, integer=args.axis == "n")
    N = int(grid[0]) if args.axis == "n" and args.n is None else None
    request = SweepRequest(
        target=args.target,
        axis=args.axis,
        grid=tuple(grid),
        spec=build_spec(args, N=N),
        k_list=tuple(parse_int_list(args.kplus)),
        quantile=args.quantile,
    )
    _emit(run_sweep(request), args, stdout)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, stdout: TextIO) -> int:
    spec = build_spec(args)
    if args.draws < 1:
        raise ValueError(f"--draws должно быть положительным: {args.draws}.")
    if args.summary:
        table = estimate_kplus_pmf(spec, args.draws, args.seed).to_table()
    else:
        table = SummaryTable(columns=("draw", "k_plus", "sizes"), meta={"n": spec.N, "seed": args.seed})
        for draw, sample in enumerate(simulate_partitions(spec, args.draws, args.seed), start=1):
            table.add(draw, sample.k_plus, ";".join(str(size) for size in sample.sizes))
    table.meta["model"] = spec.model_class
    _emit(table, args, stdout)
    return EXIT_OK


def cmd_marginal(args: argparse.Namespace, stdout: TextIO) -> int:
    spec = build_spec(args)
    pmf = marginal_size_pmf(spec, args.kplus)
    table = SummaryTable(columns=("n", "prob"), meta={"k": args.kplus, "model": spec.model_class})
    table.extend((n, float(p)) for n, p in enumerate(pmf, start=1))
    _emit(table, args, stdout)
    return EXIT_OK


def cmd_eppf(args: argparse.Namespace, stdout: TextIO) -> int:
    sizes = LabelledSizes.parse(args.sizes)
    if args.n is not None and args.n != sizes.N:
        raise ValueError(f"Сумма размеров {sizes.N} не равна --n {args.n}.")
    spec = build_spec(args, N=sizes.N)
    log_prob = log_eppf(sizes, spec)
    payload = {
        "log_prob": log_prob if np.isfinite(log_prob) else None,
        "prob": float(np.exp(log_prob)),
        "sizes": list(sizes.sizes),
        "model": spec.model_class,
    }
    stdout.write(json.dumps(payload, ensure_ascii=True) + "\n")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, TextIO], int]] = {
    "kplus": cmd_kplus,
    "functional": cmd_functional,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "marginal": cmd_marginal,
    "eppf": cmd_eppf,
}


def main(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    stdout = stdout or sys.stdout

    try:
        return COMMANDS[args.command](args, stdout)
    except (TruncationError, BudgetExceeded) as exc:
        logger.error("Численная ошибка: %s", exc)
        print(f"ошибка: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        logger.error("Неверные параметры: %s", exc)
        print(f"ошибка: {exc}", file=sys.stderr)
        return EXIT_USAGE
