from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

__all__ = ["SummaryTable", "format_value"]


def format_value(value: Any) -> str:
    """Число с 17 значащими цифрами, чтобы эталонные файлы совпадали побайтно."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    try:
        return format(float(value), ".17g")
    except (TypeError, ValueError):
        return str(value)


def _json_value(value: Any) -> Any:
    if value is None or isinstance(value, (bool, int, str)):
        return value
    number = float(value)
    return number if math.isfinite(number) else None


@dataclass
class SummaryTable:
    """Табличный результат: строки по k, по параметру или по N."""

    columns: Tuple[str, ...]
    rows: List[Tuple[Any, ...]] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def add(self, *values: Any) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"Ожидалось {len(self.columns)} значений, получено {len(values)}.")
        self.rows.append(tuple(values))

    def extend(self, rows: Iterable[Sequence[Any]]) -> None:
        for row in rows:
            self.add(*row)

    def column(self, name: str) -> List[Any]:
        index = self.columns.index(name)
        return [row[index] for row in self.rows]

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {name: _json_value(value) for name, value in zip(self.columns, row)}
            for row in self.rows
        ]

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_value(value) for value in row])
        return buffer.getvalue()

    def to_json(self) -> str:
        payload: Dict[str, Any] = {key: _json_value(value) if not isinstance(value, (list, dict)) else value
                                   for key, value in self.meta.items()}
        payload["rows"] = self.to_records()
        return json.dumps(payload, ensure_ascii=True, indent=2)

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json() + "\n"
        raise ValueError(f"Неизвестный формат вывода: {fmt!r}.")

    def write(self, fmt: str, out: Optional[Path] = None) -> str:
        """Записывает таблицу в файл (если указан) и возвращает текст."""
        text = self.render(fmt)
        if out is not None:
            path = Path(out)
            with path.open("w", encoding="utf-8", newline="") as handle:
                handle.write(text)
        return text
