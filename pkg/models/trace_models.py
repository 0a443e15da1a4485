"""
Per-iteration metric traces written as CSV.
"""
import csv
import io
import math
from typing import Any, Dict, List, Union

from pydantic import BaseModel, Field

Cell = Union[int, float, str]


def format_cell(value: Cell) -> str:
    """Floats use ``repr`` so identical runs give byte-identical files."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value).lower()
    return str(value)


class MetricTrace(BaseModel):
    """Ordered table of metric rows with a fixed column set."""
    columns: List[str]
    rows: List[List[Cell]] = Field(default_factory=list)

    def append(self, **values: Any) -> None:
        missing = [c for c in self.columns if c not in values]
        extra = [k for k in values if k not in self.columns]
        if missing or extra:
            raise KeyError(f"trace row mismatch: missing={missing} extra={extra}")
        row = []
        for c in self.columns:
            v = values[c]
            row.append(v if isinstance(v, (int, str)) else float(v))
        self.rows.append(row)

    def column(self, name: str) -> List[Cell]:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def last(self) -> Dict[str, Cell]:
        if not self.rows:
            return {}
        return dict(zip(self.columns, self.rows[-1]))

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_cell(v) for v in row])
        return buf.getvalue()


def moment_columns(prefix: str, dim: int) -> List[str]:
    return [f"{prefix}_{k}" for k in range(dim)]
