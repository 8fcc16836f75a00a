import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Union

from pydantic import BaseModel

METRICS_HEADER = ("step", "reward_mos", "heldout", "recovery_err", "diff_loss", "kl", "algo", "seed")
TABLE_HEADER = ("algo", "reward_mos", "heldout", "recovery_err")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


class MetricsRow(BaseModel):
    step: int
    reward_mos: Optional[float] = None
    heldout: Optional[float] = None
    recovery_err: Optional[float] = None
    diff_loss: Optional[float] = None
    kl: Optional[float] = None
    algo: str = "pretrain"
    seed: int = 0

    def cells(self) -> list[str]:
        return [_cell(getattr(self, name)) for name in METRICS_HEADER]


def _write_csv(path: Union[str, Path], header: Iterable[str], rows: Iterable[Iterable[str]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def write_metrics(path: Union[str, Path], rows: Iterable[MetricsRow]) -> Path:
    return _write_csv(path, METRICS_HEADER, (row.cells() for row in rows))


def read_metrics(path: Union[str, Path]) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as handle:
        records = list(csv.DictReader(handle))
    return [
        MetricsRow(**{key: (value if value != "" else None) for key, value in record.items()})
        for record in records
    ]


class TableRow(BaseModel):
    algo: str
    reward_mos: float
    heldout: float
    recovery_err: float


def write_table(path: Union[str, Path], rows: Iterable[TableRow]) -> Path:
    return _write_csv(path, TABLE_HEADER, ([_cell(getattr(row, name)) for name in TABLE_HEADER] for row in rows))
