"""Run bookkeeping: per-epoch records, final metrics and their JSON/CSV forms."""
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ._version import __version__
from .errors import ConfigError

CSV_FIELDS = ("epoch", "loss", "w", "lr", "beta1", "test_acc")

StrPath = Union[str, Path]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    w: float
    lr: float
    beta1: float
    test_acc: float

    def csv_row(self) -> List[str]:
        return [str(self.epoch), repr(self.loss), repr(self.w), repr(self.lr), repr(self.beta1), repr(self.test_acc)]


@dataclass(frozen=True)
class FinalMetrics:
    """
    Test-split metrics after the last epoch.

    ``homogeneity``/``completeness`` use the predicted labels as clusters;
    the ``kmeans_*`` values use k-means on the deep features when requested.
    ``compactness`` and ``separation`` are the angular statistics of
    :func:`amcloss.metrics.angular_compactness` in radians.
    """

    accuracy: float
    homogeneity: float
    completeness: float
    kmeans_homogeneity: Optional[float] = None
    kmeans_completeness: Optional[float] = None
    compactness: Optional[float] = None
    separation: Optional[float] = None


@dataclass
class RunReport:
    config: Dict[str, Any]
    seed: int
    epochs: List[EpochRecord] = field(default_factory=list)
    final: Optional[FinalMetrics] = None
    wall_clock: float = 0.0
    amcloss_version: str = __version__

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        try:
            final = data.get("final")
            return cls(
                config=dict(data["config"]),
                seed=int(data["seed"]),
                epochs=[EpochRecord(**record) for record in data.get("epochs", [])],
                final=FinalMetrics(**final) if final is not None else None,
                wall_clock=float(data.get("wall_clock", 0.0)),
                amcloss_version=str(data.get("amcloss_version", "")),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"report: malformed run report ({exc})") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"report: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def save(self, path: StrPath) -> Path:
        target = Path(path)
        target.write_text(self.to_json(), encoding="utf-8")
        return target

    @classmethod
    def load(cls, path: StrPath) -> "RunReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def write_epoch_csv(records: List[EpochRecord], path: StrPath) -> Path:
    """Write ``epoch,loss,w,lr,beta1,test_acc`` rows, one per epoch."""
    target = Path(path)
    with target.open("w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        writer.writerow(CSV_FIELDS)
        for record in records:
            writer.writerow(record.csv_row())
    return target


def append_epoch_csv(record: EpochRecord, path: StrPath) -> None:
    """Append one row, writing the header first if the file is new."""
    target = Path(path)
    fresh = not target.exists() or target.stat().st_size == 0
    with target.open("a", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        if fresh:
            writer.writerow(CSV_FIELDS)
        writer.writerow(record.csv_row())
