"""Run artifacts: field snapshots (raw <f8 + JSON sidecar) and CSV tables."""

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Type

import numpy as np
from pydantic import BaseModel

from app.schemas import GridSpec
from app.services.errors import InvalidFieldError
from app.services.spectral_core import ScalarField

logger = logging.getLogger(__name__)

SNAPSHOT_DTYPE = "<f8"


# ------------------------------
# Field snapshots
# ------------------------------

def write_snapshot(directory: Path, name: str, field: ScalarField, time: float,
                   representation: str = "nodal", extra: Optional[dict] = None) -> Path:
    """Write ``name.bin`` (flat little-endian float64, row-major) and ``name.json``."""
    if representation not in ("nodal", "spectral"):
        raise InvalidFieldError(f"unknown representation {representation!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = field.values if representation == "nodal" else field.coeffs
    bin_path = directory / f"{name}.bin"
    np.ascontiguousarray(data, dtype=SNAPSHOT_DTYPE).tofile(bin_path)

    sidecar = {
        "dim": field.grid.dim,
        "lengths": list(field.grid.lengths),
        "counts": list(field.grid.counts),
        "representation": representation,
        "time": float(time),
    }
    if extra:
        sidecar.update(extra)
    with open(directory / f"{name}.json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
    return bin_path


def load_snapshot(path: Path) -> tuple[ScalarField, dict]:
    """Read a snapshot back from either its .bin or .json path."""
    path = Path(path)
    stem = path.with_suffix("")
    with open(stem.with_suffix(".json"), "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    grid = GridSpec(dim=sidecar["dim"], lengths=tuple(sidecar["lengths"]), counts=tuple(sidecar["counts"]))
    data = np.fromfile(stem.with_suffix(".bin"), dtype=SNAPSHOT_DTYPE)
    if data.size != grid.size:
        raise InvalidFieldError(f"snapshot {stem.name} holds {data.size} values, sidecar expects {grid.size}")
    data = data.reshape(grid.shape)
    if sidecar.get("representation", "nodal") == "spectral":
        return ScalarField(grid, coeffs=data), sidecar
    return ScalarField(grid, values=data), sidecar


# ------------------------------
# CSV tables
# ------------------------------

class CsvTable:
    """Append-only CSV keyed by the fields of a pydantic row model."""

    def __init__(self, path: Path, model: Type[BaseModel]):
        self.path = Path(path)
        self.columns = list(model.model_fields.keys())
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8", newline="")
        self._writer = csv.DictWriter(self._handle, fieldnames=self.columns)
        self._writer.writeheader()

    def append(self, row: BaseModel) -> None:
        self._writer.writerow({k: ("" if v is None else v) for k, v in row.model_dump().items()})

    def extend(self, rows: Iterable[BaseModel]) -> None:
        for row in rows:
            self.append(row)

    def flush(self) -> None:
        if not self._handle.closed:
            self._handle.flush()

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()

    def __enter__(self) -> "CsvTable":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_csv(path: Path, rows: Sequence[BaseModel], model: Type[BaseModel]) -> Path:
    with CsvTable(path, model) as table:
        table.extend(rows)
    return Path(path)


def read_csv(path: Path) -> List[dict]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


class SnapshotSchedule:
    """Decides which accepted steps are snapshotted: every N steps and/or every dt of simulated time."""

    def __init__(self, every_steps: Optional[int] = None, interval: Optional[float] = None):
        self.every_steps = every_steps
        self.interval = interval
        self._next_time = interval

    def due(self, step: int, t: float) -> bool:
        hit = bool(self.every_steps) and step % self.every_steps == 0
        if self.interval is not None and t >= self._next_time - 1e-12 * max(1.0, abs(t)):
            while self._next_time <= t + 1e-12 * max(1.0, abs(t)):
                self._next_time += self.interval
            hit = True
        return hit
