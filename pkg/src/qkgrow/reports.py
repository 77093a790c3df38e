"""Run reports and CSV emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = ["Estimate", "Check", "RunReport", "write_csv", "read_csv"]


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error and trial count."""

    mean: float
    stderr: float
    trials: int

    @classmethod
    def from_samples(cls, samples) -> "Estimate":
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            raise ValueError("no samples")
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
        return cls(float(x.mean()), se, int(x.size))

    @classmethod
    def from_proportion(cls, successes: int, trials: int) -> "Estimate":
        if trials <= 0:
            raise ValueError("no trials")
        p = successes / trials
        return cls(p, math.sqrt(p * (1 - p) / trials), trials)


@dataclass
class Check:
    """One prediction-versus-measurement comparison."""

    name: str
    predicted: Optional[float]
    measured: float
    passed: bool
    criterion: str
    source: str = "monte-carlo"
    stderr: Optional[float] = None
    trials: Optional[int] = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        pred = "-" if self.predicted is None else f"{self.predicted:.6g}"
        se = "" if self.stderr is None else f" +/- {self.stderr:.2g}"
        tr = "" if self.trials is None else f" (trials={self.trials})"
        return (f"[{status}] {self.name}: predicted {pred}, measured "
                f"{self.measured:.6g}{se}{tr} [{self.source}; {self.criterion}]")


@dataclass
class RunReport:
    command: str
    config: dict
    statistics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add_stat(self, name: str, est: Estimate, source: str = "monte-carlo") -> None:
        self.statistics[name] = {**asdict(est), "source": source}

    def to_text(self) -> str:
        lines = [f"== {self.command} =="]
        for key, val in self.config.items():
            lines.append(f"  {key} = {val}")
        for name, s in self.statistics.items():
            lines.append(f"  {name}: {s['mean']:.6g} +/- {s['stderr']:.2g} "
                         f"(trials={s['trials']}, {s['source']})")
        lines.extend(c.line() for c in self.checks)
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_json(self) -> str:
        body = {
            "command": self.command,
            "config": self.config,
            "statistics": self.statistics,
            "checks": [asdict(c) for c in self.checks],
            "passed": self.passed,
        }
        return json.dumps(body, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows with a header line; floats use ``repr`` so they read back exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def read_csv(path) -> tuple[list[str], list[list]]:
    """Read a file produced by :func:`write_csv`; numeric fields are parsed."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [[_parse(v) for v in row] for row in reader]
    return columns, rows


def _parse(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text
