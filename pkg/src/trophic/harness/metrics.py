"""Append-only JSON-lines metric records and CSV curves."""

from __future__ import annotations

import csv
import json
import math
import numbers
from dataclasses import asdict, dataclass
from pathlib import Path


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRecord:
    experiment: str
    step: int
    metric: str
    value: object
    config_hash: str

    def to_json(self) -> str:
        d = asdict(self)
        d["value"] = _clean(self.value)
        return json.dumps(d, sort_keys=True, allow_nan=False)


def _clean(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, numbers.Integral):
        return int(v)
    f = float(v)
    return f if math.isfinite(f) else None


class MetricSink:
    """Writes records for a single config; steps are monotone per experiment.

    Opening an existing file in append mode checks that every record in it
    carries the same config hash.
    """

    def __init__(self, path, config_hash: str, append: bool = False):
        self.path = Path(path)
        self.config_hash = config_hash
        self._last: dict[str, int] = {}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if append and self.path.exists():
            for rec in read_metrics(self.path):
                if rec.config_hash != config_hash:
                    raise MetricError(f"{self.path}: existing records have config hash {rec.config_hash}, "
                                      f"sink has {config_hash}")
                self._last[rec.experiment] = rec.step
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8", newline="\n")
        self.records = 0

    def log(self, experiment: str, step: int, metric: str, value) -> MetricRecord:
        step = int(step)
        last = self._last.get(experiment)
        if last is not None and step < last:
            raise MetricError(f"{experiment}: step {step} after {last} (steps must not decrease)")
        self._last[experiment] = step
        rec = MetricRecord(experiment, step, metric, value, self.config_hash)
        self._fh.write(rec.to_json() + "\n")
        self.records += 1
        return rec

    def log_many(self, experiment: str, step: int, values: dict):
        for k in values:
            self.log(experiment, step, k, values[k])

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path, check_hash: bool = True) -> list[MetricRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(MetricRecord(d["experiment"], int(d["step"]), d["metric"], d["value"], d["config_hash"]))
            except (ValueError, KeyError) as exc:
                raise MetricError(f"{path}:{n}: malformed record ({exc})") from exc
    if check_hash and len({r.config_hash for r in out}) > 1:
        raise MetricError(f"{path}: records from more than one config hash")
    return out


def write_curve(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return v


def read_curve(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], [[float(c) if c not in ("",) else math.nan for c in r] for r in rows[1:]]
