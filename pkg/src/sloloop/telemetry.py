"""In-memory time-series store for per-component metrics.

Each (component, metric) pair owns one timestamp-ordered series. Timestamps
are integer ticks; one tick is one second of simulated time. Missing values
are first-class (value None) so preprocessing can interpolate them later.
"""

from __future__ import annotations

import bisect
import io
import math
import threading
from dataclasses import dataclass

DEFAULT_RETENTION_TICKS = 10_000

CSV_HEADER = "component,metric,timestamp,value"


class TelemetryError(ValueError):
    pass


class MetricNotFound(KeyError):
    """Unknown (component, metric) pair; distinct from an empty query result."""

    def __init__(self, component: str, metric: str):
        super().__init__((component, metric))
        self.component = component
        self.metric = metric

    def __str__(self):
        return f"no series for metric '{self.metric}' on component '{self.component}'"


@dataclass(frozen=True)
class Sample:
    timestamp: int
    value: float | None


@dataclass(frozen=True)
class TimeSeries:
    component: str
    metric: str
    samples: tuple[Sample, ...]

    def __len__(self):
        return len(self.samples)

    def values(self) -> list[float | None]:
        return [s.value for s in self.samples]

    def timestamps(self) -> list[int]:
        return [s.timestamp for s in self.samples]


class _Series:
    __slots__ = ("timestamps", "values")

    def __init__(self):
        self.timestamps: list[int] = []
        self.values: list[float | None] = []


class MetricStore:
    """Ring-buffer style metric store with a retention window.

    Safe for concurrent ingestion and reads; a single lock serializes
    mutations so queries never observe a torn series.
    """

    def __init__(self, declared=None, auto_register: bool = True,
                 retention_window: int = DEFAULT_RETENTION_TICKS):
        self._series: dict[tuple[str, str], _Series] = {}
        self._declared: set[tuple[str, str]] = set(declared or ())
        self.auto_register = auto_register
        self.retention_window = retention_window
        self._now = 0
        self._lock = threading.Lock()

    @classmethod
    def from_descriptor(cls, descriptor, auto_register: bool = True,
                        retention_window: int = DEFAULT_RETENTION_TICKS) -> "MetricStore":
        return cls(declared={m.key for m in descriptor.metrics},
                   auto_register=auto_register, retention_window=retention_window)

    def declare(self, component: str, metric: str) -> None:
        """Register a metric at runtime so it can be ingested without auto-register."""
        with self._lock:
            self._declared.add((component, metric))

    def ingest(self, component: str, metric: str, timestamp: int, value: float | None) -> None:
        if value is not None and not math.isfinite(value):
            raise TelemetryError(
                f"non-finite value {value!r} for {component}/{metric}; use None for missing")
        key = (component, metric)
        with self._lock:
            series = self._series.get(key)
            if series is None:
                if not self.auto_register and key not in self._declared:
                    raise TelemetryError(
                        f"undeclared metric '{metric}' on component '{component}' "
                        "and auto-register is disabled")
                series = self._series[key] = _Series()
            ts, vals = series.timestamps, series.values
            if ts and timestamp >= ts[-1]:
                if timestamp == ts[-1]:
                    vals[-1] = value  # last write wins
                else:
                    ts.append(timestamp)
                    vals.append(value)
            elif not ts:
                ts.append(timestamp)
                vals.append(value)
            else:
                idx = bisect.bisect_left(ts, timestamp)
                if idx < len(ts) and ts[idx] == timestamp:
                    vals[idx] = value
                else:
                    ts.insert(idx, timestamp)
                    vals.insert(idx, value)
            if timestamp > self._now:
                self._now = timestamp
                self._compact_all()

    def _compact_all(self) -> None:
        horizon = self._now - self.retention_window
        for series in self._series.values():
            if series.timestamps and series.timestamps[0] < horizon:
                cut = bisect.bisect_left(series.timestamps, horizon)
                del series.timestamps[:cut]
                del series.values[:cut]

    def query_window(self, component: str, metric: str, t0: int, t1: int) -> TimeSeries:
        """All samples with t0 <= timestamp <= t1, in timestamp order."""
        if t0 > t1:
            raise TelemetryError(f"query window inverted: t0={t0} > t1={t1}")
        key = (component, metric)
        with self._lock:
            series = self._series.get(key)
            if series is None:
                raise MetricNotFound(component, metric)
            lo = bisect.bisect_left(series.timestamps, t0)
            hi = bisect.bisect_right(series.timestamps, t1)
            samples = tuple(Sample(series.timestamps[i], series.values[i]) for i in range(lo, hi))
        return TimeSeries(component=component, metric=metric, samples=samples)

    def latest(self, component: str, metric: str) -> Sample | None:
        key = (component, metric)
        with self._lock:
            series = self._series.get(key)
            if series is None:
                raise MetricNotFound(component, metric)
            if not series.timestamps:
                return None
            return Sample(series.timestamps[-1], series.values[-1])

    def has_series(self, component: str, metric: str) -> bool:
        with self._lock:
            return (component, metric) in self._series

    def pairs(self) -> list[tuple[str, str]]:
        with self._lock:
            return sorted(self._series.keys())

    def window_mean(self, component: str, metric: str, t0: int, t1: int) -> float | None:
        """Mean of non-missing samples in [t0, t1]; None when there are none."""
        ts = self.query_window(component, metric, t0, t1)
        values = [s.value for s in ts.samples if s.value is not None]
        if not values:
            return None
        return sum(values) / len(values)

    def export_snapshot(self) -> str:
        """Scrape-compatible text exposition of the latest sample per series.

        One `name{component="id"} value timestamp` line per pair, ordered
        lexicographically by component then metric, ending with `# EOF`.
        An empty store exports an empty document.
        """
        lines = []
        with self._lock:
            for (component, metric) in sorted(self._series.keys()):
                series = self._series[(component, metric)]
                if not series.timestamps:
                    continue
                value = series.values[-1]
                rendered = "NaN" if value is None else format(value, "g")
                lines.append(f'{metric}{{component="{component}"}} {rendered} {series.timestamps[-1]}')
        if not lines:
            return ""
        lines.append("# EOF")
        return "\n".join(lines) + "\n"

    def export_csv(self, fh=None) -> str:
        """Dump every retained sample as CSV (header component,metric,timestamp,value)."""
        out = fh or io.StringIO()
        out.write(CSV_HEADER + "\n")
        with self._lock:
            for (component, metric) in sorted(self._series.keys()):
                series = self._series[(component, metric)]
                for ts, value in zip(series.timestamps, series.values):
                    rendered = "" if value is None else repr(value)
                    out.write(f"{component},{metric},{ts},{rendered}\n")
        if fh is None:
            return out.getvalue()
        return ""
