"""Monitoring: line-oriented logs, CSV record export and SVG line charts.

Log line format (one event per line, fields in this order)::

    <ISO-8601 UTC time> level=<level> msg="<message>" [k=v ...] | <counter>=<n> ...

Record CSV schema: ``step,wall_time,value,anomaly`` where ``step`` is the
chosen x-axis counter at append time and ``anomaly`` is 1 for non-finite
values.
"""

from __future__ import annotations

import csv
import datetime as _dt
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError, MbrlError
from .expmgr.recorder import Recorder
from .expmgr.status import GlobalStatus

LEVELS = {"info": 20, "warning": 30, "error": 40}

_console_lock = threading.Lock()


@dataclass(frozen=True)
class LogEvent:
    level: str
    message: str
    fields: dict
    snapshot: dict
    wall_time: float

    def format(self) -> str:
        stamp = _dt.datetime.fromtimestamp(self.wall_time, _dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
        parts = [stamp, f"level={self.level}", f'msg="{self.message}"']
        parts += [f"{k}={v}" for k, v in self.fields.items()]
        line = " ".join(parts)
        if self.snapshot:
            line += " | " + " ".join(f"{k}={v}" for k, v in self.snapshot.items())
        return line


class Monitor:
    """Writes log events to a file sink and optionally to the console.

    Sink failures switch the monitor to console-only output instead of
    propagating into training. Error events are flushed immediately.
    """

    def __init__(self, path=None, level: str = "info", console: bool = True, stream=None):
        if level not in LEVELS:
            raise ContractError(f"log level must be one of {sorted(LEVELS)}, got {level!r}")
        self.threshold = LEVELS[level]
        self.console = console
        self.stream = stream or sys.stderr
        self.events: list[LogEvent] = []
        self._lock = threading.Lock()
        self._last_time = 0.0
        self._fh = None
        if path is not None:
            try:
                self._fh = open(path, "a", encoding="utf-8")
            except OSError as exc:
                self._fallback(exc)

    def _fallback(self, exc):
        self._fh = None
        self.console = True
        with _console_lock:
            print(f"log sink unavailable ({exc}); logging to console only", file=self.stream)

    def emit(self, level: str, message: str, fields: dict | None = None, status: GlobalStatus | None = None) -> LogEvent | None:
        if level not in LEVELS:
            raise ContractError(f"unknown log level {level!r}")
        if LEVELS[level] < self.threshold:
            return None
        with self._lock:
            now = max(time.time(), self._last_time)
            self._last_time = now
            event = LogEvent(level, message, dict(fields or {}), status.snapshot() if status else {}, now)
            self.events.append(event)
            line = event.format()
            if self._fh is not None:
                try:
                    self._fh.write(line + "\n")
                    if level == "error":
                        self._fh.flush()
                except OSError as exc:
                    self._fallback(exc)
            if self.console:
                with _console_lock:
                    print(line, file=self.stream, flush=level == "error")
        return event

    def info(self, message, fields=None, status=None):
        return self.emit("info", message, fields, status)

    def warning(self, message, fields=None, status=None):
        return self.emit("warning", message, fields, status)

    def error(self, message, fields=None, status=None):
        return self.emit("error", message, fields, status)

    def close(self):
        if self._fh is not None:
            try:
                self._fh.close()
            except OSError:
                pass
            self._fh = None


def log_emit(monitor: Monitor, level: str, message: str, fields=None, status=None):
    return monitor.emit(level, message, fields, status)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

CSV_HEADER = ("step", "wall_time", "value", "anomaly")


def export_csv(recorder: Recorder, key: str, path, x_key: str = "total_real_samples") -> int:
    """Write every entry recorded under ``key``; returns the row count."""
    if key not in recorder.keys():
        raise MbrlError(f"unknown record key {key!r}")
    rows = recorder.series(key)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for e in rows:
            w.writerow((e.snapshot[x_key], repr(e.wall_time), repr(e.value), int(e.anomaly)))
    return len(rows)


def read_csv(path) -> list:
    """``(step, value)`` pairs from an exported record file, anomalies skipped."""
    out = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["anomaly"] == "1":
                continue
            out.append((float(row["step"]), float(row["value"])))
    return out


# ---------------------------------------------------------------------------
# SVG line charts
# ---------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


@dataclass
class PlotSpec:
    keys: list
    out_path: str
    x_key: str = "total_real_samples"
    width: int = 640
    height: int = 400
    title: str = ""


def _series_from(records, keys, x_key):
    if isinstance(records, Recorder):
        return {k: [(e.snapshot[x_key], e.value) for e in records.series(k) if not e.anomaly] for k in keys}
    return {k: list(records[k]) for k in keys if k in records}


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def plot_series(spec: PlotSpec, records) -> Path:
    """Render one polyline per key into a standalone SVG file.

    ``records`` is a :class:`Recorder` or a mapping ``key -> [(x, y), ...]``.
    Nothing is written when a key has no points.
    """
    series = _series_from(records, spec.keys, spec.x_key)
    for k in spec.keys:
        if k not in series:
            raise MbrlError(f"unknown record key {k!r}")
        if not series[k]:
            raise MbrlError(f"record key {k!r} has no data points")
    xs = [p[0] for k in spec.keys for p in series[k]]
    ys = [p[1] for k in spec.keys for p in series[k]]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    W, H = spec.width, spec.height
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = W - left - right, H - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 18}" font-size="11" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.2f}" font-size="11" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{H - 10}" font-size="12" text-anchor="middle">{spec.x_key}</text>')
    if spec.title:
        out.append(f'<text x="{left + pw / 2:.2f}" y="18" font-size="13" text-anchor="middle">{spec.title}</text>')
    for i, k in enumerate(spec.keys):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in series[k])
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw - 120}" y1="{ly}" x2="{left + pw - 100}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 95}" y="{ly + 4}" font-size="11">{k}</text>')
    out.append("</svg>")
    path = Path(spec.out_path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


__all__ = [
    "LogEvent", "Monitor", "log_emit", "export_csv", "read_csv", "PlotSpec", "plot_series", "CSV_HEADER",
]
