"""Result tables, ensemble intervals and file persistence."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exact import relative_deviation

SCHEMA_VERSION = 1
OPTIMAL = "optimal"


class ResultsParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the target directory followed by ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x: float) -> str:
    # repr is the shortest string that round-trips
    return repr(float(x))


def ensemble_interval(deviations, coverage: float = 0.95) -> tuple:
    """Empirical ``((1-c)/2, (1+c)/2)`` quantiles, linear interpolation between order statistics."""
    values = np.asarray(list(deviations), dtype=float)
    if values.size < 2:
        raise ValueError("an ensemble interval needs at least 2 samples")
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must lie in (0, 1)")
    lo, hi = np.quantile(values, [(1 - coverage) / 2, (1 + coverage) / 2], method="linear")
    return float(lo), float(hi)


@dataclass(frozen=True)
class ResultRow:
    params: tuple           # values aligned with ResultTable.param_names
    method: str
    value: float
    d_r: float
    metadata: dict = field(default_factory=dict, compare=False)

    def __eq__(self, other):
        if not isinstance(other, ResultRow):
            return NotImplemented
        same = lambda a, b: a == b or (isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b))
        return (self.method == other.method and len(self.params) == len(other.params)
                and all(same(float(a), float(b)) for a, b in zip(self.params, other.params))
                and same(self.value, other.value) and same(self.d_r, other.d_r))


@dataclass
class ResultTable:
    param_names: tuple
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def add(self, params, method: str, value: float, d_r: float, **metadata) -> ResultRow:
        if len(params) != len(self.param_names):
            raise ValueError(f"expected {len(self.param_names)} parameters, got {len(params)}")
        row = ResultRow(tuple(float(p) for p in params), method, float(value), float(d_r), metadata)
        self.rows.append(row)
        return row

    def points(self) -> list:
        seen = []
        for r in self.rows:
            if r.params not in seen:
                seen.append(r.params)
        return seen

    def methods(self) -> list:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def select(self, method: str | None = None, params=None) -> list:
        return [r for r in self.rows
                if (method is None or r.method == method)
                and (params is None or r.params == tuple(float(p) for p in params))]

    def wide(self, field_name: str = "d_r") -> list:
        """One dict per parameter point with a column per method."""
        out = []
        for pt in self.points():
            entry = dict(zip(self.param_names, pt))
            for r in self.select(params=pt):
                entry[r.method] = getattr(r, field_name)
            out.append(entry)
        return out

    def consistency_errors(self, tol: float = 1e-9) -> list:
        """Rows whose d_r disagrees with ``relative_deviation(optimal, value)``."""
        bad = []
        for pt in self.points():
            ref = self.select(OPTIMAL, pt)
            if not ref:
                continue
            v_opt = ref[0].value
            for r in self.select(params=pt):
                if not math.isfinite(r.value):
                    continue
                expect = relative_deviation(v_opt, r.value)
                if abs(expect - r.d_r) > tol * max(1.0, abs(expect)):
                    bad.append((r, expect))
        return bad

    def __eq__(self, other):
        if not isinstance(other, ResultTable):
            return NotImplemented
        return (tuple(self.param_names) == tuple(other.param_names)
                and self.schema_version == other.schema_version and self.rows == other.rows)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def table_to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(table.param_names) + ["method", "value", "d_r"])
    for r in table.rows:
        w.writerow([format_float(p) for p in r.params] + [r.method, format_float(r.value), format_float(r.d_r)])
    return buf.getvalue()


def write_results(table: ResultTable, path) -> None:
    atomic_write_text(path, table_to_csv(table))
    meta = {
        "schema_version": table.schema_version,
        "param_names": list(table.param_names),
        "metadata": table.metadata,
        "row_metadata": [r.metadata for r in table.rows],
    }
    atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_results(path) -> ResultTable:
    path = Path(path)
    text = path.read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ResultsParseError(path, 1, "empty file") from None
    if header[-3:] != ["method", "value", "d_r"]:
        raise ResultsParseError(path, 1, "header must end with method,value,d_r")
    names = tuple(header[:-3])
    table = ResultTable(names)
    for line, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise ResultsParseError(path, line, f"expected {len(header)} fields, got {len(rec)}")
        try:
            params = [float(x) for x in rec[:len(names)]]
            value, d_r = float(rec[-2]), float(rec[-1])
        except ValueError as err:
            raise ResultsParseError(path, line, str(err)) from None
        table.rows.append(ResultRow(tuple(params), rec[-3], value, d_r))
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        table.schema_version = int(meta.get("schema_version", SCHEMA_VERSION))
        table.metadata = meta.get("metadata", {})
        row_meta = meta.get("row_metadata", [])
        if len(row_meta) == len(table.rows):
            table.rows = [ResultRow(r.params, r.method, r.value, r.d_r, m) for r, m in zip(table.rows, row_meta)]
    return table


def write_rows_csv(path, header, rows) -> None:
    """Plain CSV for plot-ready series; floats in round-trip form."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())
