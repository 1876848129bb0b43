"""Plot-ready CSV/JSON datasets, Q-table persistence and run manifests.

Everything emitted here is a pure function of its input so that repeated
runs produce identical bytes.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .graph import WorkflowGraph
from .qlearning import QTable
from .sweep import SweepResult, accuracy_curve, convergence_curve
from .trace import TimingSeries


class ReportKind(enum.Enum):
    CONVERGENCE_SPEED = "convergence"
    ACCURACY_VS_LR = "accuracy"
    COMMAND_TIMINGS = "timings"


class Format(enum.Enum):
    CSV = "csv"
    JSON = "json"


class ReportError(ValueError):
    pass


def _num(x: float) -> str:
    # shortest repr that round-trips; integers stay integers
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def _csv_bytes(header: Sequence[str], rows: Iterable[Sequence[object]]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, indent=1, sort_keys=False) + "\n").encode("utf-8")


# -- sweep tables ------------------------------------------------------------

SWEEP_HEADER = ("env", "lr", "seed", "episodes_to_convergence", "converged", "accuracy")


def sweep_table(result: SweepResult, fmt: Format | str = Format.CSV,
                terminals: str = "included") -> bytes:
    """Every cell as stored. ``terminals`` records how terminal states were scored."""
    fmt = Format(fmt)
    rows = result.rows()
    if fmt is Format.CSV:
        return _csv_bytes(SWEEP_HEADER, [
            (env, _num(lr), seed, ep, "true" if conv else "false", f"{acc:.5f}")
            for env, lr, seed, ep, conv, acc in rows])
    return _json_bytes({
        "episode_cap": result.episode_cap,
        "terminals": terminals,
        "cells": [dict(zip(SWEEP_HEADER, (env, lr, seed, ep, conv, float(f"{acc:.5f}"))))
                  for env, lr, seed, ep, conv, acc in rows],
    })


def emit_report(result, kind: ReportKind | str, fmt: Format | str = Format.CSV) -> bytes:
    """ConvergenceSpeed / AccuracyVsLr over a sweep, CommandTimings over timing series."""
    kind, fmt = ReportKind(kind), Format(fmt)
    if kind is ReportKind.COMMAND_TIMINGS:
        if isinstance(result, TimingSeries):
            series = [result]
        elif isinstance(result, (list, tuple)):
            series = list(result)
        else:
            series = []
        if not series or not all(isinstance(s, TimingSeries) for s in series):
            raise ReportError("CommandTimings needs TimingSeries input")
        return _timings(series, fmt)
    if not isinstance(result, SweepResult):
        raise ReportError(f"{kind.name} needs a SweepResult")
    curve, col = ((convergence_curve, "median_episodes")
                  if kind is ReportKind.CONVERGENCE_SPEED
                  else (accuracy_curve, "median_accuracy"))
    rows = [(env, lr, v) for env in result.env_names() for lr, v in curve(result, env)]
    if fmt is Format.CSV:
        return _csv_bytes(("env", "lr", col), [(e, _num(lr), _num(v)) for e, lr, v in rows])
    return _json_bytes({"kind": kind.value,
                        "rows": [{"env": e, "lr": lr, col: v} for e, lr, v in rows]})


TIMING_HEADER = ("scenario", "seq", "state", "command", "duration_s", "exit_status")


def _timings(series: Sequence[TimingSeries], fmt: Format) -> bytes:
    rows = [(s.scenario_label, i, p.state, p.command, repr(float(p.duration)), p.exit_status)
            for s in series for i, p in enumerate(s.points)]
    if fmt is Format.CSV:
        return _csv_bytes(TIMING_HEADER, rows)
    return _json_bytes({"kind": ReportKind.COMMAND_TIMINGS.value, "scenarios": [
        {"scenario": s.scenario_label,
         "points": [{"seq": i, "state": p.state, "command": p.command,
                     "duration_s": p.duration, "exit_status": p.exit_status}
                    for i, p in enumerate(s.points)]}
        for s in series]})


# -- Q-table persistence -----------------------------------------------------

class QTableFormatError(ValueError):
    pass


def dump_qtable(q: QTable, fmt: Format | str = Format.CSV) -> bytes:
    fmt = Format(fmt)
    v = q.values
    if fmt is Format.CSV:
        return _csv_bytes(("state", "action", "q"), [
            (s, a, format(float(v[s, a]), ".17g"))
            for s in range(v.shape[0]) for a in range(v.shape[1])])
    return _json_bytes({"state_count": int(v.shape[0]),
                        "action_space_size": int(v.shape[1]),
                        "q": [[float(x) for x in row] for row in v]})


def _check_dims(values: np.ndarray, graph: WorkflowGraph | None) -> QTable:
    if graph is not None and values.shape != (graph.state_count, graph.action_space_size):
        raise QTableFormatError(
            f"Q-table is {values.shape[0]}x{values.shape[1]}, graph needs "
            f"{graph.state_count}x{graph.action_space_size}")
    return QTable(values)


def load_qtable(data: bytes | str, graph: WorkflowGraph | None = None) -> QTable:
    """Parse either form; the format is sniffed from the first character."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
            n, m, rows = doc["state_count"], doc["action_space_size"], doc["q"]
            values = np.array(rows, dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise QTableFormatError(f"malformed Q-table JSON: {exc}") from exc
        if values.shape != (n, m):
            raise QTableFormatError(f"q array is not {n}x{m}")
        return _check_dims(values, graph)
    reader = csv.reader(io.StringIO(text))
    if next(reader, None) != ["state", "action", "q"]:
        raise QTableFormatError("Q-table CSV must start with header state,action,q")
    cells: dict[tuple[int, int], float] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            s, a, v = int(row[0]), int(row[1]), float(row[2])
        except (IndexError, ValueError) as exc:
            raise QTableFormatError(f"line {lineno}: bad row {row!r}") from exc
        if len(row) != 3 or s < 0 or a < 0 or (s, a) in cells:
            raise QTableFormatError(f"line {lineno}: bad or duplicate row {row!r}")
        cells[(s, a)] = v
    if not cells:
        raise QTableFormatError("Q-table CSV has no rows")
    n = max(s for s, _ in cells) + 1
    m = max(a for _, a in cells) + 1
    if graph is not None:
        n, m = max(n, graph.state_count), max(m, graph.action_space_size)
    missing = [(s, a) for s in range(n) for a in range(m) if (s, a) not in cells]
    if missing:
        raise QTableFormatError(f"missing row for (state, action) {missing[0]}")
    values = np.zeros((n, m))
    for (s, a), v in cells.items():
        values[s, a] = v
    return _check_dims(values, graph)


def save_qtable(q: QTable, path: str | os.PathLike, fmt: Format | str | None = None) -> None:
    if fmt is None:
        fmt = Format.JSON if str(path).endswith(".json") else Format.CSV
    write_atomic(path, dump_qtable(q, fmt))


def read_qtable(path: str | os.PathLike, graph: WorkflowGraph | None = None) -> QTable:
    return load_qtable(Path(path).read_bytes(), graph)


# -- files and manifests -----------------------------------------------------

def write_atomic(path: str | os.PathLike, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    graph_file: str | None
    config_values: dict
    seeds: list[int]
    output_paths: list[str]
    tool_version: str = __version__
    notes: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        return _json_bytes({
            "command": self.command,
            "argv": self.argv,
            "graph_file": self.graph_file,
            "config_values": self.config_values,
            "seeds": self.seeds,
            "tool_version": self.tool_version,
            "output_paths": self.output_paths,
            "notes": self.notes,
        })

    @classmethod
    def from_bytes(cls, data: bytes | str) -> "RunManifest":
        doc = json.loads(data)
        return cls(command=doc["command"], argv=list(doc["argv"]),
                   graph_file=doc["graph_file"], config_values=doc["config_values"],
                   seeds=list(doc["seeds"]), output_paths=list(doc["output_paths"]),
                   tool_version=doc["tool_version"], notes=doc.get("notes", {}))


def manifest_path(out: str | os.PathLike) -> Path:
    return Path(f"{out}.manifest.json")


def write_manifest(manifest: RunManifest, out: str | os.PathLike) -> Path:
    p = manifest_path(out)
    write_atomic(p, manifest.to_bytes())
    return p


def load_sweep_table(data: bytes | str) -> SweepResult:
    """Inverse of :func:`sweep_table` (either form); train results are not kept."""
    from .sweep import CellRecord

    text = data.decode("utf-8") if isinstance(data, bytes) else data
    final = {}
    try:
        if text.lstrip().startswith("{"):
            doc = json.loads(text)
            cap = int(doc["episode_cap"])
            cells = [(c["env"], float(c["lr"]), int(c["seed"]), int(c["episodes_to_convergence"]),
                      bool(c["converged"]), float(c["accuracy"])) for c in doc["cells"]]
        else:
            reader = csv.reader(io.StringIO(text))
            if tuple(next(reader, ())) != SWEEP_HEADER:
                raise ReportError("sweep CSV header mismatch")
            cells = [(r[0], float(r[1]), int(r[2]), int(r[3]), r[4] == "true", float(r[5]))
                     for r in reader]
            # the CSV carries no cap; unconverged cells record it
            cap = max((c[3] for c in cells if not c[4]), default=max(c[3] for c in cells))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ReportError(f"malformed sweep table: {exc}") from exc
    for env, lr, seed, ep, conv, acc in cells:
        final[(env, lr, seed)] = CellRecord(ep, conv, acc)
    if not final:
        raise ReportError("sweep table has no cells")
    return SweepResult(final, cap)


def load_timings(data: bytes | str) -> list[TimingSeries]:
    """Inverse of the CommandTimings report (either form)."""
    from .trace import TimingPoint

    text = data.decode("utf-8") if isinstance(data, bytes) else data

    def status(x):
        return x if x == "simulated" else int(x)

    groups: dict[str, list[TimingPoint]] = {}
    try:
        if text.lstrip().startswith("{"):
            for s in json.loads(text)["scenarios"]:
                groups[s["scenario"]] = [TimingPoint(p["command"], int(p["state"]),
                                                     float(p["duration_s"]), status(p["exit_status"]))
                                         for p in s["points"]]
        else:
            reader = csv.reader(io.StringIO(text))
            if tuple(next(reader, ())) != TIMING_HEADER:
                raise ReportError("timings CSV header mismatch")
            for r in reader:
                groups.setdefault(r[0], []).append(
                    TimingPoint(r[3], int(r[2]), float(r[4]), status(r[5])))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ReportError(f"malformed timings table: {exc}") from exc
    return [TimingSeries(k, tuple(v)) for k, v in groups.items()]
