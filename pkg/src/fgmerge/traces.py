"""Trace, summary, comparison-report and plot-data files.

A trace file is comma-separated text. Its first line is ``#`` followed by a
JSON object holding the resolved config and the package version; the second
line names the columns (``TRACE_COLUMNS``); then one row per StepRecord,
ordered by (t, fifo_index). Floats carry 9 significant digits, absent barrier
values are empty fields, and an empty feasible set from a violated pure-state
row is written as ``inf,-inf``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from fgmerge import __version__
from fgmerge.config import config_from_mapping, config_to_dict
from fgmerge.qp import FEAS_TOL
from fgmerge.sim import Mode, RunSummary, ScenarioConfig, StepRecord, VehicleSummary, run

TRACE_COLUMNS = [f.name for f in dataclasses.fields(StepRecord)]
_INT_COLUMNS = {"vehicle_id", "fifo_index"}
_STR_COLUMNS = {"lane", "qp_status"}
_OPTIONAL_COLUMNS = {"b1", "b2", "b_eta1", "b_eta2", "bF_rear", "bF_merge"}

PLOT_COLUMNS = ["t", "u", "feasible_lo", "feasible_hi", "u_min", "u_max", "b1", "b2"]


class UnknownVehicle(KeyError):
    pass


def fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    return "%.9g" % x


def _quantize(x: Optional[float]) -> Optional[float]:
    return None if x is None else float(fmt(x))


def quantize_record(rec: StepRecord) -> StepRecord:
    """The record as it reads back from a trace file."""
    vals = {}
    for name in TRACE_COLUMNS:
        v = getattr(rec, name)
        vals[name] = v if name in _INT_COLUMNS or name in _STR_COLUMNS else _quantize(v)
    return StepRecord(**vals)


@dataclass
class TraceFile:
    header: dict[str, Any]
    records: list[StepRecord] = field(default_factory=list)

    @classmethod
    def from_run(cls, config: ScenarioConfig, records: list[StepRecord]) -> "TraceFile":
        header = {"format": "fgmerge-trace", "version": __version__,
                  "config": config_to_dict(config)}
        ordered = sorted(records, key=lambda r: (r.t, r.fifo_index))
        # hold exactly what the file holds, so text round-trips are bit-exact
        return cls(header, [quantize_record(r) for r in ordered])

    @property
    def config(self) -> ScenarioConfig:
        return config_from_mapping(self.header["config"])

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            row = []
            for name in TRACE_COLUMNS:
                v = getattr(r, name)
                if name in _INT_COLUMNS or name in _STR_COLUMNS:
                    row.append(str(v))
                else:
                    row.append(fmt(v))
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "TraceFile":
        first, _, rest = text.partition("\n")
        if not first.startswith("# "):
            raise ValueError("trace file lacks its JSON header line")
        header = json.loads(first[2:])
        reader = csv.reader(io.StringIO(rest))
        cols = next(reader)
        if cols != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace columns {cols}")
        records = []
        for row in reader:
            vals = {}
            for name, raw in zip(cols, row):
                if name in _INT_COLUMNS:
                    vals[name] = int(raw)
                elif name in _STR_COLUMNS:
                    vals[name] = raw
                elif name in _OPTIONAL_COLUMNS and raw == "":
                    vals[name] = None
                else:
                    vals[name] = float(raw)
            records.append(StepRecord(**vals))
        return cls(header, records)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    @classmethod
    def read(cls, path) -> "TraceFile":
        return cls.from_text(Path(path).read_text())


# -- summaries ----------------------------------------------------------------

def summary_to_dict(summary: RunSummary) -> dict[str, Any]:
    return {
        "vehicles": [dataclasses.asdict(v) for v in summary.vehicles],
        "aggregates": {
            "completed": len(summary.completed),
            "mean_travel_time": summary.mean_travel_time,
            "mean_energy": summary.mean_energy,
            "total_infeasible_steps": summary.total_infeasible_steps,
            "min_b1": summary.min_b1,
            "min_b2": summary.min_b2,
            "fifo_violations": summary.fifo_violations,
            "deferred_at_horizon": summary.deferred_at_horizon,
        },
    }


def summary_from_dict(data: dict[str, Any]) -> RunSummary:
    agg = data["aggregates"]
    return RunSummary([VehicleSummary(**v) for v in data["vehicles"]],
                      agg["fifo_violations"], agg["deferred_at_horizon"])


def write_summary(summary: RunSummary, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary_to_dict(summary), indent=2) + "\n")
    return path


# -- two-mode comparison ------------------------------------------------------------

def _by_vehicle(records):
    out: dict[int, dict[float, StepRecord]] = {}
    for r in records:
        out.setdefault(r.vehicle_id, {})[r.t] = r
    return out


def _same_interval(a: Optional[StepRecord], b: Optional[StepRecord]) -> bool:
    if a is None or b is None:
        return a is b
    return (a.feasible_lo, a.feasible_hi) == (b.feasible_lo, b.feasible_hi)


def _first_infeasible(recs: dict[float, StepRecord]) -> Optional[float]:
    times = [t for t, r in recs.items() if not r.feasible]
    return min(times) if times else None


def _min_of(recs, name):
    vals = [getattr(r, name) for r in recs.values() if getattr(r, name) is not None]
    return min(vals) if vals else None


def compare_records(ocbf: list[StepRecord], fg: list[StepRecord]) -> dict[str, Any]:
    """Per-vehicle comparison of two same-seed runs.

    ``divergence_t`` is the first time the vehicle's feasible interval differs
    between the runs (a vehicle present in only one run counts as different).
    """
    a, b = _by_vehicle(ocbf), _by_vehicle(fg)
    vehicles = []
    for vid in sorted(set(a) | set(b)):
        ra, rb = a.get(vid, {}), b.get(vid, {})
        divergence = None
        for t in sorted(set(ra) | set(rb)):
            if not _same_interval(ra.get(t), rb.get(t)):
                divergence = t
                break
        vehicles.append({
            "vehicle_id": vid,
            "first_infeasible_t": {Mode.OCBF.value: _first_infeasible(ra),
                                   Mode.FG_OCBF.value: _first_infeasible(rb)},
            "min_b1": {Mode.OCBF.value: _min_of(ra, "b1"), Mode.FG_OCBF.value: _min_of(rb, "b1")},
            "min_b2": {Mode.OCBF.value: _min_of(ra, "b2"), Mode.FG_OCBF.value: _min_of(rb, "b2")},
            "divergence_t": divergence,
        })
    return {
        "vehicles": vehicles,
        "infeasible_steps": {Mode.OCBF.value: sum(not r.feasible for r in ocbf),
                             Mode.FG_OCBF.value: sum(not r.feasible for r in fg)},
    }


def run_compare(config: ScenarioConfig, observer=None) -> tuple[TraceFile, TraceFile, dict[str, Any]]:
    """Run ``config`` in both modes with the same seed and compare them."""
    traces = {}
    for mode in (Mode.OCBF, Mode.FG_OCBF):
        cfg = dataclasses.replace(config, mode=mode)
        records, _ = run(cfg, observer)
        traces[mode] = TraceFile.from_run(cfg, records)
    report = compare_records(traces[Mode.OCBF].records, traces[Mode.FG_OCBF].records)
    return traces[Mode.OCBF], traces[Mode.FG_OCBF], report


# -- plot data ----------------------------------------------------------------------------

def plot_rows(trace: TraceFile, vehicle_id: int) -> list[list[Optional[float]]]:
    recs = [r for r in trace.records if r.vehicle_id == vehicle_id]
    if not recs:
        raise UnknownVehicle(vehicle_id)
    cfg = trace.header["config"]
    u_min = cfg["u_min"]
    u_max = cfg["u_max"]
    return [[r.t, r.u_applied, r.feasible_lo, r.feasible_hi, u_min, u_max, r.b1, r.b2]
            for r in recs]


def emit_plot_data(trace: TraceFile, vehicle_id: int, path) -> Path:
    """Write the control history, feasible band, bounds and barriers of one CAV."""
    rows = plot_rows(trace, vehicle_id)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def is_empty_band(lo: float, hi: float) -> bool:
    return math.isnan(lo) or lo > hi + FEAS_TOL
