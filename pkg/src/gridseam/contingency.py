"""Contingency-set definition and batch dynamic contingency analysis.

Contingency files are data, not code: parameterized event lists plus per-run
overrides. Runs execute concurrently over shared immutable inputs; outputs
are merged in definition order, so the result set is identical for any
parallelism degree.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace, asdict
from pathlib import Path

import numpy as np

from .dynamics import (DynamicState, Event, SimulationOptions, SimulationResult,
                       load_events, simulate, write_result_csv)
from .netmodel import NetworkCase
from .ras import RasSpec, build_ras


class ContingencyError(ValueError):
    """Malformed contingency document."""


@dataclass(frozen=True)
class ContingencyDef:
    id: str
    label: str
    events: tuple[Event, ...]
    duration: float | None = None          # override, s
    ras_enabled: dict | None = None         # ras id -> bool override

    def __post_init__(self):
        if not self.events:
            raise ContingencyError(f"contingency '{self.id}' has no events")


def parse_contingencies(source: str | Path | list) -> tuple[ContingencyDef, ...]:
    """Parse the contingency suite document; ordering and labels preserved."""
    if isinstance(source, list):
        records = source
    else:
        text = str(source)
        if not text.lstrip().startswith("["):
            text = Path(source).read_text(encoding="utf-8")
        records = json.loads(text)
    defs = []
    seen = set()
    for rec in records:
        if "id" not in rec or "events" not in rec:
            raise ContingencyError(f"contingency record missing 'id' or 'events': {rec}")
        cid = str(rec["id"])
        if cid in seen:
            raise ContingencyError(f"duplicate contingency id '{cid}'")
        seen.add(cid)
        overrides = rec.get("overrides", {})
        defs.append(ContingencyDef(
            id=cid,
            label=str(rec.get("label", "")),
            events=load_events(rec["events"]),
            duration=float(overrides["duration"]) if "duration" in overrides else None,
            ras_enabled=dict(overrides["ras"]) if "ras" in overrides else None,
        ))
    return tuple(defs)


def group_by_label(defs: tuple[ContingencyDef, ...]) -> dict[str, int]:
    out: dict[str, int] = {}
    for d in defs:
        out[d.label] = out.get(d.label, 0) + 1
    return out


# ---------------------------------------------------------------------------
# batch execution

@dataclass(frozen=True)
class RunSummary:
    contingency_id: str
    label: str
    unresolved: str = ""                    # reason, empty when the run executed
    stable: bool = True
    f_min_hz: float = 0.0
    f_min_bus: str = ""
    f_min_t: float = 0.0
    f_max_hz: float = 0.0
    f_max_bus: str = ""
    f_max_t: float = 0.0
    v_min_pu: float = 0.0
    v_min_bus: str = ""
    v_min_t: float = 0.0
    ras_actions: tuple[str, ...] = ()
    peak_loading: tuple[tuple[str, float], ...] = ()
    dead_buses: tuple[str, ...] = ()


def _resolve_events(case: NetworkCase, events: tuple[Event, ...]) -> str:
    bus_ids = {b.id for b in case.buses}
    el_ids = {el.id for el in case.elements()}
    mach_ids = {m.id for m in case.machines}
    load_ids = {ld.id for ld in case.loads}
    for ev in events:
        if ev.action in ("apply_fault", "clear_fault") and ev.target not in bus_ids:
            return f"unknown bus '{ev.target}'"
        if ev.action == "trip_branch" and ev.target not in el_ids:
            return f"unknown branch '{ev.target}'"
        if ev.action == "trip_machine" and ev.target not in mach_ids:
            return f"unknown machine '{ev.target}'"
        if ev.action == "shed_load" and ev.target not in load_ids:
            return f"unknown load '{ev.target}'"
    return ""


def summarize_run(cdef: ContingencyDef, result: SimulationResult,
                  case: NetworkCase) -> RunSummary:
    """Extrema and RAS history from stored channels (dead buses excluded)."""
    dead = set(result.dead_buses)
    f_min = (np.inf, "", 0.0)
    f_max = (-np.inf, "", 0.0)
    v_min = (np.inf, "", 0.0)
    for b in case.buses:
        if not b.status or b.id in dead:
            continue
        f = result.channels[f"F:{b.id}"]
        v = result.channels[f"V:{b.id}"]
        i_min, i_max = int(np.argmin(f)), int(np.argmax(f))
        if f[i_min] < f_min[0]:
            f_min = (float(f[i_min]), b.id, float(result.t[i_min]))
        if f[i_max] > f_max[0]:
            f_max = (float(f[i_max]), b.id, float(result.t[i_max]))
        iv = int(np.argmin(v))
        if v[iv] < v_min[0]:
            v_min = (float(v[iv]), b.id, float(result.t[iv]))
    loading = []
    for el in case.elements():
        if el.rating <= 0:
            continue
        key = f"{el.from_bus}-{el.to_bus}:{el.circuit_id}"
        s = np.hypot(result.channels[f"P:{key}"], result.channels[f"Q:{key}"])
        loading.append((el.id, float(np.max(s) / el.rating)))
    actions = tuple(f"{e.t:.4f}s {e.ras_id}: {e.action} {e.target}" for e in result.ras_log)
    return RunSummary(
        contingency_id=cdef.id, label=cdef.label, stable=result.stable,
        f_min_hz=f_min[0], f_min_bus=f_min[1], f_min_t=f_min[2],
        f_max_hz=f_max[0], f_max_bus=f_max[1], f_max_t=f_max[2],
        v_min_pu=v_min[0], v_min_bus=v_min[1], v_min_t=v_min[2],
        ras_actions=actions, peak_loading=tuple(loading),
        dead_buses=result.dead_buses)


@dataclass
class BatchResult:
    summaries: tuple[RunSummary, ...]
    results: dict[str, SimulationResult]   # executed runs only

    @property
    def any_flagged(self) -> bool:
        return any(s.unresolved or not s.stable for s in self.summaries)


def run_batch(case: NetworkCase, state: DynamicState,
              defs: tuple[ContingencyDef, ...], ras_specs: tuple[RasSpec, ...],
              options: SimulationOptions, jobs: int = 1) -> BatchResult:
    """One summary per definition; resolution failures are reported per run
    without aborting the batch."""

    def run_one(cdef: ContingencyDef):
        reason = _resolve_events(case, cdef.events)
        if reason:
            return RunSummary(contingency_id=cdef.id, label=cdef.label,
                              unresolved=reason, stable=True), None
        opts = replace(options, duration=cdef.duration if cdef.duration else options.duration)
        ras_set = build_ras(ras_specs, case, enabled=cdef.ras_enabled)
        result = simulate(state, cdef.events, ras_set, opts)
        return summarize_run(cdef, result, case), result

    if jobs <= 1:
        outcomes = [run_one(d) for d in defs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_one, defs))
    summaries = tuple(o[0] for o in outcomes)
    results = {d.id: o[1] for d, o in zip(defs, outcomes) if o[1] is not None}
    return BatchResult(summaries=summaries, results=results)


def write_batch_outputs(batch: BatchResult, out_dir: str | Path):
    """summary.csv plus one directory per contingency (summary.json,
    channels.csv); stable layout, byte-identical across reruns."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["contingency_id", "label", "status", "f_min_hz", "f_min_bus", "f_min_t",
                    "f_max_hz", "f_max_bus", "f_max_t", "v_min_pu", "v_min_bus", "v_min_t",
                    "ras_actions", "worst_loading_branch", "worst_loading"])
        for s in batch.summaries:
            status = "unresolved" if s.unresolved else ("stable" if s.stable else "unstable")
            worst = max(s.peak_loading, key=lambda p: p[1], default=("", 0.0))
            w.writerow([s.contingency_id, s.label, status,
                        repr(s.f_min_hz), s.f_min_bus, repr(s.f_min_t),
                        repr(s.f_max_hz), s.f_max_bus, repr(s.f_max_t),
                        repr(s.v_min_pu), s.v_min_bus, repr(s.v_min_t),
                        "; ".join(s.ras_actions), worst[0], repr(worst[1])])
    for s in batch.summaries:
        run_dir = out / s.contingency_id
        run_dir.mkdir(exist_ok=True)
        doc = asdict(s)
        doc["peak_loading"] = {k: v for k, v in s.peak_loading}
        (run_dir / "summary.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        result = batch.results.get(s.contingency_id)
        if result is not None:
            write_result_csv(result, run_dir / "channels.csv")


# ---------------------------------------------------------------------------
# run comparison

@dataclass(frozen=True)
class ChannelDelta:
    channel: str
    max_abs_diff: float
    extremum_diff: float           # difference of the two runs' extreme values
    extremum_time_diff: float      # s


@dataclass(frozen=True)
class RunDelta:
    contingency_id: str
    deltas: tuple[ChannelDelta, ...]
    mismatched_channels: tuple[str, ...]
    truncated_to_s: float | None    # set when the runs had different durations


def compare_runs(summary_a: RunSummary, summary_b: RunSummary,
                 result_a: SimulationResult, result_b: SimulationResult) -> RunDelta:
    """Per-channel trace and extremum deltas over the common time prefix."""
    if summary_a.contingency_id != summary_b.contingency_id:
        raise ContingencyError("compare_runs requires the same contingency id")
    n = min(len(result_a.t), len(result_b.t))
    truncated = None
    if len(result_a.t) != len(result_b.t):
        truncated = float(result_a.t[n - 1])
    common = sorted(set(result_a.channels) & set(result_b.channels))
    mismatched = tuple(sorted(set(result_a.channels) ^ set(result_b.channels)))
    deltas = []
    for name in common:
        a = result_a.channels[name][:n]
        b = result_b.channels[name][:n]
        ia, ib = int(np.argmin(a)), int(np.argmin(b))
        deltas.append(ChannelDelta(
            channel=name,
            max_abs_diff=float(np.max(np.abs(a - b))),
            extremum_diff=float(a[ia] - b[ib]),
            extremum_time_diff=float(result_a.t[ia] - result_b.t[ib])))
    return RunDelta(contingency_id=summary_a.contingency_id, deltas=tuple(deltas),
                    mismatched_channels=mismatched, truncated_to_s=truncated)
