"""Measurement ingestion, channel alignment, comparison metrics, qualitative
grading, and the mismatch-diagnosis report.

Grade thresholds and diagnostic rule thresholds are configuration with
shipped defaults; the diagnosis is an ordered heuristic rule table, not an
estimator.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .dynamics import SimulationResult, channel_order
from .powerflow import StageComparison


class MeasurementError(ValueError):
    """Malformed measurement CSV or mapping document."""


@dataclass(frozen=True)
class MeasurementSet:
    signals: dict[str, tuple[np.ndarray, np.ndarray]]   # id -> (t s, values)
    mapping: dict[str, str]                             # signal id -> channel
    source: str = "PMU"
    units: dict[str, str] = field(default_factory=dict)
    unmapped: tuple[str, ...] = ()


def import_measurements(csv_source: str | Path, mapping_source: str | Path | dict,
                        source: str = "PMU") -> MeasurementSet:
    """Read `time_s,signal,value` rows and a signal→channel mapping table.

    Duplicate or non-increasing timestamps within a signal are rejected with
    the offending line number; unmapped signals are retained but flagged.
    """
    if isinstance(mapping_source, dict):
        mapping = {str(k): str(v) for k, v in mapping_source.items()}
    else:
        text = str(mapping_source)
        if not text.lstrip().startswith("{"):
            text = Path(mapping_source).read_text(encoding="utf-8")
        mapping = {str(k): str(v) for k, v in json.loads(text).items()}

    text = str(csv_source)
    if "\n" not in text and Path(csv_source).exists():
        text = Path(csv_source).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:3]] != ["time_s", "signal", "value"]:
        raise MeasurementError("measurement CSV must start with header 'time_s,signal,value'")
    series: dict[str, list[tuple[float, float]]] = {}
    last_t: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < 3:
            raise MeasurementError(f"line {lineno}: expected 3 columns, got {len(row)}")
        try:
            t = float(row[0])
            value = float(row[2])
        except ValueError as exc:
            raise MeasurementError(f"line {lineno}: malformed number ({exc})") from exc
        signal = row[1]
        prev = last_t.get(signal)
        if prev is not None:
            if t == prev:
                raise MeasurementError(f"line {lineno}: duplicate timestamp {t} for signal '{signal}'")
            if t < prev:
                raise MeasurementError(
                    f"line {lineno}: non-monotone timestamp {t} for signal '{signal}'")
        last_t[signal] = t
        series.setdefault(signal, []).append((t, value))

    signals = {sid: (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
               for sid, pts in series.items()}
    unmapped = tuple(sorted(sid for sid in signals if sid not in mapping))
    return MeasurementSet(signals=signals, mapping=mapping, source=source, unmapped=unmapped)


def result_to_measurement_csv(result: SimulationResult, path: str | Path,
                              channels: list[str] | None = None):
    """Export a simulation result in the measurement CSV format (identity
    signal ids); round-trips exactly through import_measurements."""
    names = channels if channels is not None else channel_order(result)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "signal", "value"])
        for name in names:
            values = result.channels[name]
            for k in range(len(result.t)):
                w.writerow([repr(float(result.t[k])), name, repr(float(values[k]))])


def identity_mapping(result: SimulationResult) -> dict[str, str]:
    return {name: name for name in result.channels}


# ---------------------------------------------------------------------------
# alignment

@dataclass(frozen=True)
class AlignedPair:
    channel: str
    t: np.ndarray
    measured: np.ndarray
    simulated: np.ndarray


@dataclass(frozen=True)
class Alignment:
    pairs: dict[str, AlignedPair]
    missing_in_result: tuple[str, ...]
    missing_in_measurements: tuple[str, ...]
    overlap: tuple[float, float]


def align(measurements: MeasurementSet, result: SimulationResult,
          t0_offset: float = 0.0, min_overlap_s: float = 1.0) -> Alignment:
    """Resample measurements onto the simulation grid over the time overlap.

    Measurement timestamps are shifted by `t0_offset` onto the simulation
    axis; linear interpolation, no extrapolation.
    """
    mapped = {sid: ch for sid, ch in measurements.mapping.items()
              if sid in measurements.signals}
    t_lo = None
    t_hi = None
    for sid in mapped:
        t = measurements.signals[sid][0] + t0_offset
        t_lo = t[0] if t_lo is None else max(t_lo, t[0])
        t_hi = t[-1] if t_hi is None else min(t_hi, t[-1])
    if t_lo is None:
        raise MeasurementError("no mapped signals to align")
    lo = max(t_lo, float(result.t[0]))
    hi = min(t_hi, float(result.t[-1]))
    if hi - lo < min_overlap_s:
        raise MeasurementError(
            f"overlap [{lo:.3f}, {hi:.3f}] shorter than {min_overlap_s} s")
    mask = (result.t >= lo - 1e-12) & (result.t <= hi + 1e-12)
    grid = result.t[mask]

    pairs: dict[str, AlignedPair] = {}
    missing_in_result = []
    for sid in sorted(mapped):
        channel = mapped[sid]
        if channel not in result.channels:
            missing_in_result.append(channel)
            continue
        t = measurements.signals[sid][0] + t0_offset
        v = measurements.signals[sid][1]
        meas = np.interp(grid, t, v)
        pairs[channel] = AlignedPair(channel=channel, t=grid, measured=meas,
                                     simulated=result.channels[channel][mask])
    mapped_channels = set(mapped.values())
    missing_in_measurements = tuple(sorted(
        ch for ch in result.channels if ch not in mapped_channels))
    return Alignment(pairs=pairs, missing_in_result=tuple(sorted(missing_in_result)),
                     missing_in_measurements=missing_in_measurements,
                     overlap=(lo, hi))


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class Windows:
    during: tuple[float, float]
    post: tuple[float, float]


def default_windows(t_event: float, duration: float) -> Windows:
    return Windows(during=(t_event, min(t_event + 20.0, duration)),
                   post=(max(duration - 10.0, t_event), duration))


@dataclass(frozen=True)
class ChannelMetrics:
    channel: str
    max_measured: float
    t_max_measured: float
    min_measured: float
    t_min_measured: float
    max_simulated: float
    t_max_simulated: float
    min_simulated: float
    t_min_simulated: float
    max_value_error: float        # simulated - measured at the maxima
    min_value_error: float
    max_time_error: float         # s, simulated - measured extremum times
    min_time_error: float
    steady_state_offset: float    # mean(simulated - measured) over post window
    rmse: float


def compute_metrics(pairs: dict[str, AlignedPair], windows: Windows) -> list[ChannelMetrics]:
    """Extrema in the during-event window, offset over the post window, RMSE
    over their union."""
    out = []
    for channel in sorted(pairs):
        pair = pairs[channel]
        t = pair.t
        d_mask = (t >= windows.during[0] - 1e-12) & (t <= windows.during[1] + 1e-12)
        p_mask = (t >= windows.post[0] - 1e-12) & (t <= windows.post[1] + 1e-12)
        if not d_mask.any() or not p_mask.any():
            raise MeasurementError(
                f"channel {channel}: comparison window outside aligned overlap")
        td = t[d_mask]
        meas = pair.measured[d_mask]
        sim = pair.simulated[d_mask]
        i_max_m, i_min_m = int(np.argmax(meas)), int(np.argmin(meas))
        i_max_s, i_min_s = int(np.argmax(sim)), int(np.argmin(sim))
        offset = float(np.mean(pair.simulated[p_mask] - pair.measured[p_mask]))
        c_mask = d_mask | p_mask
        err = pair.simulated[c_mask] - pair.measured[c_mask]
        out.append(ChannelMetrics(
            channel=channel,
            max_measured=float(meas[i_max_m]), t_max_measured=float(td[i_max_m]),
            min_measured=float(meas[i_min_m]), t_min_measured=float(td[i_min_m]),
            max_simulated=float(sim[i_max_s]), t_max_simulated=float(td[i_max_s]),
            min_simulated=float(sim[i_min_s]), t_min_simulated=float(td[i_min_s]),
            max_value_error=float(sim[i_max_s] - meas[i_max_m]),
            min_value_error=float(sim[i_min_s] - meas[i_min_m]),
            max_time_error=float(td[i_max_s] - td[i_max_m]),
            min_time_error=float(td[i_min_s] - td[i_min_m]),
            steady_state_offset=offset,
            rmse=float(np.sqrt(np.mean(err * err))),
        ))
    return out


# ---------------------------------------------------------------------------
# grading

@dataclass(frozen=True)
class GradeBand:
    value_limit: float
    time_limit_s: float


@dataclass(frozen=True)
class GradeThresholds:
    """Per-channel-kind A/B/C bands; both value and time criteria must hold.

    Defaults are shipped engineering values, not published facts; `relative`
    kinds interpret the value limit as a fraction of the measured excursion.
    """
    frequency: tuple[GradeBand, GradeBand, GradeBand] = (
        GradeBand(0.05, 1.0), GradeBand(0.10, 2.0), GradeBand(0.20, 5.0))
    voltage: tuple[GradeBand, GradeBand, GradeBand] = (
        GradeBand(0.01, 1.0), GradeBand(0.03, 2.0), GradeBand(0.05, 5.0))
    relative: tuple[GradeBand, GradeBand, GradeBand] = (
        GradeBand(0.01, 1.0), GradeBand(0.03, 2.0), GradeBand(0.10, 5.0))


DEFAULT_THRESHOLDS = GradeThresholds()


def _channel_kind(channel: str) -> str:
    prefix = channel.split(":", 1)[0]
    if prefix == "F":
        return "frequency"
    if prefix == "V":
        return "voltage"
    return "relative"


def grade(metrics: list[ChannelMetrics],
          thresholds: GradeThresholds = DEFAULT_THRESHOLDS) -> dict[str, str]:
    """A/B/C/D per channel from worst extremum value error and time error."""
    grades = {}
    for m in metrics:
        kind = _channel_kind(m.channel)
        bands = getattr(thresholds, kind)
        value_err = max(abs(m.max_value_error), abs(m.min_value_error))
        time_err = max(abs(m.max_time_error), abs(m.min_time_error))
        if kind == "relative":
            span = max(abs(m.max_measured - m.min_measured), 1e-9)
            value_err = value_err / span
        letter = "D"
        for band, name in zip(bands, ("A", "B", "C")):
            if value_err <= band.value_limit and time_err <= band.time_limit_s:
                letter = name
                break
        grades[m.channel] = letter
    return grades


# ---------------------------------------------------------------------------
# diagnosis

@dataclass(frozen=True)
class DiagnosisThresholds:
    pre_event_rel_error: float = 0.05
    f_offset_hz: float = 0.05
    f_nadir_match_hz: float = 0.10
    nadir_time_error_s: float = 1.0
    v_extremum_pu: float = 0.03


@dataclass(frozen=True)
class Hint:
    code: str
    message: str
    signals: tuple[str, ...] = ()


def diagnose(stage_comparisons: list[StageComparison], metrics: list[ChannelMetrics],
             boundary_bus: str | None = None,
             simulated_ras: tuple | None = None,
             observed_ras: tuple | None = None,
             thresholds: DiagnosisThresholds = DiagnosisThresholds()) -> tuple[Hint, ...]:
    """Ordered heuristic rule table; each firing rule appends one hint."""
    hints: list[Hint] = []

    # (a) pre-event operating-point mismatch
    pre = [c for c in stage_comparisons if c.stage == "pre-event"]
    if pre:
        bad = [r for r in pre[0].rows if r.rel_error > thresholds.pre_event_rel_error]
        if bad:
            worst = tuple(r.signal for r in bad[:3])
            hints.append(Hint(
                "pre-event-mismatch",
                "pre-event dispatch/topology mismatch: power flow quantities differ "
                f"beyond {thresholds.pre_event_rel_error:.0%} before the event",
                worst))

    f_metrics = [m for m in metrics if _channel_kind(m.channel) == "frequency"]

    # (b) steady-state frequency offset with matching nadir depth
    offenders = tuple(m.channel for m in f_metrics
                      if abs(m.steady_state_offset) > thresholds.f_offset_hz
                      and abs(m.min_value_error) <= thresholds.f_nadir_match_hz)
    if offenders:
        hints.append(Hint(
            "governor-reserve-mismatch",
            "steady-state frequency offset with matching nadir shape: suspect governor "
            "droop or spinning-reserve mismatch; rerun after reserve adjustment",
            offenders))

    # (c) nadir timing off with matching depth
    offenders = tuple(m.channel for m in f_metrics
                      if abs(m.min_time_error) > thresholds.nadir_time_error_s
                      and abs(m.min_value_error) <= thresholds.f_nadir_match_hz)
    if offenders:
        hints.append(Hint(
            "inertia-mismatch",
            "frequency nadir time error with matching depth: suspect inertia (H) mismatch",
            offenders))

    # (d) voltage extremum error concentrated at the boundary bus
    if boundary_bus is not None:
        v_metrics = {m.channel: m for m in metrics if _channel_kind(m.channel) == "voltage"}
        key = f"V:{boundary_bus}"
        if key in v_metrics:
            worst = max(abs(v_metrics[key].min_value_error),
                        abs(v_metrics[key].max_value_error))
            others = [max(abs(m.min_value_error), abs(m.max_value_error))
                      for ch, m in v_metrics.items() if ch != key]
            if worst > thresholds.v_extremum_pu and (not others or worst >= max(others)):
                hints.append(Hint(
                    "equivalent-strength-mismatch",
                    f"voltage extremum error concentrated at boundary bus {boundary_bus}: "
                    "suspect external equivalent strength; compare smtl vs detailed",
                    (key,)))

    # (e) protection/RAS operation differences (only when observations given)
    if observed_ras is not None and simulated_ras is not None:
        sim_ops = {(e.action, e.target) for e in simulated_ras}
        obs_ops = {tuple(op) if not hasattr(op, "action") else (op.action, op.target)
                   for op in observed_ras}
        if sim_ops != obs_ops:
            only_sim = sorted(sim_ops - obs_ops)
            only_obs = sorted(obs_ops - sim_ops)
            hints.append(Hint(
                "ras-model-mismatch",
                "protection/RAS model mismatch: simulated-only operations "
                f"{only_sim}, measured-only operations {only_obs}"))
    return tuple(hints)


# ---------------------------------------------------------------------------
# report

@dataclass
class ValidationReport:
    stage_comparisons: list[StageComparison]
    metrics: list[ChannelMetrics]
    grades: dict[str, str]
    diagnostics: tuple[Hint, ...]
    provenance: dict


def emit_report(report: ValidationReport, out_dir: str | Path,
                pairs: dict[str, AlignedPair] | None = None) -> Path:
    """Write report.txt, report.json, and one comparison CSV per channel.

    Output is deterministic: fixed ordering and no timestamps in the body.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = ["MODEL VALIDATION REPORT", "=" * 60, ""]
    lines.append("Provenance:")
    for key in sorted(report.provenance):
        lines.append(f"  {key}: {report.provenance[key]}")
    lines.append("")
    for comp in report.stage_comparisons:
        lines.append(f"Stage comparison: {comp.stage}  window [{comp.window[0]}, {comp.window[1]}] s")
        if not comp.rows:
            lines.append("  (no mapped rows)")
        for r in comp.rows:
            lines.append(f"  {r.signal:<24} meas {r.measured: .6g}  sim {r.simulated: .6g}"
                         f"  abs {r.abs_error:.3g}  rel {r.rel_error:.3%}")
        if comp.unmapped:
            lines.append(f"  unmapped: {', '.join(comp.unmapped)}")
        lines.append("")
    if not report.metrics:
        lines.append("WARNING: no dynamic channels compared")
    else:
        lines.append(f"Channel metrics and grades ({len(report.metrics)} channels):")
        for m in report.metrics:
            g = report.grades.get(m.channel, "-")
            lines.append(
                f"  [{g}] {m.channel:<20} min sim {m.min_simulated:.5g} @ {m.t_min_simulated:.2f}s"
                f" vs meas {m.min_measured:.5g} @ {m.t_min_measured:.2f}s"
                f"  | val err {m.min_value_error:+.4g}  t err {m.min_time_error:+.3g}s"
                f"  | offset {m.steady_state_offset:+.4g}  rmse {m.rmse:.4g}")
    lines.append("")
    if report.diagnostics:
        lines.append("Diagnostics (ordered):")
        for h in report.diagnostics:
            lines.append(f"  - [{h.code}] {h.message}")
            if h.signals:
                lines.append(f"      signals: {', '.join(h.signals)}")
    else:
        lines.append("Diagnostics: none")
    lines.append("")
    (out / "report.txt").write_text("\n".join(lines), encoding="utf-8")

    doc = {
        "provenance": report.provenance,
        "stages": [
            {"stage": c.stage, "window": list(c.window),
             "rows": [asdict(r) for r in c.rows],
             "unmapped": list(c.unmapped), "missing_data": list(c.missing_data)}
            for c in report.stage_comparisons],
        "metrics": [asdict(m) for m in report.metrics],
        "grades": report.grades,
        "diagnostics": [asdict(h) for h in report.diagnostics],
    }
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")

    if pairs:
        ch_dir = out / "channels"
        ch_dir.mkdir(exist_ok=True)
        for channel in sorted(pairs):
            pair = pairs[channel]
            fname = channel.replace(":", "_").replace("/", "_") + ".csv"
            with open(ch_dir / fname, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t_s", "measured", "simulated"])
                for k in range(len(pair.t)):
                    w.writerow([repr(float(pair.t[k])), repr(float(pair.measured[k])),
                                repr(float(pair.simulated[k]))])
    return out / "report.txt"
