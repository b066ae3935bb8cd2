"""Newton-Raphson AC power flow and stage-wise comparison against measurements.

Full Newton in polar form with an analytic Jacobian; PV buses switch to PQ
when a reactive limit binds (switch-back allowed once per bus). Islands are
solved independently, each against its own slack bus.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netmodel import (NetworkCase, Violation, build_ybus, element_stamp,
                       islands, validate_case)

F_NOMINAL_HZ = 60.0


class PowerFlowError(RuntimeError):
    """Raised on structural solver failure (singular Jacobian, bad case)."""


@dataclass
class PowerFlowOptions:
    tolerance: float = 1e-8       # pu mismatch
    max_iterations: int = 20
    flat_start: bool = True
    enforce_q_limits: bool = True


@dataclass(frozen=True)
class BranchFlow:
    element: str                  # "branch" | "transformer"
    id: str
    from_bus: str
    to_bus: str
    circuit_id: str
    p_from: float                 # MW
    q_from: float                 # MVAr
    p_to: float
    q_to: float
    loss_mw: float
    rating: float
    loading: float                # max-end MVA / rating, 0 when unrated


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[str, ...]
    v: np.ndarray                 # pu
    theta: np.ndarray             # rad
    p_injection_mw: np.ndarray    # net bus injection
    q_injection_mvar: np.ndarray
    flows: tuple[BranchFlow, ...]
    slack_injection: dict[str, tuple[float, float]]   # bus -> (MW, MVAr)
    iterations: int
    max_mismatch: float
    converged: bool
    mismatch_history: tuple[float, ...]
    base_mva: float

    def bus_voltage(self, bus_id: str) -> float:
        return float(self.v[self.bus_ids.index(bus_id)])

    def bus_angle(self, bus_id: str) -> float:
        return float(self.theta[self.bus_ids.index(bus_id)])


def _require_valid(case: NetworkCase):
    violations = validate_case(case)
    if violations:
        lines = "; ".join(v.message for v in violations[:5])
        raise PowerFlowError(f"case fails validation ({len(violations)} violation(s)): {lines}")


def _bus_spec(case: NetworkCase, bus_ids: tuple[str, ...]):
    """Scheduled pu injections and per-bus machine reactive limits."""
    idx = {bid: i for i, bid in enumerate(bus_ids)}
    n = len(bus_ids)
    p = np.zeros(n)
    q = np.zeros(n)
    q_min = np.zeros(n)
    q_max = np.zeros(n)
    has_machine = np.zeros(n, dtype=bool)
    for m in case.machines:
        if m.status and m.bus in idx:
            i = idx[m.bus]
            p[i] += m.p_dispatch
            q[i] += m.q_dispatch
            q_min[i] += m.q_min
            q_max[i] += m.q_max
            has_machine[i] = True
    for ld in case.loads:
        if ld.status and ld.bus in idx:
            i = idx[ld.bus]
            p[i] -= ld.p
            q[i] -= ld.q
    base = case.base_mva
    return p / base, q / base, q_min / base, q_max / base, has_machine


def _load_q(case: NetworkCase, bus_ids: tuple[str, ...]) -> np.ndarray:
    idx = {bid: i for i, bid in enumerate(bus_ids)}
    out = np.zeros(len(bus_ids))
    for ld in case.loads:
        if ld.status and ld.bus in idx:
            out[idx[ld.bus]] += ld.q
    return out / case.base_mva


def _jacobian(y: np.ndarray, v: np.ndarray, theta: np.ndarray,
              pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    """Analytic polar Jacobian [[dP/dth, dP/dV],[dQ/dth, dQ/dV]]."""
    vc = v * np.exp(1j * theta)
    ivec = y @ vc
    s = vc * np.conj(ivec)
    # dS/dtheta and dS/dV as complex matrices (standard derivation)
    diag_v = np.diag(vc)
    diag_i = np.diag(ivec)
    diag_vn = np.diag(vc / v)
    ds_dth = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
    ds_dv = diag_v @ np.conj(y @ diag_vn) + np.conj(diag_i) @ diag_vn
    j11 = ds_dth[np.ix_(pvpq, pvpq)].real
    j12 = ds_dv[np.ix_(pvpq, pq)].real
    j21 = ds_dth[np.ix_(pq, pvpq)].imag
    j22 = ds_dv[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def _solve_island(case, y_full, bus_ids, members, options,
                  start=None):
    """Newton solve for one island; returns (v, theta, iters, hist, converged)."""
    sel = np.array([i for i, bid in enumerate(bus_ids) if bid in members])
    ids = tuple(bus_ids[i] for i in sel)
    y = y_full[np.ix_(sel, sel)]
    n = len(ids)

    p_spec, q_spec, q_min, q_max, has_machine = _bus_spec(case, ids)
    kinds = {b.id: b for b in case.buses}
    kind = np.array([kinds[b].kind for b in ids])
    v_set = np.array([kinds[b].v_set if kinds[b].v_set is not None else 1.0 for b in ids])

    slack = np.where(kind == "slack")[0]
    if len(slack) != 1:
        raise PowerFlowError(f"island {sorted(members)[0]}...: expected 1 slack, found {len(slack)}")
    is_pv = (kind == "pv") & has_machine
    # PV buses without an in-service machine degrade to PQ
    bus_type = np.where(kind == "slack", 0, np.where(is_pv, 1, 2))

    if start is not None:
        v = start[0][sel].copy()
        theta = start[1][sel].copy()
    else:
        v = np.ones(n)
        theta = np.zeros(n)
    v[bus_type == 0] = v_set[bus_type == 0]
    v[bus_type == 1] = v_set[bus_type == 1]

    switched_back = np.zeros(n, dtype=bool)
    limited_at = np.full(n, np.nan)   # q value a limited bus is pinned to
    hist: list[float] = []

    def mismatch(bt, qs):
        vc = v * np.exp(1j * theta)
        s = vc * np.conj(y @ vc)
        dp = p_spec - s.real
        dq = qs - s.imag
        pvpq = np.where(bt != 0)[0]
        pq = np.where(bt == 2)[0]
        f = np.concatenate([dp[pvpq], dq[pq]])
        return f, pvpq, pq, s

    q_sched = q_spec.copy()
    iters = 0
    converged = False
    for iteration in range(options.max_iterations + 1):
        f, pvpq, pq, s = mismatch(bus_type, q_sched)
        max_mis = float(np.max(np.abs(f))) if len(f) else 0.0
        hist.append(max_mis)

        if options.enforce_q_limits and iteration >= 2:
            changed = False
            load_q = _load_q(case, ids)
            q_gen = s.imag + load_q
            for i in np.where(bus_type == 1)[0]:
                if q_gen[i] > q_max[i] + 1e-9:
                    bus_type[i] = 2
                    q_sched[i] = q_max[i] - load_q[i]
                    limited_at[i] = q_max[i]
                    changed = True
                elif q_gen[i] < q_min[i] - 1e-9:
                    bus_type[i] = 2
                    q_sched[i] = q_min[i] - load_q[i]
                    limited_at[i] = q_min[i]
                    changed = True
            # switch-back once per bus when voltage recovers past the setpoint
            for i in np.where((bus_type == 2) & is_pv & ~switched_back)[0]:
                if np.isnan(limited_at[i]):
                    continue
                if (limited_at[i] == q_max[i] and v[i] > v_set[i]) or \
                   (limited_at[i] == q_min[i] and v[i] < v_set[i]):
                    bus_type[i] = 1
                    v[i] = v_set[i]
                    q_sched[i] = q_spec[i]
                    limited_at[i] = np.nan
                    switched_back[i] = True
                    changed = True
            if changed:
                f, pvpq, pq, s = mismatch(bus_type, q_sched)
                max_mis = float(np.max(np.abs(f))) if len(f) else 0.0
                hist[-1] = max_mis

        if max_mis <= options.tolerance:
            converged = True
            break
        if iteration == options.max_iterations:
            break
        jac = _jacobian(y, v, theta, pvpq, pq)
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError as exc:
            worst = ids[pvpq[int(np.argmax(np.abs(f[:len(pvpq)])))]] if len(pvpq) else ids[0]
            raise PowerFlowError(
                f"singular Jacobian at iteration {iteration}, worst bus '{worst}'") from exc
        theta[pvpq] += dx[:len(pvpq)]
        v[pq] += dx[len(pvpq):]
        iters += 1

    return sel, v, theta, iters, hist, converged


def solve_powerflow(case: NetworkCase, options: PowerFlowOptions | None = None,
                    start: PowerFlowSolution | None = None) -> PowerFlowSolution:
    """Solve the AC power flow; non-convergence is reported, not raised."""
    options = options or PowerFlowOptions()
    _require_valid(case)
    ybus = build_ybus(case)
    bus_ids = ybus.bus_ids
    y_full = ybus.toarray()
    n = len(bus_ids)

    start_arrays = None
    if start is not None and tuple(start.bus_ids) == bus_ids:
        start_arrays = (start.v, start.theta)

    v = np.ones(n)
    theta = np.zeros(n)
    converged = True
    iterations = 0
    merged_hist: list[float] = []
    for members in islands(case):
        sel, vi, ti, iters, hist, ok = _solve_island(
            case, y_full, bus_ids, members, options, start=start_arrays)
        v[sel] = vi
        theta[sel] = ti
        converged &= ok
        iterations = max(iterations, iters)
        for k, h in enumerate(hist):
            if k < len(merged_hist):
                merged_hist[k] = max(merged_hist[k], h)
            else:
                merged_hist.append(h)

    vc = v * np.exp(1j * theta)
    s = vc * np.conj(y_full @ vc)
    base = case.base_mva
    p_inj = s.real * base
    q_inj = s.imag * base

    load_p = {bid: 0.0 for bid in bus_ids}
    load_q = {bid: 0.0 for bid in bus_ids}
    for ld in case.loads:
        if ld.status and ld.bus in load_p:
            load_p[ld.bus] += ld.p
            load_q[ld.bus] += ld.q
    slack_injection = {}
    for b in case.buses:
        if b.status and b.kind == "slack":
            i = bus_ids.index(b.id)
            slack_injection[b.id] = (p_inj[i] + load_p[b.id], q_inj[i] + load_q[b.id])

    flows = _element_flows(case, bus_ids, vc)
    max_mismatch = merged_hist[-1] if merged_hist else 0.0
    return PowerFlowSolution(
        bus_ids=bus_ids, v=v, theta=theta,
        p_injection_mw=p_inj, q_injection_mvar=q_inj,
        flows=flows, slack_injection=slack_injection,
        iterations=iterations, max_mismatch=float(max_mismatch),
        converged=converged, mismatch_history=tuple(merged_hist),
        base_mva=base,
    )


def _element_flows(case: NetworkCase, bus_ids, vc) -> tuple[BranchFlow, ...]:
    idx = {bid: i for i, bid in enumerate(bus_ids)}
    base = case.base_mva
    out = []
    for el in case.elements():
        label = "transformer" if hasattr(el, "tap_ratio") else "branch"
        if not el.status or el.from_bus not in idx or el.to_bus not in idx:
            out.append(BranchFlow(label, el.id, el.from_bus, el.to_bus, el.circuit_id,
                                  0.0, 0.0, 0.0, 0.0, 0.0, el.rating, 0.0))
            continue
        vf = vc[idx[el.from_bus]]
        vt = vc[idx[el.to_bus]]
        yff, yft, ytf, ytt = element_stamp(el)
        sf = vf * np.conj(yff * vf + yft * vt) * base
        st = vt * np.conj(ytf * vf + ytt * vt) * base
        mva = max(abs(sf), abs(st))
        out.append(BranchFlow(
            label, el.id, el.from_bus, el.to_bus, el.circuit_id,
            float(sf.real), float(sf.imag), float(st.real), float(st.imag),
            float(sf.real + st.real), el.rating,
            float(mva / el.rating) if el.rating > 0 else 0.0))
    return tuple(out)


def branch_flows(case: NetworkCase, solution: PowerFlowSolution) -> tuple[BranchFlow, ...]:
    """Per-element pi-model flows for a converged solution."""
    if not solution.converged:
        raise PowerFlowError("branch flows require a converged solution")
    vc = solution.v * np.exp(1j * solution.theta)
    return _element_flows(case, solution.bus_ids, vc)


def machine_allocation(case: NetworkCase, solution: PowerFlowSolution) -> dict[str, tuple[float, float]]:
    """Per-machine (P MW, Q MVAr) at the solution point.

    P is the dispatch plus an mbase-proportional share of any slack pickup
    at the machine's bus; bus reactive generation is split by mbase.
    """
    load_p = {bid: 0.0 for bid in solution.bus_ids}
    load_q = {bid: 0.0 for bid in solution.bus_ids}
    for ld in case.loads:
        if ld.status and ld.bus in load_p:
            load_p[ld.bus] += ld.p
            load_q[ld.bus] += ld.q
    by_bus: dict[str, list] = {}
    for m in case.machines:
        if m.status and m.bus in load_p:
            by_bus.setdefault(m.bus, []).append(m)
    idx = {bid: i for i, bid in enumerate(solution.bus_ids)}
    out: dict[str, tuple[float, float]] = {}
    for bus_id, machines in by_bus.items():
        i = idx[bus_id]
        p_gen = float(solution.p_injection_mw[i]) + load_p[bus_id]
        q_gen = float(solution.q_injection_mvar[i]) + load_q[bus_id]
        mb_total = sum(m.mbase for m in machines)
        p_extra = p_gen - sum(m.p_dispatch for m in machines)
        for m in machines:
            share = m.mbase / mb_total
            out[m.id] = (m.p_dispatch + p_extra * share, q_gen * share)
    return out


def power_balance_pu(case: NetworkCase, solution: PowerFlowSolution) -> float:
    """|generation - load - losses| in pu; small for a converged solution."""
    gen = sum(m.p_dispatch for m in case.machines
              if m.status and case.bus(m.bus).status and case.bus(m.bus).kind != "slack")
    gen += sum(p for p, _ in solution.slack_injection.values())
    # PV-bus machines deliver dispatch exactly; slack covered above
    load = sum(ld.p for ld in case.loads if ld.status and case.bus(ld.bus).status)
    losses = sum(f.loss_mw for f in solution.flows)
    return abs(gen - load - losses) / case.base_mva


# ---------------------------------------------------------------------------
# stage comparison (pre / during / post event)

STAGES = ("pre-event", "during-event", "post-event")


@dataclass(frozen=True)
class StageRow:
    signal: str
    channel: str
    measured: float
    simulated: float
    abs_error: float
    rel_error: float


@dataclass(frozen=True)
class StageComparison:
    stage: str
    window: tuple[float, float]
    rows: tuple[StageRow, ...]          # sorted by descending relative error
    unmapped: tuple[str, ...]
    missing_data: tuple[str, ...]


def solution_channels(solution: PowerFlowSolution,
                      f_nominal: float = F_NOMINAL_HZ) -> dict[str, float]:
    """Steady-state value for every channel name the solution can provide."""
    out: dict[str, float] = {}
    for i, bid in enumerate(solution.bus_ids):
        out[f"V:{bid}"] = float(solution.v[i])
        out[f"F:{bid}"] = f_nominal
    for f in solution.flows:
        key = f"{f.from_bus}-{f.to_bus}:{f.circuit_id}"
        out[f"P:{key}"] = f.p_from
        out[f"Q:{key}"] = f.q_from
    return out


def compare_stage(solution: PowerFlowSolution, measurements, stage: str,
                  window: tuple[float, float]) -> StageComparison:
    """Compare window-averaged measurements against steady-state quantities.

    `measurements` is a validation.MeasurementSet; its mapping table resolves
    measurement signal ids to model channel names.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    t0, t1 = window
    if not t1 > t0:
        raise ValueError(f"empty window [{t0}, {t1}]")
    channels = solution_channels(solution)
    rows = []
    unmapped = []
    missing = []
    for signal in sorted(measurements.signals):
        channel = measurements.mapping.get(signal)
        if channel is None or channel not in channels:
            unmapped.append(signal)
            continue
        t, values = measurements.signals[signal]
        mask = (t >= t0) & (t <= t1)
        if not mask.any():
            missing.append(signal)
            continue
        measured = float(np.mean(values[mask]))
        simulated = channels[channel]
        abs_err = abs(simulated - measured)
        rel_err = abs_err / max(abs(measured), 1e-9)
        rows.append(StageRow(signal, channel, measured, simulated, abs_err, rel_err))
    rows.sort(key=lambda r: (-r.rel_error, r.signal))
    return StageComparison(stage=stage, window=(t0, t1), rows=tuple(rows),
                           unmapped=tuple(unmapped), missing_data=tuple(missing))


# ---------------------------------------------------------------------------
# CSV export

def write_solution_csv(case: NetworkCase, solution: PowerFlowSolution, out_dir: str | Path):
    """Write buses.csv / branches.csv as documented in docs/outputs.md."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "buses.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus_id", "v_pu", "theta_rad", "p_injection_mw", "q_injection_mvar"])
        for i, bid in enumerate(solution.bus_ids):
            w.writerow([bid, repr(float(solution.v[i])), repr(float(solution.theta[i])),
                        repr(float(solution.p_injection_mw[i])),
                        repr(float(solution.q_injection_mvar[i]))])
    with open(out / "branches.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element", "id", "from_bus", "to_bus", "circuit_id",
                    "p_from_mw", "q_from_mvar", "p_to_mw", "q_to_mvar",
                    "loss_mw", "loading"])
        for f in solution.flows:
            w.writerow([f.element, f.id, f.from_bus, f.to_bus, f.circuit_id,
                        repr(f.p_from), repr(f.q_from), repr(f.p_to), repr(f.q_to),
                        repr(f.loss_mw), repr(f.loading)])
