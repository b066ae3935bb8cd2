"""Fixed-step transient simulation: classical swing dynamics over an algebraic
network, with first-order governors, timed disturbance events, and RAS hooks.

Machines are Norton sources behind their transient reactance; loads are folded
into the admittance matrix as constant impedances fixed at the pre-event
solution point. The network is Kron-reduced to the machine internal nodes, so
each integration stage costs one small mat-vec; the reduction is rebuilt on
every topology change. RAS actions take effect one step after detection.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.signal

from .netmodel import NetworkCase, element_stamp
from .powerflow import PowerFlowSolution, machine_allocation

F_NOMINAL_HZ = 60.0
DEFAULT_FAULT_ADMITTANCE = -1e4j   # bolted 3-phase-to-ground shunt, pu
EVENT_ACTIONS = ("apply_fault", "clear_fault", "trip_branch", "trip_machine", "shed_load")


class DynamicsError(ValueError):
    """Bad dynamic data or an uninitializable operating point."""


@dataclass(frozen=True)
class GovernorParams:
    r: float                      # droop, pu frequency per pu power (machine base)
    t_g: float                    # s
    p_max: float                  # pu on mbase
    p_min: float = 0.0
    enabled: bool = True


@dataclass(frozen=True)
class MachineDynamics:
    machine_id: str
    h: float                      # inertia constant, s on mbase
    d: float = 0.0                # damping, pu torque per pu speed
    xdp: float = 0.3              # transient reactance, pu on mbase
    governor: GovernorParams | None = None

    def __post_init__(self):
        if self.h <= 0:
            raise DynamicsError(f"machine '{self.machine_id}': h must be > 0")
        if self.xdp <= 0:
            raise DynamicsError(f"machine '{self.machine_id}': xdp must be > 0")
        if self.d < 0:
            raise DynamicsError(f"machine '{self.machine_id}': d must be >= 0")
        g = self.governor
        if g is not None:
            if g.r <= 0 or g.t_g <= 0:
                raise DynamicsError(f"machine '{self.machine_id}': governor r and t_g must be > 0")
            if g.p_min > g.p_max:
                raise DynamicsError(f"machine '{self.machine_id}': governor p_min > p_max")


def load_dynamics(source: str | Path | list) -> tuple[MachineDynamics, ...]:
    """Parse machine dynamic data (JSON list of records)."""
    if isinstance(source, list):
        records = source
    else:
        text = str(source)
        if not text.lstrip().startswith("["):
            text = Path(source).read_text(encoding="utf-8")
        records = json.loads(text)
    out = []
    for rec in records:
        gov = rec.get("governor")
        governor = None
        if gov is not None:
            governor = GovernorParams(r=float(gov["r"]), t_g=float(gov["t_g"]),
                                      p_max=float(gov["p_max"]),
                                      p_min=float(gov.get("p_min", 0.0)),
                                      enabled=bool(gov.get("enabled", True)))
        out.append(MachineDynamics(machine_id=str(rec["machine_id"]), h=float(rec["h"]),
                                   d=float(rec.get("d", 0.0)), xdp=float(rec.get("xdp", 0.3)),
                                   governor=governor))
    return tuple(out)


# ---------------------------------------------------------------------------
# events

@dataclass(frozen=True)
class Event:
    t: float
    action: str
    target: str
    admittance: complex | None = None   # apply_fault only
    mw: float | None = None             # shed_load only

    def __post_init__(self):
        if self.action not in EVENT_ACTIONS:
            raise DynamicsError(f"unknown event action '{self.action}'")


def validate_events(events: tuple[Event, ...] | list[Event]):
    """Times non-decreasing; every clear_fault follows a matching apply_fault."""
    open_faults: set[str] = set()
    last_t = -math.inf
    for ev in events:
        if ev.t < last_t:
            raise DynamicsError(f"event times must be non-decreasing (t={ev.t} after {last_t})")
        last_t = ev.t
        if ev.action == "apply_fault":
            open_faults.add(ev.target)
        elif ev.action == "clear_fault":
            if ev.target not in open_faults:
                raise DynamicsError(
                    f"clear_fault at bus '{ev.target}' has no matching apply_fault")
            open_faults.discard(ev.target)


def load_events(source: str | Path | list) -> tuple[Event, ...]:
    """Parse an event sequence (JSON list of {t, action, ...} records)."""
    if isinstance(source, list):
        records = source
    else:
        text = str(source)
        if not text.lstrip().startswith("["):
            text = Path(source).read_text(encoding="utf-8")
        records = json.loads(text)
    events = []
    for rec in records:
        adm = rec.get("admittance")
        if isinstance(adm, (list, tuple)):
            adm = complex(adm[0], adm[1])
        elif adm is not None:
            adm = complex(0.0, float(adm))
        mw = rec.get("mw")
        events.append(Event(t=float(rec["t"]), action=str(rec["action"]),
                            target=str(rec["target"]), admittance=adm,
                            mw=float(mw) if mw is not None else None))
    events_t = tuple(events)
    validate_events(events_t)
    return events_t


# ---------------------------------------------------------------------------
# initialization

@dataclass(frozen=True)
class DynamicState:
    """Machine and network data initialized from a converged power flow."""
    case: NetworkCase
    bus_ids: tuple[str, ...]
    machine_ids: tuple[str, ...]
    machine_bus_pos: np.ndarray
    e_mag: np.ndarray             # internal EMF magnitude, sys pu
    delta0: np.ndarray            # rad
    pm0: np.ndarray               # machine pu on mbase
    pref: np.ndarray
    h: np.ndarray
    d: np.ndarray
    xdp_sys: np.ndarray
    mbase: np.ndarray
    gov_r: np.ndarray
    gov_tg: np.ndarray
    gov_pmin: np.ndarray
    gov_pmax: np.ndarray
    gov_on: np.ndarray            # bool
    v0: np.ndarray                # complex bus voltages at t=0
    load_bus_pos: np.ndarray
    load_y: np.ndarray            # complex admittance per load at v0
    load_p_nom: np.ndarray        # MW
    load_ids: tuple[str, ...]


def init_dynamics(case: NetworkCase, solution: PowerFlowSolution,
                  dyn: tuple[MachineDynamics, ...] | list[MachineDynamics]) -> DynamicState:
    """Compute E'∠δ behind x'd so each machine reproduces its solved P, Q."""
    if not solution.converged:
        raise DynamicsError("init_dynamics requires a converged power flow solution")
    dyn_by_id = {m.machine_id: m for m in dyn}
    bus_ids = solution.bus_ids
    bus_pos = {bid: i for i, bid in enumerate(bus_ids)}
    v0 = solution.v * np.exp(1j * solution.theta)
    alloc = machine_allocation(case, solution)
    base = case.base_mva

    machines = [m for m in case.machines if m.status and m.bus in bus_pos]
    ids, mpos, emag, delta0, pm0 = [], [], [], [], []
    h, d, xdp_sys, mbase = [], [], [], []
    gr, gtg, gpmin, gpmax, gon = [], [], [], [], []
    for m in machines:
        if m.id not in dyn_by_id:
            raise DynamicsError(f"no dynamics record for in-service machine '{m.id}'")
        md = dyn_by_id[m.id]
        p_mw, q_mvar = alloc[m.id]
        s_pu = complex(p_mw, q_mvar) / base
        vt = v0[bus_pos[m.bus]]
        x_sys = md.xdp * base / m.mbase
        i_pu = np.conj(s_pu / vt)
        e = vt + 1j * x_sys * i_pu
        p_mach = p_mw / m.mbase
        gov = md.governor
        if gov is not None and gov.enabled and not (gov.p_min - 1e-9 <= p_mach <= gov.p_max + 1e-9):
            raise DynamicsError(
                f"machine '{m.id}' initial P {p_mach:.4f} pu outside governor "
                f"limits [{gov.p_min}, {gov.p_max}]")
        ids.append(m.id)
        mpos.append(bus_pos[m.bus])
        emag.append(abs(e))
        delta0.append(math.atan2(e.imag, e.real))
        pm0.append(p_mach)
        h.append(md.h)
        d.append(md.d)
        xdp_sys.append(x_sys)
        mbase.append(m.mbase)
        on = gov is not None and gov.enabled
        gon.append(on)
        gr.append(gov.r if on else 1.0)
        gtg.append(gov.t_g if on else 1.0)
        gpmin.append(gov.p_min if on else -np.inf)
        gpmax.append(gov.p_max if on else np.inf)

    loads = [(ld, bus_pos[ld.bus]) for ld in case.loads if ld.status and ld.bus in bus_pos]
    load_y = []
    for ld, pos in loads:
        v_mag2 = abs(v0[pos]) ** 2
        load_y.append(complex(ld.p, -ld.q) / base / v_mag2)

    return DynamicState(
        case=case, bus_ids=bus_ids,
        machine_ids=tuple(ids), machine_bus_pos=np.array(mpos, dtype=int),
        e_mag=np.array(emag), delta0=np.array(delta0), pm0=np.array(pm0),
        pref=np.array(pm0), h=np.array(h), d=np.array(d),
        xdp_sys=np.array(xdp_sys), mbase=np.array(mbase),
        gov_r=np.array(gr), gov_tg=np.array(gtg),
        gov_pmin=np.array(gpmin), gov_pmax=np.array(gpmax),
        gov_on=np.array(gon, dtype=bool),
        v0=v0,
        load_bus_pos=np.array([pos for _, pos in loads], dtype=int),
        load_y=np.array(load_y, dtype=complex),
        load_p_nom=np.array([ld.p for ld, _ in loads]),
        load_ids=tuple(ld.id for ld, _ in loads),
    )


# ---------------------------------------------------------------------------
# simulation

@dataclass
class SimulationOptions:
    dt: float = 1.0 / 240.0
    duration: float = 10.0
    integrator: str = "rk4"            # "rk4" | "trapezoidal"
    f_nominal: float = F_NOMINAL_HZ
    record_machine_power: bool = False
    speed_dev_limit: float = 0.08      # |Δω| pu beyond which the run is flagged unstable
    washout_t: float = 0.1             # bus-frequency filter time constant, s


@dataclass(frozen=True)
class RasLogEntry:
    t: float
    ras_id: str
    action: str
    target: str
    reason: str


@dataclass(frozen=True)
class AppliedEvent:
    t: float
    action: str
    target: str
    ok: bool
    note: str = ""


@dataclass
class SimulationResult:
    dt: float
    duration: float
    t: np.ndarray
    channels: dict[str, np.ndarray]
    ras_log: tuple[RasLogEntry, ...]
    event_log: tuple[AppliedEvent, ...]
    dead_buses: tuple[str, ...]
    stable: bool
    f_nominal: float

    def channel(self, name: str) -> np.ndarray:
        return self.channels[name]


class _Topology:
    """Mutable in-service bookkeeping for one simulation run."""

    def __init__(self, state: DynamicState):
        case = state.case
        self.el_ids = tuple(el.id for el in case.elements())
        self.el_pos = {eid: i for i, eid in enumerate(self.el_ids)}
        bus_pos = {bid: i for i, bid in enumerate(state.bus_ids)}
        self.el_from = np.array([bus_pos[el.from_bus] for el in case.elements()], dtype=int)
        self.el_to = np.array([bus_pos[el.to_bus] for el in case.elements()], dtype=int)
        stamps = [element_stamp(el) for el in case.elements()]
        self.el_y = np.array(stamps, dtype=complex) if stamps else np.zeros((0, 4), complex)
        self.el_rating = np.array([el.rating for el in case.elements()])
        self.el_on = np.array([el.status for el in case.elements()], dtype=bool)
        self.mach_on = np.ones(len(state.machine_ids), dtype=bool)
        self.mach_pos = {mid: i for i, mid in enumerate(state.machine_ids)}
        self.load_pos = {lid: i for i, lid in enumerate(state.load_ids)}
        self.load_scale = np.ones(len(state.load_ids))
        self.faults: dict[int, complex] = {}
        self.bus_pos = bus_pos


class _Network:
    """Kron reduction of the current topology to machine internal nodes."""

    def __init__(self, state: DynamicState, topo: _Topology):
        n = len(state.bus_ids)
        y22 = np.zeros((n, n), dtype=complex)
        on = np.where(topo.el_on)[0]
        for e in on:
            i, j = topo.el_from[e], topo.el_to[e]
            yff, yft, ytf, ytt = topo.el_y[e]
            y22[i, i] += yff
            y22[i, j] += yft
            y22[j, i] += ytf
            y22[j, j] += ytt
        for li, pos in enumerate(state.load_bus_pos):
            y22[pos, pos] += state.load_y[li] * topo.load_scale[li]
        for pos, adm in topo.faults.items():
            y22[pos, pos] += adm

        act = np.where(topo.mach_on)[0]
        self.active = act
        y_m = 1.0 / (1j * state.xdp_sys[act])
        mb = state.machine_bus_pos[act]
        for k, pos in enumerate(mb):
            y22[pos, pos] += y_m[k]

        # island split: live = reachable from an active machine bus
        adj: dict[int, list[int]] = {}
        for e in on:
            adj.setdefault(topo.el_from[e], []).append(topo.el_to[e])
            adj.setdefault(topo.el_to[e], []).append(topo.el_from[e])
        live = np.zeros(n, dtype=bool)
        stack = list(dict.fromkeys(mb.tolist()))
        while stack:
            b = stack.pop()
            if live[b]:
                continue
            live[b] = True
            stack.extend(adj.get(b, ()))
        self.live = live
        live_idx = np.where(live)[0]
        self.live_idx = live_idx

        na = len(act)
        if na == 0:
            self.y_red = np.zeros((0, 0), dtype=complex)
            self.r_rec = np.zeros((len(live_idx), 0), dtype=complex)
            return
        y22l = y22[np.ix_(live_idx, live_idx)]
        pos_in_live = {int(p): k for k, p in enumerate(live_idx)}
        y21 = np.zeros((len(live_idx), na), dtype=complex)
        for k, pos in enumerate(mb):
            y21[pos_in_live[int(pos)], k] = -y_m[k]
        w = scipy.linalg.solve(y22l, y21)
        self.y_red = np.diag(y_m) - y21.T @ w     # Y12 = Y21.T for this structure
        self.r_rec = -w


class _ActCache:
    """Per-topology slices of machine constants for the integration loop."""

    def __init__(self, state: DynamicState, act: np.ndarray, ws: float):
        self.e_mag = state.e_mag[act]
        self.mb_ratio = state.case.base_mva / state.mbase[act]
        self.d = state.d[act]
        self.inv_h2 = 1.0 / (2.0 * state.h[act])
        self.pref = state.pref[act]
        self.inv_r = 1.0 / state.gov_r[act]
        gov_on = state.gov_on[act]
        self.gov_gain = np.where(gov_on, 1.0 / state.gov_tg[act], 0.0)
        self.pmin = state.gov_pmin[act]
        self.pmax = state.gov_pmax[act]
        self.ws = ws


def _bind_signals(ras_set, topo: _Topology, state: DynamicState):
    """Resolve each RAS's monitored element/bus names to array positions."""
    bound = []
    for ras in ras_set:
        ras.resolve(topo.el_pos, topo.bus_pos)
        bound.append(ras)
    return bound


def simulate(state: DynamicState, events: tuple[Event, ...] | list[Event] = (),
             ras_set=(), options: SimulationOptions | None = None) -> SimulationResult:
    """Run the fixed-step simulation; deterministic for identical inputs."""
    options = options or SimulationOptions()
    if options.dt <= 0:
        raise DynamicsError("dt must be > 0")
    validate_events(tuple(events))
    dt = options.dt
    n_steps = int(round(options.duration / dt))
    duration = n_steps * dt
    for ev in events:
        if ev.t < 0 or ev.t > duration + 1e-9:
            raise DynamicsError(f"event at t={ev.t} outside [0, {duration}]")

    base = state.case.base_mva
    ws = 2.0 * math.pi * options.f_nominal
    nb = len(state.bus_ids)
    nm = len(state.machine_ids)
    nel = len(state.case.elements())

    topo = _Topology(state)
    bound_ras = _bind_signals(ras_set, topo, state)
    net = _Network(state, topo)
    cache = _ActCache(state, net.active, ws)

    delta = state.delta0.copy()
    domega = np.zeros(nm)
    pm = state.pm0.copy()

    queue: list[tuple[float, int, Event]] = []
    for seq, ev in enumerate(sorted(events, key=lambda e: e.t)):
        queue.append((ev.t, seq, ev))
    next_seq = len(queue)

    vmag = np.zeros((nb, n_steps + 1))
    theta_u = np.zeros((nb, n_steps + 1))
    pbr = np.zeros((nel, n_steps + 1))
    qbr = np.zeros((nel, n_steps + 1))
    ang = np.zeros((nm, n_steps + 1))
    spd = np.zeros((nm, n_steps + 1))
    if options.record_machine_power:
        pm_rec = np.zeros((nm, n_steps + 1))
        pe_rec = np.zeros((nm, n_steps + 1))

    theta_prev_raw = np.angle(state.v0)
    theta_cum = theta_prev_raw.copy()
    ever_dead = np.zeros(nb, dtype=bool)

    ras_log: list[RasLogEntry] = []
    event_log: list[AppliedEvent] = []
    stable = True
    teps = 1e-9

    def deriv(delta_a, domega_a, pm_a, cache, y_red):
        e = cache.e_mag * np.exp(1j * delta_a)
        i_int = y_red @ e
        pe = (e.real * i_int.real + e.imag * i_int.imag) * cache.mb_ratio
        dd = cache.ws * domega_a
        ddom = (pm_a - pe - cache.d * domega_a) * cache.inv_h2
        dpm = (cache.pref - domega_a * cache.inv_r - pm_a) * cache.gov_gain
        # governor non-windup at the limits
        dpm = np.where(((pm_a >= cache.pmax) & (dpm > 0))
                       | ((pm_a <= cache.pmin) & (dpm < 0)), 0.0, dpm)
        return dd, ddom, dpm, pe

    def apply_event(ev: Event, t: float):
        nonlocal net
        dirty = False
        if ev.action == "trip_branch":
            pos = topo.el_pos.get(ev.target)
            if pos is None:
                event_log.append(AppliedEvent(t, ev.action, ev.target, False,
                                              "unknown element"))
            elif not topo.el_on[pos]:
                event_log.append(AppliedEvent(t, ev.action, ev.target, False,
                                              "already out of service"))
            else:
                topo.el_on[pos] = False
                event_log.append(AppliedEvent(t, ev.action, ev.target, True))
                dirty = True
        elif ev.action == "trip_machine":
            pos = topo.mach_pos.get(ev.target)
            if pos is None:
                event_log.append(AppliedEvent(t, ev.action, ev.target, False,
                                              "unknown machine"))
            elif not topo.mach_on[pos]:
                event_log.append(AppliedEvent(t, ev.action, ev.target, False,
                                              "already tripped"))
            else:
                topo.mach_on[pos] = False
                event_log.append(AppliedEvent(t, ev.action, ev.target, True))
                dirty = True
        elif ev.action == "apply_fault":
            pos = topo.bus_pos.get(ev.target)
            if pos is None:
                event_log.append(AppliedEvent(t, ev.action, ev.target, False, "unknown bus"))
            else:
                adm = ev.admittance if ev.admittance is not None else DEFAULT_FAULT_ADMITTANCE
                topo.faults[pos] = adm
                event_log.append(AppliedEvent(t, ev.action, ev.target, True))
                dirty = True
        elif ev.action == "clear_fault":
            pos = topo.bus_pos.get(ev.target)
            if pos is None or pos not in topo.faults:
                event_log.append(AppliedEvent(t, ev.action, ev.target, False, "no fault present"))
            else:
                del topo.faults[pos]
                event_log.append(AppliedEvent(t, ev.action, ev.target, True))
                dirty = True
        elif ev.action == "shed_load":
            pos = topo.load_pos.get(ev.target)
            if pos is None:
                event_log.append(AppliedEvent(t, ev.action, ev.target, False, "unknown load"))
            else:
                p_nom = state.load_p_nom[pos]
                remaining = p_nom * topo.load_scale[pos]
                shed = min(ev.mw if ev.mw is not None else remaining, remaining)
                note = "" if shed == (ev.mw if ev.mw is not None else remaining) \
                    else f"only {remaining:.3f} MW remained"
                if p_nom > 0:
                    topo.load_scale[pos] = max(0.0, (remaining - shed) / p_nom)
                event_log.append(AppliedEvent(t, ev.action, ev.target, True, note))
                dirty = True
        return dirty

    for k in range(n_steps + 1):
        t = k * dt

        dirty = False
        while queue and queue[0][0] <= t + teps:
            _, _, ev = queue.pop(0)
            dirty |= apply_event(ev, t)
        if dirty:
            net = _Network(state, topo)
            cache = _ActCache(state, net.active, ws)

        act = net.active
        e_act = state.e_mag[act] * np.exp(1j * delta[act])
        v_full = np.zeros(nb, dtype=complex)
        if len(act):
            v_full[net.live_idx] = net.r_rec @ e_act

        raw = np.angle(v_full, deg=False)
        live = net.live
        ever_dead |= ~live
        d_theta = (raw - theta_prev_raw + math.pi) % (2.0 * math.pi) - math.pi
        theta_cum = np.where(live, theta_cum + d_theta, theta_cum)
        theta_prev_raw = np.where(live, raw, theta_prev_raw)

        vmag[:, k] = np.where(live, np.abs(v_full), 0.0)
        theta_u[:, k] = theta_cum

        on = topo.el_on & live[topo.el_from] & live[topo.el_to]
        m = np.where(on)[0]
        if len(m):
            vf = v_full[topo.el_from[m]]
            vt = v_full[topo.el_to[m]]
            sf = vf * np.conj(topo.el_y[m, 0] * vf + topo.el_y[m, 1] * vt) * base
            pbr[m, k] = sf.real
            qbr[m, k] = sf.imag

        ang[:, k] = delta
        spd[:, k] = 1.0 + domega   # tripped machines hold their last state
        if options.record_machine_power:
            pm_rec[:, k] = pm
            if len(act):
                i_int = net.y_red @ e_act
                pe_rec[act, k] = (e_act * np.conj(i_int)).real * base / state.mbase[act]

        if len(act):
            worst = float(np.abs(domega[act]).max())
            if worst > options.speed_dev_limit:
                stable = False
            if not math.isfinite(worst):   # NaN propagates into the max
                stable = False
                if k < n_steps:   # freeze remaining samples at the last state
                    vmag[:, k + 1:] = vmag[:, [k]]
                    theta_u[:, k + 1:] = theta_u[:, [k]]
                    ang[:, k + 1:] = ang[:, [k]]
                    spd[:, k + 1:] = spd[:, [k]]
                break

        # RAS evaluation on step-consistent signals; actions land at t + dt
        if bound_ras and k < n_steps:
            view = _SignalView(v_full, vmag[:, k], pbr[:, k], qbr[:, k])
            for ras in bound_ras:
                for action in ras.step(t, dt, view):
                    ras_log.append(RasLogEntry(t, ras.ras_id, action.action,
                                               action.target, action.reason))
                    queue.append((t + dt, next_seq,
                                  Event(t=t + dt, action=action.action, target=action.target,
                                        mw=action.mw)))
                    next_seq += 1
            queue.sort(key=lambda item: (item[0], item[1]))

        if k == n_steps:
            break

        a = act
        y_red = net.y_red
        if options.integrator == "rk4":
            d1, w1, g1, _ = deriv(delta[a], domega[a], pm[a], cache, y_red)
            d2, w2, g2, _ = deriv(delta[a] + 0.5 * dt * d1, domega[a] + 0.5 * dt * w1,
                                  pm[a] + 0.5 * dt * g1, cache, y_red)
            d3, w3, g3, _ = deriv(delta[a] + 0.5 * dt * d2, domega[a] + 0.5 * dt * w2,
                                  pm[a] + 0.5 * dt * g2, cache, y_red)
            d4, w4, g4, _ = deriv(delta[a] + dt * d3, domega[a] + dt * w3,
                                  pm[a] + dt * g3, cache, y_red)
            delta[a] += dt / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4)
            domega[a] += dt / 6.0 * (w1 + 2 * w2 + 2 * w3 + w4)
            pm[a] += dt / 6.0 * (g1 + 2 * g2 + 2 * g3 + g4)
        elif options.integrator == "trapezoidal":
            d0, w0, g0, _ = deriv(delta[a], domega[a], pm[a], cache, y_red)
            xd = delta[a] + dt * d0
            xw = domega[a] + dt * w0
            xp = pm[a] + dt * g0
            for _ in range(20):
                d1, w1, g1, _ = deriv(xd, xw, xp, cache, y_red)
                nd = delta[a] + 0.5 * dt * (d0 + d1)
                nw = domega[a] + 0.5 * dt * (w0 + w1)
                npm = pm[a] + 0.5 * dt * (g0 + g1)
                err = max(np.max(np.abs(nd - xd), initial=0.0),
                          np.max(np.abs(nw - xw), initial=0.0),
                          np.max(np.abs(npm - xp), initial=0.0))
                xd, xw, xp = nd, nw, npm
                if err < 1e-12:
                    break
            delta[a], domega[a], pm[a] = xd, xw, xp
        else:
            raise DynamicsError(f"unknown integrator '{options.integrator}'")
        pm[a] = pm[a].clip(cache.pmin, cache.pmax)

    t_axis = np.arange(n_steps + 1) * dt
    channels: dict[str, np.ndarray] = {}
    for i, bid in enumerate(state.bus_ids):
        channels[f"V:{bid}"] = vmag[i]
    for i, bid in enumerate(state.bus_ids):
        channels[f"F:{bid}"] = bus_frequency(theta_u[i], dt, f_nominal=options.f_nominal,
                                             washout_t=options.washout_t)
    for e, el in enumerate(state.case.elements()):
        key = f"{el.from_bus}-{el.to_bus}:{el.circuit_id}"
        channels[f"P:{key}"] = pbr[e]
        channels[f"Q:{key}"] = qbr[e]
    for i, mid in enumerate(state.machine_ids):
        channels[f"ANG:{mid}"] = ang[i]
    for i, mid in enumerate(state.machine_ids):
        channels[f"SPD:{mid}"] = spd[i]
    if options.record_machine_power:
        for i, mid in enumerate(state.machine_ids):
            channels[f"PM:{mid}"] = pm_rec[i]
            channels[f"PE:{mid}"] = pe_rec[i]

    dead = tuple(state.bus_ids[i] for i in range(nb) if ever_dead[i])
    return SimulationResult(dt=dt, duration=duration, t=t_axis, channels=channels,
                            ras_log=tuple(ras_log), event_log=tuple(event_log),
                            dead_buses=dead, stable=stable, f_nominal=options.f_nominal)


class _SignalView:
    """Step-consistent signal access handed to RAS instances."""

    __slots__ = ("v_complex", "v_mag", "p_mw", "q_mvar")

    def __init__(self, v_complex, v_mag, p_mw, q_mvar):
        self.v_complex = v_complex
        self.v_mag = v_mag
        self.p_mw = p_mw
        self.q_mvar = q_mvar


# ---------------------------------------------------------------------------
# derived quantities

def bus_frequency(angle_series: np.ndarray, dt: float, f_nominal: float = F_NOMINAL_HZ,
                  washout_t: float = 0.1) -> np.ndarray:
    """Bus frequency from an unwrapped angle series.

    f = f_nominal + (1/2π) · lag-filtered dθ/dt, filter time constant
    `washout_t`; the first sample is pinned to f_nominal.
    """
    theta = np.asarray(angle_series, dtype=float)
    if theta.ndim != 1 or len(theta) < 2:
        raise ValueError("angle series must be 1-D with at least 2 samples")
    dth = np.empty_like(theta)
    dth[1:-1] = (theta[2:] - theta[:-2]) / (2.0 * dt)
    dth[0] = (theta[1] - theta[0]) / dt
    dth[-1] = (theta[-1] - theta[-2]) / dt
    alpha = math.exp(-dt / washout_t)
    # y[k] = alpha*y[k-1] + (1-alpha)*u[k], with y[0] forced to 0
    zi = np.array([-(1.0 - alpha) * dth[0]])
    y, _ = scipy.signal.lfilter([1.0 - alpha], [1.0, -alpha], dth, zi=zi)
    return f_nominal + y / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# spinning-reserve adjustment

@dataclass(frozen=True)
class ReserveReport:
    target_mw: float
    available_mw: float
    achieved_mw: float
    shortfall_mw: float
    scale: float
    per_machine: tuple[tuple[str, float, float], ...]   # (id, headroom before, after)


def adjust_governors_for_reserve(dyn: tuple[MachineDynamics, ...] | list[MachineDynamics],
                                 dispatch_mw: dict[str, float],
                                 target_reserve_mw: float,
                                 mbase_mw: dict[str, float]
                                 ) -> tuple[tuple[MachineDynamics, ...], ReserveReport]:
    """Rescale enabled governors' p_max so responsive headroom meets the target.

    Each enabled unit's limit moves to dispatch + s·(p_max − dispatch) with
    s = target/available, never above the original limit. If the target
    exceeds the available headroom the list is returned unchanged with the
    shortfall reported.
    """
    if target_reserve_mw < 0:
        raise DynamicsError("target reserve must be >= 0")
    entries = []
    for md in dyn:
        g = md.governor
        if g is None or not g.enabled:
            continue
        if md.machine_id not in dispatch_mw:
            raise DynamicsError(f"no dispatch given for machine '{md.machine_id}'")
        mb = mbase_mw[md.machine_id]
        head = g.p_max * mb - dispatch_mw[md.machine_id]
        entries.append((md.machine_id, max(head, 0.0)))
    available = sum(h for _, h in entries)
    if available == 0.0 and target_reserve_mw > 0:
        raise DynamicsError("no responsive headroom available for a positive reserve target")

    if target_reserve_mw > available:
        report = ReserveReport(target_mw=target_reserve_mw, available_mw=available,
                               achieved_mw=available,
                               shortfall_mw=target_reserve_mw - available, scale=1.0,
                               per_machine=tuple((mid, h, h) for mid, h in entries))
        return tuple(dyn), report

    s = target_reserve_mw / available if available > 0 else 0.0
    head_by_id = dict(entries)
    adjusted = []
    per_machine = []
    for md in dyn:
        g = md.governor
        if g is None or not g.enabled:
            adjusted.append(md)
            continue
        mb = mbase_mw[md.machine_id]
        head = head_by_id[md.machine_id]
        new_head = s * head
        new_pmax = (dispatch_mw[md.machine_id] + new_head) / mb
        adjusted.append(replace(md, governor=replace(g, p_max=new_pmax)))
        per_machine.append((md.machine_id, head, new_head))
    report = ReserveReport(target_mw=target_reserve_mw, available_mw=available,
                           achieved_mw=s * available, shortfall_mw=0.0, scale=s,
                           per_machine=tuple(per_machine))
    return tuple(adjusted), report


# ---------------------------------------------------------------------------
# export

def channel_order(result: SimulationResult) -> list[str]:
    """Stable export ordering: V, F, P, Q, ANG, SPD (then PM/PE if recorded)."""
    names = list(result.channels)
    rank = {"V": 0, "F": 1, "P": 2, "Q": 3, "ANG": 4, "SPD": 5, "PM": 6, "PE": 7}
    indexed = {n: i for i, n in enumerate(names)}
    return sorted(names, key=lambda n: (rank.get(n.split(":", 1)[0], 99), indexed[n]))


def write_result_csv(result: SimulationResult, path: str | Path):
    """One CSV per run: first column t_s, one column per channel."""
    names = channel_order(result)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s"] + names)
        cols = [result.channels[n] for n in names]
        for k in range(len(result.t)):
            w.writerow([repr(float(result.t[k]))] +
                       [repr(float(c[k])) for c in cols])
