"""Remedial-action-scheme and relay state machines evaluated once per
simulation step, plus distance-relay apparent-impedance evaluation.

Every automaton is a pure state machine over its scalar step inputs: given
the same input series it produces the same action log, and no instance emits
the same action twice in a run. All thresholds and delays are configuration.
"""
from __future__ import annotations

import cmath
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netmodel import NetworkCase


class RasConfigError(ValueError):
    """Malformed RAS configuration or unresolvable monitored element."""


class UnmeasurableCurrent(ValueError):
    """Apparent impedance requested at near-zero current."""


@dataclass(frozen=True)
class RasAction:
    action: str                    # an event action name (trip_branch, ...)
    target: str
    reason: str
    mw: float | None = None


# ---------------------------------------------------------------------------
# automatons

class TransferTripRas:
    """Trips when corridor power is high AND a monitored voltage is low,
    both sustained for the pickup time; the timer resets whenever either
    condition clears."""

    def __init__(self, ras_id: str, p_threshold_mw: float, v_threshold_pu: float,
                 pickup_s: float, trip_targets: tuple[str, ...]):
        if p_threshold_mw <= 0:
            raise RasConfigError(f"{ras_id}: p_threshold must be > 0")
        if not 0 < v_threshold_pu < 1.2:
            raise RasConfigError(f"{ras_id}: v_threshold must be in (0, 1.2)")
        if pickup_s < 0:
            raise RasConfigError(f"{ras_id}: pickup_time must be >= 0")
        self.ras_id = ras_id
        self.p_threshold_mw = p_threshold_mw
        self.v_threshold_pu = v_threshold_pu
        self.pickup_s = pickup_s
        self.trip_targets = tuple(trip_targets)
        self.timer = 0.0
        self.fired = False

    def step(self, t: float, dt: float, p_corridor_mw: float,
             v_bus_pu: float) -> list[RasAction]:
        if self.fired:
            return []
        if p_corridor_mw > self.p_threshold_mw and v_bus_pu < self.v_threshold_pu:
            self.timer += dt
        else:
            self.timer = 0.0
        if self.timer >= self.pickup_s:
            self.fired = True
            reason = (f"corridor P {p_corridor_mw:.1f} MW > {self.p_threshold_mw:.1f} "
                      f"and V {v_bus_pu:.3f} pu < {self.v_threshold_pu:.3f} "
                      f"for {self.timer:.3f} s")
            return [RasAction("trip_branch", tgt, reason) for tgt in self.trip_targets]
        return []


class OscillationRas:
    """Trips when an undamped corridor-power oscillation persists.

    Local extrema are tracked over a sliding window; the latest peak-to-peak
    amplitude must reach the threshold and the ratio of the last two
    peak-to-peak amplitudes must stay at or above `undamped_ratio` for
    `persist_s` continuously.
    """

    def __init__(self, ras_id: str, amplitude_threshold_mw: float, persist_s: float,
                 window_s: float, trip_targets: tuple[str, ...],
                 undamped_ratio: float = 0.98):
        if persist_s <= 0:
            raise RasConfigError(f"{ras_id}: persist_time must be > 0")
        if window_s <= 0:
            raise RasConfigError(f"{ras_id}: window must be > 0")
        self.ras_id = ras_id
        self.amplitude_threshold_mw = amplitude_threshold_mw
        self.persist_s = persist_s
        self.window_s = window_s
        self.undamped_ratio = undamped_ratio
        self.trip_targets = tuple(trip_targets)
        self.timer = 0.0
        self.fired = False
        self._k = 0
        self._prev2: float | None = None
        self._prev1: float | None = None
        self._extrema: deque[tuple[int, float]] = deque()

    def step(self, t: float, dt: float, p_corridor_mw: float) -> list[RasAction]:
        if self.fired:
            return []
        k = self._k
        self._k += 1
        p = p_corridor_mw
        if self._prev1 is not None and self._prev2 is not None:
            a, b, c = self._prev2, self._prev1, p
            if (b > a and b > c) or (b < a and b < c):
                self._extrema.append((k - 1, b))
        self._prev2 = self._prev1
        self._prev1 = p
        # keep extrema that a window-wide buffer scan would still see
        window_n = int(round(self.window_s / dt)) + 1
        oldest_interior = k - window_n + 2
        while self._extrema and self._extrema[0][0] < oldest_interior:
            self._extrema.popleft()

        detected = False
        if len(self._extrema) >= 3:
            e = list(self._extrema)[-3:]
            pp_prev = abs(e[1][1] - e[0][1])
            pp_last = abs(e[2][1] - e[1][1])
            if pp_last >= self.amplitude_threshold_mw and pp_prev > 0.0 \
                    and pp_last / pp_prev >= self.undamped_ratio:
                detected = True
        if detected:
            self.timer += dt
        else:
            self.timer = 0.0
        if self.timer >= self.persist_s:
            self.fired = True
            reason = (f"undamped oscillation >= {self.amplitude_threshold_mw:.1f} MW pk-pk "
                      f"persisted {self.timer:.2f} s")
            return [RasAction("trip_branch", tgt, reason) for tgt in self.trip_targets]
        return []


class OverloadShedRas:
    """Two-stage overload scheme: shed generation first, trip a tie next.

    Stage 0→1 after the protected branch carries more than rating×factor
    continuously for stage1_delay: the largest responsive in-area machines
    are tripped until the shed block is covered. Stage 1→2 after a further
    continuous stage2_delay of overload: the configured tie is tripped. If
    the overload clears once stage 1 has acted, the scheme freezes (no
    regression, no further action).
    """

    def __init__(self, ras_id: str, branch_id: str, rating_mva: float,
                 overload_factor: float, stage1_delay_s: float, shed_block_mw: float,
                 area_machines: tuple[tuple[str, float], ...], stage2_delay_s: float,
                 tie_branch_id: str):
        if rating_mva <= 0:
            raise RasConfigError(f"{ras_id}: protected branch must have a positive rating")
        if overload_factor < 1.0:
            raise RasConfigError(f"{ras_id}: overload_factor must be >= 1.0")
        self.ras_id = ras_id
        self.branch_id = branch_id
        self.limit_mva = rating_mva * overload_factor
        self.stage1_delay_s = stage1_delay_s
        self.stage2_delay_s = stage2_delay_s
        self.shed_block_mw = shed_block_mw
        self.tie_branch_id = tie_branch_id
        # largest dispatch first, deterministic tie-break by id
        self.area_machines = tuple(sorted(area_machines, key=lambda m: (-m[1], m[0])))
        self.stage = 0
        self.timer = 0.0
        self.frozen = False

    def _shed_actions(self) -> list[RasAction]:
        actions = []
        covered = 0.0
        for mid, mw in self.area_machines:
            if covered >= self.shed_block_mw:
                break
            actions.append(RasAction(
                "trip_machine", mid,
                f"stage 1 generation shed ({mw:.1f} MW of {self.shed_block_mw:.1f} MW block)"))
            covered += mw
        if covered < self.shed_block_mw:
            shortfall = self.shed_block_mw - covered
            if actions:
                last = actions[-1]
                actions[-1] = RasAction(last.action, last.target,
                                        last.reason + f"; area short {shortfall:.1f} MW")
        return actions

    def step(self, t: float, dt: float, s_branch_mva: float) -> list[RasAction]:
        if self.frozen or self.stage >= 2:
            return []
        overloaded = abs(s_branch_mva) > self.limit_mva
        if self.stage == 0:
            if overloaded:
                self.timer += dt
                if self.timer >= self.stage1_delay_s:
                    self.stage = 1
                    self.timer = 0.0
                    return self._shed_actions()
            else:
                self.timer = 0.0
        elif self.stage == 1:
            if overloaded:
                self.timer += dt
                if self.timer >= self.stage2_delay_s:
                    self.stage = 2
                    return [RasAction(
                        "trip_branch", self.tie_branch_id,
                        f"stage 2 tie trip, overload persisted {self.stage2_delay_s:.2f} s "
                        f"after shedding")]
            else:
                self.frozen = True
        return []


class DirectionalPowerRas:
    """Single-condition directional interface scheme; timer semantics match
    the transfer-trip relay. Positive interface power is the configured
    direction (south→north for the shipped case)."""

    def __init__(self, ras_id: str, p_threshold_mw: float, pickup_s: float,
                 actions: tuple[RasAction, ...]):
        if not actions:
            raise RasConfigError(f"{ras_id}: configured action list must be nonempty")
        self.ras_id = ras_id
        self.p_threshold_mw = p_threshold_mw
        self.pickup_s = pickup_s
        self.actions = tuple(actions)
        self.timer = 0.0
        self.fired = False

    def step(self, t: float, dt: float, p_interface_mw: float) -> list[RasAction]:
        if self.fired:
            return []
        if p_interface_mw > self.p_threshold_mw:
            self.timer += dt
        else:
            self.timer = 0.0
        if self.timer >= self.pickup_s:
            self.fired = True
            reason = (f"interface P {p_interface_mw:.1f} MW > "
                      f"{self.p_threshold_mw:.1f} MW for {self.timer:.3f} s")
            return [RasAction(a.action, a.target, reason, a.mw) for a in self.actions]
        return []


# ---------------------------------------------------------------------------
# distance relay

@dataclass(frozen=True)
class MhoZone:
    reach: float                  # pu impedance magnitude
    angle: float                  # rad, maximum-torque angle
    timer: float = 0.0

    def __post_init__(self):
        if self.reach <= 0:
            raise RasConfigError("mho zone reach must be > 0")


def apparent_impedance(v_phasor: complex, i_phasor: complex) -> complex:
    """z = v / i in pu; raises UnmeasurableCurrent below 1e-6 pu current."""
    if abs(i_phasor) <= 1e-6:
        raise UnmeasurableCurrent(f"current magnitude {abs(i_phasor):.2e} pu is unmeasurable")
    return v_phasor / i_phasor


def mho_zone_check(z: complex, zone: MhoZone) -> bool:
    """Inside the mho circle through the origin: |z - c| <= |c|, c = (reach/2)∠angle."""
    c = (zone.reach / 2.0) * cmath.exp(1j * zone.angle)
    return abs(z - c) <= abs(c)


def impedance_trajectory(result, bus_id: str, element_key: str,
                         base_mva: float) -> np.ndarray:
    """Apparent impedance seen at `bus_id` into element `element_key`
    (channel key "<from>-<to>:<ckt>", bus must be the from end), replayed
    from recorded channels. Unmeasurable samples are NaN.

    Uses z = |V|^2 / conj(S) with S from the recorded from-end P/Q, which
    equals V/I independent of the angle reference.
    """
    v = result.channels[f"V:{bus_id}"]
    p = result.channels[f"P:{element_key}"] / base_mva
    q = result.channels[f"Q:{element_key}"] / base_mva
    s_conj = p - 1j * q
    z = np.full(len(v), np.nan + 0j, dtype=complex)
    i_mag = np.zeros(len(v))
    nonzero = np.abs(s_conj) > 0
    i_mag[nonzero] = np.abs(s_conj[nonzero]) / np.maximum(v[nonzero], 1e-12)
    ok = i_mag > 1e-6
    z[ok] = (v[ok] ** 2) / s_conj[ok]
    return z


# ---------------------------------------------------------------------------
# configuration and simulator binding

@dataclass(frozen=True)
class RasSpec:
    kind: str
    ras_id: str
    params: dict


def load_ras_config(source: str | Path | list) -> tuple[RasSpec, ...]:
    """Parse the RAS configuration document (JSON list of instances)."""
    if isinstance(source, list):
        records = source
    else:
        text = str(source)
        if not text.lstrip().startswith("["):
            text = Path(source).read_text(encoding="utf-8")
        records = json.loads(text)
    specs = []
    for rec in records:
        if "kind" not in rec or "id" not in rec:
            raise RasConfigError(f"RAS record missing 'kind' or 'id': {rec}")
        params = {k: v for k, v in rec.items() if k not in ("kind", "id")}
        specs.append(RasSpec(kind=str(rec["kind"]), ras_id=str(rec["id"]), params=params))
    return tuple(specs)


def _corridor(params, key="corridor") -> tuple[tuple[str, float], ...]:
    out = []
    for item in params[key]:
        if isinstance(item, str):
            out.append((item, 1.0))
        else:
            out.append((str(item["element"]), float(item.get("sign", 1.0))))
    return tuple(out)


class _Bound:
    """Couples an automaton to resolved signal positions in the simulator."""

    def __init__(self, ras_id):
        self.ras_id = ras_id

    def resolve(self, el_pos: dict[str, int], bus_pos: dict[str, int]):
        raise NotImplementedError

    @staticmethod
    def _el(el_pos, eid, ras_id):
        if eid not in el_pos:
            raise RasConfigError(f"{ras_id}: monitored element '{eid}' not in case")
        return el_pos[eid]


class BoundTransferTrip(_Bound):
    def __init__(self, automaton: TransferTripRas, corridor, voltage_bus: str):
        super().__init__(automaton.ras_id)
        self.automaton = automaton
        self.corridor = corridor
        self.voltage_bus = voltage_bus

    def resolve(self, el_pos, bus_pos):
        self._idx = [(self._el(el_pos, eid, self.ras_id), sign) for eid, sign in self.corridor]
        if self.voltage_bus not in bus_pos:
            raise RasConfigError(f"{self.ras_id}: monitored bus '{self.voltage_bus}' not in case")
        self._vpos = bus_pos[self.voltage_bus]

    def step(self, t, dt, view):
        p = sum(sign * view.p_mw[i] for i, sign in self._idx)
        return self.automaton.step(t, dt, p, view.v_mag[self._vpos])


class BoundOscillation(_Bound):
    def __init__(self, automaton: OscillationRas, corridor):
        super().__init__(automaton.ras_id)
        self.automaton = automaton
        self.corridor = corridor

    def resolve(self, el_pos, bus_pos):
        self._idx = [(self._el(el_pos, eid, self.ras_id), sign) for eid, sign in self.corridor]

    def step(self, t, dt, view):
        p = sum(sign * view.p_mw[i] for i, sign in self._idx)
        return self.automaton.step(t, dt, p)


class BoundOverloadShed(_Bound):
    def __init__(self, automaton: OverloadShedRas):
        super().__init__(automaton.ras_id)
        self.automaton = automaton

    def resolve(self, el_pos, bus_pos):
        self._bpos = self._el(el_pos, self.automaton.branch_id, self.ras_id)

    def step(self, t, dt, view):
        s = math.hypot(view.p_mw[self._bpos], view.q_mvar[self._bpos])
        return self.automaton.step(t, dt, s)


class BoundDirectionalPower(_Bound):
    def __init__(self, automaton: DirectionalPowerRas, interface):
        super().__init__(automaton.ras_id)
        self.automaton = automaton
        self.interface = interface

    def resolve(self, el_pos, bus_pos):
        self._idx = [(self._el(el_pos, eid, self.ras_id), sign) for eid, sign in self.interface]

    def step(self, t, dt, view):
        p = sum(sign * view.p_mw[i] for i, sign in self._idx)
        return self.automaton.step(t, dt, p)


def build_ras(specs: tuple[RasSpec, ...], case: NetworkCase,
              enabled: dict[str, bool] | None = None):
    """Fresh bound RAS instances for one simulation run.

    `enabled` maps ras ids to on/off overrides (contingency-level control);
    unnamed instances stay enabled.
    """
    enabled = enabled or {}
    bus_area = {b.id: b.area_id for b in case.buses}
    el_rating = {el.id: el.rating for el in case.elements()}
    out = []
    for spec in specs:
        if not enabled.get(spec.ras_id, True):
            continue
        p = spec.params
        try:
            if spec.kind == "transfer_trip":
                auto = TransferTripRas(spec.ras_id, float(p["p_threshold_mw"]),
                                       float(p["v_threshold_pu"]), float(p["pickup_s"]),
                                       tuple(p["trip"]))
                out.append(BoundTransferTrip(auto, _corridor(p), str(p["voltage_bus"])))
            elif spec.kind == "oscillation":
                auto = OscillationRas(spec.ras_id, float(p["amplitude_threshold_mw"]),
                                      float(p["persist_s"]), float(p["window_s"]),
                                      tuple(p["trip"]),
                                      undamped_ratio=float(p.get("undamped_ratio", 0.98)))
                out.append(BoundOscillation(auto, _corridor(p)))
            elif spec.kind == "overload_shed":
                branch_id = str(p["branch"])
                if branch_id not in el_rating:
                    raise RasConfigError(f"{spec.ras_id}: protected branch '{branch_id}' not in case")
                area = str(p["area"])
                machines = tuple((m.id, m.p_dispatch) for m in case.machines
                                 if m.status and bus_area.get(m.bus) == area)
                auto = OverloadShedRas(spec.ras_id, branch_id, el_rating[branch_id],
                                       float(p.get("overload_factor", 1.0)),
                                       float(p["stage1_delay_s"]), float(p["shed_block_mw"]),
                                       machines, float(p["stage2_delay_s"]),
                                       str(p["tie_branch"]))
                out.append(BoundOverloadShed(auto))
            elif spec.kind == "directional_power":
                actions = tuple(RasAction(str(a["action"]), str(a["target"]), "",
                                          float(a["mw"]) if a.get("mw") is not None else None)
                                for a in p["actions"])
                auto = DirectionalPowerRas(spec.ras_id, float(p["p_threshold_mw"]),
                                           float(p["pickup_s"]), actions)
                out.append(BoundDirectionalPower(auto, _corridor(p, key="interface")))
            else:
                raise RasConfigError(f"unknown RAS kind '{spec.kind}'")
        except KeyError as exc:
            raise RasConfigError(f"{spec.ras_id}: missing parameter {exc}") from exc
    return out
