"""Grid data model: case records, validation, and the network admittance matrix.

All impedances are per-unit on the system base; powers are engineering units
(MW / MVAr) in the records and converted to pu where the math needs them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

BUS_KINDS = ("slack", "pv", "pq")


class CaseError(ValueError):
    """A case document cannot be parsed or violates referential integrity."""


@dataclass(frozen=True)
class Area:
    id: str
    name: str


@dataclass(frozen=True)
class Bus:
    id: str
    area_id: str
    base_kv: float
    kind: str = "pq"
    v_set: float | None = None
    status: bool = True
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", self.id)


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b_total: float = 0.0
    rating: float = 0.0
    circuit_id: str = "1"
    status: bool = True


@dataclass(frozen=True)
class Transformer:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b_total: float = 0.0
    rating: float = 0.0
    circuit_id: str = "1"
    tap_ratio: float = 1.0
    status: bool = True


@dataclass(frozen=True)
class Machine:
    id: str
    bus: str
    p_dispatch: float
    q_dispatch: float = 0.0
    q_min: float = -9999.0
    q_max: float = 9999.0
    mbase: float = 100.0
    status: bool = True


@dataclass(frozen=True)
class Load:
    id: str
    bus: str
    p: float
    q: float = 0.0
    status: bool = True
    sheddable_block: float | None = None


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...] = ()
    transformers: tuple[Transformer, ...] = ()
    machines: tuple[Machine, ...] = ()
    loads: tuple[Load, ...] = ()
    areas: tuple[Area, ...] = ()
    metadata: dict = field(default_factory=dict)

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def elements(self) -> tuple[Branch | Transformer, ...]:
        """Branches and transformers in case order (branches first)."""
        return self.branches + self.transformers


@dataclass(frozen=True)
class Violation:
    code: str
    element: str
    message: str


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """Complex nodal admittance over the in-service buses, pi-model stamps."""

    bus_ids: tuple[str, ...]
    matrix: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return len(self.bus_ids)

    def index_of(self, bus_id: str) -> int:
        return self.bus_ids.index(bus_id)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


# ---------------------------------------------------------------------------
# parsing / serialization

_BUS_FIELDS = {"id", "area_id", "base_kv", "kind", "v_set", "status", "name"}
_BRANCH_FIELDS = {"id", "from_bus", "to_bus", "r", "x", "b_total", "rating",
                  "circuit_id", "status"}
_XFMR_FIELDS = _BRANCH_FIELDS | {"tap_ratio"}
_MACHINE_FIELDS = {"id", "bus", "p_dispatch", "q_dispatch", "q_min", "q_max",
                   "mbase", "status"}
_LOAD_FIELDS = {"id", "bus", "p", "q", "status", "sheddable_block"}


def _require(record: dict, key: str, kind: str, where: str):
    if key not in record:
        raise CaseError(f"{where}: missing required field '{key}'")
    return record[key]


def _num(record: dict, key: str, where: str, default=None):
    if key not in record:
        if default is None:
            raise CaseError(f"{where}: missing required field '{key}'")
        return default
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"{where}: field '{key}' must be a number, got {value!r}")
    return float(value)


def _check_keys(record: dict, allowed: set, where: str):
    extra = set(record) - allowed
    if extra:
        raise CaseError(f"{where}: unknown field(s) {sorted(extra)}")


def load_case(source: str | Path | dict) -> NetworkCase:
    """Parse a case document (JSON text, path, or already-parsed dict).

    Raises CaseError on schema violations, duplicate ids, or references to
    buses that do not exist; the error message names the offender.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text(encoding="utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CaseError(f"case document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseError("case document must be a JSON object")

    base_mva = _num(doc, "base_mva", "case")

    areas = []
    for i, rec in enumerate(doc.get("areas", [])):
        where = f"areas[{i}]"
        areas.append(Area(id=str(_require(rec, "id", "area", where)),
                          name=str(rec.get("name", rec["id"]))))

    buses = []
    for i, rec in enumerate(doc.get("buses", [])):
        where = f"buses[{i}]"
        _check_keys(rec, _BUS_FIELDS, where)
        kind = str(rec.get("kind", "pq"))
        if kind not in BUS_KINDS:
            raise CaseError(f"{where}: kind must be one of {BUS_KINDS}, got {kind!r}")
        v_set = rec.get("v_set")
        buses.append(Bus(
            id=str(_require(rec, "id", "bus", where)),
            area_id=str(_require(rec, "area_id", "bus", where)),
            base_kv=_num(rec, "base_kv", where),
            kind=kind,
            v_set=float(v_set) if v_set is not None else None,
            status=bool(rec.get("status", True)),
            name=str(rec.get("name", "")),
        ))

    def parse_element(rec, i, cls, fields, label):
        where = f"{label}[{i}]"
        _check_keys(rec, fields, where)
        kwargs = dict(
            id=str(_require(rec, "id", label, where)),
            from_bus=str(_require(rec, "from_bus", label, where)),
            to_bus=str(_require(rec, "to_bus", label, where)),
            r=_num(rec, "r", where, default=0.0),
            x=_num(rec, "x", where),
            b_total=_num(rec, "b_total", where, default=0.0),
            rating=_num(rec, "rating", where, default=0.0),
            circuit_id=str(rec.get("circuit_id", "1")),
            status=bool(rec.get("status", True)),
        )
        if cls is Transformer:
            kwargs["tap_ratio"] = _num(rec, "tap_ratio", where, default=1.0)
        return cls(**kwargs)

    branches = [parse_element(rec, i, Branch, _BRANCH_FIELDS, "branches")
                for i, rec in enumerate(doc.get("branches", []))]
    transformers = [parse_element(rec, i, Transformer, _XFMR_FIELDS, "transformers")
                    for i, rec in enumerate(doc.get("transformers", []))]

    machines = []
    for i, rec in enumerate(doc.get("machines", [])):
        where = f"machines[{i}]"
        _check_keys(rec, _MACHINE_FIELDS, where)
        machines.append(Machine(
            id=str(_require(rec, "id", "machine", where)),
            bus=str(_require(rec, "bus", "machine", where)),
            p_dispatch=_num(rec, "p_dispatch", where),
            q_dispatch=_num(rec, "q_dispatch", where, default=0.0),
            q_min=_num(rec, "q_min", where, default=-9999.0),
            q_max=_num(rec, "q_max", where, default=9999.0),
            mbase=_num(rec, "mbase", where, default=100.0),
            status=bool(rec.get("status", True)),
        ))

    loads = []
    for i, rec in enumerate(doc.get("loads", [])):
        where = f"loads[{i}]"
        _check_keys(rec, _LOAD_FIELDS, where)
        block = rec.get("sheddable_block")
        loads.append(Load(
            id=str(_require(rec, "id", "load", where)),
            bus=str(_require(rec, "bus", "load", where)),
            p=_num(rec, "p", where),
            q=_num(rec, "q", where, default=0.0),
            status=bool(rec.get("status", True)),
            sheddable_block=float(block) if block is not None else None,
        ))

    case = NetworkCase(
        base_mva=base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        transformers=tuple(transformers),
        machines=tuple(machines),
        loads=tuple(loads),
        areas=tuple(areas),
        metadata=dict(doc.get("metadata", {})),
    )
    _check_references(case)
    return case


def _check_references(case: NetworkCase):
    bus_ids = {b.id for b in case.buses}
    if len(bus_ids) != len(case.buses):
        seen = set()
        for b in case.buses:
            if b.id in seen:
                raise CaseError(f"duplicate bus id '{b.id}'")
            seen.add(b.id)
    area_ids = {a.id for a in case.areas}
    for b in case.buses:
        if case.areas and b.area_id not in area_ids:
            raise CaseError(f"bus '{b.id}' references unknown area '{b.area_id}'")
    for el in case.elements():
        for end in (el.from_bus, el.to_bus):
            if end not in bus_ids:
                raise CaseError(
                    f"{type(el).__name__.lower()} '{el.id}' references unknown bus '{end}'")
    for m in case.machines:
        if m.bus not in bus_ids:
            raise CaseError(f"machine '{m.id}' references unknown bus '{m.bus}'")
    for ld in case.loads:
        if ld.bus not in bus_ids:
            raise CaseError(f"load '{ld.id}' references unknown bus '{ld.bus}'")


def case_to_dict(case: NetworkCase) -> dict:
    def bus_dict(b: Bus) -> dict:
        d = {"id": b.id, "area_id": b.area_id, "base_kv": b.base_kv, "kind": b.kind,
             "status": b.status}
        if b.v_set is not None:
            d["v_set"] = b.v_set
        if b.name != b.id:
            d["name"] = b.name
        return d

    def el_dict(el) -> dict:
        d = {"id": el.id, "from_bus": el.from_bus, "to_bus": el.to_bus, "r": el.r,
             "x": el.x, "b_total": el.b_total, "rating": el.rating,
             "circuit_id": el.circuit_id, "status": el.status}
        if isinstance(el, Transformer):
            d["tap_ratio"] = el.tap_ratio
        return d

    def load_dict(ld: Load) -> dict:
        d = {"id": ld.id, "bus": ld.bus, "p": ld.p, "q": ld.q, "status": ld.status}
        if ld.sheddable_block is not None:
            d["sheddable_block"] = ld.sheddable_block
        return d

    doc = {
        "base_mva": case.base_mva,
        "areas": [{"id": a.id, "name": a.name} for a in case.areas],
        "buses": [bus_dict(b) for b in case.buses],
        "branches": [el_dict(b) for b in case.branches],
        "transformers": [el_dict(t) for t in case.transformers],
        "machines": [{"id": m.id, "bus": m.bus, "p_dispatch": m.p_dispatch,
                      "q_dispatch": m.q_dispatch, "q_min": m.q_min, "q_max": m.q_max,
                      "mbase": m.mbase, "status": m.status} for m in case.machines],
        "loads": [load_dict(ld) for ld in case.loads],
    }
    if case.metadata:
        doc["metadata"] = case.metadata
    return doc


def dump_case(case: NetworkCase) -> str:
    """Serialize to the JSON case schema; round-trips exactly through load_case."""
    return json.dumps(case_to_dict(case), indent=2) + "\n"


def save_case(case: NetworkCase, path: str | Path):
    Path(path).write_text(dump_case(case), encoding="utf-8")


# ---------------------------------------------------------------------------
# validation

def islands(case: NetworkCase) -> list[set[str]]:
    """Connected components over in-service buses via in-service elements."""
    idx = {b.id: i for i, b in enumerate(case.buses) if b.status}
    parent = list(range(len(idx)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj

    for el in case.elements():
        if el.status and el.from_bus in idx and el.to_bus in idx:
            union(idx[el.from_bus], idx[el.to_bus])
    groups: dict[int, set[str]] = {}
    for bus_id, i in idx.items():
        groups.setdefault(find(i), set()).add(bus_id)
    return sorted(groups.values(), key=lambda g: sorted(g)[0])


def validate_case(case: NetworkCase) -> list[Violation]:
    """Check all type invariants; violations are data, not exceptions."""
    out: list[Violation] = []
    if case.base_mva <= 0:
        out.append(Violation("base_mva", "case", f"base_mva must be > 0, got {case.base_mva}"))

    seen_bus = set()
    for b in case.buses:
        if b.id in seen_bus:
            out.append(Violation("duplicate_id", b.id, f"duplicate bus id '{b.id}'"))
        seen_bus.add(b.id)
        if b.base_kv <= 0:
            out.append(Violation("base_kv", b.id, f"bus '{b.id}' base_kv must be > 0"))
        if b.kind not in BUS_KINDS:
            out.append(Violation("bus_kind", b.id, f"bus '{b.id}' has invalid kind '{b.kind}'"))
        if b.v_set is not None and not (0.5 <= b.v_set <= 1.5):
            out.append(Violation("v_set", b.id,
                                 f"bus '{b.id}' v_set {b.v_set} outside [0.5, 1.5]"))
        if b.kind in ("slack", "pv") and b.v_set is None:
            out.append(Violation("v_set", b.id, f"bus '{b.id}' kind {b.kind} requires v_set"))

    bus_ids = {b.id for b in case.buses}
    seen_el: set[str] = set()
    seen_key: set[tuple] = set()
    for el in case.elements():
        label = type(el).__name__.lower()
        if el.id in seen_el:
            out.append(Violation("duplicate_id", el.id, f"duplicate element id '{el.id}'"))
        seen_el.add(el.id)
        key = (label, el.from_bus, el.to_bus, el.circuit_id)
        if key in seen_key:
            out.append(Violation("duplicate_circuit", el.id,
                                 f"{label} '{el.id}' repeats circuit key {key[1:]}"))
        seen_key.add(key)
        if el.x == 0:
            out.append(Violation("zero_x", el.id, f"{label} '{el.id}' has x = 0"))
        if el.rating < 0:
            out.append(Violation("rating", el.id, f"{label} '{el.id}' rating must be >= 0"))
        if el.from_bus == el.to_bus:
            out.append(Violation("self_loop", el.id,
                                 f"{label} '{el.id}' connects bus '{el.from_bus}' to itself"))
        for end in (el.from_bus, el.to_bus):
            if end not in bus_ids:
                out.append(Violation("dangling_ref", el.id,
                                     f"{label} '{el.id}' references unknown bus '{end}'"))
        if isinstance(el, Transformer) and not (0.8 <= el.tap_ratio <= 1.2):
            out.append(Violation("tap_ratio", el.id,
                                 f"transformer '{el.id}' tap_ratio {el.tap_ratio} outside [0.8, 1.2]"))

    seen_m = set()
    for m in case.machines:
        if m.id in seen_m:
            out.append(Violation("duplicate_id", m.id, f"duplicate machine id '{m.id}'"))
        seen_m.add(m.id)
        if m.bus not in bus_ids:
            out.append(Violation("dangling_ref", m.id,
                                 f"machine '{m.id}' references unknown bus '{m.bus}'"))
        if m.q_min > m.q_max:
            out.append(Violation("q_limits", m.id, f"machine '{m.id}' has q_min > q_max"))
        if m.mbase <= 0:
            out.append(Violation("mbase", m.id, f"machine '{m.id}' mbase must be > 0"))

    seen_l = set()
    for ld in case.loads:
        if ld.id in seen_l:
            out.append(Violation("duplicate_id", ld.id, f"duplicate load id '{ld.id}'"))
        seen_l.add(ld.id)
        if ld.bus not in bus_ids:
            out.append(Violation("dangling_ref", ld.id,
                                 f"load '{ld.id}' references unknown bus '{ld.bus}'"))

    # exactly one in-service slack per island
    slack_by_bus = {b.id: (b.kind == "slack") for b in case.buses if b.status}
    for group in islands(case):
        slacks = sorted(bid for bid in group if slack_by_bus.get(bid))
        anchor = sorted(group)[0]
        if len(slacks) == 0:
            out.append(Violation("no_slack", anchor,
                                 f"island containing bus '{anchor}' has no slack bus"))
        elif len(slacks) > 1:
            out.append(Violation("multiple_slack", anchor,
                                 f"island containing bus '{anchor}' has multiple slack buses: {slacks}"))
    return out


# ---------------------------------------------------------------------------
# admittance matrix

def element_stamp(el: Branch | Transformer) -> tuple[complex, complex, complex, complex]:
    """Pi-model 2x2 admittance (yff, yft, ytf, ytt); tap on the from side."""
    y = 1.0 / complex(el.r, el.x)
    b_sh = 1j * el.b_total / 2.0
    a = getattr(el, "tap_ratio", 1.0)
    yff = (y + b_sh) / (a * a)
    yft = -y / a
    ytf = -y / a
    ytt = y + b_sh
    return yff, yft, ytf, ytt


def build_ybus(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix over in-service buses.

    Out-of-service elements, and elements touching an out-of-service bus,
    are excluded. Precondition: validate_case(case) is empty.
    """
    bus_ids = tuple(b.id for b in case.buses if b.status)
    idx = {bid: i for i, bid in enumerate(bus_ids)}
    n = len(bus_ids)
    rows, cols, vals = [], [], []
    for el in case.elements():
        if not el.status or el.from_bus not in idx or el.to_bus not in idx:
            continue
        i, j = idx[el.from_bus], idx[el.to_bus]
        yff, yft, ytf, ytt = element_stamp(el)
        rows += [i, i, j, j]
        cols += [i, j, i, j]
        vals += [yff, yft, ytf, ytt]
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)
    return AdmittanceMatrix(bus_ids=bus_ids, matrix=matrix)


def rename_buses(case: NetworkCase, mapping: dict[str, str]) -> NetworkCase:
    """New case with bus ids (and all references) renamed per mapping."""
    def mb(bid):
        return mapping.get(bid, bid)

    return replace(
        case,
        buses=tuple(replace(b, id=mb(b.id), name=b.name if b.name != b.id else mb(b.id))
                    for b in case.buses),
        branches=tuple(replace(e, from_bus=mb(e.from_bus), to_bus=mb(e.to_bus))
                       for e in case.branches),
        transformers=tuple(replace(e, from_bus=mb(e.from_bus), to_bus=mb(e.to_bus))
                           for e in case.transformers),
        machines=tuple(replace(m, bus=mb(m.bus)) for m in case.machines),
        loads=tuple(replace(ld, bus=mb(ld.bus)) for ld in case.loads),
    )
