"""Integration of an external-area equivalent into a host case across a
boundary corridor, and wholesale swapping between equivalents.

The corridor reuses the two declared endpoint buses (no new buses); the
external slack is demoted to PV with its dispatch set from a standalone
solve of the equivalent plus the scheduled interchange, keeping a single
system-wide angle reference in the merged case.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .netmodel import (Area, Branch, Bus, CaseError, Load, Machine, NetworkCase,
                       Transformer, load_case, rename_buses, validate_case)
from .powerflow import PowerFlowOptions, machine_allocation, solve_powerflow

EQUIVALENT_KINDS = ("smtl", "detailed")
EXPORT_CHECK_TOL_MW = 1e-3


class MergeError(ValueError):
    """Boundary or equivalent data that cannot be merged."""


@dataclass(frozen=True)
class BoundarySpec:
    host_bus: str
    external_bus: str
    interconnection_branch: Branch | None
    transformers: tuple[Transformer, ...]
    scheduled_interchange_mw: float     # positive = external -> host

    def __post_init__(self):
        if self.interconnection_branch is None and not self.transformers:
            raise MergeError("boundary must declare at least one connecting element")
        for el in self.corridor_elements():
            if el.from_bus != self.external_bus or el.to_bus != self.host_bus:
                raise MergeError(
                    f"corridor element '{el.id}' must run external→host "
                    f"({self.external_bus}→{self.host_bus})")
        keys = [(t.from_bus, t.to_bus, t.circuit_id) for t in self.transformers]
        if len(set(keys)) != len(keys):
            raise MergeError("parallel boundary transformers must differ in circuit_id")

    def corridor_elements(self) -> tuple[Branch | Transformer, ...]:
        elements: tuple[Branch | Transformer, ...] = ()
        if self.interconnection_branch is not None:
            elements += (self.interconnection_branch,)
        return elements + self.transformers


def load_boundary(source: str | Path | dict) -> BoundarySpec:
    """Parse a boundary document (JSON)."""
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text(encoding="utf-8")
        doc = json.loads(text)
    branch = None
    if doc.get("interconnection_branch") is not None:
        b = doc["interconnection_branch"]
        branch = Branch(id=str(b["id"]), from_bus=str(b["from_bus"]), to_bus=str(b["to_bus"]),
                        r=float(b.get("r", 0.0)), x=float(b["x"]),
                        b_total=float(b.get("b_total", 0.0)),
                        rating=float(b.get("rating", 0.0)),
                        circuit_id=str(b.get("circuit_id", "1")))
    transformers = tuple(
        Transformer(id=str(t["id"]), from_bus=str(t["from_bus"]), to_bus=str(t["to_bus"]),
                    r=float(t.get("r", 0.0)), x=float(t["x"]),
                    b_total=float(t.get("b_total", 0.0)), rating=float(t.get("rating", 0.0)),
                    circuit_id=str(t.get("circuit_id", "1")),
                    tap_ratio=float(t.get("tap_ratio", 1.0)))
        for t in doc.get("transformers", []))
    return BoundarySpec(host_bus=str(doc["host_bus"]), external_bus=str(doc["external_bus"]),
                        interconnection_branch=branch, transformers=transformers,
                        scheduled_interchange_mw=float(doc["scheduled_interchange_mw"]))


def build_smtl_equivalent(bus_id: str, area_id: str, area_name: str, base_kv: float,
                          base_mva: float, machine_mw: float, machine_mbase: float,
                          load_a: tuple[float, float], load_b: tuple[float, float],
                          v_set: float = 1.0,
                          q_limits: tuple[float, float] = (-9999.0, 9999.0)) -> NetworkCase:
    """Single Machine Two Load fragment: one bus, one machine, two loads."""
    return NetworkCase(
        base_mva=base_mva,
        areas=(Area(id=area_id, name=area_name),),
        buses=(Bus(id=bus_id, area_id=area_id, base_kv=base_kv, kind="slack", v_set=v_set),),
        machines=(Machine(id=f"{area_id}-G1", bus=bus_id, p_dispatch=machine_mw,
                          q_dispatch=0.0, q_min=q_limits[0], q_max=q_limits[1],
                          mbase=machine_mbase),),
        loads=(Load(id=f"{area_id}-L1", bus=bus_id, p=load_a[0], q=load_a[1]),
               Load(id=f"{area_id}-L2", bus=bus_id, p=load_b[0], q=load_b[1])),
    )


def net_export_mw(case: NetworkCase) -> float:
    """Authored net active surplus: dispatch minus load over in-service elements."""
    gen = sum(m.p_dispatch for m in case.machines if m.status)
    load = sum(ld.p for ld in case.loads if ld.status)
    return gen - load


def _prefix_collisions(host: NetworkCase, external: NetworkCase) -> NetworkCase:
    """Resolve bus-id collisions by prefixing external bus names with their
    area tag; a collision that survives prefixing is an error."""
    host_buses = {b.id for b in host.buses}
    area_name = {a.id: a.name for a in external.areas}
    mapping = {}
    for b in external.buses:
        if b.id in host_buses:
            mapping[b.id] = f"{area_name.get(b.area_id, b.area_id)}:{b.id}"
    if not mapping:
        return external
    renamed = rename_buses(external, mapping)
    still = {b.id for b in renamed.buses} & host_buses
    if still:
        raise MergeError(f"bus name collision persists after prefixing: {sorted(still)}")
    return renamed


def merge_cases(host: NetworkCase, external: NetworkCase,
                boundary: BoundarySpec) -> NetworkCase:
    """Merge an external equivalent into the host at the boundary corridor.

    Neither input is mutated. The external net export must match the
    scheduled interchange; its slack is demoted to PV with dispatch from a
    standalone solve plus the schedule, so the merged case keeps exactly the
    host's slack.
    """
    if host.base_mva != external.base_mva:
        raise MergeError(f"base mismatch: host {host.base_mva} MVA, external "
                         f"{external.base_mva} MVA")
    for label, case in (("host", host), ("external", external)):
        violations = validate_case(case)
        if violations:
            raise MergeError(f"{label} case invalid: {violations[0].message}")

    export = net_export_mw(external)
    if abs(export - boundary.scheduled_interchange_mw) > max(
            EXPORT_CHECK_TOL_MW, 0.001 * abs(boundary.scheduled_interchange_mw)):
        raise MergeError(
            f"external net export {export:.3f} MW does not match scheduled "
            f"interchange {boundary.scheduled_interchange_mw:.3f} MW")

    host_bus_ids = {b.id for b in host.buses}
    if boundary.host_bus not in host_bus_ids:
        raise MergeError(f"boundary host bus '{boundary.host_bus}' not in host case")

    # standalone solve of the equivalent fixes the slack machines' dispatch
    ext_solution = solve_powerflow(external, PowerFlowOptions())
    if not ext_solution.converged:
        raise MergeError("external equivalent does not solve standalone")
    ext_alloc = machine_allocation(external, ext_solution)

    external = _prefix_collisions(host, external)
    ext_bus_ids = {b.id for b in external.buses}
    if boundary.external_bus not in ext_bus_ids:
        raise MergeError(f"boundary external bus '{boundary.external_bus}' not in external case")

    # element id collisions are not auto-resolved; ids select event targets
    host_el_ids = ({e.id for e in host.elements()} | {m.id for m in host.machines}
                   | {ld.id for ld in host.loads})
    ext_el_ids = ({e.id for e in external.elements()} | {m.id for m in external.machines}
                  | {ld.id for ld in external.loads})
    clash = host_el_ids & ext_el_ids
    if clash:
        raise MergeError(f"element id collision between host and external: {sorted(clash)}")
    corridor_ids = {el.id for el in boundary.corridor_elements()}
    if corridor_ids & (host_el_ids | ext_el_ids):
        raise MergeError("corridor element ids collide with case elements")

    slack_buses = {b.id for b in external.buses if b.kind == "slack" and b.status}
    slack_extra = boundary.scheduled_interchange_mw
    slack_mb = sum(m.mbase for m in external.machines
                   if m.status and m.bus in slack_buses)
    new_machines = []
    for m in external.machines:
        if m.status and m.bus in slack_buses:
            solved_p = ext_alloc[m.id][0]
            new_machines.append(replace(
                m, p_dispatch=solved_p + slack_extra * m.mbase / slack_mb))
        else:
            new_machines.append(m)
    new_buses = tuple(replace(b, kind="pv") if b.id in slack_buses else b
                      for b in external.buses)

    host_areas = {a.id: a for a in host.areas}
    merged_areas = list(host.areas)
    for a in external.areas:
        if a.id in host_areas:
            if host_areas[a.id].name != a.name:
                raise MergeError(f"area id '{a.id}' exists in both cases with different names")
        else:
            merged_areas.append(a)

    corridor_branches = tuple(el for el in boundary.corridor_elements()
                              if isinstance(el, Branch))
    corridor_xfmrs = tuple(el for el in boundary.corridor_elements()
                           if isinstance(el, Transformer))

    metadata = dict(host.metadata)
    metadata["merge"] = {
        "external_area_ids": [a.id for a in external.areas],
        "external_buses": [b.id for b in external.buses],
        "corridor_ids": sorted(corridor_ids),
        "host_bus": boundary.host_bus,
        "external_bus": boundary.external_bus,
        "scheduled_interchange_mw": boundary.scheduled_interchange_mw,
    }

    merged = NetworkCase(
        base_mva=host.base_mva,
        buses=host.buses + new_buses,
        branches=host.branches + external.branches + corridor_branches,
        transformers=host.transformers + external.transformers + corridor_xfmrs,
        machines=host.machines + tuple(new_machines),
        loads=host.loads + external.loads,
        areas=tuple(merged_areas),
        metadata=metadata,
    )
    violations = validate_case(merged)
    if violations:
        raise MergeError(f"merged case invalid: {violations[0].message}")
    return merged


def split_merged(merged: NetworkCase) -> tuple[NetworkCase, BoundarySpec]:
    """Recover the host case and boundary from a tagged merged case."""
    tag = merged.metadata.get("merge")
    if not tag:
        raise MergeError("case is not tagged as a merged case")
    ext_buses = set(tag["external_buses"])
    corridor_ids = set(tag["corridor_ids"])
    ext_areas = set(tag["external_area_ids"])

    corridor_branch = None
    corridor_xfmrs = []
    for el in merged.elements():
        if el.id in corridor_ids:
            if isinstance(el, Transformer):
                corridor_xfmrs.append(replace(el, status=True))
            else:
                corridor_branch = replace(el, status=True)
    boundary = BoundarySpec(
        host_bus=tag["host_bus"], external_bus=tag["external_bus"],
        interconnection_branch=corridor_branch, transformers=tuple(corridor_xfmrs),
        scheduled_interchange_mw=tag["scheduled_interchange_mw"])

    metadata = {k: v for k, v in merged.metadata.items() if k != "merge"}
    host = NetworkCase(
        base_mva=merged.base_mva,
        buses=tuple(b for b in merged.buses if b.id not in ext_buses),
        branches=tuple(b for b in merged.branches
                       if b.id not in corridor_ids
                       and b.from_bus not in ext_buses and b.to_bus not in ext_buses),
        transformers=tuple(t for t in merged.transformers
                           if t.id not in corridor_ids
                           and t.from_bus not in ext_buses and t.to_bus not in ext_buses),
        machines=tuple(m for m in merged.machines if m.bus not in ext_buses),
        loads=tuple(ld for ld in merged.loads if ld.bus not in ext_buses),
        areas=tuple(a for a in merged.areas if a.id not in ext_areas),
        metadata=metadata,
    )
    return host, boundary


def swap_equivalent(merged: NetworkCase, kind: str,
                    library: dict[str, NetworkCase]) -> NetworkCase:
    """Replace the tagged external area wholesale; the corridor is rebuilt
    with identical parameters. Swapping to the same equivalent returns an
    equal case."""
    if kind not in library:
        raise MergeError(f"equivalent '{kind}' not in library (have {sorted(library)})")
    host, boundary = split_merged(merged)
    return merge_cases(host, library[kind], boundary)
