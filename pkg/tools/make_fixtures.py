#!/usr/bin/env python3
"""Regenerate the shipped desk-scale fixture set under src/gridseam/data/.

The desk system is a synthetic seven-area interconnection: a six-area host
chain (GUA-SLV-HON-NIC-CR-PAN) plus a Mexico equivalent joined at the
GUA-1 boundary corridor. Numbers are calibrated so the shipped contingency
suite exercises the overload RAS staging paths and the equivalent-contrast
comparisons.
"""
import json
from pathlib import Path

from gridseam import (Area, Branch, Bus, Load, Machine, NetworkCase, Transformer,
                      dump_case, load_boundary, merge_cases, save_case, validate_case)

DATA = Path(__file__).resolve().parent.parent / "src" / "gridseam" / "data"

AREAS = [("GUA", "Guatemala"), ("SLV", "El Salvador"), ("HON", "Honduras"),
         ("NIC", "Nicaragua"), ("CR", "Costa Rica"), ("PAN", "Panama")]


def host_case() -> NetworkCase:
    buses = [
        Bus("GUA-1", "GUA", 230.0, kind="pq"),
        Bus("GUA-2", "GUA", 230.0, kind="slack", v_set=1.02),
        Bus("GUA-3", "GUA", 230.0, kind="pv", v_set=1.01),
        Bus("GUA-4", "GUA", 230.0, kind="pq"),
        Bus("SLV-1", "SLV", 230.0, kind="pq"),
        Bus("SLV-2", "SLV", 230.0, kind="pv", v_set=1.01),
        Bus("SLV-3", "SLV", 230.0, kind="pq"),
        Bus("HON-1", "HON", 230.0, kind="pq"),
        Bus("HON-2", "HON", 230.0, kind="pv", v_set=1.01),
        Bus("HON-3", "HON", 230.0, kind="pq"),
        Bus("NIC-1", "NIC", 230.0, kind="pv", v_set=1.0),
        Bus("NIC-2", "NIC", 230.0, kind="pq"),
        Bus("NIC-3", "NIC", 230.0, kind="pv", v_set=1.0),
        Bus("NIC-4", "NIC", 230.0, kind="pv", v_set=1.0),
        Bus("CR-1", "CR", 230.0, kind="pq"),
        Bus("CR-2", "CR", 230.0, kind="pq"),
        Bus("CR-3", "CR", 230.0, kind="pv", v_set=1.01),
        Bus("PAN-1", "PAN", 230.0, kind="pv", v_set=1.0),
        Bus("PAN-2", "PAN", 230.0, kind="pv", v_set=1.01),
        Bus("PAN-3", "PAN", 230.0, kind="pq"),
    ]

    def br(bid, f, t, r, x, b, rating, ckt="1"):
        return Branch(id=bid, from_bus=f, to_bus=t, r=r, x=x, b_total=b,
                      rating=rating, circuit_id=ckt)

    branches = [
        br("GUA1-GUA2", "GUA-1", "GUA-2", 0.005, 0.050, 0.02, 250),
        br("GUA2-GUA3", "GUA-2", "GUA-3", 0.006, 0.060, 0.02, 200),
        br("GUA1-GUA4", "GUA-1", "GUA-4", 0.007, 0.070, 0.02, 150),
        br("GUA3-GUA4", "GUA-3", "GUA-4", 0.008, 0.080, 0.02, 150),
        br("GUA1-SLV1", "GUA-1", "SLV-1", 0.009, 0.090, 0.03, 200),
        br("SLV1-SLV2", "SLV-1", "SLV-2", 0.005, 0.050, 0.02, 150),
        br("SLV1-SLV3", "SLV-1", "SLV-3", 0.006, 0.060, 0.01, 100),
        br("SLV2-HON1", "SLV-2", "HON-1", 0.009, 0.090, 0.03, 180),
        br("HON1-HON2", "HON-1", "HON-2", 0.005, 0.050, 0.02, 150),
        br("HON1-HON3", "HON-1", "HON-3", 0.006, 0.060, 0.01, 100),
        br("HON2-NIC3", "HON-2", "NIC-3", 0.010, 0.100, 0.03, 180),
        br("NIC3-NIC2", "NIC-3", "NIC-2", 0.015, 0.150, 0.02, 120),
        br("NI", "NIC-1", "NIC-3", 0.006, 0.060, 0.02, 105),
        br("NIC4-NIC1", "NIC-4", "NIC-1", 0.004, 0.040, 0.01, 100),
        br("NIC1-CR1", "NIC-1", "CR-1", 0.008, 0.080, 0.03, 150),
        br("NIC2-CR2", "NIC-2", "CR-2", 0.010, 0.100, 0.03, 150),
        br("CR1-CR3", "CR-1", "CR-3", 0.005, 0.050, 0.02, 150),
        br("CR2-CR3", "CR-2", "CR-3", 0.006, 0.060, 0.02, 150),
        br("CR1-CR2", "CR-1", "CR-2", 0.007, 0.070, 0.01, 100),
        br("CR3-PAN1", "CR-3", "PAN-1", 0.008, 0.080, 0.03, 200),
        br("PAN1-PAN2", "PAN-1", "PAN-2", 0.005, 0.050, 0.02, 250),
        br("PI", "PAN-1", "PAN-3", 0.009, 0.090, 0.02, 180),
    ]

    machines = [
        Machine("G1", "GUA-2", p_dispatch=100.0, q_min=-250, q_max=250, mbase=400),
        Machine("G2", "GUA-3", p_dispatch=120.0, q_min=-120, q_max=120, mbase=200),
        Machine("S1", "SLV-2", p_dispatch=90.0, q_min=-90, q_max=90, mbase=150),
        Machine("H1", "HON-2", p_dispatch=80.0, q_min=-90, q_max=90, mbase=150),
        Machine("N1", "NIC-3", p_dispatch=25.0, q_min=-60, q_max=60, mbase=100),
        Machine("N2", "NIC-1", p_dispatch=35.0, q_min=-50, q_max=50, mbase=80),
        Machine("N3", "NIC-4", p_dispatch=25.0, q_min=-40, q_max=40, mbase=60),
        Machine("C1", "CR-3", p_dispatch=110.0, q_min=-120, q_max=120, mbase=200),
        Machine("P1", "PAN-1", p_dispatch=60.0, q_min=-90, q_max=90, mbase=150),
        Machine("P2", "PAN-2", p_dispatch=230.0, q_min=-180, q_max=180, mbase=300),
    ]

    loads = [
        Load("L-GUA1", "GUA-1", p=90.0, q=18.0),
        Load("L-GUA3", "GUA-3", p=60.0, q=12.0),
        Load("L-GUA4", "GUA-4", p=110.0, q=22.0),
        Load("L-SLV1", "SLV-1", p=120.0, q=24.0),
        Load("L-SLV3", "SLV-3", p=40.0, q=8.0),
        Load("L-HON1", "HON-1", p=120.0, q=24.0),
        Load("L-HON3", "HON-3", p=50.0, q=10.0),
        Load("L-NIC1", "NIC-1", p=10.0, q=2.0),
        Load("L-NIC3", "NIC-3", p=100.0, q=20.0),
        Load("L-CR1", "CR-1", p=70.0, q=14.0),
        Load("L-CR2", "CR-2", p=60.0, q=12.0),
        Load("L-PAN1", "PAN-1", p=70.0, q=14.0, sheddable_block=35.0),
        Load("L-PAN3", "PAN-3", p=150.0, q=30.0),
    ]

    return NetworkCase(
        base_mva=100.0,
        buses=tuple(buses),
        branches=tuple(branches),
        machines=tuple(machines),
        loads=tuple(loads),
        areas=tuple(Area(i, n) for i, n in AREAS),
    )


def smtl_equivalent() -> NetworkCase:
    return NetworkCase(
        base_mva=100.0,
        areas=(Area("MEX", "Mexico"),),
        buses=(Bus("MEX-1", "MEX", 400.0, kind="slack", v_set=1.03),),
        machines=(Machine("MEX-G1", "MEX-1", p_dispatch=1020.0,
                          q_min=-660, q_max=660, mbase=1100),),
        loads=(Load("MEX-L1", "MEX-1", p=500.0, q=100.0),
               Load("MEX-L2", "MEX-1", p=400.0, q=80.0)),
    )


def detailed_equivalent() -> NetworkCase:
    def br(bid, f, t, x, b, rating):
        return Branch(id=bid, from_bus=f, to_bus=t, r=0.0, x=x, b_total=b, rating=rating)

    return NetworkCase(
        base_mva=100.0,
        areas=(Area("MEX", "Mexico"),),
        buses=(
            Bus("MEX-1", "MEX", 400.0, kind="pq"),
            Bus("MEX-2", "MEX", 400.0, kind="slack", v_set=1.03),
            Bus("MEX-3", "MEX", 400.0, kind="pv", v_set=1.03),
            Bus("MEX-4", "MEX", 400.0, kind="pq"),
            Bus("MEX-5", "MEX", 400.0, kind="pv", v_set=1.02),
        ),
        branches=(
            br("MEX1-MEX2", "MEX-1", "MEX-2", 0.015, 0.02, 600),
            br("MEX1-MEX3", "MEX-1", "MEX-3", 0.015, 0.02, 600),
            br("MEX2-MEX4", "MEX-2", "MEX-4", 0.030, 0.02, 500),
            br("MEX3-MEX5", "MEX-3", "MEX-5", 0.030, 0.02, 400),
            br("MEX4-MEX5", "MEX-4", "MEX-5", 0.040, 0.01, 300),
        ),
        machines=(
            Machine("MEX-G1", "MEX-2", p_dispatch=400.0, q_min=-400, q_max=400, mbase=600),
            Machine("MEX-G2", "MEX-3", p_dispatch=370.0, q_min=-400, q_max=400, mbase=600),
            Machine("MEX-G3", "MEX-5", p_dispatch=250.0, q_min=-250, q_max=250, mbase=400),
        ),
        loads=(
            Load("MEX-L1", "MEX-4", p=500.0, q=100.0),
            Load("MEX-L2", "MEX-5", p=250.0, q=50.0),
            Load("MEX-L3", "MEX-1", p=150.0, q=30.0),
        ),
    )


BOUNDARY = {
    "host_bus": "GUA-1",
    "external_bus": "MEX-1",
    "scheduled_interchange_mw": 120.0,
    "interconnection_branch": {
        "id": "MEXGUA-L1", "from_bus": "MEX-1", "to_bus": "GUA-1",
        "r": 0.003, "x": 0.03, "b_total": 0.02, "rating": 400, "circuit_id": "L1"},
    "transformers": [
        {"id": "MEXGUA-T1", "from_bus": "MEX-1", "to_bus": "GUA-1",
         "r": 0.002, "x": 0.10, "rating": 250, "circuit_id": "1", "tap_ratio": 1.0},
        {"id": "MEXGUA-T2", "from_bus": "MEX-1", "to_bus": "GUA-1",
         "r": 0.002, "x": 0.10, "rating": 250, "circuit_id": "2", "tap_ratio": 1.0},
    ],
}


def dynamics_records() -> list:
    gov = lambda r, tg, pmax, pmin=0.0: {"r": r, "t_g": tg, "p_max": pmax, "p_min": pmin}
    return [
        {"machine_id": "G1", "h": 5.0, "d": 1.5, "xdp": 0.25, "governor": gov(0.05, 0.5, 0.72)},
        {"machine_id": "G2", "h": 4.0, "d": 1.5, "xdp": 0.25, "governor": gov(0.05, 0.5, 0.90)},
        {"machine_id": "S1", "h": 3.5, "d": 1.5, "xdp": 0.28, "governor": gov(0.05, 0.5, 0.90)},
        {"machine_id": "H1", "h": 3.5, "d": 1.5, "xdp": 0.28, "governor": gov(0.05, 0.5, 0.87)},
        {"machine_id": "N1", "h": 3.0, "d": 1.5, "xdp": 0.30, "governor": gov(0.05, 0.5, 0.80)},
        {"machine_id": "N2", "h": 3.0, "d": 1.5, "xdp": 0.30, "governor": gov(0.05, 0.5, 0.917)},
        {"machine_id": "N3", "h": 2.5, "d": 1.5, "xdp": 0.30, "governor": gov(0.05, 0.5, 0.833)},
        {"machine_id": "C1", "h": 4.0, "d": 1.5, "xdp": 0.25, "governor": gov(0.05, 0.5, 0.85)},
        {"machine_id": "P1", "h": 3.0, "d": 1.5, "xdp": 0.28, "governor": gov(0.05, 0.5, 0.70)},
        {"machine_id": "P2", "h": 4.5, "d": 1.5, "xdp": 0.25, "governor": gov(0.05, 0.5, 0.80)},
        # Mexico SMTL equivalent
        {"machine_id": "MEX-G1", "h": 3.0, "d": 1.5, "xdp": 0.39,
         "governor": gov(0.05, 0.4, 1.05, 0.40)},
        # Mexico detailed equivalent (same MEX-G1 id resolves per equivalent)
        {"machine_id": "MEX-G2", "h": 4.0, "d": 1.5, "xdp": 0.25,
         "governor": gov(0.05, 0.4, 1.05, 0.30)},
        {"machine_id": "MEX-G3", "h": 4.0, "d": 1.5, "xdp": 0.25,
         "governor": gov(0.05, 0.4, 1.05, 0.30)},
    ]


def dynamics_records_detailed_g1() -> dict:
    """MEX-G1 entry when the detailed equivalent is merged (600 MVA unit)."""
    return {"machine_id": "MEX-G1", "h": 4.0, "d": 1.5, "xdp": 0.25,
            "governor": {"r": 0.05, "t_g": 0.4, "p_max": 1.05, "p_min": 0.30}}


RAS_CONFIG = [
    {
        "kind": "transfer_trip", "id": "MEXGUA-TT",
        "corridor": ["MEXGUA-L1", "MEXGUA-T1", "MEXGUA-T2"],
        "voltage_bus": "MEX-1",
        "p_threshold_mw": 250.0, "v_threshold_pu": 0.88, "pickup_s": 0.3,
        "trip": ["MEXGUA-L1", "MEXGUA-T1", "MEXGUA-T2"],
    },
    {
        # "several seconds" is not quantified anywhere; 5 s is the shipped choice
        "kind": "oscillation", "id": "MEXGUA-OSC",
        "corridor": ["MEXGUA-L1", "MEXGUA-T1", "MEXGUA-T2"],
        "amplitude_threshold_mw": 80.0, "persist_s": 5.0, "window_s": 6.0,
        "trip": ["MEXGUA-L1", "MEXGUA-T1", "MEXGUA-T2"],
    },
    {
        "kind": "overload_shed", "id": "NI-RAS",
        "branch": "NI", "overload_factor": 1.0,
        "stage1_delay_s": 3.0, "shed_block_mw": 30.0, "area": "NIC",
        "stage2_delay_s": 2.0, "tie_branch": "NIC1-CR1",
    },
    {
        "kind": "directional_power", "id": "PANCR-DIR",
        "interface": [{"element": "CR3-PAN1", "sign": -1.0}],
        "p_threshold_mw": 260.0, "pickup_s": 0.5,
        "actions": [{"action": "trip_machine", "target": "P1"}],
    },
]


def contingencies() -> list:
    def fault(bus, t0=1.0, dur=0.08):
        return [{"t": t0, "action": "apply_fault", "target": bus},
                {"t": t0 + dur, "action": "clear_fault", "target": bus}]

    def trips(*ids, t0=1.0):
        return [{"t": t0, "action": "trip_branch", "target": i} for i in ids]

    return [
        {"id": "MEX-01", "label": "MEX", "events": fault("MEX-1", dur=0.10)},
        {"id": "MEX-02", "label": "MEX",
         "events": trips("MEXGUA-L1", "MEXGUA-T1", "MEXGUA-T2"),
         "overrides": {"duration": 30.0}},
        {"id": "MEX-03", "label": "MEX", "events": trips("MEXGUA-T2")},
        {"id": "MEX-04", "label": "MEX",
         "events": [{"t": 1.0, "action": "shed_load", "target": "MEX-L2", "mw": 200.0}]},
        {"id": "GUA-01", "label": "GUA", "events": fault("GUA-1")},
        {"id": "GUA-02", "label": "GUA", "events": fault("GUA-2")},
        {"id": "GUA-03", "label": "GUA", "events": fault("GUA-3")},
        {"id": "GUA-04", "label": "GUA", "events": fault("GUA-4")},
        {"id": "GUA-05", "label": "GUA", "events": trips("GUA1-GUA2")},
        {"id": "GUA-06", "label": "GUA", "events": trips("GUA3-GUA4")},
        {"id": "GUA-07", "label": "GUA", "events": trips("GUA1-SLV1"),
         "overrides": {"duration": 30.0}},
        {"id": "GUA-08", "label": "GUA",
         "events": [{"t": 1.0, "action": "trip_machine", "target": "G2"}],
         "overrides": {"duration": 30.0}},
        {"id": "GUA-09", "label": "GUA",
         "events": fault("GUA-2") + trips("GUA2-GUA3", t0=1.08)},
        {"id": "GUA-10", "label": "GUA",
         "events": [{"t": 1.0, "action": "trip_machine", "target": "G1"}],
         "overrides": {"duration": 30.0}},
        {"id": "PAN-01", "label": "PAN", "events": trips("PI"),
         "overrides": {"duration": 75.0}},
        {"id": "PAN-02", "label": "PAN", "events": fault("PAN-1", dur=0.10)},
        {"id": "SLV-01", "label": "SLV",
         "events": [{"t": 1.0, "action": "trip_machine", "target": "S1"}],
         "overrides": {"duration": 30.0}},
    ]


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "equivalents").mkdir(exist_ok=True)

    host = host_case()
    smtl = smtl_equivalent()
    detailed = detailed_equivalent()
    for name, case in (("host", host), ("smtl", smtl), ("detailed", detailed)):
        problems = validate_case(case)
        assert not problems, (name, problems)

    save_case(host, DATA / "host_ca.json")
    save_case(smtl, DATA / "equivalents" / "smtl.json")
    save_case(detailed, DATA / "equivalents" / "detailed.json")
    (DATA / "boundary.json").write_text(json.dumps(BOUNDARY, indent=2) + "\n")

    merged = merge_cases(host, smtl, load_boundary(BOUNDARY))
    save_case(merged, DATA / "desk_case.json")

    (DATA / "dynamics.json").write_text(json.dumps(dynamics_records(), indent=2) + "\n")
    (DATA / "dynamics_detailed.json").write_text(
        json.dumps([r for r in dynamics_records() if r["machine_id"] != "MEX-G1"]
                   + [dynamics_records_detailed_g1()], indent=2) + "\n")
    (DATA / "ras.json").write_text(json.dumps(RAS_CONFIG, indent=2) + "\n")
    (DATA / "contingencies.json").write_text(json.dumps(contingencies(), indent=2) + "\n")
    (DATA / "event_pan01.json").write_text(json.dumps(
        [{"t": 1.0, "action": "trip_branch", "target": "PI"}], indent=2) + "\n")
    print(f"fixtures written to {DATA}")


if __name__ == "__main__":
    main()
