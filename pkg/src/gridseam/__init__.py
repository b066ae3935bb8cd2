"""gridseam: transient-stability simulation and model validation for
multi-area interconnected grids."""

from .netmodel import (Area, Branch, Bus, CaseError, Load, Machine, NetworkCase,
                       Transformer, Violation, build_ybus, dump_case, islands,
                       load_case, save_case, validate_case)
from .powerflow import (BranchFlow, PowerFlowError, PowerFlowOptions,
                        PowerFlowSolution, StageComparison, branch_flows,
                        compare_stage, machine_allocation, power_balance_pu,
                        solve_powerflow, write_solution_csv)
from .merge import (BoundarySpec, MergeError, build_smtl_equivalent, load_boundary,
                    merge_cases, net_export_mw, split_merged, swap_equivalent)
from .dynamics import (DynamicState, Event, GovernorParams, MachineDynamics,
                       ReserveReport, SimulationOptions, SimulationResult,
                       adjust_governors_for_reserve, bus_frequency, init_dynamics,
                       load_dynamics, load_events, simulate, write_result_csv)
from .ras import (DirectionalPowerRas, MhoZone, OscillationRas, OverloadShedRas,
                  RasAction, RasConfigError, TransferTripRas, UnmeasurableCurrent,
                  apparent_impedance, build_ras, impedance_trajectory,
                  load_ras_config, mho_zone_check)
from .contingency import (BatchResult, ContingencyDef, ContingencyError, RunSummary,
                          compare_runs, group_by_label, parse_contingencies,
                          run_batch, summarize_run, write_batch_outputs)
from .validation import (Alignment, ChannelMetrics, GradeThresholds, Hint,
                         MeasurementError, MeasurementSet, ValidationReport, Windows,
                         align, compute_metrics, default_windows, diagnose,
                         emit_report, grade, identity_mapping, import_measurements,
                         result_to_measurement_csv)

__version__ = "0.1.0"
