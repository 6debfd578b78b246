"""Discrete-event simulator for federated-learning bandwidth slicing over a TDM-PON."""

from .config import Scenario, dump_scenario, parse_config, parse_text
from .errors import (ConsistencyError, DegenerateWindow, EmptyCohort, EmptyReport,
                     InfeasibleConfig, InvalidSlice, NoClients, ParseError, PonSliceError,
                     SchedulingInPast, UnknownInvolvement, UnknownOnu)
from .fl_engine import (FlSimulation, FlTaskConfig, MembershipEvent, Policy, accuracy_lookup,
                        build_population, handle_membership_change, load_accuracy_trace,
                        run_round, run_training, select_cohort)
from .metrics import (ComparisonSummary, SyncSummary, TrainingReport, compute_savings,
                      summarize)
from .pon_model import CycleGrantMap, PonConfig, downlink_time, map_slice_to_cycles
from .slice_planner import (ClientProfile, CohortInfo, SliceSpec, build_upload_schedule,
                            compute_delta, plan_slice, validate_round_threshold)
from .traffic_gen import BackgroundConfig, generate_background, sample_interarrival
from .uplink_scheduler import QueueItem, serve_fcfs, serve_sliced

__version__ = "0.1.0"
