"""Desk-scale demand-response testbed.

Regression power models fitted from system-utilization logs, probabilistic
location/power/running profiles maintained by simulated laptop agents, and a
real-time coordinator that schedules curtailment events over a persistent
pub/sub bus.
"""

from .power_model import (
    EvalReport,
    FeatureSpec,
    MetricsSample,
    PowerModel,
    Term,
    best_subset_search,
    builtin_spec,
    cross_validate,
    evaluate,
    filter_outliers,
    fit,
    ingest_metrics_log,
    predict,
    train_test_split,
)
from .profiles import (
    ActivityRecord,
    AgentProfiler,
    LocationFix,
    LocationProfile,
    PowerProfile,
    PowerReading,
    init_profiles,
)
from .agents import AgentDescriptor, SimAgent, WorkloadPhase, apply_power_mode
from .bus import BusClient, BusServer, MessageBus
from .coordinator import (
    Coordinator,
    DREvent,
    DRSchedule,
    SupplyTrace,
    estimate_contribution,
    geo_distance,
    monitor_supply,
)
from .experiment import paper_shape_scenario, run_experiment
from .simclock import SimScheduler, TimerThread, VirtualClock, WallClock

__version__ = "0.1.0"
