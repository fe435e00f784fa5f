"""Software energy measurement and estimation toolkit."""

__version__ = "0.1.0"

from .counters import (
    CounterReading,
    RaplDomainSpec,
    SamplerLogFormat,
    counter_delta,
    parse_sampler_log,
    poll_live_counter,
    raw_to_joules,
    replay_trace,
    wraparound_period,
)
from .models import (
    ClockAlignment,
    OperationCostModel,
    OperationProfile,
    align_clocks,
    calibrate_costs,
    estimate_from_models,
    flops_proxy,
)
from .orchestrator import ExperimentPlan, ExperimentResult, check_tail_state_buffer, measure_idle, run_experiment
from .report import emit_report, parse_report
from .stats import (
    ComparisonReport,
    SampleSizeRequest,
    cliffs_delta,
    compare_traces,
    mann_whitney_u,
    overhead_report,
    required_sample_size,
)
from .trace import (
    EnergyEstimate,
    PowerSample,
    PowerTrace,
    integrate_power_trace,
    net_energy,
    per_run_energy,
    summarize_trace,
    trace_diagnostics,
)

__all__ = [
    "ClockAlignment",
    "ComparisonReport",
    "CounterReading",
    "EnergyEstimate",
    "ExperimentPlan",
    "ExperimentResult",
    "OperationCostModel",
    "OperationProfile",
    "PowerSample",
    "PowerTrace",
    "RaplDomainSpec",
    "SampleSizeRequest",
    "SamplerLogFormat",
    "align_clocks",
    "calibrate_costs",
    "check_tail_state_buffer",
    "cliffs_delta",
    "compare_traces",
    "counter_delta",
    "emit_report",
    "estimate_from_models",
    "flops_proxy",
    "integrate_power_trace",
    "mann_whitney_u",
    "measure_idle",
    "net_energy",
    "overhead_report",
    "parse_report",
    "parse_sampler_log",
    "per_run_energy",
    "poll_live_counter",
    "raw_to_joules",
    "replay_trace",
    "required_sample_size",
    "run_experiment",
    "summarize_trace",
    "trace_diagnostics",
    "wraparound_period",
]
