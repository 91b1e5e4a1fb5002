"""Stability of scheduled multiaccess communication with random coding.

Analytical stability/transience regions for slot-scheduled multiaccess
channels, plus a discrete-time simulator of the underlying Markov chain
and drift-based verdict tooling to check theory against sample paths.
"""

from .model import (
    CapacityError,
    ClassIndex,
    DEFAULT_SCHEDULE_CAP,
    QuantumExtrema,
    Schedule,
    ServiceClass,
    SystemParams,
    ceil_to_quantum,
    effective_noise,
    enumerate_schedules,
    quantum_extrema,
    quantum_multiple,
    schedule_count,
    schedule_quantum,
    service_quantum,
    service_requirement,
)
from .regions import (
    CapacityCurve,
    EqualPowerThreshold,
    InnerCheck,
    MembershipResult,
    OuterCheck,
    RateVector,
    RegionVerdict,
    ScheduleMeasure,
    alphabet_capacity_curve,
    check_nonidling_inner,
    check_nonidling_transient,
    equal_power_threshold,
    inner_rate_bound,
    inner_scaling,
    large_k_threshold,
    outer_rate_bound,
    region_membership,
    region_verdict,
    signal_duration,
    to_nat_rates,
    transient_scaling,
)
from .sim import (
    ArrivalModel,
    Bernoulli,
    DeterministicBatch,
    Empirical,
    Message,
    NonIdling,
    NonIdlingState,
    Poisson,
    RunConfig,
    RunResult,
    StateIndependent,
    SubclassState,
    Trace,
    apply_slot,
    run,
    run_replications,
    sample_arrivals,
    select_nonidling,
    select_state_independent,
    subclass_arrival_means,
)
from .analysis import (
    DriftReport,
    SlopeFit,
    StabilityVerdict,
    empirical_drift,
    fit_slope,
    lyapunov_geometric,
    lyapunov_quantum_count,
    lyapunov_subclass,
    lyapunov_value,
    lyapunov_workload,
    quantized_residual,
    quantum_count_norm,
    stability_verdict,
    subclass_quantum_norms,
    subset_residual,
    summarize_run,
    workload_norm,
)

__version__ = "0.1.0"
