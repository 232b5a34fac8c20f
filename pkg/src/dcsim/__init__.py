"""Three-stage scheduling and operation of a dispatchable charging station."""

from .core import (
    DeviceKind,
    EfficiencyVector,
    LimitReport,
    PowerFlow,
    StorageDevice,
    TimeGrid,
    check_limits,
    ess,
    feasible_power_range,
    net,
    pev,
    split,
    step_soc,
)
from .distributions import (
    ArrivalSocDistribution,
    EmpiricalDistribution,
    ForecastBundle,
    QuantileForecast,
    convolve,
    distribution_from_quantiles,
    energy_deviation_distribution,
    robust_bounds,
)
from .aggregator import (
    FleetCalendar,
    IllPosedScenarioError,
    TimeVaryingBattery,
    aggregate_energy_limits,
    aggregate_power_limits,
    build_battery,
    step_aggregate_soc,
)
from .scheduler import (
    CostModel,
    DispatchSchedule,
    InfeasibleScheduleError,
    ScheduleProblem,
    ScheduleSolveError,
    chance_constraint_residual,
    evaluate_cost,
    solve_dispatch,
    terminal_ramp_bound,
)
from .operation import (
    AllocationProblem,
    AllocationResult,
    BalancingOutcome,
    PevState,
    allocate,
    balance_realtime,
    clamp_to_device,
    reference_power,
)
from .harness import (
    DayMetrics,
    FleetVehicleSpec,
    MetricsReport,
    OperationRecord,
    Scenario,
    SimulationResult,
    audit_day,
    baseline_prosumption,
    build_day_inputs,
    paper_parking_lot,
    run_days,
    run_week,
    sample_arrival_soc,
    tracking_ratio,
)
from .synthetic import PvParams, SyntheticPv, arrival_soc_histogram, bundle_from_ensemble

__version__ = "0.1.0"
