//! Seeded multi-trial experiments, contraction-rate reports and the
//! property suite.

mod config;
mod experiment;
mod properties;
mod rates;
mod stats;

pub use config::{
    parse_policy_set, Arm, Assertion, ExperimentConfig, ExperimentKind, OperatorKind,
};
pub use experiment::{
    run_experiment, summarize, uniform_dataset, ArmSummary, AssertionOutcome, ExperimentReport,
    TrialRow,
};
pub use properties::{
    property_names, property_suite, run_properties, standard_battery, BatteryEntry, GreedyFactory,
    PropertyLine, PropertyReport, SuiteOptions, CONVERGENCE_TOL, EXPONENTIAL_HORIZONS,
    FIXED_POINT_TOL, HORIZONS, INEQUALITY_TOL, MATRIX_TOL, ORACLE_EPS, POLICY_SET_SIZE,
    RANDOM_BATTERY_SIZE, SUBOPTIMAL_TOL,
};
pub use rates::{rate_report, render_rates, RateRow};
pub use stats::{log_slope, median, quantile_sorted, Summary};
