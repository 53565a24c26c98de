//! Simulated designs, the Monte Carlo harness and the expansion diagnostic.

pub mod dgp;
pub mod expansion;
pub mod montecarlo;
pub mod tables;

pub use dgp::{simulate_ar1, simulate_endogenous, DgpConfig, EndogenousDgp, ErrorDist, Truth};
pub use expansion::{expansion_diagnostic, ExpansionDiagnostic};
pub use montecarlo::{
    bias_fraction, mc_estimators, mc_tests, run_mc, BandwidthChoice, BiasFractionCell, EstimatorKind, McConfig,
    McSummary,
};
pub use tables::{preset_configs, run_custom, run_preset, run_table, TableOutput, TablePreset};
