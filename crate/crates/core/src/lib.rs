//! Least-squares estimation of linear panel regressions with interactive
//! fixed effects, with analytic and jackknife bias correction, bias-corrected
//! Wald, LR and LM tests, and a Monte Carlo harness for dynamic panels.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod extensions;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod panel;
pub mod profile;
pub mod simulation;

pub use error::{Error, Result};
pub use estimator::{minimize_profile, restricted_minimize, FitResult, OptimizerConfig};
pub use linalg::{Matrix, Vector};
pub use panel::{ModelSpec, PanelDataset, RestrictionSpec};
