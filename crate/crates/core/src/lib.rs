//! Least-costly space-filling input design for nonlinear system
//! identification.
//!
//! The pipeline: a multisine ([`signals`]) drives a mass-spring-damper
//! ([`plant`]); the Gaussian-process V-cost ([`gp`]) of the resulting
//! feature-space dataset is minimized, or kept below a threshold at minimum
//! input power ([`design`]); neural output-error models ([`ident`]) identified
//! from the designed datasets are compared in a Monte Carlo study
//! ([`harness`]).

pub mod design;
pub mod error;
pub mod gp;
pub mod harness;
pub mod ident;
pub mod plant;
pub mod seed;
pub mod signals;
pub mod spacefill;

pub use design::{
    compute_gamma, evaluate_design, fd_gradient, solve_classical, solve_least_costly, DesignMode, DesignOutcome,
    DesignProblem, DesignSettings,
};
pub use error::{Error, Result};
pub use gp::{gram_factorize, posterior_mean, posterior_variance, v_cost, GpConfig, Points};
pub use harness::{run_study, write_report, Profile, StudyConfig, StudyResult};
pub use ident::{noe_jacobian, noe_simulate, rmse, train_lm, NoeModel, TrainConfig};
pub use plant::{integrate_rk4, linearize_msd, simulate_dataset, Dataset, IoModel, MsdParams};
pub use signals::{multisine_sequence, signal_power, MultisineConfig, SignalParams, TestSignalSpec};
pub use spacefill::{build_anchor_grid, covering_radius, AnchorGrid, RegionOfInterest};
