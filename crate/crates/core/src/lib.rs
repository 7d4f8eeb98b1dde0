//! Differentially private stochastic gradient descent for convex losses whose
//! subgradients are α-Hölder continuous.
//!
//! The crate covers two private training pipelines:
//!
//! * output perturbation: run projected SGD, then add Gaussian noise scaled to
//!   a high-probability uniform argument stability (UAS) bound;
//! * gradient perturbation: add Gaussian noise to every stochastic subgradient
//!   on a ball-constrained domain, accounted with Rényi DP.
//!
//! Modules are layered bottom-up: [`losses`] → [`optimizer`] → [`stability`] /
//! [`privacy`] → [`trainers`] → [`harness`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod losses;
pub mod optimizer;
pub mod privacy;
pub mod rng;
pub mod stability;
pub mod trainers;
mod vector;

pub use error::{Error, Result};
pub use harness::{Dataset, DatasetFormat, ExperimentKind, ExperimentSpec, ReportRow};
pub use losses::{Example, LossEnvelope, LossFamily, LossSpec};
pub use optimizer::{DomainConstraint, GaussianNoise, SgdRun, TrainConfig};
pub use privacy::{NoisePlan, PrivacyBudget, RdpPoint, SensitivityBound};
pub use stability::{StabilityBound, StabilityConstants, UasEstimate};
pub use trainers::{AuditRecord, PerturbationMode, PrivateModel};
