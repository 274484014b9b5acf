//! Certified lower bounds on the minimum adversarial distortion of fully
//! connected ReLU networks under ℓ1, ℓ2 and ℓ∞ perturbations.
//!
//! Two certificate families are provided:
//!
//! - [`fastlin`]: linear relaxation of every uncertain ReLU, propagated layer
//!   by layer into closed-form bounds on the classification margin;
//! - [`fastlip`]: a worst-case bound on each gradient coordinate over the
//!   perturbation set, aggregated into a local Lipschitz constant.
//!
//! [`certifier`] turns either into a maximal certified radius via bisection,
//! and [`oracle`] holds independent reference checks (grid search, activation
//! pattern enumeration, sampling, a simple attack).

pub mod certifier;
pub mod error;
pub mod fastlin;
pub mod fastlip;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod region;
pub mod report;

pub use certifier::{Certificate, Method, SearchConfig, TargetMode};
pub use error::{Error, Result};
pub use fastlin::{LayerBounds, NeuronPartition};
pub use linalg::{Matrix, NormOrder};
pub use model::{InputFile, Layer, MarginNetwork, Network};
pub use region::Perturbation;
