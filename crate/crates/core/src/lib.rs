//! Federated model distillation with noise-free differential privacy.
//!
//! Modules, bottom-up:
//!
//! - [`rng`] and [`sampling`]: labeled seeded streams and the one-shot
//!   subset selection that is the whole privacy mechanism.
//! - [`accountant`]: closed-form (ε, δ) for both sampling schemes, their
//!   ordering, and Gaussian calibration for the local-DP baseline.
//! - [`oracle`]: brute-force hockey-stick audit of those claims.
//! - [`learner`]: a small MLP with analytic gradients and the three
//!   knowledge-transfer losses.
//! - [`datagen`]: synthetic Gaussian-blob tasks with IID and non-IID splits.
//! - [`federation`]: the initialization and collaboration rounds.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix the scalar
//! to `f64`, which is what the simulator uses.

pub mod accountant;
pub mod datagen;
pub mod federation;
pub mod learner;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod scalar;

pub use accountant::{PrivacyBudget, SamplingScheme};
pub use num_rational::BigRational;
pub use scalar::Real;

pub type Budget = PrivacyBudget<f64>;
pub type ExactDistribution = oracle::OutcomeDistribution<num_rational::BigRational>;
pub type FloatDistribution = oracle::OutcomeDistribution<f64>;
pub type Mlp = learner::MlpModel<f64>;
pub type Knowledge = learner::KnowledgeVector<f64>;
pub type TrainSettings = learner::TrainSpec<f64>;
