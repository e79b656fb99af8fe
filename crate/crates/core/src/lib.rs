//! Simulation, exact computation and phase analysis for homogeneous rumor
//! spreading on complete graphs.

pub mod model;
pub mod protocols;
pub mod sampling;

pub use model::{
    derive_trial_seed, validate_spec, CallDistribution, Prediction, ProtocolKind, ProtocolSpec,
    RoundOutcome, ShrinkTerm, SimState, SpecError, TrialResult,
};
pub mod analytic;
pub mod engine;
pub mod oracle;
pub mod stats;
