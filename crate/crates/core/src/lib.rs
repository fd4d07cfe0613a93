//! Intent-driven provisioning of congestion-prediction xApps for a simulated
//! O-RAN Near-RT RIC.
//!
//! The pipeline runs operator intent → MAC telemetry → labeled dataset →
//! latency-budgeted model selection → template-constrained xApp → closed-loop
//! execution with PRB-reservation control actions.

pub mod telemetry;
pub mod intent;
pub mod curation;
pub mod mlengine;
pub mod ricsim;
pub mod synthesis;
pub mod orchestrator;
pub mod cli;
