//! Election machine allocation: demand forecasting, voting-day queue
//! simulation, indifference-zone scoring, nightly transfer optimization and
//! fixed-versus-dynamic comparison runs.

pub mod cost;
pub mod demand;
pub mod error;
pub mod optimizer;
pub mod planner;
pub mod queueing;
pub mod report;
pub mod resource;
pub mod scenario;
pub mod scoring;
pub mod seed;
pub mod synthetic;

pub use error::{Error, InfeasibilityReport, Result};
pub use resource::{PerResource, Resource, ResourceCombination};
