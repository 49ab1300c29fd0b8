//! Federated simulation with sign-compressed uplinks.
//!
//! Each round samples `ceil(q n)` clients, runs `E` local SGD steps on each,
//! compresses the accumulated update and applies
//! `x <- x - eta * gamma * mean(decoded)` on the server (`x <- x - eta * mean`
//! for the DP variant, whose messages already carry the client stepsize).

mod engine;
mod metrics;
pub mod theory;

pub use engine::{local_update, run, RunConfig, RunOutput, ServerLr, Simulation, UpdateSink};
pub use metrics::{to_csv, RoundMetrics, CSV_HEADER};
pub use theory::{
    convergence_bound, convergence_terms, rate_schedule, sigma_threshold_inf, BoundParams, BoundTerms, Schedule,
};
