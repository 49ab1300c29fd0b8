use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "round,objective,grad_norm_sq,avg_local_grad_sq,uplink_bits,sigma";

/// Telemetry for one round; row 0 describes the starting point.
///
/// `avg_local_grad_sq` is the running mean of `||grad f||^2` at the server
/// iterates `x_0 .. x_{t-1}`, the observable stand-in for averaging over the
/// (unobserved) mean of the clients' local iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub objective: f64,
    pub grad_norm_sq: f64,
    pub avg_local_grad_sq: f64,
    pub uplink_bits: u64,
    pub sigma: f64,
}

impl RoundMetrics {
    /// One CSV row without the trailing newline. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round, self.objective, self.grad_norm_sq, self.avg_local_grad_sq, self.uplink_bits, self.sigma
        )
    }
}

pub fn to_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (metrics.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(out, "{}", m.csv_row());
    }
    out
}
