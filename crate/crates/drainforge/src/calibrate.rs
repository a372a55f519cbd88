//! Turns real-world power measurements into model parameters.
//!
//! Drains in the model are abstract battery units per message. To ground
//! them, measure a device's baseline consumption rate, its rate under
//! strain, and the message throughput during the strain: the marginal cost
//! of one message is the rate increase divided by the throughput. Batteries
//! drain linearly, so lifetime is capacity over rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Measurements of one device, unit-agnostic (any consistent pair of
/// battery and time units works).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    /// Consumption rate when idle-but-on, battery units per second.
    pub baseline_rate: f64,
    /// Consumption rate under the DoS strain.
    pub strain_rate: f64,
    /// Messages processed per second during the strain.
    pub msgs_per_second: f64,
    /// Total battery capacity.
    pub battery_capacity: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("strain rate {strain} is below baseline {baseline}")]
    NegativeDelta { strain: f64, baseline: f64 },
    #[error("msgs_per_second must be > 0, got {0}")]
    ZeroThroughput(f64),
    #[error("drain rate must be > 0, got {0}")]
    ZeroRate(f64),
}

/// Marginal battery cost of one message: `(strain - baseline) / throughput`.
pub fn drain_per_message(input: &CalibrationInput) -> Result<f64, CalibrationError> {
    if input.msgs_per_second <= 0.0 {
        return Err(CalibrationError::ZeroThroughput(input.msgs_per_second));
    }
    if input.strain_rate < input.baseline_rate {
        return Err(CalibrationError::NegativeDelta {
            strain: input.strain_rate,
            baseline: input.baseline_rate,
        });
    }
    Ok((input.strain_rate - input.baseline_rate) / input.msgs_per_second)
}

/// Time until a linearly-drained battery is empty.
pub fn lifetime_estimate(capacity: f64, mean_drain_rate: f64) -> Result<f64, CalibrationError> {
    if mean_drain_rate <= 0.0 {
        return Err(CalibrationError::ZeroRate(mean_drain_rate));
    }
    Ok(capacity / mean_drain_rate)
}
