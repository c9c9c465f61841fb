//! The utility's net energy metering tariff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NEM X tariff: imports billed at `pi_plus`, exports credited at `pi_minus`.
/// There is no fixed connection charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NemTariff {
    pi_plus: f64,
    pi_minus: f64,
}

impl NemTariff {
    /// Requires `pi_plus >= pi_minus >= 0`, which rules out risk-free
    /// arbitrage between the two legs.
    pub fn new(pi_plus: f64, pi_minus: f64) -> Result<Self> {
        if !(pi_minus.is_finite() && pi_minus >= 0.0) {
            return Err(Error::invalid(
                "pi_minus",
                format!("must be finite and >= 0, got {pi_minus}"),
            ));
        }
        if !(pi_plus.is_finite() && pi_plus >= pi_minus) {
            return Err(Error::invalid(
                "pi_plus",
                format!("buy rate {pi_plus} must be >= sell rate {pi_minus}"),
            ));
        }
        Ok(Self { pi_plus, pi_minus })
    }

    pub fn pi_plus(&self) -> f64 {
        self.pi_plus
    }

    pub fn pi_minus(&self) -> f64 {
        self.pi_minus
    }

    /// Rate applied to net consumption `z`; `z = 0` is billed on the import side.
    pub fn rate(&self, z: f64) -> f64 {
        if z >= 0.0 {
            self.pi_plus
        } else {
            self.pi_minus
        }
    }

    /// Payment to the utility for net consumption `z` (negative = credit).
    pub fn payment(&self, z: f64) -> f64 {
        self.rate(z) * z
    }
}

/// Free-function form of [`NemTariff::rate`].
pub fn nem_rate(t: &NemTariff, z: f64) -> f64 {
    t.rate(z)
}

/// Free-function form of [`NemTariff::payment`].
pub fn nem_payment(t: &NemTariff, z: f64) -> f64 {
    t.payment(z)
}
