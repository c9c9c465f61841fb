//! Utility of consumption.
//!
//! Each device carries a concave, non-decreasing utility; a member's bundle
//! is additive over its devices. The shipped family is the capped quadratic
//! `αd − βd²/2` (constant `α²/2β` beyond the satiation point `α/β`). Solvers
//! only need the [`ConcaveUtility`] interface, so other concave forms can be
//! plugged into [`total_demand`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A concave, non-decreasing utility with a non-increasing marginal.
pub trait ConcaveUtility {
    /// Utility of consuming `d` kWh, in dollars.
    fn value(&self, d: f64) -> f64;
    /// Marginal utility at `d`, in $/kWh; non-negative and non-increasing.
    fn marginal(&self, d: f64) -> f64;
    /// `(d_lo, d_hi)` consumption bounds.
    fn bounds(&self) -> (f64, f64);
    /// Generalized inverse of the marginal, clipped to the bounds.
    fn demand(&self, price: f64) -> f64;
    /// Smallest price at which demand sits at the lower bound.
    fn choke_price(&self) -> f64;
}

/// Sum of clipped demands of a slice of devices at a common price.
pub fn total_demand<U: ConcaveUtility>(devices: &[U], price: f64) -> f64 {
    devices.iter().map(|u| u.demand(price)).sum()
}

/// Capped quadratic utility of a single device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceUtility {
    alpha: f64,
    beta: f64,
    d_lo: f64,
    d_hi: f64,
}

impl DeviceUtility {
    pub fn new(alpha: f64, beta: f64, d_lo: f64, d_hi: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid("beta", format!("must be finite and > 0, got {beta}")));
        }
        if !(d_lo.is_finite() && d_lo >= 0.0) {
            return Err(Error::invalid("d_lo", format!("must be finite and >= 0, got {d_lo}")));
        }
        if !(d_hi.is_finite() && d_hi >= d_lo) {
            return Err(Error::invalid(
                "d_hi",
                format!("must be finite and >= d_lo = {d_lo}, got {d_hi}"),
            ));
        }
        Ok(Self {
            alpha,
            beta,
            d_lo,
            d_hi,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn d_lo(&self) -> f64 {
        self.d_lo
    }

    pub fn d_hi(&self) -> f64 {
        self.d_hi
    }

    /// Consumption beyond which utility is flat.
    pub fn satiation(&self) -> f64 {
        self.alpha / self.beta
    }
}

impl ConcaveUtility for DeviceUtility {
    fn value(&self, d: f64) -> f64 {
        let sat = self.satiation();
        if d <= sat {
            self.alpha * d - 0.5 * self.beta * d * d
        } else {
            self.alpha * self.alpha / (2.0 * self.beta)
        }
    }

    fn marginal(&self, d: f64) -> f64 {
        (self.alpha - self.beta * d).max(0.0)
    }

    fn bounds(&self) -> (f64, f64) {
        (self.d_lo, self.d_hi)
    }

    fn demand(&self, price: f64) -> f64 {
        ((self.alpha - price) / self.beta).clamp(self.d_lo, self.d_hi)
    }

    fn choke_price(&self) -> f64 {
        self.alpha
    }
}

/// Additive bundle of device utilities owned by one member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityBundle {
    devices: Vec<DeviceUtility>,
}

impl UtilityBundle {
    pub fn new(devices: Vec<DeviceUtility>) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::invalid("devices", "a bundle needs at least one device"));
        }
        Ok(Self { devices })
    }

    pub fn single(device: DeviceUtility) -> Self {
        Self { devices: vec![device] }
    }

    pub fn devices(&self) -> &[DeviceUtility] {
        &self.devices
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Total utility of the consumption vector `d`.
    pub fn value(&self, d: &[f64]) -> Result<f64> {
        if d.len() != self.devices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.devices.len(),
                got: d.len(),
            });
        }
        if let Some(x) = d.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid(
                "d",
                format!("components must be finite and >= 0, got {x}"),
            ));
        }
        Ok(self.value_unchecked(d))
    }

    pub(crate) fn value_unchecked(&self, d: &[f64]) -> f64 {
        self.devices.iter().zip(d).map(|(u, &x)| u.value(x)).sum()
    }

    /// Per-device clipped demand at a uniform price.
    pub fn clipped_demand(&self, price: f64) -> Vec<f64> {
        self.devices.iter().map(|u| u.demand(price)).collect()
    }

    /// Total clipped demand `1ᵀ[f(1·price)]`.
    pub fn total_demand(&self, price: f64) -> f64 {
        total_demand(&self.devices, price)
    }

    /// Total demand when every device sits at its lower bound.
    pub fn min_total(&self) -> f64 {
        self.devices.iter().map(|u| u.d_lo).sum()
    }

    /// Total demand at a zero price: the most the bundle will ever absorb.
    pub fn saturation_total(&self) -> f64 {
        self.total_demand(0.0)
    }

    /// Price at which every device is at its lower bound.
    pub fn choke_price(&self) -> f64 {
        self.devices.iter().map(|u| u.alpha).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit() -> DeviceUtility {
        DeviceUtility::new(2.0, 1.0, 0.0, 2.0).unwrap()
    }

    #[test]
    fn value_examples() {
        let b = UtilityBundle::single(unit());
        assert_eq!(b.value(&[0.0]).unwrap(), 0.0);
        assert_relative_eq!(b.value(&[1.25]).unwrap(), 1.71875, epsilon = 1e-15);
        assert_relative_eq!(b.value(&[3.0]).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn value_matches_integrated_marginal() {
        // trapezoid quadrature of the marginal from 0 to 1.25
        let u = unit();
        let n = 10_000;
        let h = 1.25 / n as f64;
        let integral: f64 = (0..n)
            .map(|i| 0.5 * h * (u.marginal(i as f64 * h) + u.marginal((i + 1) as f64 * h)))
            .sum();
        assert_relative_eq!(integral, 1.71875, epsilon = 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let b = UtilityBundle::single(unit());
        assert_eq!(
            b.value(&[1.0, 2.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 1, got: 2 }
        );
        assert!(b.value(&[-1.0]).is_err());
    }

    #[test]
    fn clipped_demand_examples() {
        let b = UtilityBundle::single(unit());
        assert_relative_eq!(b.clipped_demand(0.75)[0], 1.25);
        assert_eq!(b.clipped_demand(2.5)[0], 0.0);
        assert_eq!(b.clipped_demand(0.0)[0], 2.0);
    }

    #[test]
    fn rejects_invalid_devices() {
        assert!(DeviceUtility::new(2.0, 0.0, 0.0, 1.0).is_err());
        assert!(DeviceUtility::new(-1.0, 1.0, 0.0, 1.0).is_err());
        assert!(DeviceUtility::new(2.0, 1.0, 1.0, 0.5).is_err());
        assert!(DeviceUtility::new(2.0, 1.0, -0.1, 0.5).is_err());
        assert!(UtilityBundle::new(vec![]).is_err());
    }

    #[test]
    fn bundle_aggregates() {
        let b = UtilityBundle::new(vec![unit(), DeviceUtility::new(3.0, 2.0, 0.5, 1.0).unwrap()]).unwrap();
        assert_eq!(b.min_total(), 0.5);
        assert_eq!(b.saturation_total(), 3.0);
        assert_eq!(b.choke_price(), 3.0);
        assert_relative_eq!(b.total_demand(1.0), 1.0 + 1.0);
    }
}
