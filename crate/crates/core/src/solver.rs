//! Bisection for monotone (non-increasing) demand balances.
//!
//! Every price in the mechanism is the solution of an equation of the form
//! `g(μ) = target`, where `g` is a sum of clipped demand curves. Such a `g` is
//! continuous and non-increasing but may be flat wherever every device is at
//! one of its bounds, so the solution is an interval rather than a point. The
//! solver therefore returns the whole (tolerance-widened) solution interval
//! and leaves the selection rule to the caller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

/// Bisection settings: residual tolerance on the demand balance (kWh) and an
/// iteration cap per endpoint search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for Bisection {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Closed interval `[lo, hi]` of prices whose balance residual is within
/// tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SolutionInterval {
    pub fn midpoint(&self) -> f64 {
        self.lo + 0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl Bisection {
    pub fn with_tolerance(tolerance: f64) -> Result<Self> {
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be finite and > 0"));
        }
        Ok(Self {
            tolerance,
            ..Self::default()
        })
    }

    /// Solution interval of `g(μ) = target` over `[lo, hi]` for a continuous,
    /// non-increasing `g`.
    pub fn solution_interval<G>(&self, g: G, target: f64, lo: f64, hi: f64) -> Result<SolutionInterval>
    where
        G: Fn(f64) -> f64,
    {
        debug_assert!(lo <= hi, "bracket [{lo}, {hi}] is reversed");
        let tol = self.tolerance;
        let g_lo = g(lo);
        let g_hi = g(hi);
        if g_lo < target - tol || g_hi > target + tol {
            return Err(Error::TargetOutOfRange {
                target,
                lo: g_hi,
                hi: g_lo,
            });
        }

        // leftmost μ with g(μ) <= target + tol
        let left = if g_lo <= target + tol {
            lo
        } else {
            self.search(&g, lo, hi, |v| v <= target + tol)?
        };
        // rightmost μ with g(μ) >= target - tol
        let right = if g_hi >= target - tol {
            hi
        } else {
            self.search_last(&g, lo, hi, |v| v >= target - tol)?
        };

        Ok(SolutionInterval {
            lo: left.min(right),
            hi: left.max(right),
        })
    }

    /// Midpoint of the solution interval.
    pub fn solve<G>(&self, g: G, target: f64, lo: f64, hi: f64) -> Result<f64>
    where
        G: Fn(f64) -> f64,
    {
        let interval = self.solution_interval(&g, target, lo, hi)?;
        let mu = interval.midpoint();
        self.check(&g, target, mu)
    }

    /// Like [`Bisection::solve`], but returns the first of `preferred` that lies
    /// in the solution interval. Zone prices use this so that a flat demand
    /// segment touching a tariff rate resolves to that rate.
    pub fn solve_preferring<G>(&self, g: G, target: f64, lo: f64, hi: f64, preferred: &[f64]) -> Result<f64>
    where
        G: Fn(f64) -> f64,
    {
        let interval = self.solution_interval(&g, target, lo, hi)?;
        let mu = preferred
            .iter()
            .copied()
            .find(|p| interval.contains(*p))
            .unwrap_or_else(|| interval.midpoint());
        self.check(&g, target, mu)
    }

    /// Verifies the balance residual at `mu`.
    pub fn check<G>(&self, g: G, target: f64, mu: f64) -> Result<f64>
    where
        G: Fn(f64) -> f64,
    {
        let residual = (g(mu) - target).abs();
        if residual <= self.tolerance {
            Ok(mu)
        } else {
            Err(Error::NoConvergence {
                residual,
                iterations: self.max_iterations,
            })
        }
    }

    // First point of [lo, hi] where a monotone predicate turns true; the
    // predicate is false at lo and true at hi.
    fn search<G, P>(&self, g: &G, mut lo: f64, mut hi: f64, pred: P) -> Result<f64>
    where
        G: Fn(f64) -> f64,
        P: Fn(f64) -> bool,
    {
        for _ in 0..self.max_iterations {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                return Ok(hi);
            }
            if pred(g(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    // Last point of [lo, hi] where a monotone predicate is still true; the
    // predicate is true at lo and false at hi.
    fn search_last<G, P>(&self, g: &G, mut lo: f64, mut hi: f64, pred: P) -> Result<f64>
    where
        G: Fn(f64) -> f64,
        P: Fn(f64) -> bool,
    {
        for _ in 0..self.max_iterations {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                return Ok(lo);
            }
            if pred(g(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root() {
        let b = Bisection::default();
        let mu = b.solve(|m| 2.0 * (2.0 - m), 1.5, 0.0, 2.0).unwrap();
        assert!((mu - 1.25).abs() < 1e-10);
    }

    #[test]
    fn flat_segment_returns_midpoint() {
        // g = clamp(2 - m, 0, 1): flat at 1 for m in [0, 1]
        let g = |m: f64| (2.0 - m).clamp(0.0, 1.0);
        let b = Bisection::default();
        let interval = b.solution_interval(g, 1.0, 0.0, 2.0).unwrap();
        assert_eq!(interval.lo, 0.0);
        assert!((interval.hi - 1.0).abs() < 1e-9);
        assert!((b.solve(g, 1.0, 0.0, 2.0).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_target() {
        let b = Bisection::default();
        let err = b.solve(|m| (2.0 - m).max(0.0), 3.0, 0.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::TargetOutOfRange { .. }));
        let err = b.solve(|m| (2.0 - m).max(0.5), 0.1, 0.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::TargetOutOfRange { .. }));
    }

    #[test]
    fn degenerate_bracket() {
        let b = Bisection::default();
        assert_eq!(b.solve(|_| 1.0, 1.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(Bisection::with_tolerance(0.0).is_err());
        assert!(Bisection::with_tolerance(f64::NAN).is_err());
    }
}
