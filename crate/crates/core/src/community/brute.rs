//! Exhaustive grid-search welfare, used as an oracle for the closed form.

use crate::error::{Error, Result};
use crate::pricing::Community;
use crate::tariff::NemTariff;
use crate::utility::ConcaveUtility;

pub const BRUTE_FORCE_MAX_DEVICES: usize = 4;
pub const BRUTE_FORCE_MAX_STEP: f64 = 1e-2;

/// Best community welfare `Σ U_i(d_i) − P^NEM(z_N)` over consumption vectors
/// on the lattice `d_lo + j·step` of every device.
///
/// The search is exhaustive: the best utility for each lattice total is built
/// device by device over every combination of grid points, then the NEM bill
/// is charged on each total. A total is admitted when its net consumption is
/// within half a step of `[z̲_N, z̄_N]`, and the bill is evaluated at the
/// projection onto that interval, so the lattice never misses a feasible
/// point.
pub fn brute_force_welfare(c: &Community, t: &NemTariff, r_n: f64, step: f64) -> Result<f64> {
    let devices: Vec<_> = c.members().iter().flat_map(|m| m.bundle().devices().iter()).collect();
    if devices.len() > BRUTE_FORCE_MAX_DEVICES {
        return Err(Error::Usage(format!(
            "grid search supports at most {BRUTE_FORCE_MAX_DEVICES} devices, got {}",
            devices.len()
        )));
    }
    if !(step > 0.0 && step <= BRUTE_FORCE_MAX_STEP) {
        return Err(Error::Usage(format!(
            "grid step must be in (0, {BRUTE_FORCE_MAX_STEP}], got {step}"
        )));
    }
    if !(r_n.is_finite() && r_n >= 0.0) {
        return Err(Error::invalid("r_n", format!("must be finite and >= 0, got {r_n}")));
    }

    // best[J]: highest total utility with lattice indices summing to J
    let mut best = vec![0.0];
    let mut base = 0.0;
    for u in &devices {
        let (lo, hi) = u.bounds();
        base += lo;
        let points = ((hi - lo) / step + 1e-9).floor() as usize;
        let values: Vec<f64> = (0..=points).map(|j| u.value(lo + j as f64 * step)).collect();
        let mut next = vec![f64::NEG_INFINITY; best.len() + points];
        for (i, &b) in best.iter().enumerate() {
            for (j, &v) in values.iter().enumerate() {
                let w = b + v;
                if w > next[i + j] {
                    next[i + j] = w;
                }
            }
        }
        best = next;
    }

    let (z_lo, z_hi) = (c.z_lo_n(), c.z_hi_n());
    let slack = 0.5 * step;
    best.iter()
        .enumerate()
        .filter_map(|(j, &v)| {
            let z = base + j as f64 * step - r_n;
            (z >= z_lo - slack && z <= z_hi + slack).then(|| v - t.payment(z.clamp(z_lo, z_hi)))
        })
        .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))))
        .ok_or_else(|| Error::Infeasible(format!("no lattice consumption meets the envelopes at r_N = {r_n}")))
}
