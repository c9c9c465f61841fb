//! Reproducible random communities for property checks.
//!
//! Instance `index` of a spec is drawn from its own ChaCha stream keyed by
//! `(seed, index)`, so any instance can be regenerated on its own and
//! instances can be produced in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::Member;
use crate::error::{Error, Result};
use crate::pricing::{compute_sigmas, Community, PriceZone};
use crate::tariff::NemTariff;
use crate::utility::{DeviceUtility, UtilityBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub n_members: usize,
    pub k_devices: usize,
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    /// Upper consumption bound of each device.
    pub d_hi_range: (f64, f64),
    /// Lower consumption bounds are drawn from `[0, d_lo_max]`.
    pub d_lo_max: f64,
    /// Member envelopes are drawn from `[0.5, 1] · oe_scale`.
    pub oe_scale: f64,
    /// Aggregate envelopes are the member sums times `1 + aggregation_slack`.
    pub aggregation_slack: f64,
    pub buy_rate_range: (f64, f64),
    pub sell_rate_range: (f64, f64),
    pub n_scenarios: usize,
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            n_members: 4,
            k_devices: 2,
            alpha_range: (1.0, 3.0),
            beta_range: (0.5, 2.0),
            d_hi_range: (0.5, 3.0),
            d_lo_max: 0.0,
            oe_scale: 1.0,
            aggregation_slack: 0.25,
            buy_rate_range: (0.6, 1.0),
            sell_rate_range: (0.1, 0.5),
            n_scenarios: 10,
            seed: 0,
        }
    }
}

fn check_range(field: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi) {
        return Err(Error::Usage(format!(
            "{field} = ({lo}, {hi}) must satisfy {min} <= lo <= hi"
        )));
    }
    Ok(())
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::Usage("n_members must be >= 1".into()));
        }
        if self.k_devices == 0 {
            return Err(Error::Usage("k_devices must be >= 1".into()));
        }
        if self.n_scenarios == 0 {
            return Err(Error::Usage("n_scenarios must be >= 1".into()));
        }
        check_range("alpha_range", self.alpha_range, 0.0)?;
        check_range("beta_range", self.beta_range, 0.0)?;
        if self.beta_range.0 <= 0.0 {
            return Err(Error::Usage("beta_range must be strictly positive".into()));
        }
        check_range("d_hi_range", self.d_hi_range, 0.0)?;
        if !(self.d_lo_max.is_finite() && self.d_lo_max >= 0.0 && self.d_lo_max <= self.d_hi_range.0) {
            return Err(Error::Usage(format!(
                "d_lo_max = {} must lie in [0, {}]",
                self.d_lo_max, self.d_hi_range.0
            )));
        }
        if !(self.oe_scale.is_finite() && self.oe_scale >= 0.0) {
            return Err(Error::Usage(format!(
                "oe_scale = {} must be finite and >= 0",
                self.oe_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.aggregation_slack) {
            return Err(Error::Usage(format!(
                "aggregation_slack = {} must lie in [0, 1]",
                self.aggregation_slack
            )));
        }
        check_range("buy_rate_range", self.buy_rate_range, 0.0)?;
        check_range("sell_rate_range", self.sell_rate_range, 0.0)?;
        if self.sell_rate_range.1 > self.buy_rate_range.0 {
            return Err(Error::Usage(format!(
                "sell rates up to {} could exceed buy rates from {}; need pi_plus >= pi_minus",
                self.sell_rate_range.1, self.buy_rate_range.0
            )));
        }
        Ok(())
    }

    /// Instance number `index`.
    pub fn generate(&self, index: u64) -> Result<Instance> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);

        let pi_plus = uniform(&mut rng, self.buy_rate_range);
        let pi_minus = uniform(&mut rng, self.sell_rate_range);
        let tariff = NemTariff::new(pi_plus, pi_minus)?;

        let width = self.n_members.to_string().len().max(2);
        let mut members = Vec::with_capacity(self.n_members);
        for i in 0..self.n_members {
            let devices = (0..self.k_devices)
                .map(|_| {
                    let alpha = uniform(&mut rng, self.alpha_range);
                    let beta = uniform(&mut rng, self.beta_range);
                    let d_lo = uniform(&mut rng, (0.0, self.d_lo_max));
                    let d_hi = uniform(&mut rng, self.d_hi_range).max(d_lo);
                    DeviceUtility::new(alpha, beta, d_lo, d_hi)
                })
                .collect::<Result<Vec<_>>>()?;
            let z_hi = self.oe_scale * uniform(&mut rng, (0.5, 1.0));
            let z_lo = -self.oe_scale * uniform(&mut rng, (0.5, 1.0));
            members.push(Member::new(
                format!("m{i:0width$}"),
                UtilityBundle::new(devices)?,
                z_lo,
                z_hi,
            )?);
        }
        let sum_hi: f64 = members.iter().map(Member::z_hi).sum();
        let sum_lo: f64 = members.iter().map(Member::z_lo).sum();
        let scale = 1.0 + self.aggregation_slack;
        let community = Community::new(members, sum_lo * scale, sum_hi * scale)?;

        let scenarios = sample_scenarios(&mut rng, &community, &tariff, self.n_scenarios);
        let coverage = ZoneCoverage::measure(&community, &tariff, &scenarios);
        Ok(Instance {
            seed: self.seed,
            index,
            community,
            tariff,
            scenarios,
            coverage,
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub seed: u64,
    pub index: u64,
    pub community: Community,
    pub tariff: NemTariff,
    /// Renewable output per member, one vector per scenario.
    pub scenarios: Vec<Vec<f64>>,
    pub coverage: ZoneCoverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneCoverage {
    /// Zones with a non-empty range of feasible `r_N`.
    pub reachable: Vec<PriceZone>,
    /// Zones witnessed by at least one stored scenario.
    pub covered: Vec<PriceZone>,
}

impl ZoneCoverage {
    pub fn measure(c: &Community, t: &NemTariff, scenarios: &[Vec<f64>]) -> Self {
        let sigmas = compute_sigmas(c, t);
        let reachable = zone_ranges(c, &sigmas).into_iter().map(|(z, _)| z).collect();
        let mut covered: Vec<PriceZone> = scenarios
            .iter()
            .map(|r| PriceZone::classify(r.iter().sum(), &sigmas))
            .collect();
        covered.sort();
        covered.dedup();
        Self { reachable, covered }
    }
}

/// Per-member output range keeping the standalone problem feasible.
fn member_range(m: &Member) -> (f64, f64) {
    let lo = (m.bundle().min_total() - m.z_hi()).max(0.0);
    (lo, m.max_renewable())
}

// Feasible r_N sub-range of every zone with positive width.
fn zone_ranges(c: &Community, sigmas: &[f64; 4]) -> Vec<(PriceZone, (f64, f64))> {
    let (lo, hi) = c
        .members()
        .iter()
        .map(member_range)
        .fold((0.0, 0.0), |(a, b), (l, h)| (a + l, b + h));
    let [s1, s2, s3, s4] = *sigmas;
    let bounds = [
        (f64::NEG_INFINITY, s1),
        (s1, s2),
        (s2, s3),
        (s3, s4),
        (s4, f64::INFINITY),
    ];
    PriceZone::ALL
        .iter()
        .zip(bounds)
        .filter_map(|(z, (a, b))| {
            let (a, b) = (a.max(lo), b.min(hi));
            (b - a > 1e-9).then_some((*z, (a, b)))
        })
        .collect()
}

// Spreads `target` over members: each member sits at the same shifted
// quantile of its own feasible range.
fn split(rng: &mut ChaCha8Rng, ranges: &[(f64, f64)], target: f64) -> Vec<f64> {
    let u: Vec<f64> = ranges.iter().map(|_| rng.gen::<f64>()).collect();
    let at = |s: f64| -> Vec<f64> {
        ranges
            .iter()
            .zip(&u)
            .map(|(&(lo, hi), &ui)| lo + (hi - lo) * (ui + s).clamp(0.0, 1.0))
            .collect()
    };
    let (mut a, mut b) = (-1.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if at(mid).iter().sum::<f64>() < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    at(0.5 * (a + b))
}

fn sample_scenarios(rng: &mut ChaCha8Rng, c: &Community, t: &NemTariff, n: usize) -> Vec<Vec<f64>> {
    let sigmas = compute_sigmas(c, t);
    let zones = zone_ranges(c, &sigmas);
    let ranges: Vec<(f64, f64)> = c.members().iter().map(member_range).collect();
    (0..n)
        .map(|k| {
            let target = match zones.get(k % zones.len().max(1)) {
                Some((_, (a, b))) => {
                    // stay off the zone edges so the sum lands inside
                    let pad = 1e-6 * (b - a);
                    rng.gen_range(a + pad..=b - pad)
                }
                None => ranges.iter().map(|(lo, _)| lo).sum(),
            };
            split(rng, &ranges, target)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_index() {
        let spec = InstanceSpec {
            seed: 1,
            n_members: 2,
            k_devices: 1,
            ..InstanceSpec::default()
        };
        assert_eq!(spec.generate(0).unwrap(), spec.generate(0).unwrap());
        assert_ne!(spec.generate(0).unwrap(), spec.generate(1).unwrap());
    }

    #[test]
    fn zero_slack_is_tight() {
        let spec = InstanceSpec {
            aggregation_slack: 0.0,
            ..InstanceSpec::default()
        };
        let inst = spec.generate(3).unwrap();
        let c = &inst.community;
        assert_eq!(c.import_slack(), 0.0);
        assert_eq!(c.export_slack(), 0.0);
    }

    #[test]
    fn covers_reachable_zones() {
        let spec = InstanceSpec::default();
        for i in 0..20 {
            let inst = spec.generate(i).unwrap();
            assert_eq!(inst.coverage.reachable, inst.coverage.covered, "instance {i}");
        }
    }

    #[test]
    fn large_envelopes_hide_import_zone() {
        let spec = InstanceSpec {
            oe_scale: 100.0,
            ..InstanceSpec::default()
        };
        let inst = spec.generate(0).unwrap();
        assert!(!inst.coverage.reachable.contains(&PriceZone::ChiPlus));
        assert!(!inst.coverage.covered.contains(&PriceZone::ChiPlus));
    }

    #[test]
    fn rejects_arbitrage_rates() {
        let spec = InstanceSpec {
            buy_rate_range: (0.2, 0.3),
            sell_rate_range: (0.25, 0.4),
            ..InstanceSpec::default()
        };
        assert!(matches!(spec.generate(0), Err(Error::Usage(_))));
    }
}
