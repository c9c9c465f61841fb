//! The community operator's envelope-aware two-part pricing.
//!
//! The operator announces a uniform volumetric price `π*(r_N)` that depends
//! only on aggregate renewable output, plus a lump-sum reward `A_i*(r_N)` that
//! hands back the surplus collected whenever an aggregate envelope binds.
//! Prices per zone of `r_N`:
//!
//! ```text
//!   r_N <= σ1        χ⁺(r_N): Σ 1ᵀf_i(χ⁺) = r_N + z̄_N   (import envelope binds)
//!   σ1 < r_N < σ2    π⁺
//!   σ2 <= r_N <= σ3  χᶻ(r_N): Σ 1ᵀf_i(χᶻ) = r_N         (community self-balanced)
//!   σ3 < r_N < σ4    π⁻
//!   r_N >= σ4        χ⁻(r_N): Σ 1ᵀf_i(χ⁻) = r_N + z̲_N   (export envelope binds)
//! ```

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::benchmark::Member;
use crate::error::{Error, Result};
use crate::solver::Bisection;
use crate::tariff::NemTariff;

/// Members sharing one revenue meter with aggregate envelopes `[z_lo_n, z_hi_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    members: Vec<Member>,
    z_lo_n: f64,
    z_hi_n: f64,
}

// Slack allowed on the aggregation inequalities for decimal round-off in
// configuration values.
const AGGREGATION_EPS: f64 = 1e-12;

impl Community {
    pub fn new(members: Vec<Member>, z_lo_n: f64, z_hi_n: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("members", "a community needs at least one member"));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &members {
            if !seen.insert(m.id()) {
                return Err(Error::invalid("members", format!("duplicate member id `{}`", m.id())));
            }
        }
        if !(z_lo_n.is_finite() && z_lo_n <= 0.0) {
            return Err(Error::invalid(
                "z_lo_n",
                format!("must be finite and <= 0, got {z_lo_n}"),
            ));
        }
        if !(z_hi_n.is_finite() && z_hi_n >= 0.0) {
            return Err(Error::invalid(
                "z_hi_n",
                format!("must be finite and >= 0, got {z_hi_n}"),
            ));
        }
        let sum_hi: f64 = members.iter().map(Member::z_hi).sum();
        let sum_lo: f64 = members.iter().map(Member::z_lo).sum();
        let scale = 1.0 + sum_hi.abs().max(sum_lo.abs());
        if sum_hi > z_hi_n + AGGREGATION_EPS * scale {
            return Err(Error::invalid(
                "z_hi_n",
                format!("sum of member import envelopes {sum_hi} exceeds aggregate import envelope {z_hi_n}"),
            ));
        }
        if sum_lo < z_lo_n - AGGREGATION_EPS * scale {
            return Err(Error::invalid(
                "z_lo_n",
                format!("sum of member export envelopes {sum_lo} is below aggregate export envelope {z_lo_n}"),
            ));
        }
        Ok(Self {
            members,
            z_lo_n,
            z_hi_n,
        })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, id: &str) -> Option<&Member> {
        self.members.iter().find(|m| m.id() == id)
    }

    pub fn z_lo_n(&self) -> f64 {
        self.z_lo_n
    }

    pub fn z_hi_n(&self) -> f64 {
        self.z_hi_n
    }

    /// Copy with different aggregate envelopes; fails if the aggregation
    /// inequalities no longer hold.
    pub fn with_envelopes(&self, z_lo_n: f64, z_hi_n: f64) -> Result<Self> {
        Self::new(self.members.clone(), z_lo_n, z_hi_n)
    }

    /// `Σ_i 1ᵀ[f_i(1·price)]`.
    pub fn total_demand(&self, price: f64) -> f64 {
        self.members.iter().map(|m| m.bundle().total_demand(price)).sum()
    }

    pub fn choke_price(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.bundle().choke_price())
            .fold(0.0, f64::max)
    }

    pub fn min_total(&self) -> f64 {
        self.members.iter().map(|m| m.bundle().min_total()).sum()
    }

    pub fn saturation_total(&self) -> f64 {
        self.members.iter().map(|m| m.bundle().saturation_total()).sum()
    }

    /// `z̄_N − Σ z̄_i`, the import headroom gained by aggregating.
    pub fn import_slack(&self) -> f64 {
        self.z_hi_n - self.members.iter().map(Member::z_hi).sum::<f64>()
    }

    /// `z̲_N − Σ z̲_i` (non-positive).
    pub fn export_slack(&self) -> f64 {
        self.z_lo_n - self.members.iter().map(Member::z_lo).sum::<f64>()
    }
}

/// Zones of the community price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PriceZone {
    ChiPlus,
    PiPlus,
    ChiZ,
    PiMinus,
    ChiMinus,
}

impl PriceZone {
    pub const ALL: [PriceZone; 5] = [
        PriceZone::ChiPlus,
        PriceZone::PiPlus,
        PriceZone::ChiZ,
        PriceZone::PiMinus,
        PriceZone::ChiMinus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PriceZone::ChiPlus => "CHI_PLUS",
            PriceZone::PiPlus => "PI_PLUS",
            PriceZone::ChiZ => "CHI_Z",
            PriceZone::PiMinus => "PI_MINUS",
            PriceZone::ChiMinus => "CHI_MINUS",
        }
    }

    /// Zone of `r_n`; closed on `r <= σ1`, `[σ2, σ3]` and `r >= σ4`.
    pub fn classify(r_n: f64, sigmas: &[f64; 4]) -> Self {
        let [s1, s2, s3, s4] = *sigmas;
        if r_n <= s1 {
            PriceZone::ChiPlus
        } else if r_n < s2 {
            PriceZone::PiPlus
        } else if r_n <= s3 {
            PriceZone::ChiZ
        } else if r_n < s4 {
            PriceZone::PiMinus
        } else {
            PriceZone::ChiMinus
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl std::fmt::Display for PriceZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Announced price for one realization of aggregate renewables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub sigmas: [f64; 4],
    pub r_n: f64,
    pub zone: PriceZone,
    pub price: f64,
}

impl PriceSchedule {
    /// Volumetric part of the payment for net consumption `z`.
    pub fn volumetric(&self, z: f64) -> f64 {
        self.price * z
    }
}

/// Thresholds `(σ1, σ2, σ3, σ4)`.
pub fn compute_sigmas(c: &Community, t: &NemTariff) -> [f64; 4] {
    let s2 = c.total_demand(t.pi_plus());
    let s3 = c.total_demand(t.pi_minus());
    [s2 - c.z_hi_n, s2, s3, s3 - c.z_lo_n]
}

/// Uniform price at which aggregate demand equals `target`, searched over
/// `[0, max α]`; the midpoint of the solution set when demand is flat there.
pub fn solve_chi(c: &Community, target: f64, solver: &Bisection) -> Result<f64> {
    let lo = c.min_total();
    let hi = c.saturation_total();
    let tol = solver.tolerance;
    if !(target >= lo - tol && target <= hi + tol) {
        return Err(Error::TargetOutOfRange { target, lo, hi });
    }
    solver.solve(|mu| c.total_demand(mu), target, 0.0, c.choke_price())
}

/// The four-threshold community price at aggregate renewable output `r_n`.
pub fn price_policy(c: &Community, t: &NemTariff, r_n: f64, solver: &Bisection) -> Result<PriceSchedule> {
    if !(r_n.is_finite() && r_n >= 0.0) {
        return Err(Error::invalid("r_n", format!("must be finite and >= 0, got {r_n}")));
    }
    let sigmas = compute_sigmas(c, t);
    let zone = PriceZone::classify(r_n, &sigmas);
    let (pi_p, pi_m) = (t.pi_plus(), t.pi_minus());
    let g = |mu: f64| c.total_demand(mu);
    let infeasible = |e: Error| match e {
        Error::TargetOutOfRange { target, lo, hi } => Error::Infeasible(format!(
            "zone {zone}: community demand target {target} kWh outside [{lo}, {hi}] kWh at r_N = {r_n}"
        )),
        other => other,
    };

    // Each dynamic price is searched inside its zone's bracket and resolves to
    // the adjacent tariff rate whenever that rate solves the balance.
    let price = match zone {
        PriceZone::ChiPlus => {
            let mu_max = c.choke_price().max(pi_p);
            solver
                .solve_preferring(g, r_n + c.z_hi_n, pi_p, mu_max, &[pi_p])
                .map_err(infeasible)?
        }
        PriceZone::PiPlus => pi_p,
        PriceZone::ChiZ => {
            let prefs = if r_n - sigmas[1] <= sigmas[2] - r_n {
                [pi_p, pi_m]
            } else {
                [pi_m, pi_p]
            };
            solver
                .solve_preferring(g, r_n, pi_m, pi_p, &prefs)
                .map_err(infeasible)?
        }
        PriceZone::PiMinus => pi_m,
        PriceZone::ChiMinus => solver
            .solve_preferring(g, r_n + c.z_lo_n, 0.0, pi_m, &[pi_m])
            .map_err(infeasible)?,
    };

    Ok(PriceSchedule {
        sigmas,
        r_n,
        zone,
        price,
    })
}

/// Lump-sum rewards returning the operator's over-collection to members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAllocation {
    pub per_member: IndexMap<String, f64>,
    pub total: f64,
}

impl RewardAllocation {
    pub fn get(&self, id: &str) -> Result<f64> {
        self.per_member
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownMember(id.to_string()))
    }
}

/// Proportional rewards: each member gets its own envelope plus an equal
/// share of the aggregation headroom, times the price markup over the NEM rate.
pub fn fixed_rewards(c: &Community, t: &NemTariff, s: &PriceSchedule) -> RewardAllocation {
    let n = c.len() as f64;
    let import_share = c.import_slack() / n;
    let export_share = c.export_slack() / n;
    let per_member: IndexMap<String, f64> = c
        .members()
        .iter()
        .map(|m| {
            let a = match s.zone {
                PriceZone::ChiPlus => (s.price - t.pi_plus()) * (m.z_hi() + import_share),
                PriceZone::ChiMinus => (s.price - t.pi_minus()) * (m.z_lo() + export_share),
                _ => 0.0,
            };
            (m.id().to_string(), a)
        })
        .collect();
    let total = per_member.values().sum();
    RewardAllocation { per_member, total }
}

/// Two-part payment `π*·z − A_i` of member `id`.
pub fn member_payment(s: &PriceSchedule, rewards: &RewardAllocation, id: &str, z: f64) -> Result<f64> {
    Ok(s.volumetric(z) - rewards.get(id)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{DeviceUtility, UtilityBundle};
    use approx::assert_relative_eq;

    fn pair(z_hi_i: f64, z_lo_i: f64, z_lo_n: f64, z_hi_n: f64) -> Community {
        let u = DeviceUtility::new(2.0, 1.0, 0.0, 2.0).unwrap();
        let members = ["a", "b"]
            .iter()
            .map(|id| Member::new(*id, UtilityBundle::single(u), z_lo_i, z_hi_i).unwrap())
            .collect();
        Community::new(members, z_lo_n, z_hi_n).unwrap()
    }

    fn tariff() -> NemTariff {
        NemTariff::new(1.0, 0.5).unwrap()
    }

    #[test]
    fn sigma_examples() {
        let c = pair(0.2, -0.2, -0.5, 0.5);
        let s = compute_sigmas(&c, &tariff());
        for (got, want) in s.iter().zip([1.5, 2.0, 3.0, 3.5]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        let c0 = pair(0.0, 0.0, 0.0, 0.0);
        let s = compute_sigmas(&c0, &tariff());
        assert_eq!(s[0], s[1]);
        assert_eq!(s[2], s[3]);
        let s = compute_sigmas(&c, &NemTariff::new(0.8, 0.8).unwrap());
        assert_eq!(s[1], s[2]);
    }

    #[test]
    fn chi_examples() {
        let c = pair(0.2, -0.2, -0.5, 0.5);
        let b = Bisection::default();
        assert_relative_eq!(solve_chi(&c, 1.5, &b).unwrap(), 1.25, epsilon = 1e-9);
        assert_relative_eq!(solve_chi(&c, 2.5, &b).unwrap(), 0.75, epsilon = 1e-9);
        assert_relative_eq!(solve_chi(&c, 3.5, &b).unwrap(), 0.25, epsilon = 1e-9);
        assert!(matches!(solve_chi(&c, 4.5, &b), Err(Error::TargetOutOfRange { .. })));
        assert!(matches!(solve_chi(&c, -0.5, &b), Err(Error::TargetOutOfRange { .. })));
    }

    #[test]
    fn policy_examples() {
        let c = pair(0.2, -0.2, -0.5, 0.5);
        let b = Bisection::default();
        let s = price_policy(&c, &tariff(), 1.0, &b).unwrap();
        assert_eq!(s.zone, PriceZone::ChiPlus);
        assert_relative_eq!(s.price, 1.25, epsilon = 1e-9);
        let s = price_policy(&c, &tariff(), 1.75, &b).unwrap();
        assert_eq!((s.zone, s.price), (PriceZone::PiPlus, 1.0));
        let s = price_policy(&c, &tariff(), 4.0, &b).unwrap();
        assert_eq!(s.zone, PriceZone::ChiMinus);
        assert_relative_eq!(s.price, 0.25, epsilon = 1e-9);
        let s = price_policy(&c, &tariff(), 2.5, &b).unwrap();
        assert_eq!(s.zone, PriceZone::ChiZ);
        assert_relative_eq!(s.price, 0.75, epsilon = 1e-9);
    }

    #[test]
    fn boundary_prices_are_tariff_rates() {
        let c = pair(0.2, -0.2, -0.5, 0.5);
        let b = Bisection::default();
        let t = tariff();
        let s = compute_sigmas(&c, &t);
        let want = [t.pi_plus(), t.pi_plus(), t.pi_minus(), t.pi_minus()];
        for (sigma, w) in s.iter().zip(want) {
            let p = price_policy(&c, &t, *sigma, &b).unwrap().price;
            assert!((p - w).abs() <= 1e-8, "price {p} at sigma {sigma}");
        }
    }

    #[test]
    fn reward_examples() {
        let c = pair(0.2, -0.2, -0.5, 0.5);
        let t = tariff();
        let b = Bisection::default();
        let s = price_policy(&c, &t, 1.0, &b).unwrap();
        let a = fixed_rewards(&c, &t, &s);
        assert_relative_eq!(a.get("a").unwrap(), 0.0625, epsilon = 1e-9);
        assert_relative_eq!(a.get("b").unwrap(), 0.0625, epsilon = 1e-9);
        assert_relative_eq!(a.total, (s.price - 1.0) * 0.5, epsilon = 1e-15);

        let s = price_policy(&c, &t, 2.5, &b).unwrap();
        let a = fixed_rewards(&c, &t, &s);
        assert!(a.per_member.values().all(|v| *v == 0.0));

        // equal envelopes split the markup evenly
        let c = pair(0.25, -0.25, -0.5, 0.5);
        let s = price_policy(&c, &t, 1.0, &b).unwrap();
        let a = fixed_rewards(&c, &t, &s);
        assert_relative_eq!(a.get("a").unwrap(), (s.price - 1.0) * 0.25, epsilon = 1e-15);

        let s = price_policy(&c, &t, 4.0, &b).unwrap();
        let a = fixed_rewards(&c, &t, &s);
        assert!(a.per_member.values().all(|v| *v > 0.0));
        assert_relative_eq!(a.total, (s.price - 0.5) * -0.5, epsilon = 1e-15);
    }

    #[test]
    fn payment_examples() {
        let mk = |price: f64, reward: f64| {
            let s = PriceSchedule {
                sigmas: [0.0; 4],
                r_n: 0.0,
                zone: PriceZone::ChiZ,
                price,
            };
            let a = RewardAllocation {
                per_member: [("m".to_string(), reward)].into_iter().collect(),
                total: reward,
            };
            (s, a)
        };
        let (s, a) = mk(0.75, 0.0);
        assert_relative_eq!(member_payment(&s, &a, "m", 0.5).unwrap(), 0.375);
        let (s, a) = mk(1.25, 0.0625);
        assert_relative_eq!(member_payment(&s, &a, "m", 0.0).unwrap(), -0.0625);
        let (s, a) = mk(0.125, 0.05);
        assert_relative_eq!(member_payment(&s, &a, "m", -1.0).unwrap(), -0.175);
        assert_eq!(
            member_payment(&s, &a, "nobody", 1.0).unwrap_err(),
            Error::UnknownMember("nobody".into())
        );
    }

    #[test]
    fn community_validation() {
        let u = DeviceUtility::new(2.0, 1.0, 0.0, 2.0).unwrap();
        let m = |id: &str| Member::new(id, UtilityBundle::single(u), -0.3, 0.3).unwrap();
        assert!(Community::new(vec![], -1.0, 1.0).is_err());
        assert!(Community::new(vec![m("a"), m("a")], -1.0, 1.0).is_err());
        assert!(Community::new(vec![m("a"), m("b")], -1.0, 0.5).is_err());
        assert!(Community::new(vec![m("a"), m("b")], -0.5, 1.0).is_err());
        assert!(Community::new(vec![m("a"), m("b")], -0.6, 0.6).is_ok());
    }

    #[test]
    fn flat_demand_at_boundary_resolves_to_rate() {
        // demand saturated at d_hi = 1 for every price below 1
        let u = DeviceUtility::new(2.0, 1.0, 0.0, 1.0).unwrap();
        let m = Member::new("a", UtilityBundle::single(u), -0.2, 0.2).unwrap();
        let c = Community::new(vec![m], -0.2, 0.2).unwrap();
        let t = NemTariff::new(0.6, 0.3).unwrap();
        let b = Bisection::default();
        let s = compute_sigmas(&c, &t);
        assert_eq!(s[1], s[2]);
        assert_eq!(price_policy(&c, &t, s[0], &b).unwrap().price, 0.6);
        assert_eq!(price_policy(&c, &t, s[3], &b).unwrap().price, 0.3);
        let mid = price_policy(&c, &t, s[1], &b).unwrap();
        assert!(mid.price <= 0.6 && mid.price >= 0.3);
    }
}
