//! Member responses to the community price, welfare, cost-causation checks
//! and value-of-community analytics.

mod brute;
mod statics;

pub use brute::{brute_force_welfare, BRUTE_FORCE_MAX_DEVICES, BRUTE_FORCE_MAX_STEP};
pub use statics::{comparative_statics, expected_voc_sign, Parameter, Sign, StaticsCell, StaticsReport};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::benchmark::{benchmark_respond, BenchmarkZone};
use crate::dnem::{dnem_member_respond, dnem_schedule, DnemSchedule};
use crate::error::{Error, Result};
use crate::pricing::{
    fixed_rewards, member_payment, price_policy, Community, PriceSchedule, PriceZone, RewardAllocation,
};
use crate::solver::Bisection;
use crate::tariff::NemTariff;

/// Tolerance for the profit-neutrality and individual-rationality checks.
pub const AXIOM_TOLERANCE: f64 = 1e-9;

/// Tolerance used to detect a self-balanced member (`1ᵀd_i = r_i`).
pub const SELF_BALANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub d: Vec<f64>,
    pub z: f64,
    pub reward: f64,
    pub payment: f64,
    pub surplus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityOutcome {
    pub schedule: PriceSchedule,
    pub rewards: RewardAllocation,
    pub per_member: IndexMap<String, MemberOutcome>,
    pub z_n: f64,
    pub welfare: f64,
}

impl CommunityOutcome {
    pub fn total_payment(&self) -> f64 {
        self.per_member.values().map(|o| o.payment).sum()
    }
}

pub(crate) fn check_renewables(c: &Community, r: &[f64]) -> Result<f64> {
    if r.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            got: r.len(),
        });
    }
    for (m, &ri) in c.members().iter().zip(r) {
        if !(ri.is_finite() && ri >= 0.0) {
            return Err(Error::invalid(
                format!("member {}: r", m.id()),
                format!("renewable output must be finite and >= 0, got {ri}"),
            ));
        }
    }
    Ok(r.iter().sum())
}

/// Members' optimal responses to the announced schedule at renewables `r`.
pub fn community_respond(c: &Community, t: &NemTariff, r: &[f64], solver: &Bisection) -> Result<CommunityOutcome> {
    let r_n = check_renewables(c, r)?;
    let schedule = price_policy(c, t, r_n, solver)?;
    let rewards = fixed_rewards(c, t, &schedule);

    let mut per_member = IndexMap::with_capacity(c.len());
    let mut z_n = 0.0;
    let mut welfare = 0.0;
    for (m, &ri) in c.members().iter().zip(r) {
        let d = m.bundle().clipped_demand(schedule.price);
        let z = d.iter().sum::<f64>() - ri;
        let reward = rewards.get(m.id())?;
        let payment = member_payment(&schedule, &rewards, m.id(), z)?;
        let surplus = m.bundle().value_unchecked(&d) - payment;
        z_n += z;
        welfare += surplus;
        per_member.insert(
            m.id().to_string(),
            MemberOutcome {
                d,
                z,
                reward,
                payment,
                surplus,
            },
        );
    }

    Ok(CommunityOutcome {
        schedule,
        rewards,
        per_member,
        z_n,
        welfare,
    })
}

/// Welfare of the centrally scheduled community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralizedWelfare {
    pub welfare: f64,
    pub d: Vec<Vec<f64>>,
    pub z_n: f64,
}

/// Closed-form maximum welfare of the community at aggregate output `r_n`,
/// evaluated zone by zone.
pub fn centralized_welfare(c: &Community, t: &NemTariff, r_n: f64, solver: &Bisection) -> Result<CentralizedWelfare> {
    let s = price_policy(c, t, r_n, solver)?;
    let d: Vec<Vec<f64>> = c.members().iter().map(|m| m.bundle().clipped_demand(s.price)).collect();
    let value: f64 = c
        .members()
        .iter()
        .zip(&d)
        .map(|(m, di)| m.bundle().value_unchecked(di))
        .sum();
    let total: f64 = d.iter().flatten().sum();
    let (welfare, z_n) = match s.zone {
        PriceZone::ChiPlus => (value - t.pi_plus() * c.z_hi_n(), c.z_hi_n()),
        PriceZone::PiPlus => (value - t.pi_plus() * (total - r_n), total - r_n),
        PriceZone::ChiZ => (value, 0.0),
        PriceZone::PiMinus => (value - t.pi_minus() * (total - r_n), total - r_n),
        PriceZone::ChiMinus => (value - t.pi_minus() * c.z_lo_n(), c.z_lo_n()),
    };
    Ok(CentralizedWelfare { welfare, d, z_n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub passed: bool,
    /// Worst margin or residual observed (meaning depends on the axiom).
    pub margin: f64,
    pub witness: Option<String>,
}

impl AxiomCheck {
    fn pass(margin: f64) -> Self {
        Self {
            passed: true,
            margin,
            witness: None,
        }
    }

    fn fail(margin: f64, witness: String) -> Self {
        Self {
            passed: false,
            margin,
            witness: Some(witness),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub uniform_volumetric: AxiomCheck,
    pub monotonic_zero_at_zero: AxiomCheck,
    pub individual_rationality: AxiomCheck,
    pub profit_neutrality: AxiomCheck,
    /// Standalone surplus of each member at the same output.
    pub benchmark_surplus: IndexMap<String, f64>,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.uniform_volumetric.passed
            && self.monotonic_zero_at_zero.passed
            && self.individual_rationality.passed
            && self.profit_neutrality.passed
    }
}

/// Checks the four cost-causation axioms on an outcome of
/// [`community_respond`].
pub fn verify_axioms(
    c: &Community,
    t: &NemTariff,
    r: &[f64],
    outcome: &CommunityOutcome,
    solver: &Bisection,
) -> Result<AxiomReport> {
    check_renewables(c, r)?;
    let s = &outcome.schedule;

    // Two synthetic clones with the same net consumption and no reward must
    // be charged the same; every real member's volumetric charge must be the
    // uniform price times its own z.
    let probe_rewards = RewardAllocation {
        per_member: [("probe-a".to_string(), 0.0), ("probe-b".to_string(), 0.0)]
            .into_iter()
            .collect(),
        total: 0.0,
    };
    let mut uniform = AxiomCheck::pass(0.0);
    for (id, o) in &outcome.per_member {
        let a = member_payment(s, &probe_rewards, "probe-a", o.z)?;
        let b = member_payment(s, &probe_rewards, "probe-b", o.z)?;
        let implied = o.payment + o.reward;
        let gap = (a - b).abs().max((implied - a).abs());
        if gap > uniform.margin {
            uniform.margin = gap;
        }
        if gap > AXIOM_TOLERANCE * (1.0 + a.abs()) {
            uniform = AxiomCheck::fail(gap, format!("member {id}: volumetric {implied} vs uniform {a}"));
            break;
        }
    }

    // Volumetric part must vanish at zero and be non-decreasing with z.
    let span = c.z_hi_n().max(-c.z_lo_n()).max(1.0) + outcome.z_n.abs();
    let grid: Vec<f64> = (-20..=20).map(|k| span * k as f64 / 20.0).collect();
    let mut monotone = AxiomCheck::pass(0.0);
    if s.volumetric(0.0) != 0.0 {
        monotone = AxiomCheck::fail(s.volumetric(0.0), "non-zero charge at z = 0".into());
    } else {
        for w in grid.windows(2) {
            let (p0, p1) = (s.volumetric(w[0]), s.volumetric(w[1]));
            if p1 < p0 {
                monotone = AxiomCheck::fail(p0 - p1, format!("charge decreases between z = {} and {}", w[0], w[1]));
                break;
            }
        }
    }

    let mut benchmark_surplus = IndexMap::with_capacity(c.len());
    let mut worst = f64::INFINITY;
    let mut worst_id = String::new();
    for (m, &ri) in c.members().iter().zip(r) {
        let b = benchmark_respond(m, ri, t, solver)?;
        let o = outcome
            .per_member
            .get(m.id())
            .ok_or_else(|| Error::UnknownMember(m.id().to_string()))?;
        let margin = o.surplus - b.surplus;
        if margin < worst {
            worst = margin;
            worst_id = m.id().to_string();
        }
        benchmark_surplus.insert(m.id().to_string(), b.surplus);
    }
    let rationality = if worst >= -AXIOM_TOLERANCE {
        AxiomCheck::pass(worst)
    } else {
        AxiomCheck::fail(worst, format!("member {worst_id} loses {:e} by joining", -worst))
    };

    let residual = (outcome.total_payment() - t.payment(outcome.z_n)).abs();
    let neutrality = if residual <= AXIOM_TOLERANCE {
        AxiomCheck::pass(residual)
    } else {
        AxiomCheck::fail(
            residual,
            format!(
                "payments {} vs NEM bill {} at z_N = {}",
                outcome.total_payment(),
                t.payment(outcome.z_n),
                outcome.z_n
            ),
        )
    };

    Ok(AxiomReport {
        uniform_volumetric: uniform,
        monotonic_zero_at_zero: monotone,
        individual_rationality: rationality,
        profit_neutrality: neutrality,
        benchmark_surplus,
    })
}

/// The three situations in which joining leaves a member's surplus unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroCase {
    /// Community buys at the retail rate and the member would buy alone too,
    /// within its own import envelope.
    BothImporting,
    /// Community sells at the export rate and the member would sell alone too,
    /// within its own export envelope.
    BothExporting,
    /// Community is self-balanced and so is the member.
    BothBalanced,
}

impl ZeroCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            ZeroCase::BothImporting => "both_importing",
            ZeroCase::BothExporting => "both_exporting",
            ZeroCase::BothBalanced => "both_balanced",
        }
    }
}

/// Classifies a (community, member) situation as one of the zero-gain cases.
pub fn zero_case(sigmas: &[f64; 4], deltas: &[f64; 4], r_n: f64, r_i: f64, d_i_total: f64) -> Option<ZeroCase> {
    let [s1, s2, s3, s4] = *sigmas;
    let [d1, d2, d3, d4] = *deltas;
    // Below Δ1 (above Δ4) the member's own envelope binds when standalone,
    // so the unconstrained community rate still leaves a strict gain.
    if (s1..=s2).contains(&r_n) && (d1..=d2).contains(&r_i) {
        Some(ZeroCase::BothImporting)
    } else if (s3..=s4).contains(&r_n) && (d3..=d4).contains(&r_i) {
        Some(ZeroCase::BothExporting)
    } else if (s2..=s3).contains(&r_n) && (d_i_total - r_i).abs() <= SELF_BALANCE_TOLERANCE {
        Some(ZeroCase::BothBalanced)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCaseHit {
    pub scenario: usize,
    pub member: String,
    pub case: ZeroCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocViolationKind {
    /// Member is worse off in the community.
    Negative,
    /// A zero-gain case shows a non-zero gain.
    NonZero,
    /// Outside the zero-gain cases the gain is not strictly positive.
    NotPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocViolation {
    pub scenario: usize,
    pub member: String,
    pub kind: VocViolationKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocReport {
    /// Mean over scenarios of community minus standalone surplus.
    pub per_member: IndexMap<String, f64>,
    pub total: f64,
    pub zero_cases: Vec<ZeroCaseHit>,
    pub violations: Vec<VocViolation>,
    /// Whether strict positivity outside the zero cases was required
    /// (`π⁻ < π⁺` and both aggregation inequalities strict).
    pub strict: bool,
}

/// Per-member value of community for one scenario, with the standalone
/// responses it was measured against.
pub(crate) fn voc_single(
    c: &Community,
    t: &NemTariff,
    r: &[f64],
    solver: &Bisection,
) -> Result<(CommunityOutcome, Vec<f64>)> {
    let outcome = community_respond(c, t, r, solver)?;
    let mut gains = Vec::with_capacity(c.len());
    for (m, &ri) in c.members().iter().zip(r) {
        let b = benchmark_respond(m, ri, t, solver)?;
        gains.push(outcome.per_member[m.id()].surplus - b.surplus);
    }
    Ok((outcome, gains))
}

/// Empirical value of community over `scenarios` (one renewable vector each).
pub fn voc(c: &Community, t: &NemTariff, scenarios: &[Vec<f64>], solver: &Bisection) -> Result<VocReport> {
    if scenarios.is_empty() {
        return Err(Error::Usage("value of community needs at least one scenario".into()));
    }
    let strict = t.pi_minus() < t.pi_plus() && c.import_slack() > 0.0 && c.export_slack() < 0.0;
    let mut sums = vec![0.0; c.len()];
    let mut zero_cases = Vec::new();
    let mut violations = Vec::new();

    for (k, r) in scenarios.iter().enumerate() {
        let (outcome, gains) = voc_single(c, t, r, solver)?;
        let r_n = outcome.schedule.r_n;
        for ((m, &ri), (&gain, sum)) in c.members().iter().zip(r).zip(gains.iter().zip(sums.iter_mut())) {
            *sum += gain;
            let deltas = crate::benchmark::benchmark_deltas(m, t);
            let d_total: f64 = outcome.per_member[m.id()].d.iter().sum();
            let case = zero_case(&outcome.schedule.sigmas, &deltas, r_n, ri, d_total);
            let mut flag = |kind| {
                violations.push(VocViolation {
                    scenario: k,
                    member: m.id().to_string(),
                    kind,
                    value: gain,
                })
            };
            if gain < -AXIOM_TOLERANCE {
                flag(VocViolationKind::Negative);
            }
            match case {
                Some(case) => {
                    if gain.abs() > AXIOM_TOLERANCE {
                        flag(VocViolationKind::NonZero);
                    }
                    zero_cases.push(ZeroCaseHit {
                        scenario: k,
                        member: m.id().to_string(),
                        case,
                    });
                }
                None if strict && (-AXIOM_TOLERANCE..=0.0).contains(&gain) => flag(VocViolationKind::NotPositive),
                None => {}
            }
        }
    }

    let count = scenarios.len() as f64;
    let per_member: IndexMap<String, f64> = c
        .members()
        .iter()
        .zip(&sums)
        .map(|(m, s)| (m.id().to_string(), s / count))
        .collect();
    let total = per_member.values().sum();
    Ok(VocReport {
        per_member,
        total,
        zero_cases,
        violations,
        strict,
    })
}

/// Surplus of each member under the aggregate-envelope policy, under D-NEM
/// with member-level envelopes, and standalone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusChain {
    pub community_zone: PriceZone,
    pub dnem: DnemSchedule,
    /// Both communities net-consuming or both net-producing.
    pub ordered: bool,
    pub community: IndexMap<String, f64>,
    pub dnem_surplus: IndexMap<String, f64>,
    pub benchmark: IndexMap<String, f64>,
    pub benchmark_zones: IndexMap<String, BenchmarkZone>,
}

impl SurplusChain {
    /// Largest violation of `community >= dnem >= benchmark` over members.
    pub fn worst_gap(&self) -> f64 {
        self.community
            .iter()
            .map(|(id, &a)| {
                let b = self.dnem_surplus[id];
                let c = self.benchmark[id];
                (b - a).max(c - b)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Three-way surplus comparison at renewables `r`.
pub fn surplus_chain(c: &Community, t: &NemTariff, r: &[f64], solver: &Bisection) -> Result<SurplusChain> {
    let outcome = community_respond(c, t, r, solver)?;
    let dnem = dnem_schedule(c, t, r, solver)?;
    let r_n = outcome.schedule.r_n;
    let [_, s2, s3, _] = outcome.schedule.sigmas;
    let ordered = (r_n < s2 && r_n < dnem.theta1) || (r_n > s3 && r_n > dnem.theta2);

    let mut community = IndexMap::with_capacity(c.len());
    let mut dnem_surplus = IndexMap::with_capacity(c.len());
    let mut benchmark = IndexMap::with_capacity(c.len());
    let mut benchmark_zones = IndexMap::with_capacity(c.len());
    for (m, &ri) in c.members().iter().zip(r) {
        let id = m.id().to_string();
        community.insert(id.clone(), outcome.per_member[m.id()].surplus);
        dnem_surplus.insert(id.clone(), dnem_member_respond(m, ri, &dnem, t, solver)?.surplus);
        let b = benchmark_respond(m, ri, t, solver)?;
        benchmark.insert(id.clone(), b.surplus);
        benchmark_zones.insert(id, b.zone);
    }
    Ok(SurplusChain {
        community_zone: outcome.schedule.zone,
        dnem,
        ordered,
        community,
        dnem_surplus,
        benchmark,
        benchmark_zones,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::Member;
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

    fn example() -> Community {
        pair(0.2, -0.2, -0.5, 0.5)
    }

    #[test]
    fn balanced_community() {
        let o = community_respond(&example(), &tariff(), &[1.25, 1.25], &Bisection::default()).unwrap();
        assert_relative_eq!(o.schedule.price, 0.75, epsilon = 1e-9);
        for m in o.per_member.values() {
            assert_relative_eq!(m.d[0], 1.25, epsilon = 1e-9);
            assert_relative_eq!(m.z, 0.0, epsilon = 1e-9);
        }
        assert_relative_eq!(o.z_n, 0.0, epsilon = 1e-9);
        assert_relative_eq!(o.welfare, 3.4375, epsilon = 1e-9);
    }

    #[test]
    fn import_envelope_binds() {
        let o = community_respond(&example(), &tariff(), &[0.5, 0.5], &Bisection::default()).unwrap();
        assert_eq!(o.schedule.zone, PriceZone::ChiPlus);
        assert_relative_eq!(o.schedule.price, 1.25, epsilon = 1e-9);
        for m in o.per_member.values() {
            assert_relative_eq!(m.d[0], 0.75, epsilon = 1e-9);
            assert_relative_eq!(m.z, 0.25, epsilon = 1e-9);
        }
        assert_relative_eq!(o.z_n, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn no_generation_pure_retail() {
        let c = pair(0.2, -0.2, -0.5, 2.5);
        let o = community_respond(&c, &tariff(), &[0.0, 0.0], &Bisection::default()).unwrap();
        assert_eq!(o.schedule.zone, PriceZone::PiPlus);
        assert_eq!(o.schedule.price, 1.0);
        assert_relative_eq!(o.z_n, c.total_demand(1.0), epsilon = 1e-12);
    }

    #[test]
    fn centralized_examples() {
        let b = Bisection::default();
        let w = centralized_welfare(&example(), &tariff(), 2.5, &b).unwrap();
        assert_relative_eq!(w.welfare, 3.4375, epsilon = 1e-9);
        let w = centralized_welfare(&example(), &tariff(), 1.0, &b).unwrap();
        assert_relative_eq!(w.welfare, 1.9375, epsilon = 1e-9);
        assert_relative_eq!(w.z_n, 0.5, epsilon = 1e-12);

        let u = DeviceUtility::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let m = Member::new("z", UtilityBundle::single(u), 0.0, 0.0).unwrap();
        let c = Community::new(vec![m], 0.0, 0.0).unwrap();
        assert_eq!(centralized_welfare(&c, &tariff(), 0.0, &b).unwrap().welfare, 0.0);
    }

    #[test]
    fn axioms_hold_on_examples() {
        let b = Bisection::default();
        let c = example();
        for r in [[0.5, 0.5], [0.9, 0.85], [1.25, 1.25], [1.6, 1.7], [2.0, 2.0]] {
            let o = community_respond(&c, &tariff(), &r, &b).unwrap();
            let report = verify_axioms(&c, &tariff(), &r, &o, &b).unwrap();
            assert!(report.all_passed(), "{r:?}: {report:?}");
            assert!(report.profit_neutrality.margin <= 1e-9);
            assert!(report.individual_rationality.margin >= -1e-9);
        }
    }

    #[test]
    fn voc_zero_case_importing() {
        // r_N = 1.75 lies in (σ1, σ2) = (1.5, 2.0); member a at 0.9 buys alone
        let c = example();
        let report = voc(&c, &tariff(), &[vec![0.9, 0.85]], &Bisection::default()).unwrap();
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert_relative_eq!(report.per_member["a"], 0.0, epsilon = 1e-12);
        assert!(report
            .zero_cases
            .iter()
            .any(|h| h.member == "a" && h.case == ZeroCase::BothImporting));
    }

    #[test]
    fn voc_positive_when_import_envelope_binds() {
        let c = pair(0.2, -0.2, -0.5, 0.5);
        let report = voc(&c, &tariff(), &[vec![0.5, 0.5], vec![0.3, 0.6]], &Bisection::default()).unwrap();
        assert!(report.strict);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.per_member.values().all(|v| *v > 0.0));
    }

    #[test]
    fn singleton_has_no_value() {
        let u = DeviceUtility::new(2.0, 1.0, 0.0, 2.0).unwrap();
        let m = Member::new("solo", UtilityBundle::single(u), -0.3, 0.2).unwrap();
        let c = Community::new(vec![m], -0.3, 0.2).unwrap();
        let scenarios: Vec<Vec<f64>> = (0..=22).map(|k| vec![0.1 * k as f64]).collect();
        let report = voc(&c, &tariff(), &scenarios, &Bisection::default()).unwrap();
        assert!(!report.strict);
        assert!(report.violations.is_empty());
        assert!(report.per_member["solo"].abs() <= 1e-9);
    }

    #[test]
    fn voc_rejects_empty() {
        assert!(matches!(
            voc(&example(), &tariff(), &[], &Bisection::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn chain_on_import_side() {
        let c = pair(0.2, -0.3, -0.6, 0.5);
        let chain = surplus_chain(&c, &tariff(), &[0.1, 0.3], &Bisection::default()).unwrap();
        assert!(chain.ordered);
        assert!(chain.worst_gap() <= 1e-9, "{chain:?}");
    }
}
