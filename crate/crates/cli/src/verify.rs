//! Randomized verification of the pricing guarantees.
//!
//! Every instance is regenerated from `(seed, index)`, so each reported
//! violation can be replayed on its own.

use std::path::Path;

use anyhow::Context;
use indexmap::IndexMap;
use log::{info, warn};
use oe_community::community::{brute_force_welfare, AXIOM_TOLERANCE, BRUTE_FORCE_MAX_DEVICES};
use oe_community::{
    centralized_welfare, community_respond, compute_sigmas, dnem_member_respond, price_policy, surplus_chain,
    verify_axioms, voc, Bisection, Community, CommunityOutcome, Error, Instance, InstanceSpec, NemTariff, PriceZone,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::write_csv_with_header;
use crate::{classify, solver_with, Failure};

/// Tolerance on realized aggregate net consumption per zone.
pub const ZONE_TOLERANCE: f64 = 1e-8;
/// Tolerance between decentralized and closed-form welfare.
pub const WELFARE_TOLERANCE: f64 = 1e-8;
/// Grid step and tolerance of the brute-force welfare comparison.
pub const BRUTE_FORCE_STEP: f64 = 1e-3;
pub const BRUTE_FORCE_TOLERANCE: f64 = 5e-3;
/// Points in each aggregate-output sweep.
pub const SWEEP_POINTS: usize = 100;
/// Largest price jump allowed across a zone boundary.
pub const CONTINUITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Pay no rewards, so payments no longer add up to the community bill.
    DisableRewards,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    ProfitNeutrality,
    IndividualRationality,
    ZeroGainCases,
    StrictGain,
    UniformVolumetric,
    MonotonicZeroAtZero,
    AggregateNetConsumption,
    PriceOrder,
    PriceMonotone,
    PriceContinuity,
    WelfareClosedForm,
    WelfareBruteForce,
    SurplusChain,
    DnemBounds,
}

impl Check {
    pub fn as_str(&self) -> &'static str {
        match self {
            Check::ProfitNeutrality => "profit_neutrality",
            Check::IndividualRationality => "individual_rationality",
            Check::ZeroGainCases => "zero_gain_cases",
            Check::StrictGain => "strict_gain",
            Check::UniformVolumetric => "uniform_volumetric",
            Check::MonotonicZeroAtZero => "monotonic_zero_at_zero",
            Check::AggregateNetConsumption => "aggregate_net_consumption",
            Check::PriceOrder => "price_order",
            Check::PriceMonotone => "price_monotone",
            Check::PriceContinuity => "price_continuity",
            Check::WelfareClosedForm => "welfare_closed_form",
            Check::WelfareBruteForce => "welfare_brute_force",
            Check::SurplusChain => "surplus_chain",
            Check::DnemBounds => "dnem_bounds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub seed: u64,
    pub index: u64,
    /// Scenario within the instance, absent for instance-wide checks.
    pub scenario: Option<usize>,
    pub check: &'static str,
    pub value: f64,
    pub detail: String,
}

/// How often a check ran, failed, and its worst observed value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CheckStats {
    pub evaluated: usize,
    pub failed: usize,
    /// Largest residual (or most negative margin, for margin checks).
    pub worst: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceResult {
    pub stats: IndexMap<Check, CheckStats>,
    pub violations: Vec<Violation>,
    pub scenarios: usize,
    pub chain_qualifying: usize,
    pub zones_covered: Vec<PriceZone>,
}

impl InstanceResult {
    fn record(&mut self, check: Check, value: f64, ok: bool, worse: fn(f64, f64) -> bool) {
        let s = self.stats.entry(check).or_insert(CheckStats {
            evaluated: 0,
            failed: 0,
            worst: value,
        });
        s.evaluated += 1;
        if worse(value, s.worst) {
            s.worst = value;
        }
        if !ok {
            s.failed += 1;
        }
    }
}

fn larger(a: f64, b: f64) -> bool {
    a > b
}

fn smaller(a: f64, b: f64) -> bool {
    a < b
}

struct Ctx<'a> {
    inst: &'a Instance,
    out: InstanceResult,
}

impl Ctx<'_> {
    // Residual-style check: passes when `value <= tol`.
    fn residual(
        &mut self,
        check: Check,
        scenario: Option<usize>,
        value: f64,
        tol: f64,
        detail: impl FnOnce() -> String,
    ) {
        let ok = value <= tol;
        self.out.record(check, value, ok, larger);
        if !ok {
            self.violation(check, scenario, value, detail());
        }
    }

    // Margin-style check: passes when `value >= -tol`.
    fn margin(&mut self, check: Check, scenario: Option<usize>, value: f64, tol: f64, detail: impl FnOnce() -> String) {
        let ok = value >= -tol;
        self.out.record(check, value, ok, smaller);
        if !ok {
            self.violation(check, scenario, value, detail());
        }
    }

    fn violation(&mut self, check: Check, scenario: Option<usize>, value: f64, detail: String) {
        self.out.violations.push(Violation {
            seed: self.inst.seed,
            index: self.inst.index,
            scenario,
            check: check.as_str(),
            value,
            detail,
        });
    }
}

/// Outcome with every reward removed: members pay only the volumetric charge.
pub fn without_rewards(c: &Community, outcome: &CommunityOutcome) -> CommunityOutcome {
    let mut o = outcome.clone();
    for m in c.members() {
        let mo = o.per_member.get_mut(m.id()).expect("member present");
        let value = mo.surplus + mo.payment;
        mo.payment = o.schedule.price * mo.z;
        mo.reward = 0.0;
        mo.surplus = value - mo.payment;
    }
    for v in o.rewards.per_member.values_mut() {
        *v = 0.0;
    }
    o.rewards.total = 0.0;
    o.welfare = o.per_member.values().map(|m| m.surplus).sum();
    o
}

fn zone_target(c: &Community, zone: PriceZone) -> Option<f64> {
    match zone {
        PriceZone::ChiPlus => Some(c.z_hi_n()),
        PriceZone::ChiZ => Some(0.0),
        PriceZone::ChiMinus => Some(c.z_lo_n()),
        _ => None,
    }
}

// Distance of the price from the interval its zone allows.
fn price_order_gap(zone: PriceZone, price: f64, t: &NemTariff) -> f64 {
    let (lo, hi) = match zone {
        PriceZone::ChiPlus => (t.pi_plus(), f64::INFINITY),
        PriceZone::PiPlus => (t.pi_plus(), t.pi_plus()),
        PriceZone::ChiZ => (t.pi_minus(), t.pi_plus()),
        PriceZone::PiMinus => (t.pi_minus(), t.pi_minus()),
        PriceZone::ChiMinus => (0.0, t.pi_minus()),
    };
    (lo - price).max(price - hi).max(0.0)
}

/// Range of aggregate output for which the community problem is feasible.
pub fn feasible_r_n(c: &Community) -> (f64, f64) {
    ((c.min_total() - c.z_hi_n()).max(0.0), c.saturation_total() - c.z_lo_n())
}

// Aggregate demand is flat at `rate` on the side facing the neighbouring
// dynamic zone; the price is then set-valued at the boundary.
fn flat_at(c: &Community, rate: f64, upward: bool) -> bool {
    let h = 1e-6 * (1.0 + rate);
    let probe = if upward { rate + h } else { (rate - h).max(0.0) };
    c.total_demand(probe) == c.total_demand(rate)
}

fn price_structure(ctx: &mut Ctx, solver: &Bisection) -> Result<(), Error> {
    let (c, t) = (&ctx.inst.community, &ctx.inst.tariff);
    let (lo, hi) = feasible_r_n(c);
    if hi <= lo {
        return Ok(());
    }

    let mut prev = f64::INFINITY;
    let mut worst_rise: f64 = 0.0;
    for k in 0..SWEEP_POINTS {
        let r_n = lo + (hi - lo) * k as f64 / (SWEEP_POINTS - 1) as f64;
        let s = price_policy(c, t, r_n, solver)?;
        worst_rise = worst_rise.max(s.price - prev);
        prev = s.price;
    }
    ctx.residual(Check::PriceMonotone, None, worst_rise.max(0.0), 0.0, || {
        format!("price rises by {worst_rise:e} along the r_N sweep")
    });

    let sigmas = compute_sigmas(c, t);
    let delta = 1e-9;
    let boundaries = [
        (sigmas[0], t.pi_plus(), true),
        (sigmas[1], t.pi_plus(), false),
        (sigmas[2], t.pi_minus(), true),
        (sigmas[3], t.pi_minus(), false),
    ];
    let merged_band = sigmas[1] == sigmas[2] && t.pi_plus() > t.pi_minus();
    for (k, &(sigma, rate, upward)) in boundaries.iter().enumerate() {
        if sigma - delta < lo || sigma + delta > hi || flat_at(c, rate, upward) {
            continue;
        }
        if merged_band && (k == 1 || k == 2) {
            continue;
        }
        let left = price_policy(c, t, sigma - delta, solver)?.price;
        let right = price_policy(c, t, sigma + delta, solver)?.price;
        let jump = (left - right).abs();
        ctx.residual(Check::PriceContinuity, None, jump, CONTINUITY_TOLERANCE, || {
            format!("price jumps by {jump:e} at sigma{} = {sigma}", k + 1)
        });
    }
    Ok(())
}

/// Runs every check on one instance.
pub fn check_instance(inst: &Instance, solver: &Bisection, fault: Option<Fault>) -> Result<InstanceResult, Error> {
    let mut ctx = Ctx {
        inst,
        out: InstanceResult::default(),
    };
    let (c, t) = (&inst.community, &inst.tariff);
    let small = c.members().iter().map(|m| m.bundle().len()).sum::<usize>() <= BRUTE_FORCE_MAX_DEVICES;

    for (k, r) in inst.scenarios.iter().enumerate() {
        let sc = Some(k);
        let mut outcome = community_respond(c, t, r, solver)?;
        if fault == Some(Fault::DisableRewards) {
            outcome = without_rewards(c, &outcome);
        }
        let zone = outcome.schedule.zone;
        if !ctx.out.zones_covered.contains(&zone) {
            ctx.out.zones_covered.push(zone);
        }

        let ax = verify_axioms(c, t, r, &outcome, solver)?;
        ctx.residual(
            Check::ProfitNeutrality,
            sc,
            ax.profit_neutrality.margin,
            AXIOM_TOLERANCE,
            || ax.profit_neutrality.witness.clone().unwrap_or_default(),
        );
        ctx.margin(
            Check::IndividualRationality,
            sc,
            ax.individual_rationality.margin,
            AXIOM_TOLERANCE,
            || ax.individual_rationality.witness.clone().unwrap_or_default(),
        );
        let uniform = ax.uniform_volumetric.clone();
        ctx.residual(
            Check::UniformVolumetric,
            sc,
            if uniform.passed {
                0.0
            } else {
                uniform.margin.max(f64::MIN_POSITIVE)
            },
            0.0,
            || uniform.witness.clone().unwrap_or_default(),
        );
        let mono = ax.monotonic_zero_at_zero.clone();
        ctx.residual(
            Check::MonotonicZeroAtZero,
            sc,
            if mono.passed {
                0.0
            } else {
                mono.margin.abs().max(f64::MIN_POSITIVE)
            },
            0.0,
            || mono.witness.clone().unwrap_or_default(),
        );

        let z_gap = match zone_target(c, zone) {
            Some(target) => (outcome.z_n - target).abs(),
            None => 0.0,
        }
        .max(outcome.z_n - c.z_hi_n())
        .max(c.z_lo_n() - outcome.z_n);
        ctx.residual(Check::AggregateNetConsumption, sc, z_gap, ZONE_TOLERANCE, || {
            format!("zone {zone}: z_N = {} outside its target", outcome.z_n)
        });

        let order = price_order_gap(zone, outcome.schedule.price, t);
        ctx.residual(Check::PriceOrder, sc, order, 0.0, || {
            format!("zone {zone}: price {} out of order", outcome.schedule.price)
        });

        let w = centralized_welfare(c, t, outcome.schedule.r_n, solver)?;
        let gap = (w.welfare - outcome.welfare).abs();
        ctx.residual(Check::WelfareClosedForm, sc, gap, WELFARE_TOLERANCE, || {
            format!("decentralized {} vs closed form {}", outcome.welfare, w.welfare)
        });
        if small {
            let b = brute_force_welfare(c, t, outcome.schedule.r_n, BRUTE_FORCE_STEP)?;
            let gap = (b - w.welfare).abs();
            ctx.residual(Check::WelfareBruteForce, sc, gap, BRUTE_FORCE_TOLERANCE, || {
                format!("grid search {b} vs closed form {}", w.welfare)
            });
        }

        let chain = surplus_chain(c, t, r, solver)?;
        let d = &chain.dnem;
        let mut dnem_gap = (t.pi_minus() - d.price).max(d.price - t.pi_plus()).max(0.0);
        for (m, &ri) in c.members().iter().zip(r) {
            let resp = dnem_member_respond(m, ri, d, t, solver)?;
            dnem_gap = dnem_gap.max(resp.z - m.z_hi()).max(m.z_lo() - resp.z);
        }
        ctx.residual(Check::DnemBounds, sc, dnem_gap, 1e-12, || {
            format!("D-NEM price {} or member z outside bounds", d.price)
        });
        if chain.ordered {
            ctx.out.chain_qualifying += 1;
            let gap = chain.worst_gap().max(0.0);
            ctx.residual(Check::SurplusChain, sc, gap, AXIOM_TOLERANCE, || {
                format!("surplus ordering broken by {gap:e} in zone {}", chain.community_zone)
            });
        }
    }
    ctx.out.scenarios = inst.scenarios.len();

    let report = voc(c, t, &inst.scenarios, solver)?;
    let mut zero_bad = 0.0_f64;
    let mut strict_bad = 0.0_f64;
    for v in &report.violations {
        use oe_community::community::VocViolationKind as K;
        match v.kind {
            K::NonZero => zero_bad = zero_bad.max(v.value.abs()),
            K::NotPositive => strict_bad = strict_bad.max(f64::MIN_POSITIVE.max(-v.value)),
            K::Negative => {}
        }
    }
    ctx.residual(Check::ZeroGainCases, None, zero_bad, 0.0, || {
        format!("gain {zero_bad:e} where it should vanish")
    });
    if report.strict {
        ctx.residual(Check::StrictGain, None, strict_bad, 0.0, || {
            "a member gains nothing outside the zero-gain cases".to_string()
        });
    }

    price_structure(&mut ctx, solver)?;
    Ok(ctx.out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub instances: u64,
    pub scenarios: usize,
    pub chain_qualifying: usize,
    /// Instances with at least one scenario meeting the ordering conditions.
    pub chain_instances: usize,
    pub stats: IndexMap<Check, CheckStats>,
    pub violations: Vec<Violation>,
    /// Instances whose scenarios hit each zone.
    pub zone_instances: IndexMap<PriceZone, usize>,
}

/// Checks instances `0..iterations` of `spec` in parallel.
pub fn run_suite(
    spec: &InstanceSpec,
    iterations: u64,
    solver: &Bisection,
    fault: Option<Fault>,
) -> Result<VerifyReport, Error> {
    spec.validate()?;
    let results: Vec<InstanceResult> = (0..iterations)
        .into_par_iter()
        .map(|index| {
            let inst = spec.generate(index)?;
            check_instance(&inst, solver, fault)
        })
        .collect::<Result<_, _>>()?;

    let mut report = VerifyReport {
        instances: iterations,
        zone_instances: PriceZone::ALL.iter().map(|z| (*z, 0)).collect(),
        ..VerifyReport::default()
    };
    for res in results {
        report.scenarios += res.scenarios;
        report.chain_qualifying += res.chain_qualifying;
        report.chain_instances += usize::from(res.chain_qualifying > 0);
        for z in res.zones_covered {
            *report.zone_instances.entry(z).or_default() += 1;
        }
        for (check, s) in res.stats {
            let acc = report.stats.entry(check).or_insert(CheckStats {
                worst: s.worst,
                ..CheckStats::default()
            });
            acc.evaluated += s.evaluated;
            acc.failed += s.failed;
            let margin = matches!(check, Check::IndividualRationality);
            if (margin && s.worst < acc.worst) || (!margin && s.worst > acc.worst) {
                acc.worst = s.worst;
            }
        }
        report.violations.extend(res.violations);
    }
    report.stats.sort_keys();
    Ok(report)
}

pub const VIOLATION_HEADER: [&str; 6] = ["seed", "index", "scenario", "check", "value", "detail"];

pub fn load_spec(path: &Path) -> Result<InstanceSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Usage)?;
    toml::from_str(&text)
        .with_context(|| format!("invalid instance spec {}", path.display()))
        .map_err(Failure::Usage)
}

pub fn command(
    seed: u64,
    iterations: u64,
    spec: Option<&Path>,
    out: &Path,
    fault: Option<Fault>,
    tolerance: Option<f64>,
) -> Result<(), Failure> {
    if iterations == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--iterations must be >= 1")));
    }
    let mut spec = match spec {
        Some(path) => load_spec(path)?,
        None => InstanceSpec::default(),
    };
    spec.seed = seed;
    spec.validate().map_err(classify)?;
    let solver = solver_with(Bisection::default(), tolerance)?;
    if let Some(f) = fault {
        warn!("fault injection active: {f:?}");
    }

    let report = run_suite(&spec, iterations, &solver, fault).map_err(classify)?;
    write_csv_with_header(out, &VIOLATION_HEADER, &report.violations)?;
    for (check, s) in &report.stats {
        info!(
            "{:<28} evaluated {:>7}  failed {:>5}  worst {:e}",
            check.as_str(),
            s.evaluated,
            s.failed,
            s.worst
        );
    }
    println!(
        "verified {} instances ({} scenarios): {} violations",
        report.instances,
        report.scenarios,
        report.violations.len()
    );
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "{} violations written to {}",
            report.violations.len(),
            out.display()
        )))
    }
}
