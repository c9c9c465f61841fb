//! One pricing and response cycle per interval of a renewable series.

use std::path::Path;

use anyhow::anyhow;
use chrono::NaiveDateTime;
use indexmap::IndexMap;
use log::info;
use oe_community::ingest::TIMESTAMP_FORMAT;
use oe_community::{
    community_respond, load_config, load_series, verify_axioms, Bisection, Error, Model, PriceZone, ScenarioSeries,
};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::histogram::{histogram, Bucket, DEFAULT_BINS};
use crate::output::{ensure_dir, write_csv, write_histogram, write_json};
use crate::{classify, solver_with, Failure};

/// Tolerance on per-interval conservation of payments.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

fn timestamp<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&t.format(TIMESTAMP_FORMAT))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRecord {
    #[serde(serialize_with = "timestamp")]
    pub timestamp: NaiveDateTime,
    pub r_n: f64,
    pub zone: PriceZone,
    pub price: f64,
    pub pi_plus: f64,
    pub pi_minus: f64,
    pub z_n: f64,
    pub z_hi_n: f64,
    pub z_lo_n: f64,
    pub total_rewards: f64,
    pub total_payment: f64,
    pub nem_bill: f64,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberSummary {
    pub member_id: String,
    pub total_payment: f64,
    pub total_volumetric: f64,
    pub total_reward: f64,
    pub total_surplus: f64,
    pub benchmark_surplus: f64,
    /// Mean per-interval surplus gain over standalone NEM.
    pub voc: f64,
    /// `|Σ volumetric| / |Σ A_i|`; absent when no reward was paid.
    pub volumetric_to_fixed: Option<f64>,
    /// Surplus gain over standalone NEM as a percentage of standalone surplus.
    pub surplus_gain_pct: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AxiomSummary {
    pub intervals_checked: usize,
    pub uniform_volumetric_failures: usize,
    pub monotonic_failures: usize,
    pub individual_rationality_failures: usize,
    pub profit_neutrality_failures: usize,
    pub worst_rationality_margin: f64,
    pub max_neutrality_residual: f64,
}

impl AxiomSummary {
    pub fn failures(&self) -> usize {
        self.uniform_volumetric_failures
            + self.monotonic_failures
            + self.individual_rationality_failures
            + self.profit_neutrality_failures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Excursions {
    /// Intervals priced above the buy rate.
    pub above_buy_rate: usize,
    /// Intervals priced below the sell rate.
    pub below_sell_rate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub intervals: usize,
    pub members: usize,
    pub zone_occupancy: IndexMap<PriceZone, usize>,
    pub excursions: Excursions,
    pub total_rewards: f64,
    pub total_payment: f64,
    pub total_welfare: f64,
    pub mean_voc: f64,
    pub axioms: AxiomSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub intervals: Vec<IntervalRecord>,
    pub members: Vec<MemberSummary>,
    pub summary: Summary,
}

struct IntervalResult {
    record: IntervalRecord,
    // per member: (payment, volumetric, reward, surplus, benchmark surplus)
    members: Vec<[f64; 5]>,
    uniform_ok: bool,
    monotone_ok: bool,
    rationality_margin: f64,
    neutrality_residual: f64,
}

fn price_interval(
    model: &Model,
    series: &ScenarioSeries,
    k: usize,
    solver: &Bisection,
) -> Result<IntervalResult, Error> {
    let c = &model.community;
    let t = series.tariff_calendar[k];
    let r = series.renewables(k);
    let outcome = community_respond(c, &t, &r, solver)?;
    let axioms = verify_axioms(c, &t, &r, &outcome, solver)?;
    let members = c
        .members()
        .iter()
        .map(|m| {
            let o = &outcome.per_member[m.id()];
            [
                o.payment,
                o.payment + o.reward,
                o.reward,
                o.surplus,
                axioms.benchmark_surplus[m.id()],
            ]
        })
        .collect();
    let total_payment = outcome.total_payment();
    let nem_bill = t.payment(outcome.z_n);
    Ok(IntervalResult {
        record: IntervalRecord {
            timestamp: series.timestamps[k],
            r_n: outcome.schedule.r_n,
            zone: outcome.schedule.zone,
            price: outcome.schedule.price,
            pi_plus: t.pi_plus(),
            pi_minus: t.pi_minus(),
            z_n: outcome.z_n,
            z_hi_n: c.z_hi_n(),
            z_lo_n: c.z_lo_n(),
            total_rewards: outcome.rewards.total,
            total_payment,
            nem_bill,
            welfare: outcome.welfare,
        },
        members,
        uniform_ok: axioms.uniform_volumetric.passed,
        monotone_ok: axioms.monotonic_zero_at_zero.passed,
        rationality_margin: axioms.individual_rationality.margin,
        neutrality_residual: (total_payment - nem_bill).abs(),
    })
}

/// Prices every interval (in parallel) and aggregates in timestamp order.
pub fn simulate_series(model: &Model, series: &ScenarioSeries, solver: &Bisection) -> Result<RunReport, Failure> {
    if series.is_empty() {
        return Err(Failure::Usage(anyhow!("series has no intervals")));
    }
    let results: Vec<IntervalResult> = (0..series.len())
        .into_par_iter()
        .map(|k| {
            price_interval(model, series, k, solver).map_err(|e| {
                let at = series.timestamps[k].format(TIMESTAMP_FORMAT);
                match classify(e) {
                    Failure::Usage(e) => Failure::Usage(e.context(format!("interval {k} ({at})"))),
                    Failure::Runtime(e) => Failure::Runtime(e.context(format!("interval {k} ({at})"))),
                    other => other,
                }
            })
        })
        .collect::<Result<_, _>>()?;

    let c = &model.community;
    let n_intervals = results.len();
    let mut totals = vec![[0.0; 5]; c.len()];
    let mut axioms = AxiomSummary {
        intervals_checked: n_intervals,
        worst_rationality_margin: f64::INFINITY,
        ..AxiomSummary::default()
    };
    let mut occupancy: IndexMap<PriceZone, usize> = PriceZone::ALL.iter().map(|z| (*z, 0)).collect();
    let mut excursions = Excursions {
        above_buy_rate: 0,
        below_sell_rate: 0,
    };
    let mut intervals = Vec::with_capacity(n_intervals);
    for res in results {
        for (acc, m) in totals.iter_mut().zip(&res.members) {
            for (a, v) in acc.iter_mut().zip(m) {
                *a += v;
            }
        }
        axioms.uniform_volumetric_failures += usize::from(!res.uniform_ok);
        axioms.monotonic_failures += usize::from(!res.monotone_ok);
        axioms.individual_rationality_failures +=
            usize::from(res.rationality_margin < -oe_community::community::AXIOM_TOLERANCE);
        axioms.profit_neutrality_failures += usize::from(res.neutrality_residual > CONSERVATION_TOLERANCE);
        axioms.worst_rationality_margin = axioms.worst_rationality_margin.min(res.rationality_margin);
        axioms.max_neutrality_residual = axioms.max_neutrality_residual.max(res.neutrality_residual);
        *occupancy.entry(res.record.zone).or_default() += 1;
        excursions.above_buy_rate += usize::from(res.record.price > res.record.pi_plus);
        excursions.below_sell_rate += usize::from(res.record.price < res.record.pi_minus);
        intervals.push(res.record);
    }

    let members: Vec<MemberSummary> = c
        .members()
        .iter()
        .zip(&totals)
        .map(
            |(m, &[payment, volumetric, reward, surplus, benchmark])| MemberSummary {
                member_id: m.id().to_string(),
                total_payment: payment,
                total_volumetric: volumetric,
                total_reward: reward,
                total_surplus: surplus,
                benchmark_surplus: benchmark,
                voc: (surplus - benchmark) / n_intervals as f64,
                volumetric_to_fixed: (reward != 0.0).then(|| volumetric.abs() / reward.abs()),
                surplus_gain_pct: (benchmark != 0.0).then(|| 100.0 * (surplus - benchmark) / benchmark.abs()),
            },
        )
        .collect();

    let summary = Summary {
        intervals: n_intervals,
        members: c.len(),
        zone_occupancy: occupancy,
        excursions,
        total_rewards: intervals.iter().map(|r| r.total_rewards).sum(),
        total_payment: intervals.iter().map(|r| r.total_payment).sum(),
        total_welfare: intervals.iter().map(|r| r.welfare).sum(),
        mean_voc: members.iter().map(|m| m.voc).sum::<f64>() / c.len() as f64,
        axioms,
    };
    Ok(RunReport {
        intervals,
        members,
        summary,
    })
}

/// Writes `intervals.csv`, `members.csv`, `summary.json`,
/// `price_histogram.csv` and `z_n_histogram.csv` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<(), Failure> {
    ensure_dir(dir)?;
    write_csv(&dir.join("intervals.csv"), &report.intervals)?;
    write_csv(&dir.join("members.csv"), &report.members)?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    let (prices, z_n) = histograms(report);
    write_histogram(&dir.join("price_histogram.csv"), &prices)?;
    write_histogram(&dir.join("z_n_histogram.csv"), &z_n)?;
    Ok(())
}

/// Price and z_N histograms of a run.
pub fn histograms(report: &RunReport) -> (Vec<Bucket>, Vec<Bucket>) {
    let prices: Vec<f64> = report.intervals.iter().map(|r| r.price).collect();
    let z_n: Vec<f64> = report.intervals.iter().map(|r| r.z_n).collect();
    (histogram(&prices, DEFAULT_BINS), histogram(&z_n, DEFAULT_BINS))
}

/// Loads and validates a configuration and its series.
pub fn load_inputs(
    config: &Path,
    series: &Path,
    tolerance: Option<f64>,
) -> Result<(Model, ScenarioSeries, Bisection), Failure> {
    let (_, model) = load_config(config).map_err(classify)?;
    let series = load_series(series, &model).map_err(classify)?;
    let solver = solver_with(model.solver, tolerance)?;
    info!(
        "loaded {} members and {} intervals of {} minutes",
        model.community.len(),
        series.len(),
        series.interval_minutes
    );
    Ok((model, series, solver))
}

pub fn command(config: &Path, series: &Path, out: &Path, tolerance: Option<f64>) -> Result<(), Failure> {
    let (model, series, solver) = load_inputs(config, series, tolerance)?;
    let report = simulate_series(&model, &series, &solver)?;
    write_report(&report, out)?;
    let s = &report.summary;
    println!(
        "simulated {} intervals for {} members: welfare {:.6}, rewards {:.6}, mean VoC {:.6}",
        s.intervals, s.members, s.total_welfare, s.total_rewards, s.mean_voc
    );
    if s.axioms.failures() > 0 {
        return Err(Failure::Verification(format!(
            "{} interval checks failed (see summary.json)",
            s.axioms.failures()
        )));
    }
    Ok(())
}
