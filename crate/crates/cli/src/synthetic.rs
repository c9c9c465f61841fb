//! Synthetic residential community with hourly solar output, used to
//! exercise the simulator without proprietary load or irradiance data.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use oe_community::ingest::TIMESTAMP_FORMAT;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub members: usize,
    pub days: u32,
    pub start: NaiveDate,
    /// Aggregate envelope `z̄_N = -z̲_N` as a multiple of the community's
    /// super-off-peak demand; it is split evenly across members.
    pub level: f64,
    /// Tightest level the solar fleet must respect, so every member stays
    /// feasible without curtailment at any level down to it.
    pub min_level: f64,
    pub off_peak_buy: f64,
    pub on_peak_buy: f64,
    /// Buy rate from midnight to 06:00 every day.
    pub super_off_peak_buy: f64,
    pub sell: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            members: 20,
            days: 365,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            level: 1.0,
            min_level: 0.9,
            off_peak_buy: 0.20,
            on_peak_buy: 0.40,
            super_off_peak_buy: 0.12,
            sell: 0.10,
            seed: 2018,
        }
    }
}

struct Household {
    // (alpha, beta, d_hi) per device
    devices: [(f64, f64, f64); 2],
    solar_kw: f64,
}

fn demand((alpha, beta, d_hi): (f64, f64, f64), price: f64) -> f64 {
    ((alpha - price) / beta).clamp(0.0, d_hi)
}

impl Household {
    fn demand(&self, price: f64) -> f64 {
        self.devices.iter().map(|&d| demand(d, price)).sum()
    }
}

// Households plus the aggregate envelope in kWh.
fn households(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> (Vec<Household>, f64) {
    let mut homes: Vec<Household> = (0..spec.members)
        .map(|_| Household {
            devices: [
                (rng.gen_range(0.5..0.7), rng.gen_range(0.15..0.25), 5.0),
                (rng.gen_range(0.3..0.6), rng.gen_range(0.3..0.6), 2.0),
            ],
            solar_kw: rng.gen_range(0.95..1.0),
        })
        .collect();
    let night: f64 = homes.iter().map(|h| h.demand(spec.super_off_peak_buy)).sum();
    let min_share = spec.min_level * night / spec.members as f64;
    for h in &mut homes {
        // largest output the member can absorb within its tightest envelope
        h.solar_kw *= h.demand(0.0) + min_share;
    }
    (homes, spec.level * night)
}

/// Clear-sky output per kW of capacity, peaking at solar noon in summer.
fn clear_sky(t: &NaiveDateTime) -> f64 {
    let hour = t.hour() as f64 + 0.5;
    let season = 0.8 + 0.2 * (2.0 * PI * (t.ordinal() as f64 - 172.0) / 365.0).cos();
    ((PI * (hour - 6.0) / 12.0).sin()).max(0.0) * season
}

pub fn member_id(i: usize) -> String {
    format!("h{:02}", i + 1)
}

/// Community configuration (TOML) and hourly renewable series (CSV).
pub fn generate(spec: &SyntheticSpec) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (homes, level) = households(spec, &mut rng);
    let share = level / spec.members as f64;

    let mut config = String::new();
    writeln!(
        config,
        "[community]\nz_hi_n = {}\nz_lo_n = {}\ninterval_minutes = 60\n",
        level, -level
    )
    .expect("write to string");
    for (i, h) in homes.iter().enumerate() {
        writeln!(
            config,
            "[members.{}]\nz_hi = {share}\nz_lo = {}\ndevices = [",
            member_id(i),
            -share
        )
        .expect("write to string");
        for (a, b, hi) in h.devices {
            writeln!(config, "  {{ alpha = {a}, beta = {b}, d_hi = {hi} }},").expect("write to string");
        }
        config.push_str("]\n\n");
    }
    writeln!(
        config,
        "[tariff]\nbuy = {}\nsell = {}\n\n[[tariff.on_peak]]\nweekdays = [\"Mon\", \"Tue\", \"Wed\", \"Thu\", \"Fri\"]\nstart_hour = 14\nend_hour = 20\nbuy = {}\n\n[[tariff.on_peak]]\nweekdays = [\"Mon\", \"Tue\", \"Wed\", \"Thu\", \"Fri\", \"Sat\", \"Sun\"]\nstart_hour = 0\nend_hour = 6\nbuy = {}",
        spec.off_peak_buy, spec.sell, spec.on_peak_buy, spec.super_off_peak_buy
    )
    .expect("write to string");

    let mut series = String::from("timestamp,member_id,r_kwh\n");
    let start = spec.start.and_hms_opt(0, 0, 0).expect("valid time");
    for day in 0..spec.days {
        // mostly clear days
        let cloud = 1.0 - 0.7 * rng.gen_range(0.0f64..1.0).powi(3);
        for hour in 0..24 {
            let t = start + Duration::hours(i64::from(day * 24 + hour));
            let sky = clear_sky(&t) * cloud;
            let stamp = t.format(TIMESTAMP_FORMAT);
            for (i, h) in homes.iter().enumerate() {
                let r = if sky > 0.0 {
                    h.solar_kw * sky * rng.gen_range(0.95..1.0)
                } else {
                    0.0
                };
                writeln!(series, "{stamp},{},{r:.6}", member_id(i)).expect("write to string");
            }
        }
    }
    (config, series)
}

/// Writes `community.toml` and `series.csv` into `dir` and returns their paths.
pub fn write(spec: &SyntheticSpec, dir: &Path) -> anyhow::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let (config, series) = generate(spec);
    let (cp, sp) = (dir.join("community.toml"), dir.join("series.csv"));
    std::fs::write(&cp, config).with_context(|| format!("cannot write {}", cp.display()))?;
    std::fs::write(&sp, series).with_context(|| format!("cannot write {}", sp.display()))?;
    Ok((cp, sp))
}
