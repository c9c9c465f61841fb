//! Community configuration and renewable time series from files.
//!
//! The configuration is a TOML document:
//!
//! ```toml
//! [community]
//! z_hi_n = 2.0
//! z_lo_n = -2.0
//! interval_minutes = 15
//!
//! [members.h01]
//! z_hi = 0.5
//! z_lo = -0.5
//! devices = [{ alpha = 2.0, beta = 1.0, d_lo = 0.0, d_hi = 2.0 }]
//!
//! [tariff]
//! buy = 0.25
//! sell = 0.05
//!
//! [[tariff.on_peak]]
//! weekdays = ["Mon", "Tue", "Wed", "Thu", "Fri"]
//! start_hour = 16
//! end_hour = 21
//! buy = 0.45
//!
//! [solver]
//! tolerance = 1e-10
//! max_iterations = 200
//! ```
//!
//! The series is a CSV file with header `timestamp,member_id,r_kwh`, one row
//! per member and interval. Missing rows are errors; nothing is imputed.

use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike, Weekday};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::benchmark::Member;
use crate::error::{Error, Result};
use crate::pricing::Community;
use crate::solver::Bisection;
use crate::tariff::NemTariff;
use crate::utility::{DeviceUtility, UtilityBundle};

pub const DEFAULT_INTERVAL_MINUTES: u32 = 15;

/// Timestamp format used when writing series and reports.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunitySection {
    pub z_hi_n: f64,
    pub z_lo_n: f64,
    #[serde(default = "default_interval")]
    pub interval_minutes: u32,
}

fn default_interval() -> u32 {
    DEFAULT_INTERVAL_MINUTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub d_lo: f64,
    pub d_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberConfig {
    pub z_hi: f64,
    pub z_lo: f64,
    pub devices: Vec<DeviceConfig>,
}

/// An on-peak window: `[start_hour, end_hour)` on the listed weekdays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnPeakWindow {
    pub weekdays: Vec<Weekday>,
    pub start_hour: u32,
    pub end_hour: u32,
    pub buy: f64,
    /// Defaults to the base sell rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sell: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TariffConfig {
    /// Off-peak buy rate.
    pub buy: f64,
    pub sell: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on_peak: Vec<OnPeakWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_tolerance() -> f64 {
    crate::solver::DEFAULT_TOLERANCE
}

fn default_iterations() -> usize {
    crate::solver::DEFAULT_MAX_ITERATIONS
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            max_iterations: default_iterations(),
        }
    }
}

/// Raw, serializable configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityConfig {
    pub community: CommunitySection,
    pub members: IndexMap<String, MemberConfig>,
    pub tariff: TariffConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

/// Time-of-use tariff: a base tariff plus on-peak overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffCalendar {
    pub base: NemTariff,
    pub windows: Vec<TariffWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffWindow {
    pub weekdays: Vec<Weekday>,
    pub start_hour: u32,
    pub end_hour: u32,
    pub tariff: NemTariff,
}

impl TariffCalendar {
    pub fn flat(base: NemTariff) -> Self {
        Self {
            base,
            windows: Vec::new(),
        }
    }

    /// Tariff in force at `t`; the first matching window wins.
    pub fn at(&self, t: &NaiveDateTime) -> NemTariff {
        let (day, hour) = (t.weekday(), t.hour());
        self.windows
            .iter()
            .find(|w| w.weekdays.contains(&day) && w.start_hour <= hour && hour < w.end_hour)
            .map_or(self.base, |w| w.tariff)
    }

    /// Whether `t` falls in an on-peak window.
    pub fn is_on_peak(&self, t: &NaiveDateTime) -> bool {
        let (day, hour) = (t.weekday(), t.hour());
        self.windows
            .iter()
            .any(|w| w.weekdays.contains(&day) && w.start_hour <= hour && hour < w.end_hour)
    }
}

/// Validated model built from a [`CommunityConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub community: Community,
    pub calendar: TariffCalendar,
    pub solver: Bisection,
    pub interval_minutes: u32,
}

fn at_path(path: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => Error::InvalidParameter {
            field: format!("{path}.{field}"),
            reason,
        },
        other => other,
    }
}

fn check_rates(path: &str, buy: f64, sell: f64) -> Result<NemTariff> {
    if !(sell.is_finite() && sell >= 0.0) {
        return Err(Error::invalid(
            format!("{path}.sell"),
            format!("must be finite and >= 0, got {sell}"),
        ));
    }
    if !(buy.is_finite() && buy >= sell) {
        return Err(Error::invalid(
            format!("{path}.buy"),
            format!("buy rate {buy} must be >= sell rate {sell} (otherwise buying to resell is profitable)"),
        ));
    }
    NemTariff::new(buy, sell)
}

impl CommunityConfig {
    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            source_name: "<config>".into(),
            message: e.to_string(),
        })
    }

    /// Checks every invariant and builds the community, tariff calendar and
    /// solver settings.
    pub fn build(&self) -> Result<Model> {
        if self.members.is_empty() {
            return Err(Error::invalid("members", "at least one member is required"));
        }
        if self.community.interval_minutes == 0 {
            return Err(Error::invalid("community.interval_minutes", "must be >= 1"));
        }
        let mut members = Vec::with_capacity(self.members.len());
        for (id, mc) in &self.members {
            let path = format!("members.{id}");
            if mc.devices.is_empty() {
                return Err(Error::invalid(
                    format!("{path}.devices"),
                    "at least one device is required",
                ));
            }
            let devices = mc
                .devices
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    DeviceUtility::new(d.alpha, d.beta, d.d_lo, d.d_hi)
                        .map_err(|e| at_path(&format!("{path}.devices[{k}]"), e))
                })
                .collect::<Result<Vec<_>>>()?;
            let bundle = UtilityBundle::new(devices).map_err(|e| at_path(&path, e))?;
            members.push(Member::new(id.clone(), bundle, mc.z_lo, mc.z_hi).map_err(|e| at_path(&path, e))?);
        }
        let sum_hi: f64 = self.members.values().map(|m| m.z_hi).sum();
        let sum_lo: f64 = self.members.values().map(|m| m.z_lo).sum();
        let community = Community::new(members, self.community.z_lo_n, self.community.z_hi_n).map_err(|e| match e {
            Error::InvalidParameter { field, .. } if field == "z_hi_n" && self.community.z_hi_n >= 0.0 => {
                Error::invalid(
                    "community.z_hi_n",
                    format!(
                        "aggregate import envelope {} must be >= sum of member import envelopes {sum_hi}",
                        self.community.z_hi_n
                    ),
                )
            }
            Error::InvalidParameter { field, .. } if field == "z_lo_n" && self.community.z_lo_n <= 0.0 => {
                Error::invalid(
                    "community.z_lo_n",
                    format!(
                        "aggregate export envelope {} must be <= sum of member export envelopes {sum_lo}",
                        self.community.z_lo_n
                    ),
                )
            }
            other => at_path("community", other),
        })?;

        let base = check_rates("tariff", self.tariff.buy, self.tariff.sell)?;
        let mut windows = Vec::with_capacity(self.tariff.on_peak.len());
        for (k, w) in self.tariff.on_peak.iter().enumerate() {
            let path = format!("tariff.on_peak[{k}]");
            if !(w.start_hour < w.end_hour && w.end_hour <= 24) {
                return Err(Error::invalid(
                    format!("{path}.end_hour"),
                    format!("need start_hour < end_hour <= 24, got {}..{}", w.start_hour, w.end_hour),
                ));
            }
            if w.weekdays.is_empty() {
                return Err(Error::invalid(
                    format!("{path}.weekdays"),
                    "at least one weekday is required",
                ));
            }
            let tariff = check_rates(&path, w.buy, w.sell.unwrap_or(self.tariff.sell))?;
            windows.push(TariffWindow {
                weekdays: w.weekdays.clone(),
                start_hour: w.start_hour,
                end_hour: w.end_hour,
                tariff,
            });
        }

        let mut solver = Bisection::with_tolerance(self.solver.tolerance).map_err(|e| at_path("solver", e))?;
        if self.solver.max_iterations == 0 {
            return Err(Error::invalid("solver.max_iterations", "must be >= 1"));
        }
        solver.max_iterations = self.solver.max_iterations;

        Ok(Model {
            community,
            calendar: TariffCalendar { base, windows },
            solver,
            interval_minutes: self.community.interval_minutes,
        })
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<(CommunityConfig, Model)> {
    let path = path.as_ref();
    let config = CommunityConfig::from_toml(&read(path)?, &path.display().to_string())?;
    let model = config.build()?;
    Ok((config, model))
}

/// Renewable output per member on a regular time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeries {
    pub interval_minutes: u32,
    pub timestamps: Vec<NaiveDateTime>,
    /// Member id → output per interval (kWh), in configuration order.
    pub per_member_r: IndexMap<String, Vec<f64>>,
    pub tariff_calendar: Vec<NemTariff>,
}

impl ScenarioSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Output vector of interval `k`, ordered as the members.
    pub fn renewables(&self, k: usize) -> Vec<f64> {
        self.per_member_r.values().map(|s| s[k]).collect()
    }
}

/// Parses an ISO-8601 timestamp, with or without an offset. Offsets are
/// dropped and the wall-clock time kept.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_local());
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    timestamp: String,
    member_id: String,
    r_kwh: f64,
}

/// Reads a `timestamp,member_id,r_kwh` file and aligns it with the model.
pub fn load_series(path: impl AsRef<Path>, model: &Model) -> Result<ScenarioSeries> {
    let path = path.as_ref();
    parse_series(read(path)?.as_bytes(), &path.display().to_string(), model)
}

/// As [`load_series`], from any reader.
pub fn parse_series<R: std::io::Read>(input: R, source_name: &str, model: &Model) -> Result<ScenarioSeries> {
    let parse_err = |message: String| Error::Parse {
        source_name: source_name.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "member_id", "r_kwh"] {
        return Err(parse_err(format!(
            "header must be `timestamp,member_id,r_kwh`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let ids: Vec<&str> = model.community.members().iter().map(Member::id).collect();
    let mut cells: std::collections::BTreeMap<NaiveDateTime, Vec<Option<f64>>> = Default::default();
    for (line, row) in reader.deserialize::<SeriesRow>().enumerate() {
        let line = line + 2;
        let row = row.map_err(|e| parse_err(format!("line {line}: {e}")))?;
        let t = parse_timestamp(&row.timestamp)
            .ok_or_else(|| parse_err(format!("line {line}: `{}` is not an ISO-8601 timestamp", row.timestamp)))?;
        let slot = ids
            .iter()
            .position(|id| *id == row.member_id)
            .ok_or_else(|| parse_err(format!("line {line}: unknown member `{}`", row.member_id)))?;
        if !(row.r_kwh.is_finite() && row.r_kwh >= 0.0) {
            return Err(parse_err(format!(
                "line {line}: r_kwh must be finite and >= 0, got {}",
                row.r_kwh
            )));
        }
        let entry = cells.entry(t).or_insert_with(|| vec![None; ids.len()]);
        if entry[slot].replace(row.r_kwh).is_some() {
            return Err(parse_err(format!(
                "line {line}: duplicate row for member `{}` at {}",
                row.member_id, row.timestamp
            )));
        }
    }
    if cells.is_empty() {
        return Err(Error::Usage(format!("{source_name}: series has no rows")));
    }

    let step = chrono::Duration::minutes(model.interval_minutes as i64);
    let timestamps: Vec<NaiveDateTime> = cells.keys().copied().collect();
    if let Some(w) = timestamps.windows(2).find(|w| w[1] - w[0] != step) {
        return Err(parse_err(format!(
            "gap between {} and {}: expected consecutive {}-minute intervals",
            w[0].format(TIMESTAMP_FORMAT),
            w[1].format(TIMESTAMP_FORMAT),
            model.interval_minutes
        )));
    }

    let mut per_member_r: IndexMap<String, Vec<f64>> = ids
        .iter()
        .map(|id| (id.to_string(), Vec::with_capacity(timestamps.len())))
        .collect();
    for (t, row) in &cells {
        for (slot, v) in row.iter().enumerate() {
            let v = v.ok_or_else(|| {
                parse_err(format!(
                    "no value for member `{}` at {}",
                    ids[slot],
                    t.format(TIMESTAMP_FORMAT)
                ))
            })?;
            per_member_r[slot].push(v);
        }
    }
    let tariff_calendar = timestamps.iter().map(|t| model.calendar.at(t)).collect();

    Ok(ScenarioSeries {
        interval_minutes: model.interval_minutes,
        timestamps,
        per_member_r,
        tariff_calendar,
    })
}
