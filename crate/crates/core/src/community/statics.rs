//! Finite-difference sensitivity of the value of community to the tariff
//! rates and the aggregate envelopes.

use serde::{Deserialize, Serialize};

use super::voc_single;
use crate::benchmark::{benchmark_deltas, BenchmarkZone};
use crate::error::{Error, Result};
use crate::pricing::{compute_sigmas, Community, PriceZone};
use crate::solver::Bisection;
use crate::tariff::NemTariff;

/// Number of times the step is halved before a crossing is reported.
pub const MAX_HALVINGS: u32 = 10;

/// Relative threshold (times the step) under which a difference counts as zero.
pub const ZERO_SLOPE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    PiPlus,
    PiMinus,
    ZHiN,
    ZLoN,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [Parameter::PiPlus, Parameter::PiMinus, Parameter::ZHiN, Parameter::ZLoN];

    pub fn as_str(&self) -> &'static str {
        match self {
            Parameter::PiPlus => "pi_plus",
            Parameter::PiMinus => "pi_minus",
            Parameter::ZHiN => "z_hi_n",
            Parameter::ZLoN => "z_lo_n",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl std::fmt::Display for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Up,
    Down,
    Zero,
}

impl Sign {
    /// Sign of a finite difference taken with step `epsilon`.
    pub fn of_difference(delta: f64, epsilon: f64) -> Self {
        if delta.abs() <= ZERO_SLOPE * epsilon {
            Sign::Zero
        } else if delta > 0.0 {
            Sign::Up
        } else {
            Sign::Down
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Sign::Up => "↑",
            Sign::Down => "↓",
            Sign::Zero => "0",
        }
    }
}

use Sign::{Down as D, Up as U, Zero as O};

// [standalone zone][community zone][π⁺, π⁻, z̄_N, z̲_N]
const SIGNS: [[[Sign; 4]; 5]; 5] = [
    [[D, O, U, O], [D, O, O, O], [U, O, O, O], [U, D, O, O], [U, U, O, D]],
    [[D, O, U, O], [O, O, O, O], [U, O, O, O], [U, D, O, O], [U, U, O, D]],
    [[D, O, U, O], [U, O, O, O], [O, O, O, O], [O, D, O, O], [O, U, O, D]],
    [[D, D, U, O], [U, D, O, O], [O, D, O, O], [O, O, O, O], [O, U, O, D]],
    [[D, D, U, O], [U, D, O, O], [O, D, O, O], [O, U, O, O], [O, U, O, D]],
];

/// Direction in which a member's value of community moves when `parameter`
/// increases, given the community's price zone and the member's standalone
/// zone.
pub fn expected_voc_sign(community: PriceZone, standalone: BenchmarkZone, parameter: Parameter) -> Sign {
    SIGNS[standalone as usize][community.index()][parameter.index()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticsCell {
    pub scenario: usize,
    pub member: String,
    pub price_zone: PriceZone,
    pub benchmark_zone: BenchmarkZone,
    pub expected: Sign,
    pub observed: Sign,
    pub delta_voc: f64,
}

impl StaticsCell {
    pub fn matches(&self) -> bool {
        self.expected == self.observed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticsReport {
    pub parameter: Parameter,
    /// Step actually used after any halving.
    pub epsilon: f64,
    pub cells: Vec<StaticsCell>,
}

impl StaticsReport {
    pub fn mismatches(&self) -> impl Iterator<Item = &StaticsCell> {
        self.cells.iter().filter(|c| !c.matches())
    }
}

fn perturbed(c: &Community, t: &NemTariff, p: Parameter, eps: f64) -> Result<(Community, NemTariff)> {
    Ok(match p {
        Parameter::PiPlus => (c.clone(), NemTariff::new(t.pi_plus() + eps, t.pi_minus())?),
        Parameter::PiMinus => (c.clone(), NemTariff::new(t.pi_plus(), t.pi_minus() + eps)?),
        Parameter::ZHiN => (c.with_envelopes(c.z_lo_n(), c.z_hi_n() + eps)?, *t),
        Parameter::ZLoN => (c.with_envelopes(c.z_lo_n() + eps, c.z_hi_n())?, *t),
    })
}

// Community zone per scenario and standalone zone per (scenario, member).
fn zones(c: &Community, t: &NemTariff, scenarios: &[Vec<f64>]) -> Vec<(PriceZone, Vec<BenchmarkZone>)> {
    let sigmas = compute_sigmas(c, t);
    let deltas: Vec<[f64; 4]> = c.members().iter().map(|m| benchmark_deltas(m, t)).collect();
    scenarios
        .iter()
        .map(|r| {
            let r_n: f64 = r.iter().sum();
            let members = r
                .iter()
                .zip(&deltas)
                .map(|(&ri, d)| BenchmarkZone::classify(ri, d))
                .collect();
            (PriceZone::classify(r_n, &sigmas), members)
        })
        .collect()
}

/// Forward-difference change of each member's value of community when
/// `parameter` grows by `epsilon`, compared cell by cell with the tabulated
/// signs. The step is halved (up to ten times) while any scenario changes
/// zone; if it still does, the call fails.
pub fn comparative_statics(
    c: &Community,
    t: &NemTariff,
    scenarios: &[Vec<f64>],
    parameter: Parameter,
    epsilon: f64,
    solver: &Bisection,
) -> Result<StaticsReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(
            "epsilon",
            format!("must be finite and > 0, got {epsilon}"),
        ));
    }
    if scenarios.is_empty() {
        return Err(Error::Usage("comparative statics needs at least one scenario".into()));
    }
    let base_zones = zones(c, t, scenarios);
    let base: Vec<Vec<f64>> = scenarios
        .iter()
        .map(|r| voc_single(c, t, r, solver).map(|(_, g)| g))
        .collect::<Result<_>>()?;

    let mut eps = epsilon;
    let mut last_reason = String::new();
    for _ in 0..=MAX_HALVINGS {
        let (c2, t2) = match perturbed(c, t, parameter, eps) {
            Ok(pair) => pair,
            Err(e) => {
                last_reason = e.to_string();
                eps *= 0.5;
                continue;
            }
        };
        let moved = zones(&c2, &t2, scenarios)
            .iter()
            .zip(&base_zones)
            .position(|(a, b)| a != b);
        if let Some(k) = moved {
            last_reason = format!("scenario {k} changes zone");
            eps *= 0.5;
            continue;
        }

        let mut cells = Vec::new();
        for (k, (r, (pz, bzs))) in scenarios.iter().zip(&base_zones).enumerate() {
            let (_, gains) = voc_single(&c2, &t2, r, solver)?;
            for (((m, bz), g1), g0) in c.members().iter().zip(bzs).zip(&gains).zip(&base[k]) {
                let delta = g1 - g0;
                cells.push(StaticsCell {
                    scenario: k,
                    member: m.id().to_string(),
                    price_zone: *pz,
                    benchmark_zone: *bz,
                    expected: expected_voc_sign(*pz, *bz, parameter),
                    observed: Sign::of_difference(delta, eps),
                    delta_voc: delta,
                });
            }
        }
        return Ok(StaticsReport {
            parameter,
            epsilon: eps,
            cells,
        });
    }
    Err(Error::ThresholdCrossing(format!(
        "{parameter} step {epsilon} still crosses a threshold after {MAX_HALVINGS} halvings: {last_reason}"
    )))
}
