//! One-part dynamic NEM pricing for a community whose envelopes bind at each
//! member's meter instead of at the community meter.
//!
//! Unlike the aggregate-envelope policy, the price here depends on the full
//! vector of member renewables: each member's demand at a candidate price is
//! clamped to its own envelope window `[z̲_i + r_i, z̄_i + r_i]` before summing.

use serde::{Deserialize, Serialize};

use crate::benchmark::Member;
use crate::error::{Error, Result};
use crate::pricing::Community;
use crate::solver::Bisection;
use crate::tariff::NemTariff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DnemZone {
    PiPlus,
    PiZ,
    PiMinus,
}

impl DnemZone {
    pub fn as_str(&self) -> &'static str {
        match self {
            DnemZone::PiPlus => "PI_PLUS",
            DnemZone::PiZ => "PI_Z",
            DnemZone::PiMinus => "PI_MINUS",
        }
    }
}

impl std::fmt::Display for DnemZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnemSchedule {
    pub theta1: f64,
    pub theta2: f64,
    pub price: f64,
    pub zone: DnemZone,
}

/// Which member envelope, if any, pins the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OeBinding {
    None,
    Import,
    Export,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnemResponse {
    pub binding: OeBinding,
    /// Member-level shadow price when an envelope binds, else the D-NEM price.
    pub shadow_price: f64,
    pub d: Vec<f64>,
    pub z: f64,
    pub surplus: f64,
}

fn clamped_demand(m: &Member, r: f64, price: f64) -> f64 {
    m.bundle().total_demand(price).clamp(m.z_lo() + r, m.z_hi() + r)
}

/// D-NEM thresholds and price for the renewable vector `r`.
pub fn dnem_schedule(c: &Community, t: &NemTariff, r: &[f64], solver: &Bisection) -> Result<DnemSchedule> {
    if r.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            got: r.len(),
        });
    }
    for (m, &ri) in c.members().iter().zip(r) {
        m.check_feasible(ri)?;
    }
    let (pi_p, pi_m) = (t.pi_plus(), t.pi_minus());
    let g = |mu: f64| -> f64 {
        c.members()
            .iter()
            .zip(r)
            .map(|(m, &ri)| clamped_demand(m, ri, mu))
            .sum()
    };
    let theta1 = g(pi_p);
    let theta2 = g(pi_m);
    let r_n: f64 = r.iter().sum();

    let (zone, price) = if r_n < theta1 {
        (DnemZone::PiPlus, pi_p)
    } else if r_n > theta2 {
        (DnemZone::PiMinus, pi_m)
    } else {
        let prefs = if r_n - theta1 <= theta2 - r_n {
            [pi_p, pi_m]
        } else {
            [pi_m, pi_p]
        };
        (DnemZone::PiZ, solver.solve_preferring(g, r_n, pi_m, pi_p, &prefs)?)
    };

    Ok(DnemSchedule {
        theta1,
        theta2,
        price,
        zone,
    })
}

/// Member's surplus-maximizing response to the one-part price `s.price`
/// under its own envelopes.
pub fn dnem_member_respond(
    m: &Member,
    r_i: f64,
    s: &DnemSchedule,
    t: &NemTariff,
    solver: &Bisection,
) -> Result<DnemResponse> {
    m.check_feasible(r_i)?;
    if !(t.pi_minus() <= s.price && s.price <= t.pi_plus()) {
        return Err(Error::invalid(
            "price",
            format!("{} lies outside [{}, {}]", s.price, t.pi_minus(), t.pi_plus()),
        ));
    }
    let bundle = m.bundle();
    let price = s.price;
    let free = bundle.total_demand(price);
    let g = |mu: f64| bundle.total_demand(mu);

    let (binding, shadow_price, z) = if free - r_i > m.z_hi() {
        let mu_max = bundle.choke_price().max(price);
        let mu = solver.solve_preferring(g, m.z_hi() + r_i, price, mu_max, &[price])?;
        (OeBinding::Import, mu, Some(m.z_hi()))
    } else if free - r_i < m.z_lo() {
        let mu = solver.solve_preferring(g, m.z_lo() + r_i, 0.0, price, &[price])?;
        (OeBinding::Export, mu, Some(m.z_lo()))
    } else {
        (OeBinding::None, price, None)
    };

    let d = bundle.clipped_demand(shadow_price);
    let z = z.unwrap_or_else(|| d.iter().sum::<f64>() - r_i);
    let surplus = bundle.value_unchecked(&d) - price * z;
    Ok(DnemResponse {
        binding,
        shadow_price,
        d,
        z,
        surplus,
    })
}
