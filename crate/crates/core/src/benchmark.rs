//! Standalone prosumer facing NEM X under its own operating envelopes.
//!
//! The optimal response has five zones, ordered by renewable output `r`:
//!
//! | zone              | condition        | consumption                          |
//! |-------------------|------------------|--------------------------------------|
//! | `ImportClipped`   | `r <= Δ1`        | `f(μ⁺)` with `1ᵀf(μ⁺) = z̄ + r`       |
//! | `Buy`             | `Δ1 < r < Δ2`    | `f(π⁺)`                              |
//! | `Balanced`        | `Δ2 <= r <= Δ3`  | `f(μᵒ)` with `1ᵀf(μᵒ) = r`           |
//! | `Sell`            | `Δ3 < r < Δ4`    | `f(π⁻)`                              |
//! | `ExportClipped`   | `r >= Δ4`        | `f(μ⁻)` with `1ᵀf(μ⁻) = z̲ + r`       |
//!
//! with `Δ2 = 1ᵀf(π⁺)`, `Δ3 = 1ᵀf(π⁻)`, `Δ1 = Δ2 − z̄`, `Δ4 = Δ3 − z̲`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::Bisection;
use crate::tariff::NemTariff;
use crate::utility::UtilityBundle;

const FEASIBILITY_EPS: f64 = 1e-12;

/// A community member (or standalone prosumer): utility bundle plus the
/// operating envelopes at its own meter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    id: String,
    bundle: UtilityBundle,
    z_lo: f64,
    z_hi: f64,
}

impl Member {
    /// `z_lo <= 0 <= z_hi` are the export and import envelopes.
    pub fn new(id: impl Into<String>, bundle: UtilityBundle, z_lo: f64, z_hi: f64) -> Result<Self> {
        let id = id.into();
        if !(z_lo.is_finite() && z_lo <= 0.0) {
            return Err(Error::invalid(
                format!("member {id}: z_lo"),
                format!("export envelope must be finite and <= 0, got {z_lo}"),
            ));
        }
        if !(z_hi.is_finite() && z_hi >= 0.0) {
            return Err(Error::invalid(
                format!("member {id}: z_hi"),
                format!("import envelope must be finite and >= 0, got {z_hi}"),
            ));
        }
        Ok(Self { id, bundle, z_lo, z_hi })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bundle(&self) -> &UtilityBundle {
        &self.bundle
    }

    pub fn z_lo(&self) -> f64 {
        self.z_lo
    }

    pub fn z_hi(&self) -> f64 {
        self.z_hi
    }

    /// Largest renewable output the member can absorb without breaching its
    /// export envelope.
    pub fn max_renewable(&self) -> f64 {
        self.bundle.saturation_total() - self.z_lo
    }

    /// Checks that the standalone problem has a feasible point for output `r`.
    pub fn check_feasible(&self, r: f64) -> Result<()> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::invalid(
                format!("member {}: r", self.id),
                format!("renewable output must be finite and >= 0, got {r}"),
            ));
        }
        // round-off slack for outputs computed as `saturation - z_lo` etc.
        let slack = FEASIBILITY_EPS * (1.0 + r + self.bundle.saturation_total());
        let min = self.bundle.min_total();
        if self.z_hi < min - r - slack {
            return Err(Error::Infeasible(format!(
                "member {}: import envelope z_hi = {} < minimum consumption {} - r = {}",
                self.id,
                self.z_hi,
                min,
                min - r
            )));
        }
        let sat = self.bundle.saturation_total();
        if self.z_lo > sat - r + slack {
            return Err(Error::Infeasible(format!(
                "member {}: export envelope z_lo = {} > saturation consumption {} - r = {}",
                self.id,
                self.z_lo,
                sat,
                sat - r
            )));
        }
        Ok(())
    }
}

/// Zones of the standalone prosumer's optimal response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BenchmarkZone {
    ImportClipped,
    Buy,
    Balanced,
    Sell,
    ExportClipped,
}

impl BenchmarkZone {
    pub const ALL: [BenchmarkZone; 5] = [
        BenchmarkZone::ImportClipped,
        BenchmarkZone::Buy,
        BenchmarkZone::Balanced,
        BenchmarkZone::Sell,
        BenchmarkZone::ExportClipped,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkZone::ImportClipped => "IMPORT_CLIPPED",
            BenchmarkZone::Buy => "BUY",
            BenchmarkZone::Balanced => "BALANCED",
            BenchmarkZone::Sell => "SELL",
            BenchmarkZone::ExportClipped => "EXPORT_CLIPPED",
        }
    }

    /// Zone of output `r` given thresholds, with the closed balanced band.
    pub fn classify(r: f64, deltas: &[f64; 4]) -> Self {
        let [d1, d2, d3, d4] = *deltas;
        if r <= d1 {
            BenchmarkZone::ImportClipped
        } else if r < d2 {
            BenchmarkZone::Buy
        } else if r <= d3 {
            BenchmarkZone::Balanced
        } else if r < d4 {
            BenchmarkZone::Sell
        } else {
            BenchmarkZone::ExportClipped
        }
    }
}

impl std::fmt::Display for BenchmarkZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optimal standalone response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResponse {
    pub zone: BenchmarkZone,
    pub deltas: [f64; 4],
    /// μ⁺, μᵒ or μ⁻ in the dynamic zones, else the NEM rate faced.
    pub shadow_price: f64,
    pub d: Vec<f64>,
    pub z: f64,
    pub surplus: f64,
}

/// Thresholds `(Δ1, Δ2, Δ3, Δ4)` of the standalone response.
pub fn benchmark_deltas(m: &Member, t: &NemTariff) -> [f64; 4] {
    let d2 = m.bundle.total_demand(t.pi_plus());
    let d3 = m.bundle.total_demand(t.pi_minus());
    [d2 - m.z_hi, d2, d3, d3 - m.z_lo]
}

/// Optimal consumption, net consumption and surplus of a standalone prosumer
/// with renewable output `r`.
pub fn benchmark_respond(m: &Member, r: f64, t: &NemTariff, solver: &Bisection) -> Result<BenchmarkResponse> {
    m.check_feasible(r)?;
    let deltas = benchmark_deltas(m, t);
    let zone = BenchmarkZone::classify(r, &deltas);
    let response = respond_in_zone(m, r, t, zone, deltas, solver)?;

    #[cfg(debug_assertions)]
    {
        // At a tie the neighbouring zone must give the same response.
        let neighbour = match zone {
            BenchmarkZone::ImportClipped if r == deltas[0] => Some(BenchmarkZone::Buy),
            BenchmarkZone::Balanced if r == deltas[1] => Some(BenchmarkZone::Buy),
            BenchmarkZone::Balanced if r == deltas[2] => Some(BenchmarkZone::Sell),
            BenchmarkZone::ExportClipped if r == deltas[3] => Some(BenchmarkZone::Sell),
            _ => None,
        };
        if let Some(other) = neighbour {
            let alt = respond_in_zone(m, r, t, other, deltas, solver)?;
            debug_assert!(
                (alt.surplus - response.surplus).abs() <= 1e-8 && (alt.z - response.z).abs() <= 1e-8,
                "zone tie {zone} / {other} disagrees at r = {r}"
            );
        }
    }

    Ok(response)
}

fn respond_in_zone(
    m: &Member,
    r: f64,
    t: &NemTariff,
    zone: BenchmarkZone,
    deltas: [f64; 4],
    solver: &Bisection,
) -> Result<BenchmarkResponse> {
    let bundle = &m.bundle;
    let g = |mu: f64| bundle.total_demand(mu);
    let (pi_p, pi_m) = (t.pi_plus(), t.pi_minus());
    let mu_max = bundle.choke_price().max(pi_p);

    let (shadow_price, z) = match zone {
        BenchmarkZone::ImportClipped => (
            solver.solve_preferring(g, m.z_hi + r, pi_p, mu_max, &[pi_p])?,
            Some(m.z_hi),
        ),
        BenchmarkZone::Buy => (pi_p, None),
        BenchmarkZone::Balanced => {
            let prefs = if r - deltas[1] <= deltas[2] - r {
                [pi_p, pi_m]
            } else {
                [pi_m, pi_p]
            };
            (solver.solve_preferring(g, r, pi_m, pi_p, &prefs)?, Some(0.0))
        }
        BenchmarkZone::Sell => (pi_m, None),
        BenchmarkZone::ExportClipped => (
            solver.solve_preferring(g, m.z_lo + r, 0.0, pi_m, &[pi_m])?,
            Some(m.z_lo),
        ),
    };

    let d = bundle.clipped_demand(shadow_price);
    let z = z.unwrap_or_else(|| d.iter().sum::<f64>() - r);
    let surplus = bundle.value_unchecked(&d) - t.payment(z);
    Ok(BenchmarkResponse {
        zone,
        deltas,
        shadow_price,
        d,
        z,
        surplus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::DeviceUtility;
    use approx::assert_relative_eq;

    fn member(z_lo: f64, z_hi: f64) -> Member {
        let u = DeviceUtility::new(2.0, 1.0, 0.0, 2.0).unwrap();
        Member::new("m", UtilityBundle::single(u), z_lo, z_hi).unwrap()
    }

    fn tariff() -> NemTariff {
        NemTariff::new(1.0, 0.5).unwrap()
    }

    // Grid search over consumption with the envelope as a hard constraint.
    fn grid_surplus(m: &Member, r: f64, t: &NemTariff) -> f64 {
        let u = m.bundle().devices()[0];
        (0..=20_000)
            .map(|i| i as f64 * 1e-4)
            .filter(|d| {
                let z = d - r;
                z >= m.z_lo() - 1e-12 && z <= m.z_hi() + 1e-12
            })
            .map(|d| crate::utility::ConcaveUtility::value(&u, d) - t.payment(d - r))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn deltas_examples() {
        let d = benchmark_deltas(&member(-0.3, 0.2), &tariff());
        for (got, want) in d.iter().zip([0.8, 1.0, 1.5, 1.8]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        let d = benchmark_deltas(&member(0.0, 0.0), &tariff());
        assert_eq!(d[0], d[1]);
        assert_eq!(d[2], d[3]);
        let flat = NemTariff::new(0.7, 0.7).unwrap();
        let d = benchmark_deltas(&member(-0.3, 0.2), &flat);
        assert_eq!(d[1], d[2]);
    }

    #[test]
    fn import_clipped_example() {
        let m = member(-0.3, 0.2);
        let resp = benchmark_respond(&m, 0.5, &tariff(), &Bisection::default()).unwrap();
        assert_eq!(resp.zone, BenchmarkZone::ImportClipped);
        assert_relative_eq!(resp.shadow_price, 1.3, epsilon = 1e-9);
        assert_relative_eq!(resp.d[0], 0.7, epsilon = 1e-9);
        assert_eq!(resp.z, 0.2);
        assert_relative_eq!(resp.surplus, 0.955, epsilon = 1e-9);
        assert!((resp.surplus - grid_surplus(&m, 0.5, &tariff())).abs() < 1e-6);
    }

    #[test]
    fn balanced_example() {
        let m = member(-0.3, 0.2);
        let resp = benchmark_respond(&m, 1.2, &tariff(), &Bisection::default()).unwrap();
        assert_eq!(resp.zone, BenchmarkZone::Balanced);
        assert_relative_eq!(resp.shadow_price, 0.8, epsilon = 1e-9);
        assert_relative_eq!(resp.d[0], 1.2, epsilon = 1e-9);
        assert_eq!(resp.z, 0.0);
        assert_relative_eq!(resp.surplus, 1.68, epsilon = 1e-9);
        assert!((resp.surplus - grid_surplus(&m, 1.2, &tariff())).abs() < 1e-6);
    }

    #[test]
    fn buy_example() {
        let m = member(-0.3, 0.2);
        let resp = benchmark_respond(&m, 0.9, &tariff(), &Bisection::default()).unwrap();
        assert_eq!(resp.zone, BenchmarkZone::Buy);
        assert_eq!(resp.d[0], 1.0);
        assert_relative_eq!(resp.z, 0.1, epsilon = 1e-12);
        assert_relative_eq!(resp.surplus, 1.4, epsilon = 1e-12);
        assert!((resp.surplus - grid_surplus(&m, 0.9, &tariff())).abs() < 1e-6);
    }

    #[test]
    fn sell_and_export_zones() {
        let m = member(-0.3, 0.2);
        let t = tariff();
        let sell = benchmark_respond(&m, 1.6, &t, &Bisection::default()).unwrap();
        assert_eq!(sell.zone, BenchmarkZone::Sell);
        assert_eq!(sell.d[0], 1.5);
        assert!((sell.surplus - grid_surplus(&m, 1.6, &t)).abs() < 1e-6);
        let exp = benchmark_respond(&m, 2.0, &t, &Bisection::default()).unwrap();
        assert_eq!(exp.zone, BenchmarkZone::ExportClipped);
        assert_eq!(exp.z, -0.3);
        assert_relative_eq!(exp.d[0], 1.7, epsilon = 1e-9);
        assert_relative_eq!(exp.shadow_price, 0.3, epsilon = 1e-9);
        assert!((exp.surplus - grid_surplus(&m, 2.0, &t)).abs() < 1e-6);
    }

    #[test]
    fn ties_are_continuous() {
        let m = member(-0.3, 0.2);
        for r in benchmark_deltas(&m, &tariff()) {
            let at = benchmark_respond(&m, r, &tariff(), &Bisection::default()).unwrap();
            let above = benchmark_respond(&m, r + 1e-9, &tariff(), &Bisection::default()).unwrap();
            assert!((at.surplus - above.surplus).abs() < 1e-8);
        }
    }

    #[test]
    fn infeasible_inputs() {
        let m = member(-0.3, 0.2);
        assert!(matches!(
            benchmark_respond(&m, 2.5, &tariff(), &Bisection::default()),
            Err(Error::Infeasible(_))
        ));
        assert!(benchmark_respond(&m, -1.0, &tariff(), &Bisection::default()).is_err());
        let u = DeviceUtility::new(2.0, 1.0, 0.5, 2.0).unwrap();
        let m = Member::new("m", UtilityBundle::single(u), -0.3, 0.2).unwrap();
        assert!(matches!(m.check_feasible(0.1), Err(Error::Infeasible(_))));
        assert!(Member::new("x", m.bundle().clone(), 0.1, 0.2).is_err());
        assert!(Member::new("x", m.bundle().clone(), -0.1, -0.2).is_err());
    }
}
