//! Day-ahead time series, EV fleets and solar units.
//!
//! Hours are indexed `0..horizon` internally; reports use `1..=horizon`.
//! Each step is one hour, so p.u. power adds directly to p.u.·h energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;

pub const DEFAULT_HORIZON: usize = 24;
/// Daily mean of the bundled tariffs, $/MWh.
pub const DEFAULT_MEAN_PRICE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub bus: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarUnit {
    pub bus: usize,
    /// Nameplate, p.u.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvFleet {
    pub bus: usize,
    pub e_min: f64,
    pub e_max: f64,
    pub p_charge_max: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
    pub e_init_fraction: f64,
    /// Driving power per hour (p.u.), drawn in proportion to `r_discharge`.
    pub travel: Vec<f64>,
}

impl EvFleet {
    /// A fleet scaled to zero contributes nothing to the model.
    pub fn is_inactive(&self) -> bool {
        self.e_max == 0.0 && self.p_charge_max == 0.0 && self.travel.iter().all(|&t| t == 0.0)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let field = |name: &str| format!("fleet[bus={}].{name}", self.bus);
        if self.travel.len() != horizon {
            return Err(Error::LengthMismatch {
                field: field("travel"),
                got: self.travel.len(),
                expected: horizon,
            });
        }
        if self.travel.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::scenario(field("travel"), "must be non-negative"));
        }
        if self.is_inactive() {
            return Ok(());
        }
        if !(self.e_min >= 0.0 && self.e_min < self.e_max) {
            return Err(Error::scenario(
                field("e_min"),
                format!("need 0 <= e_min < e_max, got [{}, {}]", self.e_min, self.e_max),
            ));
        }
        if !(self.p_charge_max >= 0.0) {
            return Err(Error::scenario(field("p_charge_max"), "must be non-negative"));
        }
        for (name, eff) in [("eff_charge", self.eff_charge), ("eff_discharge", self.eff_discharge)] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(Error::scenario(field(name), format!("must lie in (0, 1], got {eff}")));
            }
        }
        if !(0.0..=1.0).contains(&self.e_init_fraction) {
            return Err(Error::scenario(field("e_init_fraction"), "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub horizon: usize,
    /// Energy price per hour, $/MWh.
    pub tou_price: Vec<f64>,
    pub demand: Vec<LoadSeries>,
    pub solar_units: Vec<SolarUnit>,
    /// Available solar power per unit per hour, p.u.
    pub solar_availability: Vec<Vec<f64>>,
    pub r_charge: Vec<f64>,
    pub r_discharge: Vec<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let h = self.horizon;
        if h == 0 {
            return Err(Error::scenario("horizon", "must be positive"));
        }
        let check_len = |field: String, got: usize| {
            if got == h {
                Ok(())
            } else {
                Err(Error::LengthMismatch {
                    field,
                    got,
                    expected: h,
                })
            }
        };
        check_len("price".into(), self.tou_price.len())?;
        check_len("r_charge".into(), self.r_charge.len())?;
        check_len("r_discharge".into(), self.r_discharge.len())?;
        for load in &self.demand {
            check_len(format!("load_p[bus={}]", load.bus), load.p.len())?;
            check_len(format!("load_q[bus={}]", load.bus), load.q.len())?;
        }
        if self.solar_availability.len() != self.solar_units.len() {
            return Err(Error::scenario(
                "solar",
                "one availability series per solar unit required",
            ));
        }
        for (unit, avail) in self.solar_units.iter().zip(&self.solar_availability) {
            check_len(format!("solar[bus={}]", unit.bus), avail.len())?;
            if !(unit.capacity >= 0.0) {
                return Err(Error::scenario(
                    format!("solar_unit[bus={}].capacity", unit.bus),
                    "must be non-negative",
                ));
            }
            if avail.iter().any(|&a| !(a >= 0.0)) {
                return Err(Error::scenario(
                    format!("solar[bus={}]", unit.bus),
                    "availability must be non-negative",
                ));
            }
        }
        if let Some(p) = self.tou_price.iter().find(|&&p| !(p >= 0.0)) {
            return Err(Error::scenario("price", format!("negative price {p}")));
        }
        for (field, series) in [("r_charge", &self.r_charge), ("r_discharge", &self.r_discharge)] {
            if let Some(r) = series.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(Error::scenario(field, format!("ratio {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Replaces the price series, re-validating the result.
    pub fn with_prices(&self, prices: &[f64]) -> Result<Scenario> {
        let mut next = self.clone();
        next.tou_price = prices.to_vec();
        next.validate()?;
        Ok(next)
    }

    pub fn overlay(&self, tariff: &TouTariff) -> Result<Scenario> {
        self.with_prices(&tariff.price)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub fleets: Vec<EvFleet>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    #[serde(default)]
    name: String,
    #[serde(default = "default_horizon")]
    horizon: usize,
    price: Vec<f64>,
    load_p: Vec<f64>,
    load_q: Vec<f64>,
    solar: Vec<f64>,
    r_charge: Vec<f64>,
    r_discharge: Vec<f64>,
    #[serde(default)]
    travel: Option<Vec<f64>>,
    #[serde(default)]
    fleet_defaults: FleetDefaults,
    #[serde(default)]
    fleet: Vec<FleetRow>,
    #[serde(default)]
    solar_unit: Vec<SolarRow>,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetDefaults {
    e_min: f64,
    e_max: f64,
    p_charge_max: f64,
    eff_charge: f64,
    eff_discharge: f64,
    e_init_fraction: f64,
}

impl Default for FleetDefaults {
    fn default() -> Self {
        FleetDefaults {
            e_min: 0.0,
            e_max: 0.0,
            p_charge_max: 0.0,
            eff_charge: 1.0,
            eff_discharge: 1.0,
            e_init_fraction: 0.5,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetRow {
    bus: usize,
    e_min: Option<f64>,
    e_max: Option<f64>,
    p_charge_max: Option<f64>,
    eff_charge: Option<f64>,
    eff_discharge: Option<f64>,
    e_init_fraction: Option<f64>,
    travel: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolarRow {
    bus: usize,
    capacity: f64,
    profile: Option<Vec<f64>>,
}

/// Parses a scenario document against `network`. Demand is the normalized
/// `load_p`/`load_q` profile times each nominal load of the network.
pub fn load_scenario(text: &str, network: &Network) -> Result<LoadedScenario> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| Error::Parse {
        what: "scenario",
        msg: e.to_string(),
    })?;
    let h = doc.horizon;
    let len = |field: &str, got: usize| {
        if got == h {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                field: field.to_string(),
                got,
                expected: h,
            })
        }
    };
    len("load_p", doc.load_p.len())?;
    len("load_q", doc.load_q.len())?;
    len("solar", doc.solar.len())?;

    let demand = network
        .loads
        .iter()
        .map(|load| LoadSeries {
            bus: load.bus,
            p: doc.load_p.iter().map(|m| m * load.p).collect(),
            q: doc.load_q.iter().map(|m| m * load.q).collect(),
        })
        .collect();

    let mut solar_units = Vec::with_capacity(doc.solar_unit.len());
    let mut solar_availability = Vec::with_capacity(doc.solar_unit.len());
    for row in &doc.solar_unit {
        if network.index_of(row.bus).is_none() {
            return Err(Error::UnknownBus(row.bus));
        }
        let shape = row.profile.as_ref().unwrap_or(&doc.solar);
        len(&format!("solar_unit[bus={}].profile", row.bus), shape.len())?;
        solar_units.push(SolarUnit {
            bus: row.bus,
            capacity: row.capacity,
        });
        solar_availability.push(shape.iter().map(|a| a * row.capacity).collect());
    }

    let shared_travel = doc.travel.clone().unwrap_or_else(|| vec![0.0; h]);
    let d = &doc.fleet_defaults;
    let mut fleets = Vec::with_capacity(doc.fleet.len());
    for row in doc.fleet {
        if network.index_of(row.bus).is_none() {
            return Err(Error::UnknownBus(row.bus));
        }
        let fleet = EvFleet {
            bus: row.bus,
            e_min: row.e_min.unwrap_or(d.e_min),
            e_max: row.e_max.unwrap_or(d.e_max),
            p_charge_max: row.p_charge_max.unwrap_or(d.p_charge_max),
            eff_charge: row.eff_charge.unwrap_or(d.eff_charge),
            eff_discharge: row.eff_discharge.unwrap_or(d.eff_discharge),
            e_init_fraction: row.e_init_fraction.unwrap_or(d.e_init_fraction),
            travel: row.travel.unwrap_or_else(|| shared_travel.clone()),
        };
        fleet.validate(h)?;
        fleets.push(fleet);
    }

    let scenario = Scenario {
        name: doc.name,
        horizon: h,
        tou_price: doc.price,
        demand,
        solar_units,
        solar_availability,
        r_charge: doc.r_charge,
        r_discharge: doc.r_discharge,
    };
    scenario.validate()?;
    Ok(LoadedScenario { scenario, fleets })
}

/// Scales every fleet linearly relative to the 100% reference fleet.
pub fn scale_penetration(fleets: &[EvFleet], level: f64) -> Result<Vec<EvFleet>> {
    if !(level >= 0.0) {
        return Err(Error::NegativePenetration(level));
    }
    Ok(fleets
        .iter()
        .map(|f| EvFleet {
            e_min: f.e_min * level,
            e_max: f.e_max * level,
            p_charge_max: f.p_charge_max * level,
            travel: f.travel.iter().map(|t| t * level).collect(),
            ..f.clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouTariff {
    pub id: u8,
    pub price: Vec<f64>,
}

/// Price tiers as multiples of the daily mean.
const SUPER_OFF_PEAK: f64 = 0.5;
const OFF_PEAK: f64 = 1.0;
const ON_PEAK: f64 = 1.5;

/// Window layouts, 1-based hours `(super_off_peak, on_peak)`. Every window
/// pair has equal length so the daily mean equals the off-peak price.
fn tou_windows(id: u8) -> (Vec<usize>, Vec<usize>) {
    match id {
        2 => (vec![1, 2, 3, 4, 5, 6, 12, 13], (16..=23).collect()),
        3 => ((1..=7).collect(), (16..=22).collect()),
        4 => ((10..=15).collect(), (17..=22).collect()),
        _ => (Vec::new(), Vec::new()),
    }
}

/// Tariff `id` in 1..=4 over 24 hours with the given daily mean.
/// Scenario 1 is flat; 2 to 4 are three-tier layouts.
pub fn tou_tariff(id: u8, mean: f64) -> Option<TouTariff> {
    if !(1..=4).contains(&id) {
        return None;
    }
    let (cheap, peak) = tou_windows(id);
    let price = (1..=DEFAULT_HORIZON)
        .map(|h| {
            let tier = if cheap.contains(&h) {
                SUPER_OFF_PEAK
            } else if peak.contains(&h) {
                ON_PEAK
            } else {
                OFF_PEAK
            };
            tier * mean
        })
        .collect();
    Some(TouTariff { id, price })
}

pub fn tou_scenarios() -> Vec<TouTariff> {
    (1..=4)
        .map(|id| tou_tariff(id, DEFAULT_MEAN_PRICE).expect("ids 1..=4 are defined"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn flat_doc(price_len: usize) -> String {
        let ones = vec!["1.0"; 24].join(", ");
        let zeros = vec!["0.0"; 24].join(", ");
        let price = vec!["80.0"; price_len].join(", ");
        format!(
            "price = [{price}]\nload_p = [{ones}]\nload_q = [{ones}]\nsolar = [{zeros}]\n\
             r_charge = [{ones}]\nr_discharge = [{zeros}]\n"
        )
    }

    #[test]
    fn flat_profile_gives_identical_steps() {
        let net = bundled::ieee33();
        let loaded = load_scenario(&flat_doc(24), &net).unwrap();
        let s = &loaded.scenario;
        assert_eq!(s.horizon, 24);
        for load in &s.demand {
            assert!(load.p.iter().all(|&p| p == load.p[0]));
        }
        let nominal = net.loads.iter().find(|l| l.bus == 2).unwrap();
        assert_eq!(s.demand[0].p[5], nominal.p);
        assert!(s.r_charge.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn short_price_series_is_rejected() {
        let net = bundled::ieee33();
        let err = load_scenario(&flat_doc(23), &net).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { ref field, got: 23, expected: 24 } if field == "price"));
    }

    #[test]
    fn bad_ratio_and_price_name_the_field() {
        let net = bundled::ieee33();
        let doc = flat_doc(24).replacen("r_charge = [1.0", "r_charge = [1.5", 1);
        assert!(matches!(load_scenario(&doc, &net), Err(Error::Scenario { field, .. }) if field == "r_charge"));
        let doc = flat_doc(24).replacen("price = [80.0", "price = [-1.0", 1);
        assert!(matches!(load_scenario(&doc, &net), Err(Error::Scenario { field, .. }) if field == "price"));
    }

    #[test]
    fn fleet_on_unknown_bus() {
        let net = bundled::ieee33();
        let doc = flat_doc(24) + "fleet = [{ bus = 99 }]\n";
        assert!(matches!(load_scenario(&doc, &net), Err(Error::UnknownBus(99))));
    }

    #[test]
    fn bundled_profile_shape() {
        let loaded = bundled::caiso_day();
        let s = &loaded.scenario;
        let total = |t: usize| s.demand.iter().map(|l| l.p[t]).sum::<f64>();
        let peak = (0..24).max_by(|&a, &b| total(a).total_cmp(&total(b))).unwrap();
        assert!((16..=20).contains(&peak), "peak at index {peak}");
        for avail in &s.solar_availability {
            for t in (0..6).chain(20..24) {
                assert_eq!(avail[t], 0.0, "solar at night, hour {}", t + 1);
            }
            assert!(avail[12] > 0.0);
        }
        assert_eq!(loaded.fleets.len(), 32);
    }

    #[test]
    fn penetration_scaling() {
        let fleets = bundled::caiso_day().fleets;
        let zero = scale_penetration(&fleets, 0.0).unwrap();
        assert!(zero.iter().all(EvFleet::is_inactive));
        let half = scale_penetration(&fleets, 0.5).unwrap();
        assert!((half[0].p_charge_max - 0.01).abs() < 1e-15);
        let quarter_doubled = scale_penetration(&scale_penetration(&fleets, 0.25).unwrap(), 2.0).unwrap();
        for (a, b) in quarter_doubled.iter().zip(&half) {
            assert!((a.e_max - b.e_max).abs() < 1e-12);
            assert!((a.travel[3] - b.travel[3]).abs() < 1e-12);
        }
        assert!(matches!(scale_penetration(&fleets, -0.1), Err(Error::NegativePenetration(_))));
    }

    #[test]
    fn tariffs() {
        let t = tou_scenarios();
        assert_eq!(t.len(), 4);
        let flat = &t[0].price;
        let (lo, hi) = flat
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        assert_eq!(lo, hi);
        for h in [12, 13] {
            assert!(t[1].price[h - 1] < t[2].price[h - 1]);
        }
        for tariff in &t {
            let mean = tariff.price.iter().sum::<f64>() / 24.0;
            assert!((mean - DEFAULT_MEAN_PRICE).abs() < 1e-12, "tariff {}", tariff.id);
        }
        assert!(tou_tariff(5, 100.0).is_none());
    }

    #[test]
    fn overlay_revalidates() {
        let loaded = bundled::caiso_day();
        for tariff in tou_scenarios() {
            let s = loaded.scenario.overlay(&tariff).unwrap();
            s.validate().unwrap();
            assert_eq!(s.tou_price, tariff.price);
        }
        assert!(loaded.scenario.with_prices(&[1.0; 23]).is_err());
    }

    #[test]
    fn bundled_default_tariff_is_scenario_two() {
        let loaded = bundled::caiso_day();
        assert_eq!(loaded.scenario.tou_price, tou_tariff(2, DEFAULT_MEAN_PRICE).unwrap().price);
    }
}
