//! Data shipped with the crate.

use crate::grid::{parse_network, Network};
use crate::scenario::{load_scenario, LoadedScenario};

pub const IEEE33_TOML: &str = include_str!("../data/ieee33.toml");
pub const CAISO_DAY_TOML: &str = include_str!("../data/caiso_day.toml");

/// The 33-bus feeder.
pub fn ieee33() -> Network {
    parse_network(IEEE33_TOML).expect("bundled network parses")
}

/// The 24-hour CAISO-shaped day on the 33-bus feeder, reference (100%) fleets.
pub fn caiso_day() -> LoadedScenario {
    load_scenario(CAISO_DAY_TOML, &ieee33()).expect("bundled scenario parses")
}
