//! Bundled five-bus case study.
//!
//! Line susceptances and ratings are calibration data adapted from the PJM
//! five-bus system (100 MVA base); they are not published with the case study.

use crate::model::{parse_network, BusId, Network};

pub const PJM5_JSON: &str = include_str!("../../../data/pjm5.json");

/// Shape parameter `a` of the mean-matched wind Beta law.
pub const WIND_SHAPE_A: f64 = 2.0;

/// Wind farm bus in the bundled network.
pub const WIND_BUS: BusId = BusId(3);

/// The three wind forecast cases, in MW.
pub const CASE_FORECASTS: [f64; 3] = [50.0, 300.0, 550.0];

pub fn pjm5() -> Network {
    parse_network(PJM5_JSON).expect("bundled network is valid")
}

/// Bundled network for case 1, 2 or 3.
pub fn pjm5_case(case: usize) -> Network {
    assert!((1..=3).contains(&case), "bundled cases are 1, 2 and 3");
    with_wind_forecast(pjm5(), WIND_BUS, CASE_FORECASTS[case - 1])
}

/// Replaces the forecast of the wind farm at `bus`, re-deriving its Beta law.
pub fn with_wind_forecast(mut net: Network, bus: BusId, forecast: f64) -> Network {
    let farm = net.wind_farms.iter_mut().find(|w| w.bus == bus).expect("wind farm exists");
    *farm = farm.with_mean_matched_beta(forecast, WIND_SHAPE_A).expect("forecast strictly inside capacity");
    net
}
