//! Bundled 12-node feeder, six-generator fleet and a one-day load profile.

use std::f64::consts::PI;
use std::path::PathBuf;

use crate::game::Fleet;
use crate::grid::RadialNetwork;
use crate::io;
use crate::scenario::LoadProfile;

pub const FEEDER_CSV: &str = include_str!("../data/synthetic/feeder.csv");
pub const BUSES_CSV: &str = include_str!("../data/synthetic/buses.csv");
pub const GENERATORS_CSV: &str = include_str!("../data/synthetic/generators.csv");

/// Minute of the aggregate peak in [`day_profile`].
pub const PEAK_MINUTE: u32 = 566;
pub const MINUTES_PER_DAY: u32 = 1440;
pub const PEAK_LOAD_KW: f64 = 57.0;

/// Directory holding the bundled CSV files.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join("synthetic")
}

/// The feeder with peak-minute loads, rooted at bus 1.
pub fn feeder() -> RadialNetwork {
    io::network_from_csv(FEEDER_CSV, BUSES_CSV, None).expect("bundled feeder is valid")
}

pub fn table_fleet() -> Fleet {
    io::parse_fleet(GENERATORS_CSV).expect("bundled fleet is valid")
}

fn shape(minute: f64) -> f64 {
    let bump = |centre: f64, width: f64| (-((minute - centre) / width).powi(2)).exp();
    0.3 + 0.7 * bump(PEAK_MINUTE as f64, 120.0) + 0.4 * bump(1170.0, 90.0)
}

/// Per-bus loads for every minute of a day.
///
/// A morning peak and a smaller evening peak scale each bus's peak load, with
/// a bus-specific ripple that vanishes at [`PEAK_MINUTE`]. The aggregate
/// reaches [`PEAK_LOAD_KW`] at that minute.
pub fn day_profile() -> LoadProfile {
    let net = feeder();
    let loaded: Vec<_> = net.buses.iter().filter(|b| b.load_kw > 0.0).collect();
    let minutes: Vec<u32> = (0..MINUTES_PER_DAY).collect();
    let peak = shape(PEAK_MINUTE as f64);
    let loads = loaded
        .iter()
        .enumerate()
        .map(|(idx, bus)| {
            let k = (1 + idx % 3) as f64;
            minutes
                .iter()
                .map(|&t| {
                    let dt = t as f64 - PEAK_MINUTE as f64;
                    let ripple = 1.0 - 0.1 * (1.0 - (2.0 * PI * k * dt / MINUTES_PER_DAY as f64).cos());
                    bus.load_kw * shape(t as f64) / peak * ripple
                })
                .collect()
        })
        .collect();
    let buses = loaded.iter().map(|b| b.id.clone()).collect();
    LoadProfile::new(minutes, buses, loads).expect("generated profile is valid")
}
