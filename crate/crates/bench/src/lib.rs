//! Fixtures shared by the benchmarks.

use popdispatch_core::synthetic::{feeder, table_fleet};
use popdispatch_core::{DispatchGame, FitnessConfig, PopulationState, RadialNetwork};

/// The bundled feeder at peak load.
pub fn peak_network() -> RadialNetwork {
    feeder()
}

/// Peak-load game, optionally with the 505-666 line limited to `limit_kw`.
pub fn peak_game(limit_kw: Option<f64>) -> DispatchGame {
    let mut net = feeder();
    if let Some(limit) = limit_kw {
        net.set_limit(&"505".into(), &"666".into(), limit).expect("line exists");
    }
    DispatchGame::new(&net, table_fleet(), FitnessConfig::default()).expect("bundled game is valid")
}

pub fn uniform_start() -> PopulationState {
    PopulationState::uniform(6, 57.0).expect("valid state")
}
