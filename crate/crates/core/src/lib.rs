//! Economic dispatch of distributed generators through population dynamics.
//!
//! Demand is a population of agents choosing generators. Fitness is a biased
//! negative marginal cost with barrier terms at the generator limits and a
//! congestion signal from overloaded lines. Replicator and Smith dynamics,
//! centralized or over a communication graph, drive the shares toward the
//! economic dispatch.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod game;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod scenario;
pub mod synthetic;

pub use dynamics::{run_game, CommGraph, DynamicsKind, GameSettings, Trajectory};
pub use game::{DispatchGame, FitnessConfig, Fleet, GeneratorParams, PopulationState};
pub use grid::{BusId, Line, RadialNetwork};
pub use oracle::{brute_force_opf, lambda_dispatch, DispatchSolution};
pub use scenario::{compare_to_oracle, run_day, run_timestep, DispatchResult, LoadProfile, Metrics, ScenarioConfig};
