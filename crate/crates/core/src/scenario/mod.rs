//! Minute-by-minute dispatch over a load profile.

mod config;
mod profile;

pub use config::{parse_config, parse_limit, ConfigError, ConfigFile, DynamicsChoice, GraphSource, ProfileSource, Source};
pub use profile::LoadProfile;

use std::collections::{HashMap, HashSet, VecDeque};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{run_game, CongestionEpisode, DynamicsError, DynamicsKind, GameSettings, Record, Trajectory};
use crate::game::{FitnessConfig, Fleet, GameError, DispatchGame, PopulationState};
use crate::grid::{reduce_keeping, validate_radial, BusId, GridError, RadialNetwork, RootedTree};
use crate::oracle::{brute_force_opf, lambda_dispatch, OracleError};

/// Residual overflow above this counts against a step, kW.
pub const RESIDUAL_OVERFLOW_KW: f64 = 0.1;
/// Largest tolerated |Σp − P_d|, kW.
pub const BALANCE_TOL_KW: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid load profile: {0}")]
    InvalidProfile(String),
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("step {step}: total demand must be positive, got {demand_kw}")]
    NoDemand { step: usize, demand_kw: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// x_i = 1/n.
    #[default]
    Uniform,
    /// Every load is served by its electrically closest generator.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitOverride {
    pub from: BusId,
    pub to: BusId,
    pub limit_kw: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub network: RadialNetwork,
    pub fleet: Fleet,
    pub profile: LoadProfile,
    pub fitness: FitnessConfig,
    pub dynamics: DynamicsKind,
    pub limits: Vec<LimitOverride>,
    /// First step index.
    pub start: usize,
    /// One past the last step index.
    pub end: usize,
    pub warm_start: bool,
    pub init: Init,
    pub game: GameSettings,
    pub oracle_step_kw: f64,
    /// Collapse the feeder to key nodes before running.
    pub reduce: bool,
    /// Keep every iteration of every step.
    pub keep_trajectory: bool,
}

impl ScenarioConfig {
    /// Smith dynamics over the whole profile with default settings.
    pub fn new(network: RadialNetwork, fleet: Fleet, profile: LoadProfile) -> Self {
        let end = profile.len();
        ScenarioConfig {
            network,
            fleet,
            profile,
            fitness: FitnessConfig::default(),
            dynamics: DynamicsKind::Smith,
            limits: Vec::new(),
            start: 0,
            end,
            warm_start: true,
            init: Init::Uniform,
            game: GameSettings { record: Record::Tail, ..GameSettings::default() },
            oracle_step_kw: 0.5,
            reduce: false,
            keep_trajectory: false,
        }
    }

    /// Restricts the run to one step.
    pub fn single_step(mut self, step: usize) -> Self {
        self.start = step;
        self.end = step + 1;
        self
    }

    pub fn with_limit(mut self, from: impl Into<BusId>, to: impl Into<BusId>, limit_kw: f64) -> Self {
        self.limits.push(LimitOverride { from: from.into(), to: to.into(), limit_kw });
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.prepare().map(|_| ())
    }

    fn prepare(&self) -> Result<Scenario<'_>, ScenarioError> {
        validate_radial(&self.network)?;
        self.game.validate()?;
        self.fitness.check_against(&self.fleet)?;
        let n = self.fleet.len();
        if let Some(g) = self.dynamics.graph() {
            if g.len() != n {
                return Err(DynamicsError::DimensionMismatch { expected: n, got: g.len() }.into());
            }
        }
        for g in self.fleet.iter() {
            if self.network.bus(&g.bus).is_none() {
                return Err(GameError::UnknownGeneratorBus(g.bus.clone()).into());
            }
        }
        for b in self.profile.buses() {
            if self.network.bus(b).is_none() {
                return Err(GridError::UnknownBus(b.clone()).into());
            }
        }
        if self.start >= self.end || self.end > self.profile.len() {
            return Err(ScenarioError::InvalidConfig(format!(
                "step range {}..{} is outside the profile's {} steps",
                self.start,
                self.end,
                self.profile.len()
            )));
        }
        if !(self.oracle_step_kw > 0.0 && self.oracle_step_kw.is_finite()) {
            return Err(OracleError::InvalidStep(self.oracle_step_kw).into());
        }

        let mut net = self.network.clone();
        for l in &self.limits {
            net.set_limit(&l.from, &l.to, l.limit_kw)?;
        }
        if self.reduce {
            let keep: HashSet<BusId> = self.profile.buses().iter().cloned().collect();
            net = reduce_keeping(&net, &keep)?;
        }
        let profile_index = self
            .profile
            .buses()
            .iter()
            .map(|b| net.bus_index(b).expect("profile buses survive reduction"))
            .collect();
        Ok(Scenario { cfg: self, net, profile_index })
    }
}

/// Oracle dispatch for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub setpoints_kw: Vec<f64>,
    pub total_cost: f64,
    /// Whether line limits were enforced.
    pub constrained: bool,
}

/// One entry of a [`DispatchResult`].
#[derive(Debug, Clone)]
pub struct StepResult {
    pub step: usize,
    pub minute: u32,
    pub demand_kw: f64,
    pub setpoints_kw: Vec<f64>,
    /// Per line of [`DispatchResult::network`], positive parent to child.
    pub flows_kw: Vec<f64>,
    pub episodes: Vec<CongestionEpisode>,
    pub iterations: usize,
    pub converged_at: Option<usize>,
    pub total_cost: f64,
    /// Largest overflow left in the final state, kW.
    pub residual_overflow_kw: f64,
    /// `None` when the oracle has no feasible dispatch.
    pub oracle: Option<OracleEntry>,
    pub abs_error_kw: Option<Vec<f64>>,
    pub trajectory: Option<Trajectory>,
}

impl StepResult {
    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    pub fn balance_error_kw(&self) -> f64 {
        (self.setpoints_kw.iter().sum::<f64>() - self.demand_kw).abs()
    }
}

#[derive(Debug, Clone)]
pub struct DispatchResult {
    /// The network the game ran on, after overrides and reduction.
    pub network: RadialNetwork,
    pub generators: Vec<BusId>,
    pub dynamics: String,
    pub steps: Vec<StepResult>,
}

impl DispatchResult {
    pub fn all_converged(&self) -> bool {
        self.steps.iter().all(StepResult::converged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: usize,
    pub converged_steps: usize,
    pub oracle_steps: usize,
    pub max_abs_error_kw: f64,
    pub mean_abs_error_kw: f64,
    /// (Σ cost − Σ oracle cost) / Σ oracle cost over steps with an oracle.
    pub cost_gap: f64,
    pub residual_overflow_steps: usize,
    pub overflow_events: usize,
    pub balance_violations: usize,
    pub max_iterations: usize,
    pub mean_iterations: f64,
}

pub fn compare_to_oracle(result: &DispatchResult) -> Metrics {
    let mut max_err: f64 = 0.0;
    let mut err_sum = 0.0;
    let mut err_count = 0usize;
    let (mut cost, mut oracle_cost) = (0.0, 0.0);
    for s in &result.steps {
        if let (Some(o), Some(errs)) = (&s.oracle, &s.abs_error_kw) {
            for &e in errs {
                max_err = max_err.max(e);
                err_sum += e;
                err_count += 1;
            }
            cost += s.total_cost;
            oracle_cost += o.total_cost;
        }
    }
    let steps = result.steps.len();
    let iterations: Vec<usize> = result.steps.iter().map(|s| s.iterations).collect();
    Metrics {
        steps,
        converged_steps: result.steps.iter().filter(|s| s.converged()).count(),
        oracle_steps: result.steps.iter().filter(|s| s.oracle.is_some()).count(),
        max_abs_error_kw: max_err,
        mean_abs_error_kw: if err_count > 0 { err_sum / err_count as f64 } else { 0.0 },
        cost_gap: if oracle_cost != 0.0 { (cost - oracle_cost) / oracle_cost } else { 0.0 },
        residual_overflow_steps: result
            .steps
            .iter()
            .filter(|s| s.residual_overflow_kw > RESIDUAL_OVERFLOW_KW)
            .count(),
        overflow_events: result.steps.iter().map(|s| s.episodes.len()).sum(),
        balance_violations: result.steps.iter().filter(|s| s.balance_error_kw() > BALANCE_TOL_KW).count(),
        max_iterations: iterations.iter().copied().max().unwrap_or(0),
        mean_iterations: if steps > 0 { iterations.iter().sum::<usize>() as f64 / steps as f64 } else { 0.0 },
    }
}

struct Scenario<'a> {
    cfg: &'a ScenarioConfig,
    net: RadialNetwork,
    /// Network bus index of each profile bus.
    profile_index: Vec<usize>,
}

impl Scenario<'_> {
    fn network_at(&self, step: usize) -> RadialNetwork {
        let mut net = self.net.clone();
        for (b, &idx) in self.profile_index.iter().enumerate() {
            net.buses[idx].load_kw = self.cfg.profile.series(b)[step];
        }
        net
    }

    fn initial_state(&self, net: &RadialNetwork) -> Result<PopulationState, ScenarioError> {
        let demand = net.total_load_kw();
        match self.cfg.init {
            Init::Uniform => Ok(PopulationState::uniform(self.cfg.fleet.len(), demand)?),
            Init::Nearest => Ok(PopulationState::new(nearest_shares(net, &self.cfg.fleet)?, demand)?),
        }
    }

    fn run_step(&self, step: usize, x_init: Option<&PopulationState>) -> Result<(StepResult, PopulationState), ScenarioError> {
        let cfg = self.cfg;
        let net = self.network_at(step);
        let demand_kw = net.total_load_kw();
        if !(demand_kw > 0.0) {
            return Err(ScenarioError::NoDemand { step, demand_kw });
        }
        let x0 = match x_init {
            Some(x) => {
                if x.len() != cfg.fleet.len() {
                    return Err(GameError::StateMismatch { expected: cfg.fleet.len(), got: x.len() }.into());
                }
                x.rescaled(demand_kw)?
            }
            None => self.initial_state(&net)?,
        };

        let game = DispatchGame::new(&net, cfg.fleet.clone(), cfg.fitness)?;
        let mut settings = cfg.game;
        if cfg.keep_trajectory {
            settings.record = Record::Full;
        }
        let traj = run_game(&x0, &cfg.dynamics, &game, &settings)?;
        if !traj.converged() {
            warn!("step {step}: no convergence within {} iterations", settings.max_iter);
        }
        let final_state = traj.final_state();
        let setpoints_kw = traj.final_setpoints_kw();
        let flows_kw = game.tree().flows(&game.injections(&setpoints_kw));
        let residual_overflow_kw = traj.last().max_overflow_kw();

        let oracle = self.oracle(&net, demand_kw)?;
        let abs_error_kw = oracle
            .as_ref()
            .map(|o| setpoints_kw.iter().zip(&o.setpoints_kw).map(|(p, q)| (p - q).abs()).collect());
        debug!("step {step}: {} iterations, demand {demand_kw:.3} kW", traj.iterations);

        let result = StepResult {
            step,
            minute: cfg.profile.minute(step),
            demand_kw,
            total_cost: cfg.fleet.total_cost(&setpoints_kw),
            setpoints_kw,
            flows_kw,
            episodes: traj.episodes.clone(),
            iterations: traj.iterations,
            converged_at: traj.converged_at,
            residual_overflow_kw,
            oracle,
            abs_error_kw,
            trajectory: cfg.keep_trajectory.then_some(traj),
        };
        Ok((result, final_state))
    }

    fn oracle(&self, net: &RadialNetwork, demand_kw: f64) -> Result<Option<OracleEntry>, ScenarioError> {
        let fleet = &self.cfg.fleet;
        let lambda = match lambda_dispatch(fleet, demand_kw) {
            Ok(sol) => sol,
            Err(OracleError::Infeasible { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let tree = RootedTree::new(net)?;
        let mut inj: Vec<f64> = net.buses.iter().map(|b| b.load_kw).collect();
        for (g, p) in fleet.iter().zip(&lambda.setpoints_kw) {
            inj[net.bus_index(&g.bus).expect("validated generator bus")] -= p;
        }
        let flows = tree.flows(&inj);
        if tree.overflows(&flows).next().is_none() {
            return Ok(Some(OracleEntry {
                setpoints_kw: lambda.setpoints_kw,
                total_cost: lambda.total_cost,
                constrained: true,
            }));
        }
        let loads: HashMap<BusId, f64> = net.buses.iter().map(|b| (b.id.clone(), b.load_kw)).collect();
        match brute_force_opf(net, fleet, &loads, self.cfg.oracle_step_kw) {
            Ok(sol) if sol.feasible => Ok(Some(OracleEntry {
                setpoints_kw: sol.setpoints_kw,
                total_cost: sol.total_cost,
                constrained: true,
            })),
            Ok(_) => Ok(None),
            Err(OracleError::TooManyGenerators { combinations, .. }) => {
                warn!("constrained oracle skipped ({combinations:.0} combinations); using unconstrained dispatch");
                Ok(Some(OracleEntry {
                    setpoints_kw: lambda.setpoints_kw,
                    total_cost: lambda.total_cost,
                    constrained: false,
                }))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn result(&self, steps: Vec<StepResult>) -> DispatchResult {
        DispatchResult {
            network: self.net.clone(),
            generators: self.cfg.fleet.iter().map(|g| g.bus.clone()).collect(),
            dynamics: self.cfg.dynamics.name().to_owned(),
            steps,
        }
    }
}

/// Runs the game for profile step `t` starting from `x_init`.
///
/// `x_init` is rescaled to the step's demand. Non-convergence is recorded in
/// the result, not returned as an error.
pub fn run_timestep(
    cfg: &ScenarioConfig,
    t: usize,
    x_init: &PopulationState,
) -> Result<(StepResult, PopulationState), ScenarioError> {
    let sc = cfg.prepare()?;
    if t >= cfg.profile.len() {
        return Err(ScenarioError::InvalidConfig(format!("step {t} is outside the profile")));
    }
    sc.run_step(t, Some(x_init))
}

/// Runs every step of the configured range.
///
/// With warm starting each step begins from the previous step's final state
/// and the steps run in order; otherwise each step starts from the configured
/// initialization and steps run in parallel.
pub fn run_day(cfg: &ScenarioConfig) -> Result<DispatchResult, ScenarioError> {
    let sc = cfg.prepare()?;
    let range = cfg.start..cfg.end;
    let steps = if cfg.warm_start {
        let mut steps = Vec::with_capacity(range.len());
        let mut state: Option<PopulationState> = None;
        for t in range {
            let (r, x) = sc.run_step(t, state.as_ref())?;
            steps.push(r);
            state = Some(x);
        }
        steps
    } else {
        range
            .into_par_iter()
            .map(|t| sc.run_step(t, None).map(|(r, _)| r))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(sc.result(steps))
}

/// Shares that assign each bus's load to the generator with the least path
/// resistance; ties go to fewer hops, then fleet order.
pub fn nearest_shares(net: &RadialNetwork, fleet: &Fleet) -> Result<Vec<f64>, ScenarioError> {
    let n = net.buses.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for l in &net.lines {
        let a = net.bus_index(&l.from).ok_or_else(|| GridError::UnknownBus(l.from.clone()))?;
        let b = net.bus_index(&l.to).ok_or_else(|| GridError::UnknownBus(l.to.clone()))?;
        adj[a].push((b, l.resistance_ohm));
        adj[b].push((a, l.resistance_ohm));
    }
    let gen_bus: Vec<usize> = fleet
        .iter()
        .map(|g| net.bus_index(&g.bus).ok_or_else(|| GameError::UnknownGeneratorBus(g.bus.clone())))
        .collect::<Result<_, _>>()?;

    let total = net.total_load_kw();
    if !(total > 0.0) {
        return Err(ScenarioError::NoDemand { step: 0, demand_kw: total });
    }
    let mut shares = vec![0.0; fleet.len()];
    for (src, bus) in net.buses.iter().enumerate() {
        if bus.load_kw <= 0.0 {
            continue;
        }
        // The network is a tree, so a breadth-first walk gives the unique path lengths.
        let mut dist = vec![(f64::INFINITY, usize::MAX); n];
        dist[src] = (0.0, 0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &(v, r) in &adj[u] {
                if dist[v].1 == usize::MAX {
                    dist[v] = (dist[u].0 + r, dist[u].1 + 1);
                    queue.push_back(v);
                }
            }
        }
        let best = (0..fleet.len())
            .min_by(|&i, &j| {
                let (a, b) = (dist[gen_bus[i]], dist[gen_bus[j]]);
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(i.cmp(&j))
            })
            .expect("fleet is non-empty");
        shares[best] += bus.load_kw / total;
    }
    Ok(shares)
}
