//! Generator fitness for the dispatch population game.
//!
//! Powers are carried in kW. Cost coefficients `b` and `c` are quoted per MW
//! and per MW², so set points are converted to MW inside [`cost`] and
//! [`base_fitness`]. The barrier works directly in kW.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{FitnessModel, Observation};
use crate::grid::{BusId, GridError, RadialNetwork, RootedTree};

const KW_PER_MW: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("more than one generator at bus {0}")]
    DuplicateGenerator(BusId),
    #[error("generator at bus {bus}: {reason}")]
    InvalidGenerator { bus: BusId, reason: String },
    #[error("generator bus {0} is not in the network")]
    UnknownGeneratorBus(BusId),
    #[error("invalid fitness configuration: {0}")]
    InvalidConfig(String),
    #[error("bias B = {bias} does not keep fitness positive; need B > {required}")]
    BiasTooSmall { bias: f64, required: f64 },
    #[error("invalid population state: {0}")]
    InvalidState(String),
    #[error("state has {got} shares but the fleet has {expected} generators")]
    StateMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub bus: BusId,
    /// Fixed cost, €.
    pub a: f64,
    /// Linear cost, €/MW.
    pub b: f64,
    /// Quadratic cost, €/MW².
    pub c: f64,
    pub pmin_kw: f64,
    pub pmax_kw: f64,
}

impl GeneratorParams {
    pub fn new(bus: impl Into<BusId>, a: f64, b: f64, c: f64, pmin_kw: f64, pmax_kw: f64) -> Self {
        GeneratorParams { bus: bus.into(), a, b, c, pmin_kw, pmax_kw }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |reason: &str| GameError::InvalidGenerator {
            bus: self.bus.clone(),
            reason: reason.to_owned(),
        };
        if ![self.a, self.b, self.c, self.pmin_kw, self.pmax_kw].iter().all(|v| v.is_finite()) {
            return Err(bad("coefficients and limits must be finite"));
        }
        if self.c < 0.0 {
            return Err(bad("quadratic coefficient c must be >= 0"));
        }
        if self.pmin_kw < 0.0 {
            return Err(bad("pmin must be >= 0"));
        }
        if self.pmax_kw <= self.pmin_kw {
            return Err(bad("pmax must exceed pmin"));
        }
        Ok(())
    }

    /// Marginal cost b + 2c·p at `p_kw`, in €/MW.
    pub fn marginal_cost(&self, p_kw: f64) -> f64 {
        self.b + 2.0 * self.c * p_kw / KW_PER_MW
    }
}

/// Generators in strategy order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeneratorParams>", into = "Vec<GeneratorParams>")]
pub struct Fleet(Vec<GeneratorParams>);

impl Fleet {
    pub fn new(generators: Vec<GeneratorParams>) -> Result<Self, GameError> {
        if generators.is_empty() {
            return Err(GameError::EmptyFleet);
        }
        let mut buses = HashSet::new();
        for g in &generators {
            g.validate()?;
            if !buses.insert(&g.bus) {
                return Err(GameError::DuplicateGenerator(g.bus.clone()));
            }
        }
        Ok(Fleet(generators))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GeneratorParams> {
        self.0.iter()
    }

    pub fn generators(&self) -> &[GeneratorParams] {
        &self.0
    }

    pub fn position(&self, bus: &BusId) -> Option<usize> {
        self.0.iter().position(|g| &g.bus == bus)
    }

    pub fn capacity_kw(&self) -> f64 {
        self.0.iter().map(|g| g.pmax_kw).sum()
    }

    pub fn min_output_kw(&self) -> f64 {
        self.0.iter().map(|g| g.pmin_kw).sum()
    }

    pub fn total_cost(&self, setpoints_kw: &[f64]) -> f64 {
        self.0.iter().zip(setpoints_kw).map(|(g, &p)| cost(g, p)).sum()
    }
}

impl std::ops::Index<usize> for Fleet {
    type Output = GeneratorParams;
    fn index(&self, i: usize) -> &GeneratorParams {
        &self.0[i]
    }
}

impl TryFrom<Vec<GeneratorParams>> for Fleet {
    type Error = GameError;
    fn try_from(v: Vec<GeneratorParams>) -> Result<Self, GameError> {
        Fleet::new(v)
    }
}

impl From<Fleet> for Vec<GeneratorParams> {
    fn from(f: Fleet) -> Self {
        f.0
    }
}

/// Scalars shaping the fitness landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessConfig {
    /// Bias B that keeps fitness positive.
    pub bias: f64,
    /// Barrier slope m, per kW outside the generator limits.
    pub barrier_slope: f64,
    /// Congestion gain C, per kW of overflow.
    pub congestion_gain: f64,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        FitnessConfig { bias: 1000.0, barrier_slope: 400.0, congestion_gain: 1000.0 }
    }
}

impl FitnessConfig {
    pub fn new(bias: f64, barrier_slope: f64, congestion_gain: f64) -> Result<Self, GameError> {
        let cfg = FitnessConfig { bias, barrier_slope, congestion_gain };
        for (name, v) in [("B", bias), ("m", barrier_slope), ("C", congestion_gain)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GameError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(cfg)
    }

    /// Checks that the bias exceeds every marginal cost at full output.
    pub fn check_against(&self, fleet: &Fleet) -> Result<(), GameError> {
        let required = fleet
            .iter()
            .map(|g| g.marginal_cost(g.pmax_kw))
            .fold(f64::NEG_INFINITY, f64::max);
        if self.bias > required {
            Ok(())
        } else {
            Err(GameError::BiasTooSmall { bias: self.bias, required })
        }
    }
}

/// Shares of total demand served by each generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    shares: Vec<f64>,
    total_demand_kw: f64,
}

/// Allowed drift of Σx from 1.
pub const SIMPLEX_TOL: f64 = 1e-9;

impl PopulationState {
    pub fn new(shares: Vec<f64>, total_demand_kw: f64) -> Result<Self, GameError> {
        if shares.is_empty() {
            return Err(GameError::InvalidState("no strategies".into()));
        }
        if !(total_demand_kw > 0.0 && total_demand_kw.is_finite()) {
            return Err(GameError::InvalidState(format!(
                "total demand must be positive, got {total_demand_kw}"
            )));
        }
        if shares.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(GameError::InvalidState("shares must be finite and >= 0".into()));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(GameError::InvalidState(format!("shares sum to {sum}, not 1")));
        }
        Ok(PopulationState { shares, total_demand_kw })
    }

    pub fn uniform(n: usize, total_demand_kw: f64) -> Result<Self, GameError> {
        PopulationState::new(vec![1.0 / n as f64; n], total_demand_kw)
    }

    /// Builds a state from set points; their sum becomes the total demand.
    pub fn from_setpoints(setpoints_kw: &[f64]) -> Result<Self, GameError> {
        let total: f64 = setpoints_kw.iter().sum();
        let shares = setpoints_kw.iter().map(|p| p / total).collect();
        PopulationState::new(shares, total)
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn total_demand_kw(&self) -> f64 {
        self.total_demand_kw
    }

    pub fn setpoints_kw(&self) -> Vec<f64> {
        self.shares.iter().map(|x| x * self.total_demand_kw).collect()
    }

    /// Same shares applied to a different demand.
    pub fn rescaled(&self, total_demand_kw: f64) -> Result<Self, GameError> {
        PopulationState::new(self.shares.clone(), total_demand_kw)
    }
}

/// Generation cost a + b·p + c·p², p in MW.
pub fn cost(gen: &GeneratorParams, p_kw: f64) -> f64 {
    let p = p_kw / KW_PER_MW;
    gen.a + gen.b * p + gen.c * p * p
}

/// Biased negative marginal cost, B − (b + 2c·p).
pub fn base_fitness(gen: &GeneratorParams, p_kw: f64, bias: f64) -> f64 {
    bias - gen.marginal_cost(p_kw)
}

/// Continuous hinge pushing set points back inside [pmin, pmax].
pub fn barrier(gen: &GeneratorParams, p_kw: f64, slope: f64) -> f64 {
    slope * (gen.pmin_kw - p_kw).max(0.0) - slope * (p_kw - gen.pmax_kw).max(0.0)
}

pub fn fitness(gen: &GeneratorParams, p_kw: f64, cfg: &FitnessConfig, delta: f64) -> f64 {
    base_fitness(gen, p_kw, cfg.bias) + barrier(gen, p_kw, cfg.barrier_slope) + delta
}

/// Fitness of every generator at `state`, with congestion signals from the
/// flows the state induces on `net`.
pub fn fitness_vector(
    state: &PopulationState,
    fleet: &Fleet,
    net: &RadialNetwork,
    cfg: &FitnessConfig,
) -> Result<Vec<f64>, GameError> {
    if state.len() != fleet.len() {
        return Err(GameError::StateMismatch { expected: fleet.len(), got: state.len() });
    }
    let game = DispatchGame::new(net, fleet.clone(), *cfg)?;
    let mut out = vec![0.0; fleet.len()];
    game.fitness_at(&state.setpoints_kw(), &mut out);
    Ok(out)
}

#[derive(Debug, Clone)]
struct LimitedLine {
    limit_kw: f64,
    load_below_kw: f64,
    gens_below: Vec<usize>,
}

/// One dispatch game: a fleet on a feeder with fixed loads.
///
/// Flows on limited lines are computed from precomputed subtree loads so a
/// fitness evaluation does not allocate.
#[derive(Debug, Clone)]
pub struct DispatchGame {
    tree: RootedTree,
    fleet: Fleet,
    cfg: FitnessConfig,
    loads_kw: Vec<f64>,
    gen_bus: Vec<usize>,
    limited: Vec<LimitedLine>,
    total_demand_kw: f64,
}

impl DispatchGame {
    pub fn new(net: &RadialNetwork, fleet: Fleet, cfg: FitnessConfig) -> Result<Self, GameError> {
        let tree = RootedTree::new(net)?;
        let gen_bus = fleet
            .iter()
            .map(|g| net.bus_index(&g.bus).ok_or_else(|| GameError::UnknownGeneratorBus(g.bus.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let loads_kw: Vec<f64> = net.buses.iter().map(|b| b.load_kw).collect();
        let limited = (0..tree.line_count())
            .filter(|&l| tree.limit(l).is_finite())
            .map(|line| LimitedLine {
                limit_kw: tree.limit(line),
                load_below_kw: (0..tree.bus_count())
                    .filter(|&b| tree.below(line, b))
                    .map(|b| loads_kw[b])
                    .sum(),
                gens_below: (0..gen_bus.len()).filter(|&g| tree.below(line, gen_bus[g])).collect(),
            })
            .collect();
        Ok(DispatchGame {
            total_demand_kw: loads_kw.iter().sum(),
            tree,
            fleet,
            cfg,
            loads_kw,
            gen_bus,
            limited,
        })
    }

    pub fn fleet(&self) -> &Fleet {
        &self.fleet
    }

    pub fn config(&self) -> &FitnessConfig {
        &self.cfg
    }

    pub fn tree(&self) -> &RootedTree {
        &self.tree
    }

    pub fn limited_lines(&self) -> usize {
        self.limited.len()
    }

    /// Per-bus net injections (load − generation) for set points `p_kw`.
    pub fn injections(&self, p_kw: &[f64]) -> Vec<f64> {
        let mut inj = self.loads_kw.clone();
        for (g, &p) in p_kw.iter().enumerate() {
            inj[self.gen_bus[g]] -= p;
        }
        inj
    }

    /// Fitness at explicit set points.
    pub fn fitness_at(&self, p_kw: &[f64], out: &mut [f64]) {
        for (i, (g, &p)) in self.fleet.iter().zip(p_kw).enumerate() {
            out[i] = base_fitness(g, p, self.cfg.bias) + barrier(g, p, self.cfg.barrier_slope);
        }
        for ll in &self.limited {
            let gen_below: f64 = ll.gens_below.iter().map(|&g| p_kw[g]).sum();
            let flow = ll.load_below_kw - gen_below;
            let overflow = flow.abs() - ll.limit_kw;
            if overflow <= 0.0 {
                continue;
            }
            // Positive flow runs parent→child: the subtree receives.
            let below_sign = if flow > 0.0 { 1.0 } else { -1.0 };
            let magnitude = overflow * self.cfg.congestion_gain;
            out.iter_mut().for_each(|f| *f -= below_sign * magnitude);
            for &g in &ll.gens_below {
                out[g] += 2.0 * below_sign * magnitude;
            }
        }
    }
}

impl FitnessModel for DispatchGame {
    fn strategies(&self) -> usize {
        self.fleet.len()
    }

    fn total_demand_kw(&self) -> f64 {
        self.total_demand_kw
    }

    fn fitness(&self, shares: &[f64], out: &mut [f64]) {
        let mut p = [0.0; 16];
        if shares.len() <= p.len() {
            for (pi, x) in p.iter_mut().zip(shares) {
                *pi = x * self.total_demand_kw;
            }
            self.fitness_at(&p[..shares.len()], out);
        } else {
            let p: Vec<f64> = shares.iter().map(|x| x * self.total_demand_kw).collect();
            self.fitness_at(&p, out);
        }
    }

    fn observe(&self, shares: &[f64]) -> Observation {
        let p: Vec<f64> = shares.iter().map(|x| x * self.total_demand_kw).collect();
        let mut fitness = vec![0.0; p.len()];
        self.fitness_at(&p, &mut fitness);
        let flows_kw = self.tree.flows(&self.injections(&p));
        let congestions = self.tree.overflows(&flows_kw).collect();
        Observation { fitness, flows_kw, congestions }
    }

    fn stiffness(&self) -> f64 {
        let c_max = self.fleet.iter().map(|g| g.c).fold(0.0, f64::max);
        self.total_demand_kw
            * (self.cfg.barrier_slope
                + 2.0 * self.cfg.congestion_gain * self.limited.len() as f64
                + 2.0 * c_max / KW_PER_MW)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, Line};
    use crate::synthetic;

    fn gen(b: f64, c: f64, pmin: f64, pmax: f64) -> GeneratorParams {
        GeneratorParams::new("g", 0.0, b, c, pmin, pmax)
    }

    #[test]
    fn cost_examples() {
        let fleet = synthetic::table_fleet();
        assert_eq!(cost(&fleet[0], 0.0), 0.0);
        assert!((cost(&fleet[1], 10.0) - 0.010001).abs() < 1e-15);
        assert_eq!(cost(&GeneratorParams::new("x", 2.0, 0.0, 0.0, 0.0, 1.0), 37.0), 2.0);
    }

    #[test]
    fn base_fitness_examples() {
        let fleet = synthetic::table_fleet();
        assert_eq!(base_fitness(&fleet[0], 0.0, 1000.0), 995.0);
        assert!((base_fitness(&fleet[1], 10.0, 1000.0) - 998.9998).abs() < 1e-9);
        let flat = gen(3.0, 0.0, 0.0, 10.0);
        for p in [0.0, 4.0, 10.0, 50.0] {
            assert_eq!(base_fitness(&flat, p, 3.0), 0.0);
        }
    }

    #[test]
    fn barrier_branches() {
        assert_eq!(barrier(&gen(1.0, 0.0, 0.0, 10.0), 5.0, 400.0), 0.0);
        assert_eq!(barrier(&gen(1.0, 0.0, 0.0, 10.0), 12.0, 400.0), -800.0);
        assert_eq!(barrier(&gen(1.0, 0.0, 2.0, 10.0), 1.0, 400.0), 400.0);
    }

    #[test]
    fn barrier_is_continuous_at_breakpoints() {
        let g = gen(1.0, 0.0, 2.0, 10.0);
        for bp in [g.pmin_kw, g.pmax_kw] {
            let lo = barrier(&g, bp - 1e-9, 400.0);
            let hi = barrier(&g, bp + 1e-9, 400.0);
            assert!((lo - hi).abs() < 1e-6, "jump at {bp}: {lo} vs {hi}");
            assert_eq!(barrier(&g, bp, 400.0), 0.0);
        }
    }

    #[test]
    fn fitness_adds_signal() {
        let cfg = FitnessConfig::default();
        let g = synthetic::table_fleet()[3].clone();
        assert_eq!(fitness(&g, 5.0, &cfg, 0.0), base_fitness(&g, 5.0, cfg.bias));
        let penalized = fitness(&g, 5.0, &cfg, -5000.0);
        assert!((penalized - (-4004.0)).abs() < 1e-3, "{penalized}");
        assert_eq!(fitness(&g, 5.0, &cfg, 5000.0) - fitness(&g, 5.0, &cfg, 0.0), 5000.0);
    }

    #[test]
    fn config_validation() {
        assert!(FitnessConfig::new(0.0, 1.0, 1.0).is_err());
        assert!(FitnessConfig::new(1.0, f64::NAN, 1.0).is_err());
        let fleet = synthetic::table_fleet();
        FitnessConfig::default().check_against(&fleet).unwrap();
        assert!(matches!(
            FitnessConfig::new(5.0, 400.0, 1000.0).unwrap().check_against(&fleet),
            Err(GameError::BiasTooSmall { .. })
        ));
    }

    #[test]
    fn fleet_and_state_validation() {
        assert_eq!(Fleet::new(vec![]), Err(GameError::EmptyFleet));
        let g = gen(1.0, 0.0, 0.0, 1.0);
        assert!(matches!(Fleet::new(vec![g.clone(), g]), Err(GameError::DuplicateGenerator(_))));
        assert!(Fleet::new(vec![gen(1.0, -1.0, 0.0, 1.0)]).is_err());
        assert!(Fleet::new(vec![gen(1.0, 0.0, 2.0, 2.0)]).is_err());

        assert!(PopulationState::new(vec![0.5, 0.6], 10.0).is_err());
        assert!(PopulationState::new(vec![1.2, -0.2], 10.0).is_err());
        assert!(PopulationState::new(vec![0.5, 0.5], 0.0).is_err());
        let s = PopulationState::new(vec![0.25, 0.75], 8.0).unwrap();
        assert_eq!(s.setpoints_kw(), vec![2.0, 6.0]);
    }

    #[test]
    fn unbounded_network_gives_decoupled_fitness() {
        let net = synthetic::feeder();
        let fleet = synthetic::table_fleet();
        let cfg = FitnessConfig::default();
        let state = PopulationState::new(vec![0.05, 0.2, 0.2, 0.1, 0.3, 0.15], net.total_load_kw()).unwrap();
        let f = fitness_vector(&state, &fleet, &net, &cfg).unwrap();
        for (i, p) in state.setpoints_kw().into_iter().enumerate() {
            let expected = base_fitness(&fleet[i], p, cfg.bias) + barrier(&fleet[i], p, cfg.barrier_slope);
            assert!((f[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_fleet_is_symmetric() {
        let buses = vec![Bus::new(1u32, 3.0), Bus::new(2u32, 3.0), Bus::new(3u32, 3.0)];
        let net = RadialNetwork::new(1u32, buses, vec![Line::new(1u32, 2u32), Line::new(1u32, 3u32)]);
        let fleet = Fleet::new(
            (1..=3u32).map(|b| GeneratorParams::new(b, 0.0, 2.0, 0.01, 0.0, 10.0)).collect(),
        )
        .unwrap();
        let f = fitness_vector(&PopulationState::uniform(3, 9.0).unwrap(), &fleet, &net, &FitnessConfig::default())
            .unwrap();
        assert!(f.iter().all(|&v| v == f[0]));
    }

    #[test]
    fn congested_exporter_is_penalized() {
        let fleet = synthetic::table_fleet();
        let cfg = FitnessConfig::default();
        let free = synthetic::feeder();
        let mut limited = free.clone();
        limited.set_limit(&"505".into(), &"666".into(), 28.0).unwrap();
        // Merit-order dispatch at peak exports 33 kW over 505-666.
        let state = PopulationState::from_setpoints(&[2.0, 10.0, 5.0, 10.0, 20.0, 10.0]).unwrap();
        let f_free = fitness_vector(&state, &fleet, &free, &cfg).unwrap();
        let f_lim = fitness_vector(&state, &fleet, &limited, &cfg).unwrap();
        let g739 = fleet.position(&"739".into()).unwrap();
        assert!(f_lim[g739] < f_free[g739]);
        assert!((f_free[g739] - f_lim[g739] - 5000.0).abs() < 1e-9);
        let g1 = fleet.position(&"1".into()).unwrap();
        assert!((f_lim[g1] - f_free[g1] - 5000.0).abs() < 1e-9);
    }

    #[test]
    fn game_signals_match_grid_signals() {
        use crate::grid::{compute_flows, congestion_signals, detect_overflows};
        use std::collections::HashMap;

        let fleet = synthetic::table_fleet();
        let cfg = FitnessConfig::default();
        let mut net = synthetic::feeder();
        net.set_limit(&"505".into(), &"666".into(), 28.0).unwrap();
        net.set_limit(&"666".into(), &"702".into(), 15.0).unwrap();
        net.set_limit(&"1".into(), &"114".into(), 20.0).unwrap();
        let p = [9.0, 1.0, 5.0, 10.0, 22.0, 10.0];
        let game = DispatchGame::new(&net, fleet.clone(), cfg).unwrap();
        let mut got = vec![0.0; 6];
        game.fitness_at(&p, &mut got);

        let inj: HashMap<BusId, f64> = net
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), game.injections(&p)[i]))
            .collect();
        let flows = compute_flows(&net, &inj).unwrap();
        let cong = detect_overflows(&net, &flows);
        assert!(cong.len() >= 2);
        let signals = congestion_signals(&net, &cong, cfg.congestion_gain).unwrap();
        for (i, g) in fleet.iter().enumerate() {
            let expected = fitness(g, p[i], &cfg, signals[&g.bus]);
            assert!((got[i] - expected).abs() < 1e-9, "{i}: {} vs {expected}", got[i]);
        }
    }
}
