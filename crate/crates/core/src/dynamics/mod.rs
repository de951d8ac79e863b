//! Mean dynamics on the strategy simplex and their fixed-step integration.
//!
//! Four right-hand sides are provided: replicator, local replicator, Smith
//! and distributed Smith. [`run_game`] integrates one of them with explicit
//! Euler steps, re-evaluating fitness (and therefore congestion signals) at
//! every step.

mod graph;

pub use graph::CommGraph;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::PopulationState;
use crate::grid::Congestion;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state left the simplex: every share clamped to zero or became non-finite")]
    DegenerateState,
    #[error("invalid communication graph: {0}")]
    InvalidGraph(String),
    #[error("invalid integration settings: {0}")]
    InvalidSettings(String),
}

/// What the dynamics see of the game at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub fitness: Vec<f64>,
    pub flows_kw: Vec<f64>,
    pub congestions: Vec<Congestion>,
}

/// A fitness landscape over population shares.
pub trait FitnessModel {
    fn strategies(&self) -> usize;

    fn total_demand_kw(&self) -> f64;

    /// Writes the fitness of every strategy at `shares` into `out`.
    fn fitness(&self, shares: &[f64], out: &mut [f64]);

    /// Fitness plus the network state it was derived from.
    fn observe(&self, shares: &[f64]) -> Observation {
        let mut fitness = vec![0.0; shares.len()];
        self.fitness(shares, &mut fitness);
        Observation { fitness, flows_kw: Vec::new(), congestions: Vec::new() }
    }

    /// Upper bound on how fast fitness moves per unit change of a share.
    /// Sets the Euler sub-step size.
    fn stiffness(&self) -> f64 {
        0.0
    }
}

/// Fitness given by a closure over the shares, with no network attached.
pub struct FnModel<F> {
    strategies: usize,
    total_demand_kw: f64,
    stiffness: f64,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnModel<F> {
    pub fn new(strategies: usize, f: F) -> Self {
        FnModel { strategies, total_demand_kw: 1.0, stiffness: 0.0, f }
    }

    pub fn with_demand(mut self, total_demand_kw: f64) -> Self {
        self.total_demand_kw = total_demand_kw;
        self
    }

    pub fn with_stiffness(mut self, stiffness: f64) -> Self {
        self.stiffness = stiffness;
        self
    }
}

impl<F: Fn(&[f64], &mut [f64])> FitnessModel for FnModel<F> {
    fn strategies(&self) -> usize {
        self.strategies
    }

    fn total_demand_kw(&self) -> f64 {
        self.total_demand_kw
    }

    fn fitness(&self, shares: &[f64], out: &mut [f64]) {
        (self.f)(shares, out)
    }

    fn stiffness(&self) -> f64 {
        self.stiffness
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsKind {
    Replicator,
    LocalReplicator(CommGraph),
    Smith,
    DistributedSmith(CommGraph),
}

impl DynamicsKind {
    pub fn name(&self) -> &'static str {
        match self {
            DynamicsKind::Replicator => "replicator",
            DynamicsKind::LocalReplicator(_) => "local-replicator",
            DynamicsKind::Smith => "smith",
            DynamicsKind::DistributedSmith(_) => "distributed-smith",
        }
    }

    pub fn graph(&self) -> Option<&CommGraph> {
        match self {
            DynamicsKind::LocalReplicator(g) | DynamicsKind::DistributedSmith(g) => Some(g),
            _ => None,
        }
    }

    /// Rate of change of the shares, written into `out`.
    pub fn rhs_into(&self, x: &[f64], f: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        check_len(x.len(), f.len())?;
        check_len(x.len(), out.len())?;
        match self {
            DynamicsKind::Replicator => replicator_into(x, f, out),
            DynamicsKind::LocalReplicator(g) => {
                check_len(x.len(), g.len())?;
                local_replicator_into(x, f, g, out)
            }
            DynamicsKind::Smith => smith_into(x, f, all_pairs(x.len()), out),
            DynamicsKind::DistributedSmith(g) => {
                check_len(x.len(), g.len())?;
                smith_into(x, f, g.edges().iter().copied(), out)
            }
        }
        Ok(())
    }

    pub fn rhs(&self, x: &[f64], f: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let mut out = vec![0.0; x.len()];
        self.rhs_into(x, f, &mut out)?;
        Ok(out)
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), DynamicsError> {
    if expected == got {
        Ok(())
    } else {
        Err(DynamicsError::DimensionMismatch { expected, got })
    }
}

fn all_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

fn reference(f: &[f64]) -> f64 {
    f.first().copied().unwrap_or(0.0)
}

fn replicator_into(x: &[f64], f: &[f64], out: &mut [f64]) {
    // Shift-invariant; subtracting a reference keeps rounding at the scale of
    // the fitness spread rather than the bias.
    let r = reference(f);
    let mean: f64 = x.iter().zip(f).map(|(xi, fi)| xi * (fi - r)).sum();
    for ((o, xi), fi) in out.iter_mut().zip(x).zip(f) {
        *o = xi * ((fi - r) - mean);
    }
}

fn local_replicator_into(x: &[f64], f: &[f64], g: &CommGraph, out: &mut [f64]) {
    let r = reference(f);
    for i in 0..x.len() {
        let (mass, weighted) = g
            .neighbors(i)
            .iter()
            .fold((0.0, 0.0), |(m, w), &j| (m + x[j], w + (f[j] - r) * x[j]));
        out[i] = x[i] * ((f[i] - r) * mass - weighted);
    }
}

/// Pairwise-comparison flows over the given undirected pairs. Each pair moves
/// mass from the less fit to the fitter strategy at the rate of the gap, so
/// the contributions cancel exactly in the sum.
fn smith_into(x: &[f64], f: &[f64], pairs: impl Iterator<Item = (usize, usize)>, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, j) in pairs {
        let gap = f[i] - f[j];
        if gap > 0.0 {
            let flow = x[j] * gap;
            out[i] += flow;
            out[j] -= flow;
        } else if gap < 0.0 {
            let flow = x[i] * -gap;
            out[j] += flow;
            out[i] -= flow;
        }
    }
}

/// ẋ_i = x_i (f_i − f̄), f̄ = Σ x_j f_j.
pub fn replicator_rhs(x: &[f64], f: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    DynamicsKind::Replicator.rhs(x, f)
}

/// ẋ_i = x_i (f_i Σ_{j∈N_i} x_j − Σ_{j∈N_i} f_j x_j).
pub fn local_replicator_rhs(x: &[f64], f: &[f64], g: &CommGraph) -> Result<Vec<f64>, DynamicsError> {
    check_len(x.len(), g.len())?;
    check_len(x.len(), f.len())?;
    let mut out = vec![0.0; x.len()];
    local_replicator_into(x, f, g, &mut out);
    Ok(out)
}

/// ẋ_i = Σ_j x_j [f_i − f_j]_+ − x_i Σ_j [f_j − f_i]_+.
pub fn smith_rhs(x: &[f64], f: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    DynamicsKind::Smith.rhs(x, f)
}

/// Smith dynamics with both sums restricted to graph neighbours.
pub fn distributed_smith_rhs(x: &[f64], f: &[f64], g: &CommGraph) -> Result<Vec<f64>, DynamicsError> {
    check_len(x.len(), g.len())?;
    check_len(x.len(), f.len())?;
    let mut out = vec![0.0; x.len()];
    smith_into(x, f, g.edges().iter().copied(), &mut out);
    Ok(out)
}

/// One explicit Euler step, clamped back onto the simplex.
pub fn euler_step(x: &[f64], rate: &[f64], h: f64) -> Result<Vec<f64>, DynamicsError> {
    check_len(x.len(), rate.len())?;
    if !(h > 0.0) {
        return Err(DynamicsError::InvalidSettings(format!("step must be positive, got {h}")));
    }
    let mut next = x.to_vec();
    euler_step_in_place(&mut next, rate, h)?;
    Ok(next)
}

fn euler_step_in_place(x: &mut [f64], rate: &[f64], h: f64) -> Result<(), DynamicsError> {
    let mut sum = 0.0;
    for (xi, r) in x.iter_mut().zip(rate) {
        let stepped = *xi + h * r;
        if stepped.is_nan() {
            return Err(DynamicsError::DegenerateState);
        }
        *xi = stepped.max(0.0);
        sum += *xi;
    }
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(DynamicsError::DegenerateState);
    }
    x.iter_mut().for_each(|xi| *xi /= sum);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Substeps {
    /// ceil(step · stiffness), at least one.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Record {
    /// Keep every iteration.
    Full,
    /// Keep only the convergence window.
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameSettings {
    /// Model time per iteration, seconds.
    pub step_s: f64,
    pub max_iter: usize,
    /// Set-point change (and residual overflow) threshold, kW.
    pub tol_kw: f64,
    pub window: usize,
    pub substeps: Substeps,
    pub record: Record,
}

impl Default for GameSettings {
    fn default() -> Self {
        GameSettings {
            step_s: 0.01,
            max_iter: 100_000,
            tol_kw: 0.01,
            window: 20,
            substeps: Substeps::Auto,
            record: Record::Full,
        }
    }
}

impl GameSettings {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidSettings(m));
        if !(self.step_s > 0.0 && self.step_s.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step_s));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.tol_kw > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol_kw));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.substeps == Substeps::Fixed(0) {
            return bad("substeps must be at least 1".into());
        }
        Ok(())
    }

    pub fn substeps_for(&self, model: &impl FitnessModel) -> usize {
        match self.substeps {
            Substeps::Fixed(n) => n,
            Substeps::Auto => {
                let n = (self.step_s * model.stiffness()).ceil();
                if n.is_finite() && n >= 1.0 {
                    n as usize
                } else {
                    1
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub shares: Vec<f64>,
    pub fitness: Vec<f64>,
    pub flows_kw: Vec<f64>,
    pub congestions: Vec<Congestion>,
}

impl Snapshot {
    pub fn max_overflow_kw(&self) -> f64 {
        self.congestions.iter().map(|c| c.overflow_kw).fold(0.0, f64::max)
    }
}

/// A run of consecutive iterations with overflow on one line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionEpisode {
    pub line: usize,
    pub detected_at: usize,
    pub last_seen: usize,
    pub peak_overflow_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub step_s: f64,
    pub substeps: usize,
    pub total_demand_kw: f64,
    /// Every iteration with [`Record::Full`], the last `window + 1` otherwise.
    pub snapshots: Vec<Snapshot>,
    pub iterations: usize,
    pub converged_at: Option<usize>,
    pub episodes: Vec<CongestionEpisode>,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn final_state(&self) -> PopulationState {
        PopulationState::new(self.last().shares.clone(), self.total_demand_kw)
            .expect("integrator keeps states on the simplex")
    }

    pub fn final_setpoints_kw(&self) -> Vec<f64> {
        self.last().shares.iter().map(|x| x * self.total_demand_kw).collect()
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }
}

/// True when set points moved at most `tol_kw` per iteration across the
/// tail and the latest state overflows no line by more than `tol_kw`.
pub fn convergence_check(tail: &[Snapshot], total_demand_kw: f64, tol_kw: f64) -> bool {
    if tail.len() < 2 {
        return false;
    }
    let moved = tail
        .windows(2)
        .flat_map(|w| w[0].shares.iter().zip(&w[1].shares).map(|(a, b)| (b - a).abs()))
        .fold(0.0, f64::max);
    moved * total_demand_kw <= tol_kw && tail[tail.len() - 1].max_overflow_kw() <= tol_kw
}

/// Integrates the selected dynamics from `x0` until convergence or `max_iter`.
///
/// Each iteration advances `step_s` of model time through a fixed number of
/// Euler sub-steps, see [`GameSettings::substeps_for`].
pub fn run_game(
    x0: &PopulationState,
    kind: &DynamicsKind,
    model: &impl FitnessModel,
    settings: &GameSettings,
) -> Result<Trajectory, DynamicsError> {
    settings.validate()?;
    let n = x0.len();
    check_len(model.strategies(), n)?;
    if let Some(g) = kind.graph() {
        check_len(n, g.len())?;
    }
    let total_demand_kw = x0.total_demand_kw();
    let substeps = settings.substeps_for(model);
    let dt = settings.step_s / substeps as f64;

    let mut x = x0.shares().to_vec();
    let mut f = vec![0.0; n];
    let mut rate = vec![0.0; n];
    let mut episodes: Vec<CongestionEpisode> = Vec::new();
    let mut snapshots = vec![snapshot(model, &x, 0, &mut episodes)];
    let mut converged_at = None;
    let mut iterations = 0;

    for k in 1..=settings.max_iter {
        for _ in 0..substeps {
            model.fitness(&x, &mut f);
            kind.rhs_into(&x, &f, &mut rate)?;
            euler_step_in_place(&mut x, &rate, dt)?;
        }
        iterations = k;
        snapshots.push(snapshot(model, &x, k, &mut episodes));
        if settings.record == Record::Tail && snapshots.len() > settings.window + 1 {
            snapshots.remove(0);
        }

        let done = if n == 1 {
            true
        } else if k >= settings.window {
            let tail = &snapshots[snapshots.len() - (settings.window + 1)..];
            convergence_check(tail, total_demand_kw, settings.tol_kw)
        } else {
            false
        };
        if done {
            converged_at = Some(k);
            break;
        }
    }

    Ok(Trajectory {
        step_s: settings.step_s,
        substeps,
        total_demand_kw,
        snapshots,
        iterations,
        converged_at,
        episodes,
    })
}

fn snapshot(
    model: &impl FitnessModel,
    x: &[f64],
    iteration: usize,
    episodes: &mut Vec<CongestionEpisode>,
) -> Snapshot {
    let obs = model.observe(x);
    for c in &obs.congestions {
        let open = episodes
            .iter_mut()
            .rev()
            .find(|e| e.line == c.line && iteration > 0 && e.last_seen == iteration - 1);
        match open {
            Some(e) => {
                e.last_seen = iteration;
                e.peak_overflow_kw = e.peak_overflow_kw.max(c.overflow_kw);
            }
            None => episodes.push(CongestionEpisode {
                line: c.line,
                detected_at: iteration,
                last_seen: iteration,
                peak_overflow_kw: c.overflow_kw,
            }),
        }
    }
    Snapshot {
        iteration,
        shares: x.to_vec(),
        fitness: obs.fitness,
        flows_kw: obs.flows_kw,
        congestions: obs.congestions,
    }
}
