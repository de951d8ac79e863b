//! Reference dispatch solvers used to check the population game.
//!
//! [`lambda_dispatch`] solves the uncongested problem by equalizing marginal
//! cost. [`brute_force_opf`] enumerates set points on a grid and enforces line
//! limits through the tree flow, for small fleets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{cost, Fleet, GameError};
use crate::grid::{BusId, GridError, RadialNetwork, RootedTree};

const KW_PER_MW: f64 = 1000.0;

/// Largest grid the brute-force search will enumerate.
pub const MAX_COMBINATIONS: f64 = 5e7;

/// Balance tolerance, kW.
pub const BALANCE_TOL_KW: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("demand {demand_kw} kW outside feasible range [{min_kw}, {max_kw}] kW")]
    Infeasible { demand_kw: f64, min_kw: f64, max_kw: f64 },
    #[error("grid search over {combinations:.3e} combinations exceeds the {limit:.0e} budget")]
    TooManyGenerators { combinations: f64, limit: f64 },
    #[error("step must be positive, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binding {
    Lower,
    Upper,
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub setpoints_kw: Vec<f64>,
    pub total_cost: f64,
    pub binding: Vec<Binding>,
    pub feasible: bool,
    /// Shared marginal price, €/MW, when solved by price search.
    pub lambda: Option<f64>,
}

impl DispatchSolution {
    fn infeasible(n: usize) -> Self {
        DispatchSolution {
            setpoints_kw: vec![f64::NAN; n],
            total_cost: f64::INFINITY,
            binding: vec![Binding::Interior; n],
            feasible: false,
            lambda: None,
        }
    }
}

fn binding_of(p: f64, pmin: f64, pmax: f64) -> Binding {
    let eps = 1e-9 * pmax.abs().max(1.0);
    if p <= pmin + eps {
        Binding::Lower
    } else if p >= pmax - eps {
        Binding::Upper
    } else {
        Binding::Interior
    }
}

/// Equal-marginal-cost dispatch with generator limits and no network.
///
/// Generators with c > 0 follow p(λ) = clip((λ − b)/2c, pmin, pmax). Those
/// with c = 0 are step functions; when the price settles exactly on such a
/// generator's b, tied generators are filled in fleet order.
pub fn lambda_dispatch(fleet: &Fleet, demand_kw: f64) -> Result<DispatchSolution, OracleError> {
    let (min_kw, max_kw) = (fleet.min_output_kw(), fleet.capacity_kw());
    if !(demand_kw >= min_kw - BALANCE_TOL_KW && demand_kw <= max_kw + BALANCE_TOL_KW) {
        return Err(OracleError::Infeasible { demand_kw, min_kw, max_kw });
    }
    let demand_kw = demand_kw.clamp(min_kw, max_kw);

    // Output with flat-cost generators pinned below/above their price.
    let supply = |lambda: f64, flat_at_max: bool| -> f64 {
        fleet
            .iter()
            .map(|g| {
                if g.c > 0.0 {
                    (KW_PER_MW * (lambda - g.b) / (2.0 * g.c)).clamp(g.pmin_kw, g.pmax_kw)
                } else if lambda > g.b || (lambda == g.b && flat_at_max) {
                    g.pmax_kw
                } else {
                    g.pmin_kw
                }
            })
            .sum()
    };

    let fill = |lambda: f64| -> Vec<f64> {
        let mut p: Vec<f64> = fleet
            .iter()
            .map(|g| {
                if g.c > 0.0 {
                    (KW_PER_MW * (lambda - g.b) / (2.0 * g.c)).clamp(g.pmin_kw, g.pmax_kw)
                } else if lambda > g.b {
                    g.pmax_kw
                } else {
                    g.pmin_kw
                }
            })
            .collect();
        let mut missing = demand_kw - p.iter().sum::<f64>();
        for (i, g) in fleet.iter().enumerate() {
            if g.c == 0.0 && g.b == lambda && missing > 0.0 {
                let add = missing.min(g.pmax_kw - g.pmin_kw);
                p[i] += add;
                missing -= add;
            }
        }
        p
    };

    // A price exactly at a flat generator's b.
    let mut lambda = None;
    for g in fleet.iter().filter(|g| g.c == 0.0) {
        if supply(g.b, false) <= demand_kw && demand_kw <= supply(g.b, true) {
            lambda = Some(g.b);
            break;
        }
    }

    let lambda = match lambda {
        Some(l) => l,
        None => {
            let mut lo = fleet.iter().map(|g| g.marginal_cost(g.pmin_kw)).fold(f64::INFINITY, f64::min);
            let mut hi = fleet.iter().map(|g| g.marginal_cost(g.pmax_kw)).fold(f64::NEG_INFINITY, f64::max);
            lo -= 1.0;
            hi += 1.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if supply(mid, false) < demand_kw {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
    };

    let mut setpoints = fill(lambda);
    // Rounding residual goes to the first generator with room.
    let residual = demand_kw - setpoints.iter().sum::<f64>();
    if residual.abs() > 0.0 {
        for (i, g) in fleet.iter().enumerate() {
            let next = setpoints[i] + residual;
            if next >= g.pmin_kw && next <= g.pmax_kw {
                setpoints[i] = next;
                break;
            }
        }
    }

    Ok(DispatchSolution {
        total_cost: fleet.total_cost(&setpoints),
        binding: fleet
            .iter()
            .zip(&setpoints)
            .map(|(g, &p)| binding_of(p, g.pmin_kw, g.pmax_kw))
            .collect(),
        setpoints_kw: setpoints,
        feasible: true,
        lambda: Some(lambda),
    })
}

/// Exhaustive grid search for the network-constrained dispatch.
///
/// Every generator but the last steps through {pmin, pmin + step, …, pmax};
/// the last one balances demand. Combinations violating a generator or line
/// limit are discarded. Returns `feasible == false` when nothing survives.
pub fn brute_force_opf(
    net: &RadialNetwork,
    fleet: &Fleet,
    demand: &HashMap<BusId, f64>,
    step_kw: f64,
) -> Result<DispatchSolution, OracleError> {
    if !(step_kw > 0.0 && step_kw.is_finite()) {
        return Err(OracleError::InvalidStep(step_kw));
    }
    let net = net.with_loads(demand);
    for id in demand.keys() {
        if net.bus(id).is_none() {
            return Err(GridError::UnknownBus(id.clone()).into());
        }
    }
    let tree = RootedTree::new(&net)?;
    let gen_bus = fleet
        .iter()
        .map(|g| net.bus_index(&g.bus).ok_or_else(|| GameError::UnknownGeneratorBus(g.bus.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let total: f64 = net.total_load_kw();
    let n = fleet.len();

    let grids: Vec<Vec<f64>> = fleet.generators()[..n - 1]
        .iter()
        .map(|g| {
            let count = ((g.pmax_kw - g.pmin_kw) / step_kw + 1e-9).floor() as usize;
            let mut pts: Vec<f64> = (0..=count).map(|k| g.pmin_kw + k as f64 * step_kw).collect();
            if g.pmax_kw - pts[pts.len() - 1] > 1e-9 {
                pts.push(g.pmax_kw);
            }
            pts
        })
        .collect();
    let combinations: f64 = grids.iter().map(|g| g.len() as f64).product();
    if combinations > MAX_COMBINATIONS {
        return Err(OracleError::TooManyGenerators { combinations, limit: MAX_COMBINATIONS });
    }

    // Remaining flexibility after generator k, for pruning partial sums.
    let mut rest_min = vec![0.0; n + 1];
    let mut rest_max = vec![0.0; n + 1];
    for k in (0..n).rev() {
        rest_min[k] = rest_min[k + 1] + fleet[k].pmin_kw;
        rest_max[k] = rest_max[k + 1] + fleet[k].pmax_kw;
    }

    let loads: Vec<f64> = net.buses.iter().map(|b| b.load_kw).collect();
    let mut search = Search {
        tree: &tree,
        fleet,
        gen_bus: &gen_bus,
        grids: &grids,
        total,
        rest_min: &rest_min,
        rest_max: &rest_max,
        loads: &loads,
        current: vec![0.0; n],
        injections: vec![0.0; loads.len()],
        subtree: vec![0.0; loads.len()],
        flows: vec![0.0; tree.line_count()],
        best: None,
    };
    search.descend(0, 0.0);

    Ok(match search.best {
        None => DispatchSolution::infeasible(n),
        Some((total_cost, setpoints)) => DispatchSolution {
            binding: fleet
                .iter()
                .zip(&setpoints)
                .map(|(g, &p)| binding_of(p, g.pmin_kw, g.pmax_kw))
                .collect(),
            setpoints_kw: setpoints,
            total_cost,
            feasible: true,
            lambda: None,
        },
    })
}

struct Search<'a> {
    tree: &'a RootedTree,
    fleet: &'a Fleet,
    gen_bus: &'a [usize],
    grids: &'a [Vec<f64>],
    total: f64,
    rest_min: &'a [f64],
    rest_max: &'a [f64],
    loads: &'a [f64],
    current: Vec<f64>,
    injections: Vec<f64>,
    subtree: Vec<f64>,
    flows: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
}

impl Search<'_> {
    fn descend(&mut self, k: usize, partial: f64) {
        let n = self.current.len();
        if k == n - 1 {
            let last = &self.fleet[k];
            let p = self.total - partial;
            if p < last.pmin_kw - BALANCE_TOL_KW || p > last.pmax_kw + BALANCE_TOL_KW {
                return;
            }
            self.current[k] = p.clamp(last.pmin_kw, last.pmax_kw);
            self.evaluate();
            return;
        }
        for idx in 0..self.grids[k].len() {
            let p = self.grids[k][idx];
            let sum = partial + p;
            if sum + self.rest_min[k + 1] > self.total + BALANCE_TOL_KW {
                break;
            }
            if sum + self.rest_max[k + 1] < self.total - BALANCE_TOL_KW {
                continue;
            }
            self.current[k] = p;
            self.descend(k + 1, sum);
        }
    }

    fn evaluate(&mut self) {
        let total_cost: f64 = self.fleet.iter().zip(&self.current).map(|(g, &p)| cost(g, p)).sum();
        if matches!(&self.best, Some((best, _)) if total_cost >= *best) {
            return;
        }
        self.injections.copy_from_slice(self.loads);
        for (g, &p) in self.current.iter().enumerate() {
            self.injections[self.gen_bus[g]] -= p;
        }
        self.tree.flows_into(&self.injections, &mut self.subtree, &mut self.flows);
        let within = self
            .flows
            .iter()
            .zip(self.tree.limits())
            .all(|(f, limit)| f.abs() <= limit + 1e-9);
        if within {
            self.best = Some((total_cost, self.current.clone()));
        }
    }
}
