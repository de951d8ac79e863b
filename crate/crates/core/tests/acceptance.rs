//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use popdispatch_core::dynamics::{
    euler_step, run_game, CommGraph, DynamicsKind, FitnessModel, GameSettings, Trajectory,
};
use popdispatch_core::game::{barrier, cost, DispatchGame, FitnessConfig, Fleet, PopulationState};
use popdispatch_core::grid::{compute_flows, Bus, BusId, Line, RadialNetwork};
use popdispatch_core::oracle::{brute_force_opf, lambda_dispatch};
use popdispatch_core::scenario::{compare_to_oracle, run_day, ScenarioConfig, BALANCE_TOL_KW};
use popdispatch_core::synthetic::{day_profile, feeder, table_fleet};

const PEAK_KW: f64 = 57.0;
const SETPOINT_TOL_KW: f64 = 0.5;
const LIMITED_LINE: (&str, &str) = ("505", "666");
const LINE_LIMIT_KW: f64 = 28.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn peak_game(limit_kw: Option<f64>) -> (RadialNetwork, DispatchGame) {
    let mut net = feeder();
    if let Some(limit) = limit_kw {
        net.set_limit(&LIMITED_LINE.0.into(), &LIMITED_LINE.1.into(), limit).unwrap();
    }
    let game = DispatchGame::new(&net, table_fleet(), FitnessConfig::default()).unwrap();
    (net, game)
}

fn uniform() -> PopulationState {
    PopulationState::uniform(6, PEAK_KW).unwrap()
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fmt_kw(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|p| format!("{p:.3}")).collect();
    format!("({})", parts.join(", "))
}

/// Exhaustive minimum-cost dispatch on a 0.01 kW grid by dynamic programming
/// over generators.
fn grid_optimum(fleet: &Fleet, demand_kw: f64) -> (Vec<f64>, f64) {
    const UNIT: f64 = 0.01;
    let target = (demand_kw / UNIT).round() as usize;
    let mut best = vec![f64::INFINITY; target + 1];
    best[0] = 0.0;
    let mut choice: Vec<Vec<usize>> = Vec::new();
    for g in fleet.iter() {
        let lo = (g.pmin_kw / UNIT).round() as usize;
        let hi = (g.pmax_kw / UNIT).round() as usize;
        let costs: Vec<f64> = (0..=hi).map(|k| cost(g, k as f64 * UNIT)).collect();
        let mut next = vec![f64::INFINITY; target + 1];
        let mut pick = vec![usize::MAX; target + 1];
        for s in 0..=target {
            for k in lo..=hi.min(s) {
                let c = best[s - k] + costs[k];
                if c < next[s] {
                    next[s] = c;
                    pick[s] = k;
                }
            }
        }
        best = next;
        choice.push(pick);
    }
    let mut setpoints = vec![0.0; fleet.len()];
    let mut s = target;
    for i in (0..fleet.len()).rev() {
        let k = choice[i][s];
        setpoints[i] = k as f64 * UNIT;
        s -= k;
    }
    (setpoints, best[target])
}

fn criterion_1(run: &Trajectory, elapsed_s: f64) -> Outcome {
    let fleet = table_fleet();
    let oracle = lambda_dispatch(&fleet, PEAK_KW).unwrap();
    let expected = [2.0, 10.0, 5.0, 10.0, 20.0, 10.0];
    let (grid, grid_cost) = grid_optimum(&fleet, PEAK_KW);
    let oracle_ok = max_deviation(&oracle.setpoints_kw, &expected) <= 1e-6
        && max_deviation(&oracle.setpoints_kw, &grid) <= 0.01
        && oracle.total_cost <= grid_cost + 1e-9;
    let p = run.final_setpoints_kw();
    let dev = max_deviation(&p, &oracle.setpoints_kw);
    outcome(
        oracle_ok && run.converged() && dev <= SETPOINT_TOL_KW && elapsed_s < 5.0,
        format!(
            "oracle {} (0.01 kW grid search agrees: {oracle_ok}); Smith {} ; max deviation {dev:.4} kW; {elapsed_s:.2} s",
            fmt_kw(&oracle.setpoints_kw),
            fmt_kw(&p)
        ),
    )
}

fn criterion_2(run: &Trajectory) -> Outcome {
    match run.converged_at {
        Some(k) => outcome(k <= 1000, format!("converged at iteration {k} (limit 1000)")),
        None => outcome(false, format!("no convergence in {} iterations", run.iterations)),
    }
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let fleet = table_fleet();
    let (net, game) = peak_game(Some(LINE_LIMIT_KW));
    let line = net.line_index(&LIMITED_LINE.0.into(), &LIMITED_LINE.1.into()).unwrap();

    let unconstrained = lambda_dispatch(&fleet, PEAK_KW).unwrap();
    let free_flow = game.tree().flows(&game.injections(&unconstrained.setpoints_kw))[line].abs();
    let overflow = free_flow - LINE_LIMIT_KW;

    let run = run_game(&uniform(), &DynamicsKind::Smith, &game, &GameSettings::default()).unwrap();
    let p = run.final_setpoints_kw();
    let flow = game.tree().flows(&game.injections(&p))[line].abs();
    let loads: HashMap<BusId, f64> = net.buses.iter().map(|b| (b.id.clone(), b.load_kw)).collect();
    let opt = brute_force_opf(&net, &fleet, &loads, 0.5).unwrap();
    let game_cost = fleet.total_cost(&p);
    let gap = (game_cost - opt.total_cost).abs() / opt.total_cost;
    let elapsed = started.elapsed().as_secs_f64();
    let detection = run.episodes.first().map_or("none".to_owned(), |e| e.detected_at.to_string());
    outcome(
        (4.0..=6.0).contains(&overflow)
            && run.converged()
            && flow <= LINE_LIMIT_KW + 0.1
            && gap <= 0.02
            && elapsed < 10.0,
        format!(
            "unconstrained overflow {overflow:.3} kW; converged at {:?}, detection at iteration {detection}; flow {flow:.4} kW (limit {LINE_LIMIT_KW}); set points {}; cost gap {:.4}% vs grid optimum {}; {elapsed:.2} s",
            run.converged_at,
            fmt_kw(&p),
            100.0 * gap,
            fmt_kw(&opt.setpoints_kw),
        ),
    )
}

fn criterion_4() -> Outcome {
    let (_, game) = peak_game(None);
    let n = game.strategies();
    let substeps = GameSettings::default().substeps_for(&game);
    let dt = GameSettings::default().step_s / substeps as f64;
    let path = CommGraph::path(n).unwrap();
    let mut x0 = vec![0.0; n];
    x0[n - 1] = 1.0;
    // Strategy n-2 neighbours the occupied one on the path graph.
    let watched = n - 2;
    let mut f = vec![0.0; n];
    game.fitness(&x0, &mut f);
    let fitter = (0..n - 1).all(|i| f[i] > f[n - 1]);

    let mut details = vec![format!("zero-mass strategies strictly fitter: {fitter}")];
    let mut pass = fitter;
    for kind in [DynamicsKind::Replicator, DynamicsKind::LocalReplicator(path.clone())] {
        let mut x = x0.clone();
        let mut stayed = true;
        'outer: for _ in 0..10_000 {
            for _ in 0..substeps {
                game.fitness(&x, &mut f);
                x = euler_step(&x, &kind.rhs(&x, &f).unwrap(), dt).unwrap();
                if x[..n - 1].iter().any(|&v| v != 0.0) {
                    stayed = false;
                    break 'outer;
                }
            }
        }
        pass &= stayed;
        details.push(format!("{}: unused mass exactly 0 for 10^4 steps: {stayed}", kind.name()));
    }
    for kind in [DynamicsKind::Smith, DynamicsKind::DistributedSmith(path)] {
        let mut x = x0.clone();
        let mut reached = None;
        'steps: for k in 1..=1_000 {
            for _ in 0..substeps {
                game.fitness(&x, &mut f);
                x = euler_step(&x, &kind.rhs(&x, &f).unwrap(), dt).unwrap();
            }
            if x[watched] > 0.01 {
                reached = Some(k);
                break 'steps;
            }
        }
        pass &= reached.is_some();
        details.push(format!("{}: x[{watched}] > 0.01 at step {reached:?}", kind.name()));
    }
    outcome(pass, details.join("; "))
}

fn criterion_5() -> Outcome {
    let (_, game) = peak_game(None);
    let substeps = GameSettings::default().substeps_for(&game);
    let dt = GameSettings::default().step_s / substeps as f64;
    let kind = DynamicsKind::Smith;
    let mut x = uniform().shares().to_vec();
    let mut f = vec![0.0; x.len()];
    let mut worst_sum: f64 = 0.0;
    let mut min_x = f64::INFINITY;
    for _ in 0..100_000 {
        for _ in 0..substeps {
            game.fitness(&x, &mut f);
            x = euler_step(&x, &kind.rhs(&x, &f).unwrap(), dt).unwrap();
            worst_sum = worst_sum.max((x.iter().sum::<f64>() - 1.0).abs());
            min_x = x.iter().copied().fold(min_x, f64::min);
        }
    }
    outcome(
        worst_sum <= 1e-9 && min_x >= 0.0,
        format!(
            "10^5 iterations of {substeps} Euler sub-steps; max |sum x - 1| = {worst_sum:.2e}; min x = {min_x:.3e}"
        ),
    )
}

fn random_connected_graph(n: usize, rng: &mut ChaCha8Rng) -> CommGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..n / 2 {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    CommGraph::new(n, &edges).unwrap()
}

fn criterion_6(central: &Trajectory) -> Outcome {
    let (_, game) = peak_game(None);
    let reference = central.final_setpoints_kw();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random = random_connected_graph(6, &mut rng);
    let mut pass = true;
    let mut details = Vec::new();
    for (label, g) in [("path", CommGraph::path(6).unwrap()), ("random", random)] {
        let edges = format!("{:?}", g.edges());
        let run = run_game(&uniform(), &DynamicsKind::DistributedSmith(g), &game, &GameSettings::default()).unwrap();
        let dev = max_deviation(&run.final_setpoints_kw(), &reference);
        pass &= run.converged() && dev <= SETPOINT_TOL_KW;
        details.push(format!("{label} graph {edges}: converged at {:?}, max deviation {dev:.4} kW", run.converged_at));
    }
    outcome(pass, details.join("; "))
}

fn criterion_7() -> Outcome {
    let (_, game) = peak_game(None);
    let fleet = table_fleet();
    let cap = fleet.capacity_kw();
    let mut x: Vec<f64> = fleet.iter().map(|g| g.pmax_kw / cap).collect();
    let substeps = GameSettings::default().substeps_for(&game);
    let dt = GameSettings::default().step_s / substeps as f64;
    let setpoints = |x: &[f64]| x.iter().map(|s| s * PEAK_KW).collect::<Vec<_>>();
    let inactive = |x: &[f64]| fleet.iter().zip(setpoints(x)).all(|(g, p)| barrier(g, p, 400.0) == 0.0);

    let mut f = vec![0.0; x.len()];
    let mut costs = Vec::new();
    while inactive(&x) && costs.len() <= 1_000_000 {
        costs.push(fleet.total_cost(&setpoints(&x)));
        game.fitness(&x, &mut f);
        x = euler_step(&x, &DynamicsKind::Smith.rhs(&x, &f).unwrap(), dt).unwrap();
    }
    let worst_rise = costs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        costs.len() >= 2 && worst_rise <= 1e-9,
        format!(
            "capacity-proportional start; barrier-free segment of {} Euler steps ({:.2} iterations of {substeps}); cost {:.6} -> {:.6}; largest per-step increase {worst_rise:.3e}",
            costs.len(),
            costs.len() as f64 / substeps as f64,
            costs.first().copied().unwrap_or(f64::NAN),
            costs.last().copied().unwrap_or(f64::NAN),
        ),
    )
}

/// Solves the node-line incidence system of a tree for line flows by Gaussian
/// elimination. Returns flows oriented `from -> to` in line order.
fn incidence_flows(net: &RadialNetwork, injections: &[f64]) -> Vec<f64> {
    let root = net.bus_index(&net.root).unwrap();
    let rows: Vec<usize> = (0..net.buses.len()).filter(|&b| b != root).collect();
    let m = net.lines.len();
    let mut a = vec![vec![0.0; m + 1]; rows.len()];
    for (r, &bus) in rows.iter().enumerate() {
        for (l, line) in net.lines.iter().enumerate() {
            let id = &net.buses[bus].id;
            // Inflow minus outflow equals the bus's net consumption.
            if &line.to == id {
                a[r][l] = 1.0;
            } else if &line.from == id {
                a[r][l] = -1.0;
            }
        }
        a[r][m] = injections[bus];
    }
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in &mut a[col][col..=m] {
            *v /= p;
        }
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col && row[col] != 0.0 {
                let factor = row[col];
                for (v, q) in row[col..=m].iter_mut().zip(&pivot_row[col..=m]) {
                    *v -= factor * q;
                }
            }
        }
    }
    (0..m).map(|l| a[l][m]).collect()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(2..=12);
        let ids: Vec<BusId> = (0..n).map(|i| BusId::from(format!("b{i}"))).collect();
        let buses = ids.iter().map(|id| Bus::new(id.clone(), 0.0)).collect();
        let lines = (1..n)
            .map(|i| {
                let j = rng.gen_range(0..i);
                if rng.gen_bool(0.5) {
                    Line::new(ids[j].clone(), ids[i].clone())
                } else {
                    Line::new(ids[i].clone(), ids[j].clone())
                }
            })
            .collect();
        let root = ids[rng.gen_range(0..n)].clone();
        let net = RadialNetwork::new(root.clone(), buses, lines);
        let mut inj: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let root_idx = net.bus_index(&root).unwrap();
        inj[root_idx] -= inj.iter().sum::<f64>();
        let map: HashMap<BusId, f64> = ids.iter().cloned().zip(inj.iter().copied()).collect();
        let flows = compute_flows(&net, &map).unwrap();
        let expected = incidence_flows(&net, &inj);
        for (line, want) in net.lines.iter().zip(&expected) {
            let got = flows.between(&line.from, &line.to).unwrap();
            worst = worst.max((got - want).abs());
        }
    }
    outcome(worst <= 1e-9, format!("500 random trees (2-12 buses); max |difference| {worst:.2e} kW"))
}

fn criterion_9() -> Outcome {
    let cfg = ScenarioConfig::new(feeder(), table_fleet(), day_profile());
    let started = Instant::now();
    let result = run_day(&cfg).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let m = compare_to_oracle(&result);
    let worst_balance = result.steps.iter().map(|s| s.balance_error_kw()).fold(0.0, f64::max);
    outcome(
        result.steps.len() == 1440 && elapsed < 60.0 && m.balance_violations == 0,
        format!(
            "{} steps in {elapsed:.2} s; worst balance error {worst_balance:.2e} kW (tolerance {BALANCE_TOL_KW:e}); {} converged; max/mean deviation from oracle {:.4}/{:.4} kW; cost gap {:.4}%; overflow events {}; iterations mean {:.1} max {}",
            result.steps.len(),
            m.converged_steps,
            m.max_abs_error_kw,
            m.mean_abs_error_kw,
            100.0 * m.cost_gap,
            m.overflow_events,
            m.mean_iterations,
            m.max_iterations,
        ),
    )
}

fn main() {
    let (_, game) = peak_game(None);
    let started = Instant::now();
    let baseline = run_game(&uniform(), &DynamicsKind::Smith, &game, &GameSettings::default()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let results = [
        ("equilibrium optimality", criterion_1(&baseline, elapsed)),
        ("convergence speed", criterion_2(&baseline)),
        ("congestion management", criterion_3()),
        ("extinction dichotomy", criterion_4()),
        ("simplex conservation", criterion_5()),
        ("distributed/centralized agreement", criterion_6(&baseline)),
        ("potential ascent", criterion_7()),
        ("tree-flow oracle equivalence", criterion_8()),
        ("day-run performance", criterion_9()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {} ({name}): {} | {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
