use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use log::{debug, info};
use serde::Serialize;
use sha2::{Digest, Sha256};

use popdispatch_core::scenario::{
    compare_to_oracle, parse_limit, run_day, ConfigFile, DispatchResult, GraphSource, Init, Metrics, Source,
};
use popdispatch_core::synthetic;

use crate::validate::load_config;
use crate::{DynamicsArg, InitArg, RunArgs, Switch};

pub const SETPOINTS: &str = "setpoints.csv";
pub const FLOWS: &str = "flows.csv";
pub const EVENTS: &str = "events.csv";
pub const STEPS: &str = "steps.csv";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const METRICS: &str = "metrics.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    dynamics: &'a str,
    all_converged: bool,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    config: Vec<String>,
    inputs: Vec<InputDigest>,
    artifacts: Vec<String>,
    duration_s: f64,
    all_converged: bool,
}

fn apply_overrides(cfg: &mut ConfigFile, args: &RunArgs) -> Result<()> {
    if let Some(d) = args.dynamics {
        cfg.set(
            "dynamics",
            match d {
                DynamicsArg::Replicator => "replicator",
                DynamicsArg::LocalReplicator => "local-replicator",
                DynamicsArg::Smith => "smith",
                DynamicsArg::DistributedSmith => "distributed-smith",
            },
        )
        .map_err(|e| anyhow!(e))?;
    }
    if let Some(g) = &args.graph {
        cfg.graph = match g.as_str() {
            "complete" => GraphSource::Complete,
            "path" => GraphSource::Path,
            path => GraphSource::File(PathBuf::from(path)),
        };
    }
    for l in &args.limits {
        cfg.limits.push(parse_limit(l).map_err(|e| anyhow!("--limit: {e}"))?);
    }
    if let Some(t) = args.step {
        cfg.start = Some(t);
        cfg.end = Some(t + 1);
    }
    if let Some(w) = args.warm_start {
        cfg.warm_start = w == Switch::On;
    }
    if let Some(i) = args.init {
        cfg.init = match i {
            InitArg::Uniform => Init::Uniform,
            InitArg::Nearest => Init::Nearest,
        };
    }
    if args.seed.is_some() {
        debug!("--seed is reserved; runs are deterministic");
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digests(cfg: &ConfigFile) -> Result<Vec<InputDigest>> {
    let mut out = Vec::new();
    for (source, name, bundled) in [
        (&cfg.feeder, "feeder.csv", synthetic::FEEDER_CSV),
        (&cfg.buses, "buses.csv", synthetic::BUSES_CSV),
        (&cfg.generators, "generators.csv", synthetic::GENERATORS_CSV),
    ] {
        if *source == Source::Synthetic {
            out.push(InputDigest { path: format!("<synthetic>/{name}"), sha256: sha256_hex(bundled.as_bytes()) });
        }
    }
    for path in cfg.input_files() {
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        out.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
    }
    Ok(out)
}

fn kw(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{v:.6}")
    }
}

fn setpoints_csv(result: &DispatchResult) -> String {
    let mut out = String::from("minute,bus_id,setpoint_kw,oracle_kw\n");
    for s in &result.steps {
        for (g, bus) in result.generators.iter().enumerate() {
            let oracle = s.oracle.as_ref().map_or(String::new(), |o| kw(o.setpoints_kw[g]));
            let _ = writeln!(out, "{},{bus},{},{oracle}", s.minute, kw(s.setpoints_kw[g]));
        }
    }
    out
}

fn flows_csv(result: &DispatchResult) -> String {
    let mut out = String::from("minute,line,flow_kw,limit_kw\n");
    for s in &result.steps {
        for (line, flow) in result.network.lines.iter().zip(&s.flows_kw) {
            let _ = writeln!(out, "{},{},{},{}", s.minute, line.label(), kw(*flow), kw(line.limit_kw));
        }
    }
    out
}

fn events_csv(result: &DispatchResult) -> String {
    let mut out = String::from("minute,line,detected_at,last_seen,peak_overflow_kw,final_flow_kw,limit_kw\n");
    for s in &result.steps {
        for e in &s.episodes {
            let line = &result.network.lines[e.line];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.minute,
                line.label(),
                e.detected_at,
                e.last_seen,
                kw(e.peak_overflow_kw),
                kw(s.flows_kw[e.line]),
                kw(line.limit_kw)
            );
        }
    }
    out
}

fn steps_csv(result: &DispatchResult) -> String {
    let mut out = String::from("minute,demand_kw,iterations,converged_at,total_cost,oracle_cost,residual_overflow_kw\n");
    for s in &result.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{},{}",
            s.minute,
            kw(s.demand_kw),
            s.iterations,
            s.converged_at.map_or(String::new(), |k| k.to_string()),
            s.total_cost,
            s.oracle.as_ref().map_or(String::new(), |o| format!("{:.6}", o.total_cost)),
            kw(s.residual_overflow_kw)
        );
    }
    out
}

/// Per-iteration set points and flows on limited lines, for a single-step run.
fn trajectory_csv(result: &DispatchResult) -> Option<String> {
    let [step] = result.steps.as_slice() else { return None };
    let traj = step.trajectory.as_ref()?;
    let limited: Vec<usize> = (0..result.network.lines.len()).filter(|&l| result.network.lines[l].is_bounded()).collect();
    let mut out = String::from("iteration");
    for bus in &result.generators {
        let _ = write!(out, ",p_{bus}");
    }
    for &l in &limited {
        let _ = write!(out, ",flow_{}", result.network.lines[l].label());
    }
    out.push('\n');
    for snap in &traj.snapshots {
        let _ = write!(out, "{}", snap.iteration);
        for x in &snap.shares {
            let _ = write!(out, ",{}", kw(x * traj.total_demand_kw));
        }
        for &l in &limited {
            let _ = write!(out, ",{}", kw(snap.flows_kw[l]));
        }
        out.push('\n');
    }
    Some(out)
}

fn write(dir: &Path, name: &str, contents: &str, artifacts: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    artifacts.push(name.to_owned());
    Ok(())
}

/// Returns whether every step converged.
pub fn run(args: &RunArgs) -> Result<bool> {
    let started = Instant::now();
    let mut cfg = load_config(args.config.as_deref())?;
    apply_overrides(&mut cfg, args)?;
    let mut scenario = cfg.build()?;
    scenario.keep_trajectory = scenario.end - scenario.start == 1;
    info!(
        "running {} steps with {} dynamics",
        scenario.end - scenario.start,
        scenario.dynamics.name()
    );

    let result = run_day(&scenario)?;
    let metrics = compare_to_oracle(&result);
    let all_converged = result.all_converged();

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut artifacts = Vec::new();
    write(&args.out, SETPOINTS, &setpoints_csv(&result), &mut artifacts)?;
    write(&args.out, FLOWS, &flows_csv(&result), &mut artifacts)?;
    write(&args.out, EVENTS, &events_csv(&result), &mut artifacts)?;
    write(&args.out, STEPS, &steps_csv(&result), &mut artifacts)?;
    if let Some(t) = trajectory_csv(&result) {
        write(&args.out, TRAJECTORY, &t, &mut artifacts)?;
    }
    let metrics_file = MetricsFile { dynamics: &result.dynamics, all_converged, metrics: &metrics };
    write(&args.out, METRICS, &serde_json::to_string_pretty(&metrics_file)?, &mut artifacts)?;

    artifacts.push(MANIFEST.to_owned());
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.render(),
        inputs: digests(&cfg)?,
        artifacts,
        duration_s: started.elapsed().as_secs_f64(),
        all_converged,
    };
    let path = args.out.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;

    println!(
        "{} steps, {} converged; max deviation from oracle {:.6} kW, mean {:.6} kW; cost gap {:.4}%; overflow events {}",
        metrics.steps,
        metrics.converged_steps,
        metrics.max_abs_error_kw,
        metrics.mean_abs_error_kw,
        100.0 * metrics.cost_gap,
        metrics.overflow_events
    );
    println!("results in {}", args.out.display());
    Ok(all_converged)
}
