use std::path::Path;

use anyhow::{Context, Result};
use popdispatch_core::grid::reduce_to_key_nodes;
use popdispatch_core::scenario::{ConfigFile, ProfileSource, Source};

use crate::ValidateArgs;

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p).with_context(|| format!("reading scenario {}", p.display())),
        None => Ok(ConfigFile::new(std::env::current_dir()?)),
    }
}

pub fn run(args: &ValidateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(p) = &args.feeder {
        cfg.feeder = Source::File(p.clone());
    }
    if let Some(p) = &args.buses {
        cfg.buses = Source::File(p.clone());
    }
    if let Some(p) = &args.generators {
        cfg.generators = Source::File(p.clone());
    }
    if let Some(p) = &args.profile {
        cfg.profile = ProfileSource::File(p.clone());
    }

    let net = cfg.read_network()?;
    let reduced = reduce_to_key_nodes(&net)?;
    println!("valid radial, {} → {} key nodes", net.buses.len(), reduced.buses.len());
    println!("lines: {} → {}", net.lines.len(), reduced.lines.len());
    println!("root: {}, total load {:.6} kW", net.root, net.total_load_kw());
    for line in reduced.lines.iter().filter(|l| !net.lines.contains(l)) {
        println!(
            "  {} merged: r = {:.6} ohm, x = {:.6} ohm, limit {}",
            line.label(),
            line.resistance_ohm,
            line.reactance_ohm,
            if line.is_bounded() { format!("{:.6} kW", line.limit_kw) } else { "none".to_owned() }
        );
    }

    let fleet = cfg.read_fleet()?;
    println!(
        "fleet: {} generators, {:.6}-{:.6} kW",
        fleet.len(),
        fleet.min_output_kw(),
        fleet.capacity_kw()
    );
    let scenario = cfg.build()?;
    println!(
        "profile: {} steps over {} buses, running steps {}..{}",
        scenario.profile.len(),
        scenario.profile.buses().len(),
        scenario.start,
        scenario.end
    );
    Ok(())
}
