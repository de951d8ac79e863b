//! CSV formats for feeders, buses, generator fleets, load profiles and
//! communication graphs.
//!
//! All files are UTF-8 with a header row; lines starting with `#` are
//! comments. Writers emit the same formats the readers accept.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::dynamics::{CommGraph, DynamicsError};
use crate::game::{Fleet, GameError, GeneratorParams};
use crate::grid::{Bus, BusId, GridError, Line, RadialNetwork};
use crate::scenario::{LoadProfile, ScenarioError};

pub const FEEDER_HEADER: [&str; 5] = ["from_id", "to_id", "resistance_ohm", "reactance_ohm", "limit_kw"];
pub const BUS_HEADER: [&str; 3] = ["bus_id", "load_kw", "generator_id"];
pub const FLEET_HEADER: [&str; 6] = ["bus_id", "a", "b", "c", "pmin_kw", "pmax_kw"];
pub const LONG_PROFILE_HEADER: [&str; 3] = ["minute", "bus_id", "load_kw"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: u64, message: String },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read { path: path.display().to_string(), source })
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str], optional_tail: usize) -> Result<usize, IoError> {
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let min = expected.len() - optional_tail;
    let ok = found.len() >= min
        && found.len() <= expected.len()
        && found.iter().zip(expected).all(|(f, e)| f == e);
    if !ok {
        return Err(IoError::Header { expected: expected.join(","), found: found.join(",") });
    }
    Ok(found.len())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str) -> Result<&'r str, IoError> {
    match record.get(idx) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(IoError::Syntax { line: line_of(record), message: format!("missing `{name}`") }),
    }
}

fn number(record: &csv::StringRecord, idx: usize, name: &str) -> Result<f64, IoError> {
    let raw = field(record, idx, name)?;
    raw.parse::<f64>().map_err(|_| IoError::Syntax {
        line: line_of(record),
        message: format!("`{name}` is not a number: {raw:?}"),
    })
}

fn expect_width(record: &csv::StringRecord, min: usize, max: usize) -> Result<(), IoError> {
    if record.len() < min || record.len() > max {
        return Err(IoError::Syntax {
            line: line_of(record),
            message: format!("expected {min}..={max} fields, found {}", record.len()),
        });
    }
    Ok(())
}

/// `from_id,to_id,resistance_ohm,reactance_ohm,limit_kw`; `inf` marks an unbounded line.
pub fn parse_feeder(text: &str) -> Result<Vec<Line>, IoError> {
    let mut rdr = reader(text);
    check_header(&mut rdr, &FEEDER_HEADER, 0)?;
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record?;
        expect_width(&record, 5, 5)?;
        let limit = number(&record, 4, "limit_kw")?;
        if !(limit > 0.0) {
            return Err(IoError::Syntax { line: line_of(&record), message: format!("limit_kw must be positive, got {limit}") });
        }
        lines.push(Line {
            from: field(&record, 0, "from_id")?.into(),
            to: field(&record, 1, "to_id")?.into(),
            resistance_ohm: number(&record, 2, "resistance_ohm")?,
            reactance_ohm: number(&record, 3, "reactance_ohm")?,
            limit_kw: limit,
        });
    }
    Ok(lines)
}

/// `bus_id,load_kw[,generator_id]`.
pub fn parse_buses(text: &str) -> Result<Vec<Bus>, IoError> {
    let mut rdr = reader(text);
    check_header(&mut rdr, &BUS_HEADER, 1)?;
    let mut buses = Vec::new();
    for record in rdr.records() {
        let record = record?;
        expect_width(&record, 2, 3)?;
        let load = number(&record, 1, "load_kw")?;
        if !(load >= 0.0) {
            return Err(IoError::Syntax { line: line_of(&record), message: format!("load_kw must be >= 0, got {load}") });
        }
        buses.push(Bus {
            id: field(&record, 0, "bus_id")?.into(),
            load_kw: load,
            generator: record.get(2).filter(|s| !s.is_empty()).map(str::to_owned),
        });
    }
    Ok(buses)
}

/// Assembles and validates a network. The root defaults to the first bus listed.
pub fn network_from_csv(feeder: &str, buses: &str, root: Option<BusId>) -> Result<RadialNetwork, IoError> {
    let buses = parse_buses(buses)?;
    let lines = parse_feeder(feeder)?;
    let root = match root {
        Some(r) => r,
        None => buses
            .first()
            .map(|b| b.id.clone())
            .ok_or_else(|| GridError::InvalidNetwork("bus file lists no buses".into()))?,
    };
    let net = RadialNetwork { buses, lines, root };
    crate::grid::validate_radial(&net)?;
    Ok(net)
}

/// `bus_id,a,b,c,pmin_kw,pmax_kw`, one generator per row in strategy order.
pub fn parse_fleet(text: &str) -> Result<Fleet, IoError> {
    let mut rdr = reader(text);
    check_header(&mut rdr, &FLEET_HEADER, 0)?;
    let mut gens = Vec::new();
    for record in rdr.records() {
        let record = record?;
        expect_width(&record, 6, 6)?;
        gens.push(GeneratorParams {
            bus: field(&record, 0, "bus_id")?.into(),
            a: number(&record, 1, "a")?,
            b: number(&record, 2, "b")?,
            c: number(&record, 3, "c")?,
            pmin_kw: number(&record, 4, "pmin_kw")?,
            pmax_kw: number(&record, 5, "pmax_kw")?,
        });
    }
    Ok(Fleet::new(gens)?)
}

/// Long form `minute,bus_id,load_kw` or wide form `minute,<bus>,<bus>,…`.
pub fn parse_profile(text: &str) -> Result<LoadProfile, IoError> {
    let mut rdr = reader(text);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.first().map(String::as_str) != Some("minute") || header.len() < 2 {
        return Err(IoError::Header { expected: "minute,...".into(), found: header.join(",") });
    }
    let minute_of = |record: &csv::StringRecord| -> Result<u32, IoError> {
        let raw = field(record, 0, "minute")?;
        raw.parse().map_err(|_| IoError::Syntax { line: line_of(record), message: format!("bad minute {raw:?}") })
    };

    if header == LONG_PROFILE_HEADER {
        let mut table: BTreeMap<u32, BTreeMap<BusId, f64>> = BTreeMap::new();
        let mut buses: BTreeSet<BusId> = BTreeSet::new();
        for record in rdr.records() {
            let record = record?;
            expect_width(&record, 3, 3)?;
            let minute = minute_of(&record)?;
            let bus: BusId = field(&record, 1, "bus_id")?.into();
            let load = number(&record, 2, "load_kw")?;
            buses.insert(bus.clone());
            if table.entry(minute).or_default().insert(bus.clone(), load).is_some() {
                return Err(IoError::Syntax {
                    line: line_of(&record),
                    message: format!("duplicate entry for bus {bus} at minute {minute}"),
                });
            }
        }
        let minutes: Vec<u32> = table.keys().copied().collect();
        let buses: Vec<BusId> = buses.into_iter().collect();
        let mut loads = vec![Vec::with_capacity(minutes.len()); buses.len()];
        for (minute, row) in &table {
            for (b, bus) in buses.iter().enumerate() {
                let v = row.get(bus).ok_or_else(|| {
                    ScenarioError::InvalidProfile(format!("bus {bus} has no load at minute {minute}"))
                })?;
                loads[b].push(*v);
            }
        }
        Ok(LoadProfile::new(minutes, buses, loads)?)
    } else {
        let buses: Vec<BusId> = header[1..].iter().map(|h| BusId::from(h.as_str())).collect();
        let mut minutes = Vec::new();
        let mut loads = vec![Vec::new(); buses.len()];
        for record in rdr.records() {
            let record = record?;
            expect_width(&record, header.len(), header.len())?;
            minutes.push(minute_of(&record)?);
            for (b, series) in loads.iter_mut().enumerate() {
                series.push(number(&record, b + 1, buses[b].as_str())?);
            }
        }
        Ok(LoadProfile::new(minutes, buses, loads)?)
    }
}

/// `complete`, `path`, or an edge list `i,j` (header optional).
pub fn parse_comm_graph(text: &str, n: usize) -> Result<CommGraph, IoError> {
    let trimmed = text.trim();
    match trimmed {
        "complete" => return Ok(CommGraph::complete(n)?),
        "path" => return Ok(CommGraph::path(n)?),
        _ => {}
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(false)
        .from_reader(trimmed.as_bytes());
    let mut edges = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        expect_width(&record, 2, 2)?;
        if k == 0 && record.get(0) == Some("i") && record.get(1) == Some("j") {
            continue;
        }
        let idx = |i: usize| -> Result<usize, IoError> {
            let raw = field(&record, i, "vertex")?;
            raw.parse().map_err(|_| IoError::Syntax { line: line_of(&record), message: format!("bad vertex index {raw:?}") })
        };
        edges.push((idx(0)?, idx(1)?));
    }
    Ok(CommGraph::new(n, &edges)?)
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_owned()
    } else {
        format!("{v}")
    }
}

pub fn write_feeder(lines: &[Line]) -> String {
    let mut out = FEEDER_HEADER.join(",");
    out.push('\n');
    for l in lines {
        let _ = writeln!(out, "{},{},{},{},{}", l.from, l.to, num(l.resistance_ohm), num(l.reactance_ohm), num(l.limit_kw));
    }
    out
}

pub fn write_buses(buses: &[Bus]) -> String {
    let mut out = BUS_HEADER.join(",");
    out.push('\n');
    for b in buses {
        match &b.generator {
            Some(g) => writeln!(out, "{},{},{}", b.id, num(b.load_kw), g),
            None => writeln!(out, "{},{}", b.id, num(b.load_kw)),
        }
        .expect("writing to a String");
    }
    out
}

pub fn write_fleet(fleet: &Fleet) -> String {
    let mut out = FLEET_HEADER.join(",");
    out.push('\n');
    for g in fleet.iter() {
        let _ = writeln!(out, "{},{},{},{},{},{}", g.bus, num(g.a), num(g.b), num(g.c), num(g.pmin_kw), num(g.pmax_kw));
    }
    out
}

/// Wide form.
pub fn write_profile(profile: &LoadProfile) -> String {
    let mut out = String::from("minute");
    for b in profile.buses() {
        let _ = write!(out, ",{b}");
    }
    out.push('\n');
    for (t, minute) in profile.minutes().iter().enumerate() {
        let _ = write!(out, "{minute}");
        for b in 0..profile.buses().len() {
            let _ = write!(out, ",{}", num(profile.series(b)[t]));
        }
        out.push('\n');
    }
    out
}

pub fn write_comm_graph(graph: &CommGraph) -> String {
    let mut out = String::from("i,j\n");
    for (a, b) in graph.edges() {
        let _ = writeln!(out, "{a},{b}");
    }
    out
}
