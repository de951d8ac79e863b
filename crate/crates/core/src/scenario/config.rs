//! Flat `key = value` scenario files.
//!
//! ```text
//! # Peak-minute congestion run on the bundled feeder
//! feeder = synthetic
//! buses = synthetic
//! generators = synthetic
//! profile = synthetic-day
//! dynamics = smith
//! limit = 505-666=28
//! step = 566
//! ```
//!
//! Relative paths resolve against the directory holding the file. `#` starts
//! a comment. `limit` may repeat; every other key may appear once.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::dynamics::{CommGraph, DynamicsKind, GameSettings, Record, Substeps};
use crate::game::{FitnessConfig, Fleet};
use crate::grid::{validate_radial, GridError, RadialNetwork};
use crate::io::{self, IoError};
use crate::synthetic;

use super::{Init, LimitOverride, LoadProfile, ScenarioConfig, ScenarioError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{path}: {source}")]
    Input { path: String, source: IoError },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Where an input table comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    /// The bundled synthetic data.
    Synthetic,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileSource {
    /// The bundled 1440-minute day.
    SyntheticDay,
    /// One step at minute 0 holding the bus file's loads.
    Static,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsChoice {
    Replicator,
    LocalReplicator,
    Smith,
    DistributedSmith,
}

impl FromStr for DynamicsChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "replicator" => Ok(DynamicsChoice::Replicator),
            "local-replicator" => Ok(DynamicsChoice::LocalReplicator),
            "smith" => Ok(DynamicsChoice::Smith),
            "distributed-smith" => Ok(DynamicsChoice::DistributedSmith),
            _ => Err(format!(
                "unknown dynamics {s:?} (expected replicator, local-replicator, smith or distributed-smith)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphSource {
    Complete,
    Path,
    File(PathBuf),
}

/// A parsed scenario file with paths resolved but inputs not yet read.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub base_dir: PathBuf,
    pub feeder: Source,
    pub buses: Source,
    pub generators: Source,
    pub profile: ProfileSource,
    pub root: Option<String>,
    pub dynamics: DynamicsChoice,
    pub graph: GraphSource,
    pub fitness: FitnessConfig,
    pub limits: Vec<LimitOverride>,
    /// Profile minutes; `end` is exclusive.
    pub start: Option<u32>,
    pub end: Option<u32>,
    pub warm_start: bool,
    pub init: Init,
    pub game: GameSettings,
    pub oracle_step_kw: f64,
    pub reduce: bool,
}

impl ConfigFile {
    /// Defaults for everything; inputs point at the bundled data.
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        ConfigFile {
            base_dir: base_dir.into(),
            feeder: Source::Synthetic,
            buses: Source::Synthetic,
            generators: Source::Synthetic,
            profile: ProfileSource::SyntheticDay,
            root: None,
            dynamics: DynamicsChoice::Smith,
            graph: GraphSource::Complete,
            fitness: FitnessConfig::default(),
            limits: Vec::new(),
            start: None,
            end: None,
            warm_start: true,
            init: Init::Uniform,
            game: GameSettings { record: Record::Tail, ..GameSettings::default() },
            oracle_step_kw: 0.5,
            reduce: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = io::read_to_string(path)
            .map_err(|source| ConfigError::Input { path: path.display().to_string(), source })?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        parse_config(&text, dir)
    }

    fn resolve(&self, value: &str) -> PathBuf {
        self.base_dir.join(value)
    }

    /// Applies one setting. Used for file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| -> Result<f64, String> {
            v.parse::<f64>().map_err(|_| format!("`{key}` expects a number, got {v:?}"))
        };
        let count = |v: &str| -> Result<usize, String> {
            v.parse::<usize>().map_err(|_| format!("`{key}` expects a non-negative integer, got {v:?}"))
        };
        let minute = |v: &str| -> Result<u32, String> {
            v.parse::<u32>().map_err(|_| format!("`{key}` expects a minute, got {v:?}"))
        };
        let switch = |v: &str| -> Result<bool, String> {
            match v {
                "on" | "true" | "yes" => Ok(true),
                "off" | "false" | "no" => Ok(false),
                _ => Err(format!("`{key}` expects on or off, got {v:?}")),
            }
        };
        let source = |v: &str| if v == "synthetic" { Source::Synthetic } else { Source::File(self.resolve(v)) };
        match key {
            "feeder" => self.feeder = source(value),
            "buses" => self.buses = source(value),
            "generators" => self.generators = source(value),
            "profile" => {
                self.profile = match value {
                    "synthetic-day" => ProfileSource::SyntheticDay,
                    "static" => ProfileSource::Static,
                    path => ProfileSource::File(self.resolve(path)),
                }
            }
            "root" => self.root = Some(value.to_owned()),
            "dynamics" => self.dynamics = value.parse()?,
            "graph" => {
                self.graph = match value {
                    "complete" => GraphSource::Complete,
                    "path" => GraphSource::Path,
                    path => GraphSource::File(self.resolve(path)),
                }
            }
            "B" => self.fitness.bias = num(value)?,
            "m" => self.fitness.barrier_slope = num(value)?,
            "C" => self.fitness.congestion_gain = num(value)?,
            "limit" => self.limits.push(parse_limit(value)?),
            "start" => self.start = Some(minute(value)?),
            "end" => self.end = Some(minute(value)?),
            "step" => {
                let t = minute(value)?;
                self.start = Some(t);
                self.end = Some(t + 1);
            }
            "warm_start" => self.warm_start = switch(value)?,
            "init" => {
                self.init = match value {
                    "uniform" => Init::Uniform,
                    "nearest" => Init::Nearest,
                    _ => return Err(format!("`init` expects uniform or nearest, got {value:?}")),
                }
            }
            "h" => self.game.step_s = num(value)?,
            "tol" => self.game.tol_kw = num(value)?,
            "window" => self.game.window = count(value)?,
            "max_iter" => self.game.max_iter = count(value)?,
            "substeps" => {
                self.game.substeps = match value {
                    "auto" => Substeps::Auto,
                    v => Substeps::Fixed(count(v)?),
                }
            }
            "oracle_step_kw" => self.oracle_step_kw = num(value)?,
            "reduce" => self.reduce = switch(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// `key = value` lines that parse back to this configuration.
    pub fn render(&self) -> Vec<String> {
        let source = |s: &Source| match s {
            Source::Synthetic => "synthetic".to_owned(),
            Source::File(p) => p.display().to_string(),
        };
        let switch = |b: bool| if b { "on" } else { "off" };
        let mut out = vec![
            format!("feeder = {}", source(&self.feeder)),
            format!("buses = {}", source(&self.buses)),
            format!("generators = {}", source(&self.generators)),
            format!(
                "profile = {}",
                match &self.profile {
                    ProfileSource::SyntheticDay => "synthetic-day".to_owned(),
                    ProfileSource::Static => "static".to_owned(),
                    ProfileSource::File(p) => p.display().to_string(),
                }
            ),
        ];
        if let Some(r) = &self.root {
            out.push(format!("root = {r}"));
        }
        let dynamics = match self.dynamics {
            DynamicsChoice::Replicator => "replicator",
            DynamicsChoice::LocalReplicator => "local-replicator",
            DynamicsChoice::Smith => "smith",
            DynamicsChoice::DistributedSmith => "distributed-smith",
        };
        out.push(format!("dynamics = {dynamics}"));
        out.push(format!(
            "graph = {}",
            match &self.graph {
                GraphSource::Complete => "complete".to_owned(),
                GraphSource::Path => "path".to_owned(),
                GraphSource::File(p) => p.display().to_string(),
            }
        ));
        out.push(format!("B = {}", self.fitness.bias));
        out.push(format!("m = {}", self.fitness.barrier_slope));
        out.push(format!("C = {}", self.fitness.congestion_gain));
        for l in &self.limits {
            out.push(format!("limit = {}-{}={}", l.from, l.to, l.limit_kw));
        }
        if let Some(t) = self.start {
            out.push(format!("start = {t}"));
        }
        if let Some(t) = self.end {
            out.push(format!("end = {t}"));
        }
        out.push(format!("warm_start = {}", switch(self.warm_start)));
        out.push(format!("init = {}", if self.init == Init::Nearest { "nearest" } else { "uniform" }));
        out.push(format!("h = {}", self.game.step_s));
        out.push(format!("tol = {}", self.game.tol_kw));
        out.push(format!("window = {}", self.game.window));
        out.push(format!("max_iter = {}", self.game.max_iter));
        out.push(format!(
            "substeps = {}",
            match self.game.substeps {
                Substeps::Auto => "auto".to_owned(),
                Substeps::Fixed(n) => n.to_string(),
            }
        ));
        out.push(format!("oracle_step_kw = {}", self.oracle_step_kw));
        out.push(format!("reduce = {}", switch(self.reduce)));
        out
    }

    /// Every input file the scenario reads.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut files = Vec::new();
        for s in [&self.feeder, &self.buses, &self.generators] {
            if let Source::File(p) = s {
                files.push(p.clone());
            }
        }
        if let ProfileSource::File(p) = &self.profile {
            files.push(p.clone());
        }
        if let GraphSource::File(p) = &self.graph {
            files.push(p.clone());
        }
        files
    }

    fn text(&self, source: &Source, bundled: &'static str) -> Result<(String, String), ConfigError> {
        match source {
            Source::Synthetic => Ok((bundled.to_owned(), "<synthetic>".to_owned())),
            Source::File(p) => Ok((read(p)?, p.display().to_string())),
        }
    }

    /// Reads and validates the feeder and bus tables.
    pub fn read_network(&self) -> Result<RadialNetwork, ConfigError> {
        let (feeder, feeder_path) = self.text(&self.feeder, synthetic::FEEDER_CSV)?;
        let (buses, buses_path) = self.text(&self.buses, synthetic::BUSES_CSV)?;
        let lines = io::parse_feeder(&feeder).map_err(|source| ConfigError::Input { path: feeder_path.clone(), source })?;
        let buses = io::parse_buses(&buses).map_err(|source| ConfigError::Input { path: buses_path, source })?;
        let root = match &self.root {
            Some(r) => r.as_str().into(),
            None => buses.first().map(|b| b.id.clone()).ok_or_else(|| {
                ScenarioError::from(GridError::InvalidNetwork("bus table lists no buses".into()))
            })?,
        };
        let net = RadialNetwork { buses, lines, root };
        validate_radial(&net).map_err(|e| ConfigError::Input { path: feeder_path, source: e.into() })?;
        Ok(net)
    }

    pub fn read_fleet(&self) -> Result<Fleet, ConfigError> {
        let (text, path) = self.text(&self.generators, synthetic::GENERATORS_CSV)?;
        io::parse_fleet(&text).map_err(|source| ConfigError::Input { path, source })
    }

    pub fn read_profile(&self, network: &RadialNetwork) -> Result<LoadProfile, ConfigError> {
        Ok(match &self.profile {
            ProfileSource::SyntheticDay => synthetic::day_profile(),
            ProfileSource::Static => {
                let loads = network.buses.iter().map(|b| (b.id.clone(), b.load_kw)).collect();
                LoadProfile::constant(&loads)?
            }
            ProfileSource::File(p) => io::parse_profile(&read(p)?).map_err(with_path(p))?,
        })
    }

    /// Reads every input and assembles the scenario.
    pub fn build(&self) -> Result<ScenarioConfig, ConfigError> {
        let network = self.read_network()?;
        let fleet = self.read_fleet()?;
        let profile = self.read_profile(&network)?;

        let n = fleet.len();
        let graph = || -> Result<CommGraph, ConfigError> {
            match &self.graph {
                GraphSource::Complete => Ok(CommGraph::complete(n).map_err(ScenarioError::from)?),
                GraphSource::Path => Ok(CommGraph::path(n).map_err(ScenarioError::from)?),
                GraphSource::File(p) => io::parse_comm_graph(&read(p)?, n).map_err(with_path(p)),
            }
        };
        let dynamics = match self.dynamics {
            DynamicsChoice::Replicator => DynamicsKind::Replicator,
            DynamicsChoice::Smith => DynamicsKind::Smith,
            DynamicsChoice::LocalReplicator => DynamicsKind::LocalReplicator(graph()?),
            DynamicsChoice::DistributedSmith => DynamicsKind::DistributedSmith(graph()?),
        };
        let fitness = FitnessConfig::new(
            self.fitness.bias,
            self.fitness.barrier_slope,
            self.fitness.congestion_gain,
        )
        .map_err(ScenarioError::from)?;

        let step_at = |minute: u32| profile.minutes().partition_point(|&m| m < minute);
        let start = self.start.map_or(0, step_at);
        let end = self.end.map_or(profile.len(), step_at);
        if let Some(m) = self.start {
            if profile.step_of(m).is_none() {
                return Err(ScenarioError::InvalidConfig(format!("profile has no minute {m}")).into());
            }
        }

        let mut cfg = ScenarioConfig::new(network, fleet, profile);
        cfg.fitness = fitness;
        cfg.dynamics = dynamics;
        cfg.limits = self.limits.clone();
        cfg.start = start;
        cfg.end = end;
        cfg.warm_start = self.warm_start;
        cfg.init = self.init;
        cfg.game = self.game;
        cfg.oracle_step_kw = self.oracle_step_kw;
        cfg.reduce = self.reduce;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    io::read_to_string(path).map_err(|source| ConfigError::Input { path: path.display().to_string(), source })
}

fn with_path(path: &Path) -> impl FnOnce(IoError) -> ConfigError {
    let path = path.display().to_string();
    move |source| ConfigError::Input { path, source }
}

/// `FROM-TO=KW`.
pub fn parse_limit(value: &str) -> Result<LimitOverride, String> {
    let err = || format!("limit expects FROM-TO=KW, got {value:?}");
    let (line, kw) = value.rsplit_once('=').ok_or_else(err)?;
    let (from, to) = line.trim().split_once('-').ok_or_else(err)?;
    let limit_kw: f64 = kw.trim().parse().map_err(|_| err())?;
    if from.trim().is_empty() || to.trim().is_empty() {
        return Err(err());
    }
    if !(limit_kw > 0.0) {
        return Err(format!("limit must be positive, got {limit_kw}"));
    }
    Ok(LimitOverride { from: from.trim().into(), to: to.trim().into(), limit_kw })
}

pub fn parse_config(text: &str, base_dir: impl Into<PathBuf>) -> Result<ConfigFile, ConfigError> {
    let mut cfg = ConfigFile::new(base_dir);
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, message: format!("expected `key = value`, got {content:?}") })?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(ConfigError::Syntax { line, message: format!("`{key}` has no value") });
        }
        if key != "limit" && !seen.insert(key.to_owned()) {
            return Err(ConfigError::Syntax { line, message: format!("`{key}` is set twice") });
        }
        cfg.set(key, value).map_err(|message| ConfigError::Syntax { line, message })?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_limits() {
        let text = "# run\nfeeder = net.csv\nlimit = 505-666=28\nlimit = 1-114 = 50 # trailing\nstep = 566\nwarm_start = off\nsubsteps = 300\ndynamics = distributed-smith\ngraph = path\n";
        let cfg = parse_config(text, "/data").unwrap();
        assert_eq!(cfg.feeder, Source::File(PathBuf::from("/data/net.csv")));
        assert_eq!(cfg.limits.len(), 2);
        assert_eq!(cfg.limits[1].limit_kw, 50.0);
        assert_eq!((cfg.start, cfg.end), (Some(566), Some(567)));
        assert!(!cfg.warm_start);
        assert_eq!(cfg.game.substeps, Substeps::Fixed(300));
        assert_eq!(cfg.dynamics, DynamicsChoice::DistributedSmith);
        assert_eq!(cfg.graph, GraphSource::Path);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [
            ("dynamics = smith\nfoo = 1\n", 2),
            ("\n\nB = abc\n", 3),
            ("h = 0.01\nh = 0.02\n", 2),
            ("limit = 505:666=28\n", 1),
            ("just words\n", 1),
        ] {
            match parse_config(text, ".") {
                Err(ConfigError::Syntax { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn render_parses_back() {
        let text = "feeder = a.csv\nlimit = 505-666=28\nstep = 566\ninit = nearest\nsubsteps = 40\nroot = 1\ngraph = path\n";
        let cfg = parse_config(text, "/x").unwrap();
        let again = parse_config(&cfg.render().join("\n"), "/elsewhere").unwrap();
        assert_eq!(ConfigFile { base_dir: cfg.base_dir.clone(), ..again }, cfg);
    }

    #[test]
    fn builds_the_bundled_scenario() {
        let cfg = parse_config("step = 566\nlimit = 505-666=28\n", ".").unwrap().build().unwrap();
        assert_eq!((cfg.start, cfg.end), (566, 567));
        assert_eq!(cfg.fleet.len(), 6);
        assert!(parse_config("limit = 1-900=5\n", ".").unwrap().build().is_err());
        assert!(parse_config("step = 5000\n", ".").unwrap().build().is_err());
    }
}
