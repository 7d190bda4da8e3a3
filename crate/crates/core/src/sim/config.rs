//! Run configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! n = 1250
//! engine = fmm        # direct | barnes_hut | fmm
//! cutoff = 3,3,3
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baseline::{EngineKind, DEFAULT_THETA};
use crate::connectivity::DispatchThresholds;
use crate::error::{Error, Result};
use crate::expansion::{ExponentScale, KernelParams, MultiIndex};
use crate::model::ModelParams;
use crate::rank::SchedulerMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    /// Cubic lattice filling the domain.
    Grid,
    /// Independent uniform positions inside the domain.
    UniformRandom,
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "grid" => Ok(Placement::Grid),
            "uniform-random" | "uniform_random" | "uniform" => Ok(Placement::UniformRandom),
            other => Err(Error::invalid("placement", format!("unknown placement {other:?}"))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Grid => "grid",
            Placement::UniformRandom => "uniform-random",
        })
    }
}

/// Everything a run or experiment needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub neurons: usize,
    pub ranks: u32,
    /// Activity steps.
    pub steps: u64,
    pub seed: u64,
    pub engine: EngineKind,
    pub placement: Placement,
    /// Cube side in length units; `None` picks `ceil(n^(1/3)) * 26`.
    pub domain_side: Option<f64>,
    pub model: ModelParams,
    pub thresholds: DispatchThresholds,
    pub cutoff: MultiIndex,
    pub exponent_scale: ExponentScale,
    pub theta: f64,
    pub scheduler: SchedulerMode,
    pub allow_self_connections: bool,
    pub out_dir: PathBuf,
    /// Box pairs drawn by the accuracy experiment.
    pub accuracy_samples: usize,
    /// Neuron counts visited by the scaling experiment.
    pub scaling_sizes: Vec<usize>,
    pub repetitions: usize,
    /// Engines run side by side by the comparison.
    pub compare_engines: Vec<EngineKind>,
}

pub const SPACING: f64 = 26.0;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            neurons: 1250,
            ranks: 1,
            steps: 500_000,
            seed: 1,
            engine: EngineKind::Fmm,
            placement: Placement::UniformRandom,
            domain_side: None,
            model: ModelParams::default(),
            thresholds: DispatchThresholds::default(),
            cutoff: KernelParams::DEFAULT_CUTOFF,
            exponent_scale: ExponentScale::default(),
            theta: DEFAULT_THETA,
            scheduler: SchedulerMode::Serial,
            allow_self_connections: true,
            out_dir: PathBuf::from("out"),
            accuracy_samples: 1000,
            scaling_sizes: vec![512, 4096, 32768],
            repetitions: 3,
            compare_engines: vec![EngineKind::Fmm, EngineKind::BarnesHut, EngineKind::Direct],
        }
    }
}

impl RunConfig {
    pub fn domain_side(&self) -> f64 {
        self.domain_side
            .unwrap_or_else(|| default_domain_side(self.neurons))
    }

    pub fn kernel(&self) -> KernelParams {
        KernelParams::with_scale(self.model.sigma, self.exponent_scale).with_cutoff(self.cutoff)
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if self.ranks == 0 {
            return Err(Error::invalid("p", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if self.placement == Placement::Grid && self.neurons % self.ranks as usize != 0 {
            return Err(Error::invalid("n", "must be divisible by p for grid placement"));
        }
        let side = self.domain_side();
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::invalid("domain_side", "must be positive"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions", "must be at least 1"));
        }
        self.model.validate()?;
        self.thresholds.validate()?;
        self.kernel().validate()
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    /// Reads `key = value` lines over the defaults. Unknown or repeated keys
    /// are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                reason: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line: line_no,
                    reason: format!("key {key:?} set twice"),
                });
            }
            cfg.set(key, value).map_err(|e| Error::Config {
                line: line_no,
                reason: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "n" | "neurons" => self.neurons = num(key, value)?,
            "p" | "ranks" => self.ranks = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "engine" => self.engine = value.parse()?,
            "placement" => self.placement = value.parse()?,
            "domain_side" => self.domain_side = Some(num(key, value)?),
            "scheduler" => self.scheduler = value.parse()?,
            "allow_self_connections" => self.allow_self_connections = num(key, value)?,
            "out" | "output" => self.out_dir = PathBuf::from(value),
            "cutoff" => self.cutoff = parse_cutoff(value)?,
            "exponent_scale" => {
                self.exponent_scale = match value {
                    "sigma_squared" => ExponentScale::SigmaSquared,
                    "sigma" => ExponentScale::Sigma,
                    _ => return Err(Error::invalid(key, "expected sigma_squared or sigma")),
                }
            }
            "theta" => self.theta = num(key, value)?,
            "threshold_axons" => self.thresholds.axon = num(key, value)?,
            "threshold_dendrites" => self.thresholds.dendrite = num(key, value)?,
            "accuracy_samples" => self.accuracy_samples = num(key, value)?,
            "scaling_sizes" => self.scaling_sizes = list(key, value, |s| num(key, s))?,
            "repetitions" => self.repetitions = num(key, value)?,
            "compare_engines" => self.compare_engines = list(key, value, |s| s.parse())?,
            "resting_activity" => m.resting_activity = num(key, value)?,
            "activity_decay" => m.activity_decay = num(key, value)?,
            "background_activity" => m.background_activity = num(key, value)?,
            "input_per_spike" => m.input_per_spike = num(key, value)?,
            "calcium_per_spike" => m.calcium_per_spike = num(key, value)?,
            "calcium_decay" => m.calcium_decay = num(key, value)?,
            "target_calcium" => m.target_calcium = num(key, value)?,
            "axon_onset" => m.axon_onset = num(key, value)?,
            "dendrite_onset" => m.dendrite_onset = num(key, value)?,
            "growth_rate" => m.growth_rate = num(key, value)?,
            "sigma" => m.sigma = num(key, value)?,
            "refractory_steps" => m.refractory_steps = num(key, value)?,
            "plasticity_interval" => m.plasticity_interval = num(key, value)?,
            _ => return Err(Error::invalid(key, "unknown key")),
        }
        Ok(())
    }
}

pub fn default_domain_side(n: usize) -> f64 {
    (n as f64).cbrt().ceil() * SPACING
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::invalid(key, format!("{value:?}: {e}")))
}

fn list<T>(key: &str, value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::invalid(key, "empty list"));
    }
    Ok(items)
}

/// `"3"` or `"3,3,3"`.
pub fn parse_cutoff(value: &str) -> Result<MultiIndex> {
    let parts = list("cutoff", value, |s| num::<u32>("cutoff", s))?;
    match parts[..] {
        [n] => Ok(MultiIndex::uniform(n)),
        [a, b, c] => Ok(MultiIndex::new(a, b, c)),
        _ => Err(Error::invalid("cutoff", "expected one or three integers")),
    }
}
