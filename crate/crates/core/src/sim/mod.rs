//! Neuron placement, the simulation loop, and CSV output.

pub mod config;
pub mod output;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::Duration;

use rand::Rng;

pub use config::{Placement, RunConfig};
pub use output::{MetricsRow, TimingRow};

use crate::baseline::BarnesHutEngine;
use crate::connectivity::FmmEngine;
use crate::error::{Error, Result};
use crate::geometry::{Cell, Vec3};
use crate::model::{NeuronId, NeuronState, Side};
use crate::octree::Decomposition;
use crate::rank::{Cluster, ConnectivityConfig, UpdateReport};
use crate::rng::{keyed_rng, Stream};

/// Positions for `config.neurons` neurons, ids in index order.
///
/// Grid placement fills a cubic lattice with `ceil(n^(1/3))` points per axis
/// at cell centres, row by row; lattice spacing must be at least one length
/// unit. Random placement draws strictly interior points and redraws exact
/// duplicates.
pub fn place_neurons(config: &RunConfig) -> Result<Vec<Vec3>> {
    let n = config.neurons;
    let side = config.domain_side();
    match config.placement {
        Placement::Grid => {
            let k = (n as f64).cbrt().round() as usize;
            let k = if k * k * k >= n { k } else { k + 1 };
            let spacing = side / k as f64;
            if spacing < 1.0 {
                return Err(Error::invalid(
                    "n",
                    format!("{n} neurons exceed the grid capacity {} of the domain", (side.floor() as usize).pow(3)),
                ));
            }
            Ok((0..n)
                .map(|i| {
                    let (x, y, z) = (i % k, (i / k) % k, i / (k * k));
                    Vec3([x, y, z].map(|c| (c as f64 + 0.5) * spacing))
                })
                .collect())
        }
        Placement::UniformRandom => {
            let mut rng = keyed_rng(config.seed, Stream::Placement, &[n as u64]);
            let mut seen = HashSet::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let p = Vec3([(); 3].map(|_| loop {
                    let u: f64 = rng.gen();
                    if u > 0.0 {
                        break u * side;
                    }
                }));
                if p.0.iter().all(|&c| c < side) && seen.insert(p.0.map(f64::to_bits)) {
                    out.push(p);
                }
            }
            Ok(out)
        }
    }
}

/// A running simulation.
pub struct Simulation {
    pub config: RunConfig,
    pub cluster: Cluster,
    step: u64,
    update: u64,
    inputs: Vec<u32>,
    next_inputs: Vec<u32>,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Simulation> {
        config.validate()?;
        let positions = place_neurons(&config)?;
        Simulation::with_positions(config, &positions)
    }

    pub fn with_positions(config: RunConfig, positions: &[Vec3]) -> Result<Simulation> {
        config.validate()?;
        let domain = Cell::cube(config.domain_side());
        let neurons: Vec<NeuronState> = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| NeuronState::new(i as NeuronId, p, &config.model))
            .collect();
        let kernel = config.kernel();
        let connectivity = ConnectivityConfig {
            engine: config.engine,
            fmm: FmmEngine {
                kernel,
                thresholds: config.thresholds,
            },
            barnes_hut: BarnesHutEngine {
                kernel,
                theta: config.theta,
            },
            seed: config.seed,
            allow_self_connections: config.allow_self_connections,
        };
        let decomposition = Decomposition::new(domain, config.ranks)?;
        let cluster = Cluster::new(neurons, decomposition, connectivity, config.scheduler)?;
        let n = positions.len();
        Ok(Simulation {
            config,
            cluster,
            step: 0,
            update: 0,
            inputs: vec![0; n],
            next_inputs: vec![0; n],
        })
    }

    /// Activity steps done so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Connectivity updates done so far.
    pub fn updates(&self) -> u64 {
        self.update
    }

    /// Runs `steps` activity steps, with a connectivity update after every
    /// `plasticity_interval` of them. `on_update` sees each update.
    pub fn advance(&mut self, steps: u64, mut on_update: impl FnMut(&Simulation, &UpdateReport)) -> Result<()> {
        let interval = u64::from(self.config.model.plasticity_interval);
        for _ in 0..steps {
            self.activity_step();
            if self.step % interval == 0 {
                let report = self.connectivity_update()?;
                on_update(self, &report);
            }
        }
        Ok(())
    }

    /// One activity step for every neuron: activity, calcium, elements.
    pub fn activity_step(&mut self) {
        let params = &self.config.model;
        self.next_inputs.iter_mut().for_each(|x| *x = 0);
        for rank in &mut self.cluster.ranks {
            for i in 0..rank.neurons.len() {
                let (n, rng) = rank.neuron_and_rng(i);
                let spiked = n.update_activity(self.inputs[n.id as usize], params, rng);
                n.update_calcium(spiked, params);
                n.apply_element_update(params);
                if spiked {
                    for &t in &n.out_synapses {
                        self.next_inputs[t as usize] += 1;
                    }
                }
            }
        }
        std::mem::swap(&mut self.inputs, &mut self.next_inputs);
        self.step += 1;
    }

    pub fn connectivity_update(&mut self) -> Result<UpdateReport> {
        let update = self.update;
        let report = self.cluster.connectivity_update(update).map_err(|e| match e {
            Error::Simulation { rank, source, .. } => Error::Simulation {
                step: self.step,
                rank,
                source,
            },
            e => e,
        })?;
        self.update += 1;
        Ok(report)
    }

    pub fn metrics(&self) -> MetricsRow {
        let neurons = self.cluster.neurons();
        let n = neurons.len().max(1) as f64;
        let mean = neurons.iter().map(|x| x.calcium).sum::<f64>() / n;
        let var = neurons.iter().map(|x| (x.calcium - mean).powi(2)).sum::<f64>() / n;
        MetricsRow {
            step: self.step,
            calcium_mean: mean,
            calcium_std: var.sqrt(),
            synapses_total: neurons.iter().map(|x| x.out_synapses.len() as u64).sum(),
            vacant_axons: neurons.iter().map(|x| x.vacant_count(Side::Axon)).sum(),
            vacant_dendrites: neurons.iter().map(|x| x.vacant_count(Side::Dendrite)).sum(),
        }
    }

    /// Final network as `(axon, dendrite, count)` in ascending order.
    pub fn edges(&self) -> Vec<(NeuronId, NeuronId, u64)> {
        let mut edges: BTreeMap<(NeuronId, NeuronId), u64> = BTreeMap::new();
        for n in self.cluster.neurons() {
            for &d in &n.out_synapses {
                *edges.entry((n.id, d)).or_default() += 1;
            }
        }
        edges.into_iter().map(|((a, d), c)| (a, d, c)).collect()
    }
}

/// Per-rank phase times collected over a run.
#[derive(Clone, Debug, Default)]
pub struct TimingLog {
    /// `samples[rank][phase]`, phases in [`TimingRow::PHASES`] order.
    samples: Vec<[Vec<Duration>; 3]>,
}

impl TimingLog {
    pub fn record(&mut self, report: &UpdateReport) {
        for r in &report.ranks {
            let i = r.rank as usize;
            if self.samples.len() <= i {
                self.samples.resize_with(i + 1, Default::default);
            }
            self.samples[i][0].push(r.connectivity_update);
            self.samples[i][1].push(r.find_targets);
            self.samples[i][2].push(r.expansions);
        }
    }

    /// One row per rank and phase, spread over the recorded updates.
    pub fn rows(&self) -> Vec<TimingRow> {
        let mut rows = Vec::new();
        for (rank, phases) in self.samples.iter().enumerate() {
            for (phase, xs) in TimingRow::PHASES.iter().zip(phases) {
                if let Some(row) = TimingRow::from_samples(rank as u32, phase, xs) {
                    rows.push(row);
                }
            }
        }
        rows
    }
}

/// Files and rows produced by [`run_simulation`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
    pub metrics_path: PathBuf,
    pub timing_path: PathBuf,
    pub network_path: PathBuf,
    pub plot_path: PathBuf,
}

/// Runs `config.steps` steps and writes `metrics.csv`, `timing.csv`,
/// `network.csv` and `metrics.svg` into `config.out_dir`.
pub fn run_simulation(config: &RunConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(config.clone())?;
    let mut metrics = Vec::new();
    let mut timing = TimingLog::default();
    sim.advance(config.steps, |s, report| {
        metrics.push(s.metrics());
        timing.record(report);
    })?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;
    let out = RunOutput {
        timings: timing.rows(),
        metrics_path: dir.join("metrics.csv"),
        timing_path: dir.join("timing.csv"),
        network_path: dir.join("network.csv"),
        plot_path: dir.join("metrics.svg"),
        metrics,
    };
    output::write_metrics(&out.metrics_path, &out.metrics)?;
    output::write_timings(&out.timing_path, &out.timings)?;
    output::write_network(&out.network_path, &sim.edges())?;
    output::write_plot(&out.plot_path, &out.metrics)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_of_eight() {
        let cfg = RunConfig {
            neurons: 8,
            placement: Placement::Grid,
            domain_side: Some(2.0),
            ..RunConfig::default()
        };
        let p = place_neurons(&cfg).unwrap();
        assert_eq!(p.len(), 8);
        assert!(p.iter().all(|v| v.0.iter().all(|&c| c == 0.5 || c == 1.5)));
        let distinct: HashSet<_> = p.iter().map(|v| v.0.map(f64::to_bits)).collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn grid_capacity_is_enforced() {
        let cfg = RunConfig {
            neurons: 1000,
            placement: Placement::Grid,
            domain_side: Some(5.0),
            ..RunConfig::default()
        };
        assert!(place_neurons(&cfg).is_err());
    }

    #[test]
    fn random_placement_is_seeded_and_interior() {
        let cfg = RunConfig {
            neurons: 1000,
            ..RunConfig::default()
        };
        let a = place_neurons(&cfg).unwrap();
        assert_eq!(a, place_neurons(&cfg).unwrap());
        let side = cfg.domain_side();
        assert!(a.iter().all(|v| v.0.iter().all(|&c| c > 0.0 && c < side)));
        let other = place_neurons(&RunConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn one_interval_gives_one_update() {
        let cfg = RunConfig {
            neurons: 27,
            steps: 100,
            ..RunConfig::default()
        };
        let mut sim = Simulation::new(cfg).unwrap();
        let mut rows = 0;
        sim.advance(100, |_, _| rows += 1).unwrap();
        assert_eq!((rows, sim.updates(), sim.step()), (1, 1, 100));
    }
}
