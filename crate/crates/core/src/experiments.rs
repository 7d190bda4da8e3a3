//! The accuracy, scaling and engine-comparison experiments, plus the curve
//! statistics used to judge simulation runs.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::baseline::EngineKind;
use crate::error::{Error, Result};
use crate::expansion::{direct_field, hermite_expand, taylor_expand, KernelParams, MultiIndex, PointSet};
use crate::geometry::Cell;
use crate::model::Side;
use crate::octree::{LeafInput, Octree};
use crate::rng::{keyed_rng, Stream};
use crate::sim::{place_neurons, run_simulation, MetricsRow, RunConfig, Simulation};

/// Five-number summary plus the count of points above `q3 + 1.5 IQR`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub samples: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
        };
        let (q1, q3) = (q(0.25), q(0.75));
        let fence = q3 + 1.5 * (q3 - q1);
        Some(Summary {
            samples: v.len(),
            min: v[0],
            q1,
            median: q(0.5),
            q3,
            max: v[v.len() - 1],
            outliers: v.iter().filter(|&&x| x > fence).count(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyRow {
    pub method: &'static str,
    pub cutoff: MultiIndex,
    /// Percent deviations from the exact field.
    pub summary: Summary,
}

#[derive(Clone, Debug)]
pub struct AccuracyReport {
    pub scheme: String,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyReport {
    pub fn row(&self, method: &str, cutoff: MultiIndex) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.method == method && r.cutoff == cutoff)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "# {}", self.scheme)?;
        writeln!(f, "method,n1,n2,n3,samples,min,q1,median,q3,max,outliers")?;
        for r in &self.rows {
            let s = &r.summary;
            let [a, b, c] = r.cutoff.0;
            writeln!(
                f,
                "{},{a},{b},{c},{},{},{},{},{},{},{}",
                r.method, s.samples, s.min, s.q1, s.median, s.q3, s.max, s.outliers
            )?;
        }
        Ok(())
    }
}

/// Every cutoff `(a, b, c)` with components in `0..=max`.
pub fn cutoff_grid(max: u32) -> Vec<MultiIndex> {
    MultiIndex::uniform(max).block().collect()
}

/// Samples box pairs from a tree over the configured placement and reports
/// the percent deviation of both expansions from the exact field.
///
/// A sample picks a level uniformly among `2..=deepest`, a source box
/// uniformly among the inner nodes there, and a target box uniformly among
/// the nodes of that level whose centre lies within two box sides of the
/// source centre. Weights are uniform in `1..=3`. The deviation of a sample
/// is the largest relative error over the target neurons.
pub fn run_accuracy_experiment(config: &RunConfig, cutoffs: &[MultiIndex]) -> Result<AccuracyReport> {
    config.validate()?;
    let positions = place_neurons(config)?;
    let mut rng = keyed_rng(config.seed, Stream::Experiment, &[0xacc]);
    let inputs: Vec<LeafInput> = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| LeafInput {
            id: i as u64,
            position: p,
            vacant_axons: rng.gen_range(1..=3),
            vacant_dendrites: rng.gen_range(1..=3),
        })
        .collect();
    let tree = Octree::build(&inputs, Cell::cube(config.domain_side()))?;
    let deepest = tree.nodes().iter().filter(|n| !n.is_leaf()).map(|n| n.level()).max().unwrap_or(0);
    if deepest < 2 {
        return Err(Error::invalid("n", "tree too shallow for the accuracy experiment"));
    }
    let levels: Vec<u32> = (2..=deepest).collect();
    let mut by_level: Vec<Vec<u32>> = vec![Vec::new(); deepest as usize + 1];
    let mut inner_by_level: Vec<Vec<u32>> = vec![Vec::new(); deepest as usize + 1];
    for (i, n) in tree.nodes().iter().enumerate() {
        let l = n.level() as usize;
        if l <= deepest as usize {
            by_level[l].push(i as u32);
            if !n.is_leaf() {
                inner_by_level[l].push(i as u32);
            }
        }
    }
    let max_cut = cutoffs
        .iter()
        .fold(MultiIndex::uniform(0), |m, c| MultiIndex([0, 1, 2].map(|i| m.0[i].max(c.0[i]))));
    let kernel = KernelParams::with_scale(config.model.sigma, config.exponent_scale).with_cutoff(max_cut);
    let mut hermite: Vec<Vec<f64>> = vec![Vec::new(); cutoffs.len()];
    let mut taylor: Vec<Vec<f64>> = vec![Vec::new(); cutoffs.len()];
    let mut drawn = 0;
    while drawn < config.accuracy_samples {
        let level = *levels.choose(&mut rng).expect("non-empty");
        let Some(&src) = inner_by_level[level as usize].choose(&mut rng) else {
            continue;
        };
        let s_cell = tree.node(src).cell;
        let near: Vec<u32> = by_level[level as usize]
            .iter()
            .copied()
            .filter(|&t| tree.node(t).cell.center().distance_squared(s_cell.center()) <= (2.0 * s_cell.side).powi(2))
            .collect();
        let tgt = *near.choose(&mut rng).expect("source box is its own neighbour");
        let sources = leaves(&tree, src, Side::Dendrite);
        let targets = leaves(&tree, tgt, Side::Axon);
        let exact = direct_field(&sources, &targets.positions, &kernel);
        let h = hermite_expand(&sources, sources.centroid().expect("weighted"), &kernel)?;
        let t = taylor_expand(&sources, targets.centroid().expect("weighted"), &kernel)?;
        for (i, &c) in cutoffs.iter().enumerate() {
            hermite[i].push(deviation(&exact, &h.truncated(c).evaluate(&targets.positions, &kernel)));
            taylor[i].push(deviation(&exact, &t.truncated(c).evaluate(&targets.positions, &kernel)));
        }
        drawn += 1;
    }
    let mut rows = Vec::new();
    for (method, data) in [("hermite", &hermite), ("taylor", &taylor)] {
        for (i, &c) in cutoffs.iter().enumerate() {
            if let Some(summary) = Summary::of(&data[i]) {
                rows.push(AccuracyRow { method, cutoff: c, summary });
            }
        }
    }
    Ok(AccuracyReport {
        scheme: format!(
            "sampling: level uniform in 2..={deepest}, source = uniform inner node, target = uniform node of the same level within two box sides; \
             n={} side={} seed={} samples={}; deviation = max percent error over target neurons",
            config.neurons,
            config.domain_side(),
            config.seed,
            config.accuracy_samples
        ),
        rows,
    })
}

fn leaves(tree: &Octree, idx: u32, side: Side) -> PointSet {
    let mut out = PointSet::with_capacity(8);
    let mut stack = vec![idx];
    while let Some(i) = stack.pop() {
        let n = tree.node(i);
        match n.neuron {
            Some((_, p)) if n.side(side).sum > 0 => out.push(p, n.side(side).sum as f64),
            Some(_) => {}
            None => stack.extend(n.children.iter().rev().flatten()),
        }
    }
    out
}

/// Largest relative error in percent.
pub fn deviation(exact: &[f64], approx: &[f64]) -> f64 {
    exact
        .iter()
        .zip(approx)
        .map(|(e, a)| 100.0 * (a - e).abs() / e.abs())
        .fold(0.0, f64::max)
}

/// Timing of one engine at one size.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub neurons: usize,
    pub engine: EngineKind,
    pub phase: &'static str,
    /// Per repetition: slowest rank's time in seconds.
    pub samples: Vec<f64>,
    pub choose_calls: f64,
}

impl ScalingRow {
    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn avg(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    pub fn cv(&self) -> f64 {
        let m = self.avg();
        let var = self.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.samples.len() as f64;
        if m > 0.0 {
            var.sqrt() / m
        } else {
            0.0
        }
    }
}

/// Time ratio per doubling of `n` between two rows, `(t2/t1)^(1/log2(n2/n1))`.
pub fn doubling_ratio(a: &ScalingRow, b: &ScalingRow) -> f64 {
    let doublings = (b.neurons as f64 / a.neurons as f64).log2();
    (b.min() / a.min()).powf(1.0 / doublings)
}

/// Times one connectivity update with every neuron holding one vacant axon
/// and one vacant dendrite, for each size in `config.scaling_sizes`.
pub fn run_scaling_experiment(config: &RunConfig) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &n in &config.scaling_sizes {
        let mut total = ScalingRow {
            neurons: n,
            engine: config.engine,
            phase: "connectivity_update",
            samples: Vec::new(),
            choose_calls: 0.0,
        };
        let mut find = ScalingRow {
            phase: "find_targets",
            ..total.clone()
        };
        let mut expansions = ScalingRow {
            phase: "expansions",
            ..total.clone()
        };
        for rep in 0..config.repetitions {
            let cfg = RunConfig {
                neurons: n,
                domain_side: None,
                seed: config.seed.wrapping_add(rep as u64),
                ..config.clone()
            };
            let mut sim = Simulation::new(cfg)?;
            for r in &mut sim.cluster.ranks {
                for x in &mut r.neurons {
                    x.axons = 1.5;
                    x.dendrites = 1.5;
                }
            }
            let report = sim.connectivity_update()?;
            let slowest = |f: &dyn Fn(&crate::rank::RankReport) -> f64| report.ranks.iter().map(f).fold(0.0, f64::max);
            total.samples.push(slowest(&|r| r.connectivity_update.as_secs_f64()));
            find.samples.push(slowest(&|r| r.find_targets.as_secs_f64()));
            expansions.samples.push(slowest(&|r| r.expansions.as_secs_f64()));
            total.choose_calls += report.stats().choose_calls() as f64 / config.repetitions as f64;
        }
        find.choose_calls = total.choose_calls;
        expansions.choose_calls = total.choose_calls;
        rows.extend([total, find, expansions]);
    }
    Ok(rows)
}

pub fn write_scaling(path: &std::path::Path, rows: &[ScalingRow]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "n,engine,phase,reps,min_s,avg_s,max_s,cv,choose_calls,calls_per_neuron,doubling_ratio")?;
    for (i, r) in rows.iter().enumerate() {
        let prev = rows[..i].iter().rev().find(|p| p.phase == r.phase && p.engine == r.engine);
        let ratio = prev
            .filter(|p| p.min() > 0.0)
            .map_or(String::new(), |p| doubling_ratio(p, r).to_string());
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.neurons,
            r.engine,
            r.phase,
            r.samples.len(),
            r.min(),
            r.avg(),
            r.max(),
            r.cv(),
            r.choose_calls,
            r.choose_calls / r.neurons as f64,
            ratio
        )?;
    }
    Ok(())
}

/// Shape statistics of the synapse curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plateau {
    /// Mean total over the last tenth of the updates.
    pub level: f64,
    /// Largest least-squares slope over any window of a tenth of the updates.
    pub peak_slope: f64,
    /// Slope over the last tenth.
    pub last_slope: f64,
}

pub fn synapse_plateau(rows: &[MetricsRow]) -> Option<Plateau> {
    let ys: Vec<f64> = rows.iter().map(|r| r.synapses_total as f64).collect();
    let w = ys.len() / 10;
    if w < 2 {
        return None;
    }
    let peak_slope = (0..=ys.len() - w)
        .map(|i| slope(&ys[i..i + w]))
        .fold(f64::MIN, f64::max);
    let tail = &ys[ys.len() - w..];
    Some(Plateau {
        level: tail.iter().sum::<f64>() / w as f64,
        peak_slope,
        last_slope: slope(tail),
    })
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Index of the first update whose calcium mean comes within `tolerance` of
/// `target`, and whether the mean never decreased before it.
pub fn calcium_approach(rows: &[MetricsRow], target: f64, tolerance: f64) -> (Option<usize>, bool) {
    let reached = rows.iter().position(|r| (r.calcium_mean - target).abs() <= tolerance);
    let end = reached.unwrap_or(rows.len());
    let monotone = rows[..end].windows(2).all(|w| w[1].calcium_mean >= w[0].calcium_mean);
    (reached, monotone)
}

/// Runs the configuration once per engine into `out_dir/<engine>/` and
/// writes `compare.csv` with the curves side by side.
pub fn run_comparison(config: &RunConfig) -> Result<Vec<(EngineKind, Vec<MetricsRow>)>> {
    let mut runs = Vec::new();
    for &engine in &config.compare_engines {
        let cfg = RunConfig {
            engine,
            out_dir: config.out_dir.join(engine.name()),
            ..config.clone()
        };
        runs.push((engine, run_simulation(&cfg)?.metrics));
    }
    fs::create_dir_all(&config.out_dir)?;
    let path: PathBuf = config.out_dir.join("compare.csv");
    let mut f = fs::File::create(path)?;
    writeln!(f, "engine,step,calcium_mean,synapses_total,plateau_synapses")?;
    for (engine, rows) in &runs {
        let plateau = synapse_plateau(rows).map_or(String::new(), |p| p.level.to_string());
        for r in rows {
            writeln!(f, "{engine},{},{},{},{plateau}", r.step, r.calcium_mean, r.synapses_total)?;
        }
    }
    Ok(runs)
}
