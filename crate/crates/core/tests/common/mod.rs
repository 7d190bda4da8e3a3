#![allow(dead_code)]

use std::collections::BTreeMap;

use msp_core::connectivity::{resolve_conflicts, DescentStats, FmmEngine, SynapseRequest};
use msp_core::expansion::{hermite_fn, KernelParams};
use msp_core::geometry::{Cell, Vec3};
use msp_core::model::{growth_delta, ModelParams, NeuronState, Side};
use msp_core::octree::{Aggregate, LeafInput, Octree, TreeView};
use msp_core::rng::Stream;
use msp_core::sampling::KeyedSampler;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn leaf(id: u64, p: [f64; 3], va: u64, vd: u64) -> LeafInput {
    LeafInput {
        id,
        position: Vec3(p),
        vacant_axons: va,
        vacant_dendrites: vd,
    }
}

/// Two-sample chi-square statistic over shared categories; categories with
/// fewer than 10 pooled observations are merged into one.
pub fn two_sample_chi2<K: Ord + Clone>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> (f64, usize) {
    let keys: std::collections::BTreeSet<K> = a.keys().chain(b.keys()).cloned().collect();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut rest = (0.0, 0.0);
    for k in keys {
        let x = *a.get(&k).unwrap_or(&0) as f64;
        let y = *b.get(&k).unwrap_or(&0) as f64;
        if x + y < 10.0 {
            rest.0 += x;
            rest.1 += y;
        } else {
            bins.push((x, y));
        }
    }
    if rest.0 + rest.1 > 0.0 {
        bins.push(rest);
    }
    let na: f64 = bins.iter().map(|b| b.0).sum();
    let nb: f64 = bins.iter().map(|b| b.1).sum();
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let stat = bins
        .iter()
        .map(|&(x, y)| (ka * x - kb * y).powi(2) / (x + y))
        .sum();
    (stat, bins.len().saturating_sub(1))
}

/// Upper tail probability of the chi-square distribution.
pub fn chi2_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64).unwrap().sf(stat)
}

/// Goodness of fit of observed counts against probabilities.
pub fn chi2_gof(observed: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    chi2_p(stat, observed.len() - 1)
}

/// Every node's aggregates equal a recount of the leaves below it.
pub fn octree_recount(inputs: &[LeafInput], tree: &Octree) -> Result<(), String> {
    for (i, node) in tree.nodes().iter().enumerate() {
        let mut stack = vec![i as u32];
        let (mut ax, mut de) = (Vec::new(), Vec::new());
        while let Some(j) = stack.pop() {
            let n = tree.node(j);
            match n.neuron {
                Some((id, p)) => {
                    let l = inputs.iter().find(|l| l.id == id).ok_or("unknown leaf")?;
                    if l.position != p {
                        return Err(format!("leaf {id} moved"));
                    }
                    ax.push(Aggregate::point(p, l.vacant_axons));
                    de.push(Aggregate::point(p, l.vacant_dendrites));
                }
                None => stack.extend(n.children.iter().flatten()),
            }
        }
        for (got, parts, what) in [(&node.axons, &ax, "axons"), (&node.dendrites, &de, "dendrites")] {
            let want = Aggregate::combine(parts.iter());
            if got.sum != want.sum {
                return Err(format!("node {i} {what}: sum {} != {}", got.sum, want.sum));
            }
            match (got.centroid, want.centroid) {
                (None, None) => {}
                (Some(g), Some(w)) if g.distance_squared(w).sqrt() <= 1e-9 * (1.0 + w.norm()) => {}
                (g, w) => return Err(format!("node {i} {what}: centroid {g:?} != {w:?}")),
            }
        }
    }
    Ok(())
}

/// `h_{n+1}(x) = -d/dx h_n(x)`, checked with a five-point stencil.
pub fn hermite_derivative_error(n: u32, x: f64) -> f64 {
    let e = 1e-3;
    let f = |y: f64| hermite_fn(n, y);
    let d = (f(x - 2.0 * e) - 8.0 * f(x - e) + 8.0 * f(x + e) - f(x + 2.0 * e)) / (12.0 * e);
    let exact = hermite_fn(n + 1, x);
    (-d - exact).abs() / (exact.abs() + 1e-9)
}

/// Sign of the growth curve on both sides of its roots.
pub fn growth_signs(params: &ModelParams, side: Side, ca: f64) -> Result<(), String> {
    let onset = params.onset(side);
    let target = params.target_calcium;
    let g = growth_delta(ca, onset, params);
    let margin = 1e-9;
    let ok = if ca < onset - margin || ca > target + margin {
        g < 0.0
    } else if ca > onset + margin && ca < target - margin {
        g > 0.0
    } else {
        g.abs() < 1e-6 * params.growth_rate
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{side:?} growth {g} at calcium {ca}"))
    }
}

/// Neurons with fractional element counts and random bound synapses.
pub fn neurons_from(spec: &[([f64; 3], f64, f64)]) -> Vec<NeuronState> {
    let params = ModelParams::default();
    spec.iter()
        .enumerate()
        .map(|(i, &(p, a, d))| {
            let mut n = NeuronState::new(i as u64, Vec3(p), &params);
            n.axons = a;
            n.dendrites = d;
            n
        })
        .collect()
}

pub fn inputs_of(neurons: &[NeuronState]) -> Vec<LeafInput> {
    neurons
        .iter()
        .map(|n| LeafInput {
            id: n.id,
            position: n.position,
            vacant_axons: n.vacant_count(Side::Axon),
            vacant_dendrites: n.vacant_count(Side::Dendrite),
        })
        .collect()
}

/// One single-rank FMM update: descent, conflict resolution, bookkeeping.
pub fn fmm_update(
    neurons: &mut [NeuronState],
    domain: Cell,
    engine: &FmmEngine,
    seed: u64,
    update: u64,
) -> (Vec<SynapseRequest>, DescentStats) {
    let tree = Octree::build(&inputs_of(neurons), domain).unwrap();
    let mut view = tree.view();
    let mut sampler = KeyedSampler::new(seed, Stream::Descent, update);
    let mut stats = DescentStats::default();
    let root = tree.root_ref();
    let stack = engine.init_stack(&mut view, &[root], root, &mut sampler, &mut stats).unwrap();
    let requests = engine.find_synapses(&mut view, stack, &mut sampler, &mut stats).unwrap();
    let vacancy: Vec<u64> = neurons.iter().map(|n| n.vacant_count(Side::Dendrite)).collect();
    for r in resolve_conflicts(&requests, |id| vacancy[id as usize], seed, update) {
        if r.accepted > 0 {
            neurons[r.axon_neuron as usize].add_synapses(Side::Axon, r.dendrite_neuron, r.accepted);
            neurons[r.dendrite_neuron as usize].add_synapses(Side::Dendrite, r.axon_neuron, r.accepted);
        }
    }
    (requests, stats)
}

/// No neuron binds more synapses than its whole element count.
pub fn capacity_safe(neurons: &[NeuronState]) -> Result<(), String> {
    for n in neurons {
        if n.out_synapses.len() as f64 > n.axons.floor() || n.in_synapses.len() as f64 > n.dendrites.floor() {
            return Err(format!(
                "neuron {}: {} out / {} axons, {} in / {} dendrites",
                n.id,
                n.out_synapses.len(),
                n.axons,
                n.in_synapses.len(),
                n.dendrites
            ));
        }
    }
    Ok(())
}

/// Every vacant-axon neuron sent exactly one request carrying all its axons.
pub fn clustered(inputs: &[LeafInput], requests: &[SynapseRequest]) -> Result<(), String> {
    let mut per: BTreeMap<u64, Vec<&SynapseRequest>> = BTreeMap::new();
    for r in requests {
        per.entry(r.axon_neuron).or_default().push(r);
    }
    let dendrites: u64 = inputs.iter().map(|l| l.vacant_dendrites).sum();
    for l in inputs.iter().filter(|l| l.vacant_axons > 0) {
        match per.get(&l.id).map(Vec::as_slice) {
            Some([r]) if r.count == l.vacant_axons => {}
            None if dendrites == 0 => {}
            other => return Err(format!("neuron {}: requests {other:?}", l.id)),
        }
    }
    Ok(())
}

/// Sum of exact kernel values between two leaf sets.
pub fn exact_attraction<V: TreeView>(view: &mut V, engine: &FmmEngine, a: &msp_core::octree::NodeSummary, d: &msp_core::octree::NodeSummary) -> f64 {
    let k: &KernelParams = &engine.kernel;
    let ta = collect(view, a, Side::Axon);
    let sd = collect(view, d, Side::Dendrite);
    ta.iter()
        .map(|(t, w)| sd.iter().map(|(s, v)| w * v * k.kernel(*t, *s)).sum::<f64>())
        .sum()
}

fn collect<V: TreeView>(view: &mut V, n: &msp_core::octree::NodeSummary, side: Side) -> Vec<(Vec3, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![*n];
    while let Some(s) = stack.pop() {
        if let Some((_, p)) = s.neuron {
            if s.side(side).sum > 0 {
                out.push((p, s.side(side).sum as f64));
            }
        }
        for c in s.children() {
            stack.push(view.summary(c).unwrap());
        }
    }
    out
}
