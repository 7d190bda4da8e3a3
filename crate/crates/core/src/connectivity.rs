//! Pairing vacant axons with vacant dendrites by stochastic descent over the
//! octree, and resolution of competing requests at the dendrite side.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::expansion::{hermite_expand, taylor_expand, KernelParams, PointSet};
use crate::geometry::Vec3;
use crate::model::{NeuronId, Side};
use crate::octree::{NodeRef, NodeSummary, TreeView};
use crate::rng::{keyed_rng, split_u128, Stream};
use crate::sampling::Sampler;

/// Element counts at which a side stops being evaluated point by point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DispatchThresholds {
    /// Axon-side count from which the Taylor expansion is used.
    pub axon: u64,
    /// Dendrite-side count from which the Hermite expansion is used.
    pub dendrite: u64,
}

impl Default for DispatchThresholds {
    fn default() -> Self {
        DispatchThresholds { axon: 70, dendrite: 70 }
    }
}

impl DispatchThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.axon == 0 || self.dendrite == 0 {
            return Err(Error::invalid("dispatch thresholds", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Direct,
    Hermite,
    Taylor,
}

/// Evaluation method for a box pair with the given vacant element counts.
pub fn dispatch_method(axons: u64, dendrites: u64, t: DispatchThresholds) -> Method {
    if axons >= t.axon {
        Method::Taylor
    } else if dendrites >= t.dendrite {
        Method::Hermite
    } else {
        Method::Direct
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodePair {
    pub axon: NodeRef,
    pub dendrite: NodeRef,
}

/// Request to attach `count` synapses from `axon_neuron` onto `dendrite_neuron`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SynapseRequest {
    pub axon_neuron: NeuronId,
    pub dendrite_neuron: NeuronId,
    pub count: u64,
}

/// Answer to a [`SynapseRequest`]; `accepted <= requested`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SynapseResponse {
    pub axon_neuron: NeuronId,
    pub dendrite_neuron: NeuronId,
    pub requested: u64,
    pub accepted: u64,
}

/// Counters gathered during one descent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescentStats {
    pub choose_target_calls: u64,
    pub choose_source_calls: u64,
    pub direct_evaluations: u64,
    pub hermite_evaluations: u64,
    pub taylor_evaluations: u64,
    /// Choices where every attraction vanished and counts were used instead.
    pub underflow_fallbacks: u64,
    pub dropped_pairs: u64,
    pub requests: u64,
    pub expansion_time: Duration,
}

impl DescentStats {
    pub fn merge(&mut self, o: &DescentStats) {
        self.choose_target_calls += o.choose_target_calls;
        self.choose_source_calls += o.choose_source_calls;
        self.direct_evaluations += o.direct_evaluations;
        self.hermite_evaluations += o.hermite_evaluations;
        self.taylor_evaluations += o.taylor_evaluations;
        self.underflow_fallbacks += o.underflow_fallbacks;
        self.dropped_pairs += o.dropped_pairs;
        self.requests += o.requests;
        self.expansion_time += o.expansion_time;
    }

    pub fn choose_calls(&self) -> u64 {
        self.choose_target_calls + self.choose_source_calls
    }
}

/// Descent configuration: kernel and dispatch thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FmmEngine {
    pub kernel: KernelParams,
    pub thresholds: DispatchThresholds,
}

const TARGET_ROLE: u64 = 0x7a;
const SOURCE_ROLE: u64 = 0x5c;

impl FmmEngine {
    pub fn new(kernel: KernelParams) -> Self {
        FmmEngine {
            kernel,
            thresholds: DispatchThresholds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.thresholds.validate()
    }

    /// Point representation of `node` on `side`: its own neurons when the
    /// count is below `threshold`, else one pseudo-particle per child.
    pub fn representation<V: TreeView>(
        &self,
        view: &mut V,
        node: &NodeSummary,
        side: Side,
        threshold: u64,
    ) -> Result<PointSet> {
        let mut out = PointSet::with_capacity(8);
        if node.is_leaf() || node.side(side).sum < threshold {
            gather_leaves(view, node, side, &mut out)?;
        } else {
            for c in node.children() {
                let s = view.summary(c)?;
                let agg = s.side(side);
                if let (true, Some(centroid)) = (agg.sum > 0, agg.centroid) {
                    out.push(centroid, agg.sum as f64);
                }
            }
        }
        Ok(out)
    }

    /// Attraction between an axon box and a dendrite box, clamped at zero.
    pub fn attraction<V: TreeView>(
        &self,
        view: &mut V,
        axon: &NodeSummary,
        axon_points: &PointSet,
        dendrite: &NodeSummary,
        stats: &mut DescentStats,
    ) -> Result<f64> {
        let method = dispatch_method(axon.axons.sum, dendrite.dendrites.sum, self.thresholds);
        let sources = self.representation(view, dendrite, Side::Dendrite, self.thresholds.dendrite)?;
        if sources.is_empty() || axon_points.is_empty() {
            return Ok(0.0);
        }
        let k = &self.kernel;
        let started = Instant::now();
        let field = match method {
            Method::Direct => {
                stats.direct_evaluations += 1;
                crate::expansion::direct_field(&sources, &axon_points.positions, k)
            }
            Method::Hermite => {
                stats.hermite_evaluations += 1;
                let center = dendrite.dendrites.centroid.unwrap_or_else(|| sources.centroid().unwrap_or(Vec3::ZERO));
                hermite_expand(&sources, center, k)?.evaluate(&axon_points.positions, k)
            }
            Method::Taylor => {
                stats.taylor_evaluations += 1;
                let center = axon.axons.centroid.unwrap_or_else(|| axon_points.centroid().unwrap_or(Vec3::ZERO));
                taylor_expand(&sources, center, k)?.evaluate(&axon_points.positions, k)
            }
        };
        if method != Method::Direct {
            stats.expansion_time += started.elapsed();
        }
        let total: f64 = field
            .iter()
            .zip(&axon_points.weights)
            .map(|(u, w)| w * u.max(0.0))
            .sum();
        Ok(total)
    }

    /// Attraction of `axon` towards each child of `dendrite` with vacant dendrites.
    pub fn target_weights<V: TreeView>(
        &self,
        view: &mut V,
        axon: &NodeSummary,
        dendrite: &NodeSummary,
        stats: &mut DescentStats,
    ) -> Result<Vec<(NodeSummary, f64)>> {
        let points = self.representation(view, axon, Side::Axon, self.thresholds.axon)?;
        let mut out = Vec::with_capacity(8);
        for c in dendrite.children() {
            let child = view.summary(c)?;
            if child.dendrites.sum == 0 {
                continue;
            }
            let a = self.attraction(view, axon, &points, &child, stats)?;
            out.push((child, a));
        }
        Ok(out)
    }

    /// Attraction of each child of `axon` with vacant axons towards `dendrite`.
    pub fn source_weights<V: TreeView>(
        &self,
        view: &mut V,
        dendrite: &NodeSummary,
        axon: &NodeSummary,
        stats: &mut DescentStats,
    ) -> Result<Vec<(NodeSummary, f64)>> {
        let mut out = Vec::with_capacity(8);
        for c in axon.children() {
            let child = view.summary(c)?;
            if child.axons.sum == 0 {
                continue;
            }
            let points = self.representation(view, &child, Side::Axon, self.thresholds.axon)?;
            let a = self.attraction(view, &child, &points, dendrite, stats)?;
            out.push((child, a));
        }
        Ok(out)
    }

    /// Samples a child of the inner node `dendrite` for the axons of `axon`.
    pub fn choose_target<V: TreeView, S: Sampler>(
        &self,
        view: &mut V,
        axon: &NodeSummary,
        dendrite: &NodeSummary,
        sampler: &mut S,
        stats: &mut DescentStats,
    ) -> Result<NodeSummary> {
        stats.choose_target_calls += 1;
        let options = self.target_weights(view, axon, dendrite, stats)?;
        pick(options, |s| s.dendrites.sum, pair_key(axon, dendrite, TARGET_ROLE), sampler, stats)
            .ok_or_else(|| Error::Protocol(format!("node {} has no vacant dendrites below it", dendrite.key)))
    }

    /// Samples a child of the inner node `axon` as source for `dendrite`.
    pub fn choose_source<V: TreeView, S: Sampler>(
        &self,
        view: &mut V,
        dendrite: &NodeSummary,
        axon: &NodeSummary,
        sampler: &mut S,
        stats: &mut DescentStats,
    ) -> Result<NodeSummary> {
        stats.choose_source_calls += 1;
        let options = self.source_weights(view, dendrite, axon, stats)?;
        pick(options, |s| s.axons.sum, pair_key(axon, dendrite, SOURCE_ROLE), sampler, stats)
            .ok_or_else(|| Error::Protocol(format!("node {} has no vacant axons below it", axon.key)))
    }

    /// Starting pairs for the owned subtree roots: the dendrite side is
    /// descended from `global_root` down to the subtree level.
    pub fn init_stack<V: TreeView, S: Sampler>(
        &self,
        view: &mut V,
        subtree_roots: &[NodeRef],
        global_root: NodeRef,
        sampler: &mut S,
        stats: &mut DescentStats,
    ) -> Result<Vec<NodePair>> {
        let top = view.summary(global_root)?;
        if top.dendrites.sum == 0 {
            return Ok(Vec::new());
        }
        let mut stack = Vec::new();
        for &r in subtree_roots {
            let root = view.summary(r)?;
            if root.axons.sum == 0 {
                continue;
            }
            let mut d = top;
            while d.level() < root.level() && !d.is_leaf() {
                d = self.choose_target(view, &root, &d, sampler, stats)?;
            }
            stack.push(NodePair { axon: r, dendrite: d.node });
        }
        Ok(stack)
    }

    /// Runs the pair stack to completion and returns one request per
    /// (axon leaf, dendrite leaf) pairing reached.
    pub fn find_synapses<V: TreeView, S: Sampler>(
        &self,
        view: &mut V,
        mut stack: Vec<NodePair>,
        sampler: &mut S,
        stats: &mut DescentStats,
    ) -> Result<Vec<SynapseRequest>> {
        let mut requests = Vec::new();
        while let Some(pair) = stack.pop() {
            let a = view.summary(pair.axon)?;
            let d = view.summary(pair.dendrite)?;
            if a.axons.sum == 0 || d.dendrites.sum == 0 {
                stats.dropped_pairs += 1;
                continue;
            }
            match (a.is_leaf(), d.is_leaf()) {
                (true, true) => {
                    let (Some((axon_neuron, _)), Some((dendrite_neuron, _))) = (a.neuron, d.neuron) else {
                        return Err(Error::Protocol(format!("leaf {} or {} carries no neuron", a.key, d.key)));
                    };
                    stats.requests += 1;
                    requests.push(SynapseRequest {
                        axon_neuron,
                        dendrite_neuron,
                        count: a.axons.sum,
                    });
                }
                (false, _) => {
                    for c in a.children() {
                        let child = view.summary(c)?;
                        if child.axons.sum == 0 {
                            continue;
                        }
                        let target = if d.is_leaf() {
                            d
                        } else {
                            self.choose_target(view, &child, &d, sampler, stats)?
                        };
                        stack.push(NodePair { axon: c, dendrite: target.node });
                    }
                }
                (true, false) => {
                    let target = self.choose_target(view, &a, &d, sampler, stats)?;
                    stack.push(NodePair { axon: a.node, dendrite: target.node });
                }
            }
        }
        Ok(requests)
    }
}

fn pair_key(axon: &NodeSummary, dendrite: &NodeSummary, role: u64) -> [u64; 5] {
    let [a0, a1] = split_u128(axon.key.0);
    let [d0, d1] = split_u128(dendrite.key.0);
    [a0, a1, d0, d1, role]
}

fn pick<S: Sampler>(
    options: Vec<(NodeSummary, f64)>,
    count: impl Fn(&NodeSummary) -> u64,
    key: [u64; 5],
    sampler: &mut S,
    stats: &mut DescentStats,
) -> Option<NodeSummary> {
    if options.is_empty() {
        return None;
    }
    let mut weights: Vec<f64> = options.iter().map(|(_, w)| *w).collect();
    if !weights.iter().any(|w| *w > 0.0 && w.is_finite()) {
        stats.underflow_fallbacks += 1;
        weights = options.iter().map(|(s, _)| count(s) as f64).collect();
    }
    Some(options[sampler.pick(&key, &weights)].0)
}

fn gather_leaves<V: TreeView>(view: &mut V, node: &NodeSummary, side: Side, out: &mut PointSet) -> Result<()> {
    if node.side(side).sum == 0 {
        return Ok(());
    }
    if let Some((_, position)) = node.neuron {
        out.push(position, node.side(side).sum as f64);
        return Ok(());
    }
    for c in node.children() {
        let child = view.summary(c)?;
        gather_leaves(view, &child, side, out)?;
    }
    Ok(())
}

/// Accepts requests per dendrite neuron up to its vacancy.
///
/// When a neuron is oversubscribed, a uniformly random sub-multiset of the
/// requested units is accepted, so a request may be granted in part.
pub fn resolve_conflicts(
    requests: &[SynapseRequest],
    vacancy: impl Fn(NeuronId) -> u64,
    seed: u64,
    update: u64,
) -> Vec<SynapseResponse> {
    let mut by_dendrite: BTreeMap<NeuronId, Vec<SynapseRequest>> = BTreeMap::new();
    for r in requests {
        by_dendrite.entry(r.dendrite_neuron).or_default().push(*r);
    }
    let mut out = Vec::with_capacity(requests.len());
    for (dendrite, mut group) in by_dendrite {
        group.sort_unstable();
        let free = vacancy(dendrite);
        let asked: u64 = group.iter().map(|r| r.count).sum();
        let mut accepted = vec![0u64; group.len()];
        if asked <= free {
            for (a, r) in accepted.iter_mut().zip(&group) {
                *a = r.count;
            }
        } else if free > 0 {
            let mut units: Vec<usize> = group
                .iter()
                .enumerate()
                .flat_map(|(i, r)| std::iter::repeat(i).take(r.count as usize))
                .collect();
            let mut rng = keyed_rng(seed, Stream::Conflict, &[update, dendrite]);
            let (chosen, _) = units.partial_shuffle(&mut rng, free as usize);
            for &i in chosen.iter() {
                accepted[i] += 1;
            }
        }
        out.extend(group.iter().zip(accepted).map(|(r, a)| SynapseResponse {
            axon_neuron: r.axon_neuron,
            dendrite_neuron: r.dendrite_neuron,
            requested: r.count,
            accepted: a,
        }));
    }
    out
}
