//! Reference engines: exact all-pairs selection and a Barnes–Hut style
//! point-to-box descent in which every vacant axon chooses on its own.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::expansion::KernelParams;
use crate::model::NeuronId;
use crate::octree::{LeafInput, NodeRef, NodeSummary, TreeView};
use crate::rng::{keyed_rng, split_u128, Stream};
use crate::sampling::Sampler;
use crate::connectivity::SynapseRequest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EngineKind {
    Direct,
    BarnesHut,
    Fmm,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Direct => "direct",
            EngineKind::BarnesHut => "barnes_hut",
            EngineKind::Fmm => "fmm",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "direct" => Ok(EngineKind::Direct),
            "barnes_hut" => Ok(EngineKind::BarnesHut),
            "fmm" => Ok(EngineKind::Fmm),
            other => Err(Error::invalid(
                "engine",
                format!("unknown engine {other:?}; expected direct, barnes_hut or fmm"),
            )),
        }
    }
}

pub const DEFAULT_THETA: f64 = 0.3;

/// Exact selection: every vacant axon of every neuron in `axons` picks a
/// dendrite neuron from `dendrites` with probability proportional to
/// `vacant_dendrites * kernel`. Quadratic in the neuron count.
pub fn direct_engine(
    axons: &[LeafInput],
    dendrites: &[LeafInput],
    kernel: &KernelParams,
    seed: u64,
    update: u64,
) -> Vec<SynapseRequest> {
    let candidates: Vec<&LeafInput> = dendrites.iter().filter(|d| d.vacant_dendrites > 0).collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut cumulative = vec![0.0; candidates.len()];
    let mut out = Vec::new();
    for a in axons.iter().filter(|a| a.vacant_axons > 0) {
        let mut total = 0.0;
        for (c, d) in cumulative.iter_mut().zip(&candidates) {
            total += d.vacant_dendrites as f64 * kernel.kernel(a.position, d.position);
            *c = total;
        }
        let underflow = !(total > 0.0);
        if underflow {
            total = 0.0;
            for (c, d) in cumulative.iter_mut().zip(&candidates) {
                total += d.vacant_dendrites as f64;
                *c = total;
            }
        }
        let mut rng = keyed_rng(seed, Stream::Direct, &[update, a.id]);
        let mut chosen: BTreeMap<NeuronId, u64> = BTreeMap::new();
        for _ in 0..a.vacant_axons {
            let goal = rng.gen::<f64>() * total;
            let i = cumulative.partition_point(|&c| c <= goal).min(candidates.len() - 1);
            *chosen.entry(candidates[i].id).or_default() += 1;
        }
        out.extend(chosen.into_iter().map(|(d, count)| SynapseRequest {
            axon_neuron: a.id,
            dendrite_neuron: d,
            count,
        }));
    }
    out
}

/// Selection probabilities of [`direct_engine`] for one axon position.
pub fn direct_probabilities(axon: &LeafInput, dendrites: &[LeafInput], kernel: &KernelParams) -> Vec<(NeuronId, f64)> {
    let w: Vec<(NeuronId, f64)> = dendrites
        .iter()
        .filter(|d| d.vacant_dendrites > 0)
        .map(|d| (d.id, d.vacant_dendrites as f64 * kernel.kernel(axon.position, d.position)))
        .collect();
    let total: f64 = w.iter().map(|x| x.1).sum();
    w.into_iter().map(|(id, x)| (id, x / total)).collect()
}

/// Barnes–Hut style engine over any [`TreeView`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarnesHutEngine {
    pub kernel: KernelParams,
    /// Opening parameter: a box is used whole when `side / distance < theta`.
    pub theta: f64,
}

impl BarnesHutEngine {
    pub fn new(kernel: KernelParams) -> Self {
        BarnesHutEngine {
            kernel,
            theta: DEFAULT_THETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.theta >= 0.0) || !self.theta.is_finite() {
            return Err(Error::invalid("theta", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Requests for every vacant axon of the given neurons. Each axon descends
    /// from `root` on its own, so two axons of one neuron may end up apart.
    pub fn requests<V: TreeView, S: Sampler>(
        &self,
        view: &mut V,
        root: NodeRef,
        axons: &[LeafInput],
        sampler: &mut S,
    ) -> Result<Vec<SynapseRequest>> {
        let top = view.summary(root)?;
        if top.dendrites.sum == 0 {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for a in axons.iter().filter(|a| a.vacant_axons > 0) {
            let mut chosen: BTreeMap<NeuronId, u64> = BTreeMap::new();
            for unit in 0..a.vacant_axons {
                let d = self.select(view, &top, a, unit, sampler)?;
                *chosen.entry(d).or_default() += 1;
            }
            out.extend(chosen.into_iter().map(|(d, count)| SynapseRequest {
                axon_neuron: a.id,
                dendrite_neuron: d,
                count,
            }));
        }
        Ok(out)
    }

    /// One axon's descent to a dendrite leaf.
    pub fn select<V: TreeView, S: Sampler>(
        &self,
        view: &mut V,
        root: &NodeSummary,
        axon: &LeafInput,
        unit: u64,
        sampler: &mut S,
    ) -> Result<NeuronId> {
        let mut node = *root;
        let mut attractors = Vec::new();
        loop {
            if let Some((id, _)) = node.neuron {
                return Ok(id);
            }
            attractors.clear();
            self.open(view, &node, axon, &mut attractors)?;
            if attractors.is_empty() {
                return Err(Error::Protocol(format!("node {} has no vacant dendrites below it", node.key)));
            }
            let mut weights: Vec<f64> = attractors
                .iter()
                .map(|s: &NodeSummary| {
                    let c = s.dendrites.centroid.unwrap_or(s.cell.center());
                    s.dendrites.sum as f64 * self.kernel.kernel(axon.position, c)
                })
                .collect();
            if !weights.iter().any(|w| *w > 0.0) {
                weights = attractors.iter().map(|s| s.dendrites.sum as f64).collect();
            }
            let [k0, k1] = split_u128(node.key.0);
            node = attractors[sampler.pick(&[axon.id, unit, k0, k1], &weights)];
        }
    }

    /// Collects the attractors below the inner node `node`: children that are
    /// leaves or far enough away, opening the rest recursively.
    fn open<V: TreeView>(
        &self,
        view: &mut V,
        node: &NodeSummary,
        axon: &LeafInput,
        out: &mut Vec<NodeSummary>,
    ) -> Result<()> {
        for c in node.children() {
            let child = view.summary(c)?;
            if child.dendrites.sum == 0 {
                continue;
            }
            let centroid = child.dendrites.centroid.unwrap_or(child.cell.center());
            let dist = axon.position.distance_squared(centroid).sqrt();
            if child.is_leaf() || child.cell.side < self.theta * dist {
                out.push(child);
            } else {
                self.open(view, &child, axon, out)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Cell, Vec3};
    use crate::octree::Octree;
    use crate::sampling::RngSampler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf(id: u64, p: [f64; 3], va: u64, vd: u64) -> LeafInput {
        LeafInput {
            id,
            position: Vec3(p),
            vacant_axons: va,
            vacant_dendrites: vd,
        }
    }

    #[test]
    fn engine_names_round_trip() {
        for e in [EngineKind::Direct, EngineKind::BarnesHut, EngineKind::Fmm] {
            assert_eq!(e.name().parse::<EngineKind>().unwrap(), e);
        }
        assert!("fast".parse::<EngineKind>().is_err());
    }

    #[test]
    fn direct_single_pair() {
        let ns = [leaf(0, [0.0; 3], 1, 0), leaf(1, [5.0, 0.0, 0.0], 0, 1)];
        let k = KernelParams::new(750.0);
        let r = direct_engine(&ns, &ns, &k, 1, 0);
        assert_eq!(r, vec![SynapseRequest { axon_neuron: 0, dendrite_neuron: 1, count: 1 }]);
        assert!(direct_engine(&ns[..1], &ns[..1], &k, 1, 0).is_empty());
    }

    #[test]
    fn direct_equidistant_is_fair() {
        let ns = [
            leaf(0, [0.0; 3], 1, 0),
            leaf(1, [100.0, 0.0, 0.0], 0, 1),
            leaf(2, [-100.0, 0.0, 0.0], 0, 1),
        ];
        let k = KernelParams::new(750.0);
        let draws = 10_000;
        let ones = (0..draws)
            .filter(|&u| direct_engine(&ns, &ns, &k, 9, u)[0].dendrite_neuron == 1)
            .count() as f64;
        let sd = (draws as f64 * 0.25).sqrt();
        assert!((ones - draws as f64 / 2.0).abs() < 3.0 * sd, "{ones}");
    }

    #[test]
    fn direct_distance_ratio() {
        let s = 750.0;
        let ns = [
            leaf(0, [0.0; 3], 1, 0),
            leaf(1, [s, 0.0, 0.0], 0, 1),
            leaf(2, [0.0, 2.0 * s, 0.0], 0, 1),
        ];
        let k = KernelParams::new(s);
        let p = direct_probabilities(&ns[0], &ns, &k);
        assert!((p[0].1 - 0.953).abs() < 1e-3 && (p[1].1 - 0.047).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn barnes_hut_axons_choose_independently() {
        let ns = [
            leaf(0, [50.0, 50.0, 50.0], 40, 0),
            leaf(1, [10.0, 10.0, 10.0], 0, 40),
            leaf(2, [90.0, 90.0, 90.0], 0, 40),
        ];
        let tree = Octree::build(&ns, Cell::cube(100.0)).unwrap();
        let bh = BarnesHutEngine::new(KernelParams::new(750.0));
        let mut s = RngSampler(ChaCha8Rng::seed_from_u64(4));
        let r = bh.requests(&mut tree.view(), tree.root_ref(), &ns[..1], &mut s).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.iter().map(|x| x.count).sum::<u64>(), 40);
    }
}
