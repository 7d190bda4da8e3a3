//! Spatial octree with per-side vacancy sums and centroids.
//!
//! Every node carries two [`Aggregate`]s, one for vacant axons and one for
//! vacant dendrites. Leaves hold at most one neuron. Nodes live in an arena
//! and are addressed globally by [`NodeRef`], which names the owning rank so
//! that the same descent code runs on one process or across logical ranks.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{Cell, Vec3};
use crate::model::{NeuronId, Side};

/// Deepest level a leaf may sit on before two neurons count as inseparable.
pub const MAX_LEVEL: u32 = 40;

/// Morton key with a leading sentinel bit: the root is `1` and a child
/// appends its three octant bits. Keys depend only on geometry, so they name
/// the same cell whatever the rank layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeKey(pub u128);

impl NodeKey {
    pub const ROOT: NodeKey = NodeKey(1);

    pub fn child(self, octant: usize) -> NodeKey {
        debug_assert!(octant < 8);
        NodeKey((self.0 << 3) | octant as u128)
    }

    pub fn level(self) -> u32 {
        (127 - self.0.leading_zeros()) / 3
    }

    pub fn parent(self) -> Option<NodeKey> {
        (self.level() > 0).then_some(NodeKey(self.0 >> 3))
    }

    /// Key of the level-`level` ancestor (or `self` if already that shallow).
    pub fn ancestor_at(self, level: u32) -> NodeKey {
        let own = self.level();
        if level >= own {
            self
        } else {
            NodeKey(self.0 >> (3 * (own - level)))
        }
    }

    /// Cell addressed by this key inside `domain`.
    pub fn cell(self, domain: Cell) -> Cell {
        let level = self.level();
        (0..level).rev().fold(domain, |cell, l| {
            cell.child(((self.0 >> (3 * l)) & 7) as usize)
        })
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{:#o}", self.level(), self.0)
    }
}

/// Vacant-element total below a node and its weighted mean position.
/// The centroid is `None` exactly when `sum == 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Aggregate {
    pub sum: u64,
    pub centroid: Option<Vec3>,
}

impl Aggregate {
    pub fn point(position: Vec3, weight: u64) -> Self {
        Aggregate {
            sum: weight,
            centroid: (weight > 0).then_some(position),
        }
    }

    /// Weighted combination; the iteration order fixes the rounding.
    pub fn combine<'a>(parts: impl IntoIterator<Item = &'a Aggregate>) -> Self {
        let mut sum = 0u64;
        let mut acc = Vec3::ZERO;
        for part in parts {
            if let Some(c) = part.centroid {
                sum += part.sum;
                acc += c * part.sum as f64;
            }
        }
        Aggregate {
            sum,
            centroid: (sum > 0).then(|| acc / sum as f64),
        }
    }
}

/// Input record for one neuron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafInput {
    pub id: NeuronId,
    pub position: Vec3,
    pub vacant_axons: u64,
    pub vacant_dendrites: u64,
}

/// Global address of a node: owning rank plus arena index on that rank.
/// Nodes of the replicated upper tree use [`NodeRef::TOP_RANK`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub rank: u32,
    pub index: u32,
}

impl NodeRef {
    pub const TOP_RANK: u32 = u32::MAX;

    pub fn new(rank: u32, index: u32) -> Self {
        NodeRef { rank, index }
    }

    pub fn top(index: u32) -> Self {
        NodeRef::new(Self::TOP_RANK, index)
    }

    pub fn is_top(self) -> bool {
        self.rank == Self::TOP_RANK
    }
}

/// Everything a descent needs to know about one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSummary {
    pub node: NodeRef,
    pub key: NodeKey,
    pub cell: Cell,
    pub axons: Aggregate,
    pub dendrites: Aggregate,
    /// Leaf payload.
    pub neuron: Option<(NeuronId, Vec3)>,
    pub children: [Option<NodeRef>; 8],
}

impl NodeSummary {
    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(Option::is_none)
    }

    pub fn level(&self) -> u32 {
        self.key.level()
    }

    pub fn side(&self, side: Side) -> &Aggregate {
        match side {
            Side::Axon => &self.axons,
            Side::Dendrite => &self.dendrites,
        }
    }

    pub fn children(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.children.iter().flatten().copied()
    }
}

/// Read access to a (possibly distributed) tree.
pub trait TreeView {
    fn summary(&mut self, node: NodeRef) -> Result<NodeSummary>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct OctreeNode {
    pub cell: Cell,
    pub key: NodeKey,
    pub parent: Option<u32>,
    pub children: [Option<u32>; 8],
    pub neuron: Option<(NeuronId, Vec3)>,
    pub axons: Aggregate,
    pub dendrites: Aggregate,
}

impl OctreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(Option::is_none)
    }

    pub fn level(&self) -> u32 {
        self.key.level()
    }

    pub fn side(&self, side: Side) -> &Aggregate {
        match side {
            Side::Axon => &self.axons,
            Side::Dendrite => &self.dendrites,
        }
    }
}

/// Arena octree with one or more roots. A single-process tree has one root
/// covering the domain; a rank's local forest has one root per owned subtree.
#[derive(Clone, Debug)]
pub struct Octree {
    owner: u32,
    nodes: Vec<OctreeNode>,
    roots: Vec<u32>,
    leaves: HashMap<NeuronId, u32>,
}

impl Octree {
    /// Builds the tree over `domain`. Rejects positions outside the domain and
    /// duplicate positions.
    pub fn build(neurons: &[LeafInput], domain: Cell) -> Result<Octree> {
        Octree::build_forest(&[(NodeKey::ROOT, domain)], neurons, 0)
    }

    /// Builds one subtree per `(key, cell)` slot. Every neuron must fall into
    /// one of the slots.
    pub fn build_forest(slots: &[(NodeKey, Cell)], neurons: &[LeafInput], owner: u32) -> Result<Octree> {
        reject_duplicates(neurons)?;
        let mut buckets: Vec<Vec<LeafInput>> = vec![Vec::new(); slots.len()];
        for n in neurons {
            let slot = slots
                .iter()
                .position(|(_, cell)| cell.contains(n.position))
                .ok_or(Error::OutsideDomain {
                    id: n.id,
                    position: n.position,
                })?;
            buckets[slot].push(*n);
        }
        let mut tree = Octree {
            owner,
            nodes: Vec::with_capacity(2 * neurons.len() + slots.len()),
            roots: Vec::with_capacity(slots.len()),
            leaves: HashMap::with_capacity(neurons.len()),
        };
        for ((key, cell), mut items) in slots.iter().zip(buckets) {
            let root = tree.build_node(&mut items, *cell, *key, None)?;
            tree.roots.push(root);
        }
        Ok(tree)
    }

    fn build_node(
        &mut self,
        items: &mut [LeafInput],
        cell: Cell,
        key: NodeKey,
        parent: Option<u32>,
    ) -> Result<u32> {
        let idx = self.nodes.len() as u32;
        self.nodes.push(OctreeNode {
            cell,
            key,
            parent,
            children: [None; 8],
            neuron: None,
            axons: Aggregate::default(),
            dendrites: Aggregate::default(),
        });
        match items {
            [] => {}
            [single] => {
                let node = &mut self.nodes[idx as usize];
                node.neuron = Some((single.id, single.position));
                node.axons = Aggregate::point(single.position, single.vacant_axons);
                node.dendrites = Aggregate::point(single.position, single.vacant_dendrites);
                self.leaves.insert(single.id, idx);
            }
            _ => {
                if key.level() >= MAX_LEVEL {
                    return Err(Error::TooDeep {
                        first: items[0].id,
                        second: items[1].id,
                        max_level: MAX_LEVEL,
                    });
                }
                items.sort_by_key(|n| cell.octant(n.position));
                let mut start = 0;
                while start < items.len() {
                    let octant = cell.octant(items[start].position);
                    let end = start
                        + items[start..]
                            .iter()
                            .take_while(|n| cell.octant(n.position) == octant)
                            .count();
                    let child = self.build_node(
                        &mut items[start..end],
                        cell.child(octant),
                        key.child(octant),
                        Some(idx),
                    )?;
                    self.nodes[idx as usize].children[octant] = Some(child);
                    start = end;
                }
                self.recompute(idx);
            }
        }
        Ok(idx)
    }

    fn recompute(&mut self, idx: u32) {
        let node = &self.nodes[idx as usize];
        if node.is_leaf() {
            return;
        }
        let kids: Vec<&OctreeNode> = node
            .children
            .iter()
            .flatten()
            .map(|&c| &self.nodes[c as usize])
            .collect();
        let axons = Aggregate::combine(kids.iter().map(|k| &k.axons));
        let dendrites = Aggregate::combine(kids.iter().map(|k| &k.dendrites));
        let node = &mut self.nodes[idx as usize];
        node.axons = axons;
        node.dendrites = dendrites;
    }

    /// Replaces the vacancies of the listed neurons and restores every
    /// ancestor aggregate. The tree shape is unchanged.
    pub fn refresh_sums<I>(&mut self, updated: I) -> Result<()>
    where
        I: IntoIterator<Item = (NeuronId, (u64, u64))>,
    {
        let updated: Vec<_> = updated.into_iter().collect();
        let mut leaves = Vec::with_capacity(updated.len());
        for (id, _) in &updated {
            leaves.push(*self.leaves.get(id).ok_or(Error::UnknownNeuron(*id))?);
        }
        let mut dirty = Vec::new();
        for (&leaf, (_, (va, vd))) in leaves.iter().zip(&updated) {
            let node = &mut self.nodes[leaf as usize];
            let (_, pos) = node.neuron.expect("leaf map points at a leaf");
            let axons = Aggregate::point(pos, *va);
            let dendrites = Aggregate::point(pos, *vd);
            if node.axons == axons && node.dendrites == dendrites {
                continue;
            }
            node.axons = axons;
            node.dendrites = dendrites;
            let mut p = node.parent;
            while let Some(i) = p {
                dirty.push(i);
                p = self.nodes[i as usize].parent;
            }
        }
        dirty.sort_unstable_by_key(|&i| std::cmp::Reverse((self.nodes[i as usize].level(), i)));
        dirty.dedup();
        for i in dirty {
            self.recompute(i);
        }
        Ok(())
    }

    pub fn owner(&self) -> u32 {
        self.owner
    }

    pub fn nodes(&self) -> &[OctreeNode] {
        &self.nodes
    }

    pub fn node(&self, idx: u32) -> &OctreeNode {
        &self.nodes[idx as usize]
    }

    pub fn roots(&self) -> &[u32] {
        &self.roots
    }

    pub fn root(&self) -> u32 {
        self.roots[0]
    }

    pub fn root_ref(&self) -> NodeRef {
        NodeRef::new(self.owner, self.root())
    }

    pub fn leaf_of(&self, id: NeuronId) -> Option<u32> {
        self.leaves.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn summary_of(&self, idx: u32) -> NodeSummary {
        let node = &self.nodes[idx as usize];
        let mut children = [None; 8];
        for (slot, c) in children.iter_mut().zip(node.children) {
            *slot = c.map(|c| NodeRef::new(self.owner, c));
        }
        NodeSummary {
            node: NodeRef::new(self.owner, idx),
            key: node.key,
            cell: node.cell,
            axons: node.axons,
            dendrites: node.dendrites,
            neuron: node.neuron,
            children,
        }
    }

    pub fn view(&self) -> LocalView<'_> {
        LocalView { tree: self }
    }
}

fn reject_duplicates(neurons: &[LeafInput]) -> Result<()> {
    let mut order: Vec<usize> = (0..neurons.len()).collect();
    let bits = |i: usize| neurons[i].position.0.map(f64::to_bits);
    order.sort_unstable_by_key(|&i| bits(i));
    for w in order.windows(2) {
        if neurons[w[0]].position == neurons[w[1]].position {
            return Err(Error::DuplicatePosition {
                first: neurons[w[0]].id.min(neurons[w[1]].id),
                second: neurons[w[0]].id.max(neurons[w[1]].id),
                position: neurons[w[0]].position,
            });
        }
    }
    Ok(())
}

/// [`TreeView`] over a tree held entirely in this process.
#[derive(Clone, Copy)]
pub struct LocalView<'a> {
    tree: &'a Octree,
}

impl TreeView for LocalView<'_> {
    fn summary(&mut self, node: NodeRef) -> Result<NodeSummary> {
        if node.rank != self.tree.owner || node.index as usize >= self.tree.nodes.len() {
            return Err(Error::Protocol(format!("node {node:?} is not part of this tree")));
        }
        Ok(self.tree.summary_of(node.index))
    }
}

/// Assignment of the level-`level` cells ("slots") of the domain to ranks.
///
/// `level` is the smallest `L` with `8^L >= ranks`; slots are handed out in
/// contiguous Morton-order blocks, so with two ranks each owns four octants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition {
    pub domain: Cell,
    pub ranks: u32,
    pub level: u32,
}

impl Decomposition {
    pub fn new(domain: Cell, ranks: u32) -> Result<Self> {
        if ranks == 0 {
            return Err(Error::invalid("ranks", "need at least one rank"));
        }
        let mut level = 0;
        while 8u64.pow(level) < u64::from(ranks) {
            level += 1;
        }
        Ok(Decomposition { domain, ranks, level })
    }

    pub fn slot_count(&self) -> usize {
        8usize.pow(self.level)
    }

    pub fn slot_key(&self, slot: usize) -> NodeKey {
        NodeKey((1u128 << (3 * self.level)) | slot as u128)
    }

    pub fn slot_cell(&self, slot: usize) -> Cell {
        self.slot_key(slot).cell(self.domain)
    }

    pub fn owner_of_slot(&self, slot: usize) -> u32 {
        (slot as u64 * u64::from(self.ranks) / self.slot_count() as u64) as u32
    }

    pub fn slots_of(&self, rank: u32) -> impl Iterator<Item = usize> + '_ {
        (0..self.slot_count()).filter(move |&s| self.owner_of_slot(s) == rank)
    }

    pub fn slot_of_point(&self, p: Vec3) -> usize {
        let mut cell = self.domain;
        let mut slot = 0usize;
        for _ in 0..self.level {
            let o = cell.octant(p);
            slot = (slot << 3) | o;
            cell = cell.child(o);
        }
        slot
    }

    pub fn owner_of_point(&self, p: Vec3) -> u32 {
        self.owner_of_slot(self.slot_of_point(p))
    }
}

/// Branch-node summaries of every subtree, gathered from all ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchSet {
    pub decomposition: Decomposition,
    pub branches: Vec<NodeSummary>,
}

/// Node of the replicated upper tree (levels `0..L`).
#[derive(Clone, Debug, PartialEq)]
pub struct TopNode {
    pub key: NodeKey,
    pub cell: Cell,
    pub children: [Option<NodeRef>; 8],
    pub axons: Aggregate,
    pub dendrites: Aggregate,
}

/// Upper portion of the tree shared by all ranks. Its lowest level refers to
/// the branch nodes, whose summaries are kept alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedTop {
    level: u32,
    nodes: Vec<TopNode>,
    root: NodeRef,
    branches: HashMap<NodeRef, NodeSummary>,
    branch_order: Vec<NodeRef>,
}

/// Assembles the upper tree from the exchanged branch summaries.
pub fn shared_top(set: &BranchSet) -> Result<SharedTop> {
    let dec = set.decomposition;
    let by_key: HashMap<NodeKey, &NodeSummary> = set.branches.iter().map(|b| (b.key, b)).collect();
    let mut slots = Vec::with_capacity(dec.slot_count());
    for slot in 0..dec.slot_count() {
        let key = dec.slot_key(slot);
        let rank = dec.owner_of_slot(slot);
        match by_key.get(&key) {
            Some(b) if b.node.rank == rank => slots.push(**b),
            _ => return Err(Error::MissingBranch { rank, key }),
        }
    }
    let mut top = SharedTop {
        level: dec.level,
        nodes: Vec::new(),
        root: slots[0].node,
        branches: slots.iter().map(|b| (b.node, *b)).collect(),
        branch_order: slots.iter().map(|b| b.node).collect(),
    };
    if dec.level > 0 {
        top.root = NodeRef::top(top.build(&slots, dec.domain, NodeKey::ROOT, 0));
    }
    Ok(top)
}

impl SharedTop {
    fn build(&mut self, slots: &[NodeSummary], cell: Cell, key: NodeKey, first_slot: usize) -> u32 {
        let idx = self.nodes.len() as u32;
        self.nodes.push(TopNode {
            key,
            cell,
            children: [None; 8],
            axons: Aggregate::default(),
            dendrites: Aggregate::default(),
        });
        let below = 8usize.pow(self.level - key.level() - 1);
        let mut children = [None; 8];
        let mut parts = Vec::with_capacity(8);
        for (octant, child) in children.iter_mut().enumerate() {
            let slot = first_slot + octant * below;
            if key.level() + 1 == self.level {
                let b = &slots[slot];
                if b.neuron.is_some() || !b.is_leaf() {
                    *child = Some(b.node);
                    parts.push((b.axons, b.dendrites));
                }
            } else {
                let c = self.build(slots, cell.child(octant), key.child(octant), slot);
                let n = &self.nodes[c as usize];
                if n.children.iter().any(Option::is_some) {
                    *child = Some(NodeRef::top(c));
                    parts.push((n.axons, n.dendrites));
                }
            }
        }
        let node = &mut self.nodes[idx as usize];
        node.children = children;
        node.axons = Aggregate::combine(parts.iter().map(|p| &p.0));
        node.dendrites = Aggregate::combine(parts.iter().map(|p| &p.1));
        idx
    }

    pub fn root(&self) -> NodeRef {
        self.root
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn nodes(&self) -> &[TopNode] {
        &self.nodes
    }

    /// Branch summaries in slot order.
    pub fn branches(&self) -> impl Iterator<Item = &NodeSummary> {
        self.branch_order.iter().map(|r| &self.branches[r])
    }

    /// Summary of a top node or a branch node, if this tree knows it.
    pub fn summary(&self, node: NodeRef) -> Option<NodeSummary> {
        if node.is_top() {
            let n = self.nodes.get(node.index as usize)?;
            Some(NodeSummary {
                node,
                key: n.key,
                cell: n.cell,
                axons: n.axons,
                dendrites: n.dendrites,
                neuron: None,
                children: n.children,
            })
        } else {
            self.branches.get(&node).copied()
        }
    }
}
