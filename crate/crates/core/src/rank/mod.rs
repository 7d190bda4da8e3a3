//! Logical ranks: subtree ownership, branch exchange, lazy remote node
//! fetches with a per-update cache, and routing of synapse traffic.
//!
//! Every rank is a sequential state machine. A connectivity update is a fixed
//! list of phases separated by barriers; the only channel between ranks is
//! the [`Transport`], whose messages are encoded with [`wire`].

pub mod wire;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::SeedableRng;

use crate::baseline::{direct_engine, BarnesHutEngine, EngineKind};
use crate::connectivity::{resolve_conflicts, DescentStats, FmmEngine, SynapseRequest, SynapseResponse};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{Deletion, NeuronId, NeuronState, Side};
use crate::octree::{
    shared_top, BranchSet, Decomposition, LeafInput, NodeRef, NodeSummary, Octree, SharedTop, TreeView,
};
use crate::rng::{keyed_rng, stream_id, Stream};
use crate::sampling::KeyedSampler;
pub use wire::{Message, MessageKind};

pub type RankId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchedulerMode {
    /// Ranks run one after another within each phase, in rank order.
    Serial,
    /// One thread per rank, phases separated by a barrier.
    Concurrent,
}

impl FromStr for SchedulerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "serial" => Ok(SchedulerMode::Serial),
            "concurrent" => Ok(SchedulerMode::Concurrent),
            other => Err(Error::invalid("scheduler", format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for SchedulerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerMode::Serial => "serial",
            SchedulerMode::Concurrent => "concurrent",
        })
    }
}

/// Message and byte counts per kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub messages: [u64; 6],
    pub bytes: u64,
}

impl Traffic {
    pub fn count(&self, kind: MessageKind) -> u64 {
        self.messages[kind as usize]
    }

    pub fn total(&self) -> u64 {
        self.messages.iter().sum()
    }
}

/// In-process mailboxes, one FIFO per ordered (sender, receiver) pair.
pub struct Transport {
    ranks: u32,
    boxes: Vec<Mutex<VecDeque<Vec<u8>>>>,
    messages: [AtomicU64; 6],
    bytes: AtomicU64,
}

impl Transport {
    pub fn new(ranks: u32) -> Self {
        Transport {
            ranks,
            boxes: (0..ranks * ranks).map(|_| Mutex::new(VecDeque::new())).collect(),
            messages: Default::default(),
            bytes: AtomicU64::new(0),
        }
    }

    pub fn ranks(&self) -> u32 {
        self.ranks
    }

    fn slot(&self, sender: RankId, receiver: RankId) -> Result<usize> {
        for r in [sender, receiver] {
            if r >= self.ranks {
                return Err(Error::MissingRank { rank: r });
            }
        }
        Ok((receiver * self.ranks + sender) as usize)
    }

    fn record(&self, kind: MessageKind, len: usize) {
        self.messages[kind as usize].fetch_add(1, Ordering::Relaxed);
        self.bytes.fetch_add(len as u64, Ordering::Relaxed);
    }

    pub fn send(&self, msg: &Message) -> Result<()> {
        let slot = self.slot(msg.sender, msg.receiver)?;
        let bytes = msg.encode();
        self.record(msg.kind, bytes.len());
        self.boxes[slot].lock().expect("mailbox poisoned").push_back(bytes);
        Ok(())
    }

    /// Everything queued for `receiver`, by sender and then in send order.
    pub fn receive_all(&self, receiver: RankId) -> Result<Vec<Message>> {
        let mut out = Vec::new();
        for sender in 0..self.ranks {
            let slot = self.slot(sender, receiver)?;
            let queued: Vec<Vec<u8>> = self.boxes[slot].lock().expect("mailbox poisoned").drain(..).collect();
            for bytes in queued {
                let msg = Message::decode(&bytes)?;
                if msg.receiver != receiver || msg.sender != sender {
                    return Err(Error::Protocol(format!(
                        "message from {} to {} found in mailbox {sender}->{receiver}",
                        msg.sender, msg.receiver
                    )));
                }
                out.push(msg);
            }
        }
        Ok(out)
    }

    pub fn is_idle(&self) -> bool {
        self.boxes.iter().all(|b| b.lock().expect("mailbox poisoned").is_empty())
    }

    pub fn traffic(&self) -> Traffic {
        let mut t = Traffic::default();
        for (i, m) in self.messages.iter().enumerate() {
            t.messages[i] = m.load(Ordering::Relaxed);
        }
        t.bytes = self.bytes.load(Ordering::Relaxed);
        t
    }
}

/// Remote node summaries fetched during the current connectivity update.
#[derive(Clone, Debug, Default)]
pub struct RemoteNodeCache {
    entries: HashMap<NodeRef, NodeSummary>,
    fetches: HashMap<NodeRef, u32>,
}

impl RemoteNodeCache {
    pub fn clear(&mut self) {
        self.entries.clear();
        self.fetches.clear();
    }

    pub fn get(&self, node: NodeRef) -> Option<&NodeSummary> {
        self.entries.get(&node)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Round trips made since the last clear.
    pub fn fetches(&self) -> u64 {
        self.fetches.values().map(|&c| u64::from(c)).sum()
    }

    /// Largest number of round trips made for one node since the last clear.
    pub fn max_fetches_per_node(&self) -> u32 {
        self.fetches.values().copied().max().unwrap_or(0)
    }
}

/// Engine selection and randomness shared by all ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityConfig {
    pub engine: EngineKind,
    pub fmm: FmmEngine,
    pub barnes_hut: BarnesHutEngine,
    pub seed: u64,
    pub allow_self_connections: bool,
}

/// State visible to every rank.
pub struct Shared {
    pub decomposition: Decomposition,
    pub config: ConnectivityConfig,
    pub transport: Transport,
    /// Owner of each neuron id.
    directory: Vec<RankId>,
    /// Each rank's published subtrees, read by remote fetches.
    windows: Vec<RwLock<Arc<Octree>>>,
    /// Each rank's current vacancies, read by the all-pairs engine.
    snapshots: Vec<RwLock<Vec<LeafInput>>>,
}

impl Shared {
    pub fn owner_of(&self, id: NeuronId) -> Result<RankId> {
        self.directory.get(id as usize).copied().ok_or(Error::UnknownNeuron(id))
    }

    pub fn ranks(&self) -> u32 {
        self.decomposition.ranks
    }

    /// One request/reply round trip served from the owner's published window.
    pub fn fetch(&self, requester: RankId, node: NodeRef) -> Result<NodeSummary> {
        let request = Message::new(MessageKind::NodeFetchRequest, requester, node.rank, &[node]);
        let bytes = request.encode();
        self.transport.record(request.kind, bytes.len());

        let request = Message::decode(&bytes)?;
        let wanted: Vec<NodeRef> = request.records()?;
        let window = self
            .windows
            .get(request.receiver as usize)
            .ok_or(Error::MissingRank { rank: request.receiver })?
            .read()
            .expect("window poisoned");
        let summaries = wanted
            .iter()
            .map(|r| {
                if r.rank != window.owner() || r.index as usize >= window.nodes().len() {
                    Err(Error::Protocol(format!("rank {} has no node {}", request.receiver, r.index)))
                } else {
                    Ok(window.summary_of(r.index))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        drop(window);
        let reply = Message::new(MessageKind::NodeFetchReply, request.receiver, requester, &summaries);
        let bytes = reply.encode();
        self.transport.record(reply.kind, bytes.len());

        let reply = Message::decode(&bytes)?;
        let mut got: Vec<NodeSummary> = reply.records()?;
        match (got.pop(), got.is_empty()) {
            (Some(s), true) if s.node == node => Ok(s),
            _ => Err(Error::Protocol(format!("bad fetch reply for {node:?}"))),
        }
    }
}

/// [`TreeView`] of one rank: shared top, own subtrees, and cached fetches.
pub struct DistributedView<'a> {
    pub me: RankId,
    pub local: &'a Octree,
    pub top: &'a SharedTop,
    pub shared: &'a Shared,
    pub cache: &'a mut RemoteNodeCache,
}

impl TreeView for DistributedView<'_> {
    fn summary(&mut self, node: NodeRef) -> Result<NodeSummary> {
        if node.is_top() {
            return self
                .top
                .summary(node)
                .ok_or_else(|| Error::Protocol(format!("no top node {}", node.index)));
        }
        if node.rank == self.me {
            return self.local.view().summary(node);
        }
        if let Some(s) = self.top.summary(node) {
            return Ok(s);
        }
        if let Some(s) = self.cache.entries.get(&node) {
            return Ok(*s);
        }
        let s = self.shared.fetch(self.me, node)?;
        *self.cache.fetches.entry(node).or_default() += 1;
        self.cache.entries.insert(node, s);
        Ok(s)
    }
}

/// Per-rank measurements of one connectivity update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankReport {
    pub rank: RankId,
    pub connectivity_update: Duration,
    pub find_targets: Duration,
    pub expansions: Duration,
    pub stats: DescentStats,
    pub remote_fetches: u64,
    pub max_fetches_per_node: u32,
    pub requests_sent: u64,
    pub synapses_formed: u64,
    pub synapses_pruned: u64,
    /// Encoded shared top as assembled by this rank.
    pub top_bytes: Vec<u8>,
}

/// Outcome of one connectivity update over all ranks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateReport {
    pub update: u64,
    pub ranks: Vec<RankReport>,
    pub traffic: Traffic,
    pub out_synapses: u64,
    pub in_synapses: u64,
}

impl UpdateReport {
    pub fn top_identical(&self) -> bool {
        self.ranks.windows(2).all(|w| w[0].top_bytes == w[1].top_bytes)
    }

    pub fn max_fetches_per_node(&self) -> u32 {
        self.ranks.iter().map(|r| r.max_fetches_per_node).max().unwrap_or(0)
    }

    pub fn stats(&self) -> DescentStats {
        let mut s = DescentStats::default();
        for r in &self.ranks {
            s.merge(&r.stats);
        }
        s
    }
}

/// One logical rank.
pub struct RankState {
    pub id: RankId,
    /// Owned neurons in ascending id order.
    pub neurons: Vec<NeuronState>,
    index: HashMap<NeuronId, usize>,
    activity_rngs: Vec<SmallRng>,
    pub cache: RemoteNodeCache,
    top: Option<SharedTop>,
    pending_deletions: Vec<Deletion>,
    local_requests: Vec<SynapseRequest>,
    sent: HashMap<(NeuronId, NeuronId), u64>,
    local_responses: Vec<SynapseResponse>,
    report: RankReport,
}

impl RankState {
    pub fn neuron(&self, id: NeuronId) -> Option<&NeuronState> {
        self.index.get(&id).map(|&i| &self.neurons[i])
    }

    fn neuron_mut(&mut self, id: NeuronId) -> Result<&mut NeuronState> {
        let i = *self.index.get(&id).ok_or(Error::UnknownNeuron(id))?;
        Ok(&mut self.neurons[i])
    }

    pub fn top(&self) -> Option<&SharedTop> {
        self.top.as_ref()
    }

    /// Activity RNG of the `i`-th owned neuron together with the neuron.
    pub fn neuron_and_rng(&mut self, i: usize) -> (&mut NeuronState, &mut SmallRng) {
        (&mut self.neurons[i], &mut self.activity_rngs[i])
    }

    fn leaf_inputs(&self) -> Vec<LeafInput> {
        self.neurons
            .iter()
            .map(|n| LeafInput {
                id: n.id,
                position: n.position,
                vacant_axons: n.vacant_count(Side::Axon),
                vacant_dendrites: n.vacant_count(Side::Dendrite),
            })
            .collect()
    }
}

type Phase = fn(&mut RankState, &Shared, u64) -> Result<()>;

const PHASES: [(&str, Phase); 8] = [
    ("prune", phase_prune),
    ("deletions", phase_deletions),
    ("refresh", phase_refresh),
    ("branches", phase_branches),
    ("find", phase_find),
    ("requests", phase_requests),
    ("resolve", phase_resolve),
    ("responses", phase_responses),
];

/// All ranks of one simulation plus the shared transport.
pub struct Cluster {
    pub shared: Shared,
    pub ranks: Vec<RankState>,
    pub mode: SchedulerMode,
}

impl Cluster {
    /// Distributes `neurons` (ids must be `0..n`) over the ranks of
    /// `decomposition` by position and builds every rank's subtrees.
    pub fn new(
        neurons: Vec<NeuronState>,
        decomposition: Decomposition,
        config: ConnectivityConfig,
        mode: SchedulerMode,
    ) -> Result<Cluster> {
        config.fmm.validate()?;
        config.barnes_hut.validate()?;
        let p = decomposition.ranks;
        let mut directory = vec![RankId::MAX; neurons.len()];
        let mut owned: Vec<Vec<NeuronState>> = (0..p).map(|_| Vec::new()).collect();
        for n in neurons {
            let slot = directory
                .get_mut(n.id as usize)
                .ok_or_else(|| Error::invalid("neuron ids", "must be 0..n without gaps"))?;
            if *slot != RankId::MAX {
                return Err(Error::invalid("neuron ids", format!("id {} appears twice", n.id)));
            }
            if !decomposition.domain.contains(n.position) {
                return Err(Error::OutsideDomain {
                    id: n.id,
                    position: n.position,
                });
            }
            let owner = decomposition.owner_of_point(n.position);
            *slot = owner;
            owned[owner as usize].push(n);
        }
        let mut ranks = Vec::with_capacity(p as usize);
        let mut windows = Vec::with_capacity(p as usize);
        let mut snapshots = Vec::with_capacity(p as usize);
        for (id, mut neurons) in owned.into_iter().enumerate() {
            let id = id as RankId;
            neurons.sort_by_key(|n| n.id);
            let slots: Vec<_> = decomposition
                .slots_of(id)
                .map(|s| (decomposition.slot_key(s), decomposition.slot_cell(s)))
                .collect();
            let state = RankState {
                id,
                index: neurons.iter().enumerate().map(|(i, n)| (n.id, i)).collect(),
                activity_rngs: neurons
                    .iter()
                    .map(|n| SmallRng::seed_from_u64(stream_id(config.seed, Stream::Activity, &[n.id])))
                    .collect(),
                neurons,
                cache: RemoteNodeCache::default(),
                top: None,
                pending_deletions: Vec::new(),
                local_requests: Vec::new(),
                sent: HashMap::new(),
                local_responses: Vec::new(),
                report: RankReport::default(),
            };
            let inputs = state.leaf_inputs();
            windows.push(RwLock::new(Arc::new(Octree::build_forest(&slots, &inputs, id)?)));
            snapshots.push(RwLock::new(inputs));
            ranks.push(state);
        }
        Ok(Cluster {
            shared: Shared {
                decomposition,
                config,
                transport: Transport::new(p),
                directory,
                windows,
                snapshots,
            },
            ranks,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.shared.directory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shared.directory.is_empty()
    }

    /// The subtrees rank `rank` currently publishes.
    pub fn window(&self, rank: RankId) -> Arc<Octree> {
        self.shared.windows[rank as usize].read().expect("window poisoned").clone()
    }

    pub fn neuron(&self, id: NeuronId) -> Option<&NeuronState> {
        let owner = *self.shared.directory.get(id as usize)?;
        self.ranks[owner as usize].neuron(id)
    }

    /// All neurons in ascending id order.
    pub fn neurons(&self) -> Vec<&NeuronState> {
        let mut all: Vec<&NeuronState> = self.ranks.iter().flat_map(|r| r.neurons.iter()).collect();
        all.sort_by_key(|n| n.id);
        all
    }

    /// Runs one connectivity update on all ranks.
    pub fn connectivity_update(&mut self, update: u64) -> Result<UpdateReport> {
        let before = self.shared.transport.traffic();
        for r in &mut self.ranks {
            r.report = RankReport {
                rank: r.id,
                ..RankReport::default()
            };
            r.cache.clear();
        }
        match self.mode {
            SchedulerMode::Serial => {
                for (_, phase) in PHASES {
                    for r in &mut self.ranks {
                        timed(r, |r| phase(r, &self.shared, update)).map_err(|e| wrap(e, update, r.id))?;
                    }
                }
            }
            SchedulerMode::Concurrent => self.run_concurrent(update)?,
        }
        if !self.shared.transport.is_idle() {
            return Err(Error::Protocol("undelivered messages after the update".into()));
        }
        let after = self.shared.transport.traffic();
        let mut traffic = Traffic {
            bytes: after.bytes - before.bytes,
            ..Traffic::default()
        };
        for i in 0..traffic.messages.len() {
            traffic.messages[i] = after.messages[i] - before.messages[i];
        }
        let mut report = UpdateReport {
            update,
            traffic,
            ..UpdateReport::default()
        };
        for r in &mut self.ranks {
            r.report.remote_fetches = r.cache.fetches();
            r.report.max_fetches_per_node = r.cache.max_fetches_per_node();
            for n in &r.neurons {
                report.out_synapses += n.out_synapses.len() as u64;
                report.in_synapses += n.in_synapses.len() as u64;
            }
            report.ranks.push(std::mem::take(&mut r.report));
        }
        Ok(report)
    }

    fn run_concurrent(&mut self, update: u64) -> Result<()> {
        let barrier = Barrier::new(self.ranks.len());
        let failed = AtomicBool::new(false);
        let shared = &self.shared;
        let errors: Vec<Option<Error>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .ranks
                .iter_mut()
                .map(|r| {
                    let barrier = &barrier;
                    let failed = &failed;
                    s.spawn(move || {
                        let mut error = None;
                        for (_, phase) in PHASES {
                            if !failed.load(Ordering::SeqCst) {
                                if let Err(e) = timed(r, |r| phase(r, shared, update)) {
                                    failed.store(true, Ordering::SeqCst);
                                    error = Some(wrap(e, update, r.id));
                                }
                            }
                            barrier.wait();
                        }
                        error
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
        });
        match errors.into_iter().flatten().next() {
            Some(e) => {
                for r in 0..self.ranks.len() as RankId {
                    self.shared.transport.receive_all(r)?;
                }
                Err(e)
            }
            None => Ok(()),
        }
    }
}

fn wrap(e: Error, update: u64, rank: RankId) -> Error {
    Error::Simulation {
        step: update,
        rank,
        source: Box::new(e),
    }
}

fn timed(r: &mut RankState, f: impl FnOnce(&mut RankState) -> Result<()>) -> Result<()> {
    let t = Instant::now();
    let out = f(r);
    r.report.connectivity_update += t.elapsed();
    out
}

fn phase_prune(r: &mut RankState, sh: &Shared, update: u64) -> Result<()> {
    let mut outgoing: HashMap<RankId, Vec<Deletion>> = HashMap::new();
    for n in &mut r.neurons {
        let mut rng = keyed_rng(sh.config.seed, Stream::Prune, &[update, n.id]);
        for d in n.prune_synapses(&mut rng) {
            r.report.synapses_pruned += 1;
            let owner = sh.owner_of(d.partner)?;
            if owner == r.id {
                r.pending_deletions.push(d);
            } else {
                outgoing.entry(owner).or_default().push(d);
            }
        }
    }
    let mut dest: Vec<_> = outgoing.into_iter().collect();
    dest.sort_by_key(|(k, _)| *k);
    for (to, batch) in dest {
        sh.transport
            .send(&Message::new(MessageKind::DeletionNotice, r.id, to, &batch))?;
    }
    Ok(())
}

fn phase_deletions(r: &mut RankState, sh: &Shared, _update: u64) -> Result<()> {
    let mut notices = std::mem::take(&mut r.pending_deletions);
    for m in sh.transport.receive_all(r.id)? {
        if m.kind != MessageKind::DeletionNotice {
            return Err(Error::Protocol(format!("unexpected {:?} during pruning", m.kind)));
        }
        notices.extend(m.records::<Deletion>()?);
    }
    for d in notices {
        let partner = r.neuron_mut(d.partner)?;
        d.apply_to_partner(partner);
    }
    Ok(())
}

fn phase_refresh(r: &mut RankState, sh: &Shared, _update: u64) -> Result<()> {
    let inputs = r.leaf_inputs();
    {
        let mut guard = sh.windows[r.id as usize].write().expect("window poisoned");
        Arc::make_mut(&mut guard).refresh_sums(inputs.iter().map(|l| (l.id, (l.vacant_axons, l.vacant_dendrites))))?;
    }
    *sh.snapshots[r.id as usize].write().expect("snapshot poisoned") = inputs;
    let tree = sh.windows[r.id as usize].read().expect("window poisoned");
    let branches: Vec<NodeSummary> = tree.roots().iter().map(|&i| tree.summary_of(i)).collect();
    for to in (0..sh.ranks()).filter(|&to| to != r.id) {
        sh.transport
            .send(&Message::new(MessageKind::BranchExchange, r.id, to, &branches))?;
    }
    Ok(())
}

fn phase_branches(r: &mut RankState, sh: &Shared, _update: u64) -> Result<()> {
    let tree = sh.windows[r.id as usize].read().expect("window poisoned");
    let mut branches: Vec<NodeSummary> = tree.roots().iter().map(|&i| tree.summary_of(i)).collect();
    for m in sh.transport.receive_all(r.id)? {
        if m.kind != MessageKind::BranchExchange {
            return Err(Error::Protocol(format!("unexpected {:?} during branch exchange", m.kind)));
        }
        branches.extend(m.records::<NodeSummary>()?);
    }
    let top = shared_top(&BranchSet {
        decomposition: sh.decomposition,
        branches,
    })?;
    r.report.top_bytes = wire::encode_records(&top_summaries(&top));
    r.top = Some(top);
    Ok(())
}

/// Every node of the shared top in index order followed by the branches.
pub fn top_summaries(top: &SharedTop) -> Vec<NodeSummary> {
    let mut out: Vec<NodeSummary> = (0..top.nodes().len() as u32)
        .filter_map(|i| top.summary(NodeRef::top(i)))
        .collect();
    out.extend(top.branches().copied());
    out
}

fn phase_find(r: &mut RankState, sh: &Shared, update: u64) -> Result<()> {
    let started = Instant::now();
    let cfg = &sh.config;
    let top = r.top.as_ref().ok_or_else(|| Error::Protocol("no shared top".into()))?;
    let tree = sh.windows[r.id as usize].read().expect("window poisoned");
    let mut stats = DescentStats::default();
    let own = r.leaf_inputs();
    let mut requests = {
        let mut view = DistributedView {
            me: r.id,
            local: &tree,
            top,
            shared: sh,
            cache: &mut r.cache,
        };
        match cfg.engine {
            EngineKind::Fmm => {
                let mut sampler = KeyedSampler::new(cfg.seed, Stream::Descent, update);
                let roots: Vec<NodeRef> = tree.roots().iter().map(|&i| NodeRef::new(r.id, i)).collect();
                let stack = cfg.fmm.init_stack(&mut view, &roots, top.root(), &mut sampler, &mut stats)?;
                cfg.fmm.find_synapses(&mut view, stack, &mut sampler, &mut stats)?
            }
            EngineKind::BarnesHut => {
                let mut sampler = KeyedSampler::new(cfg.seed, Stream::BarnesHut, update);
                cfg.barnes_hut.requests(&mut view, top.root(), &own, &mut sampler)?
            }
            EngineKind::Direct => {
                let mut all: Vec<LeafInput> = Vec::new();
                for s in &sh.snapshots {
                    all.extend(s.read().expect("snapshot poisoned").iter().copied());
                }
                all.sort_by_key(|l| l.id);
                direct_engine(&own, &all, &cfg.fmm.kernel, cfg.seed, update)
            }
        }
    };
    drop(tree);
    requests.sort_unstable();
    r.sent.clear();
    let mut outgoing: HashMap<RankId, Vec<SynapseRequest>> = HashMap::new();
    for q in requests {
        if r.sent.insert((q.axon_neuron, q.dendrite_neuron), q.count).is_some() {
            return Err(Error::Protocol(format!(
                "duplicate request {} -> {}",
                q.axon_neuron, q.dendrite_neuron
            )));
        }
        let owner = sh.owner_of(q.dendrite_neuron)?;
        r.report.requests_sent += 1;
        if owner == r.id {
            r.local_requests.push(q);
        } else {
            outgoing.entry(owner).or_default().push(q);
        }
    }
    let mut dest: Vec<_> = outgoing.into_iter().collect();
    dest.sort_by_key(|(k, _)| *k);
    for (to, batch) in dest {
        sh.transport
            .send(&Message::new(MessageKind::SynapseRequestBatch, r.id, to, &batch))?;
    }
    r.report.expansions += stats.expansion_time;
    r.report.stats = stats;
    r.report.find_targets += started.elapsed();
    Ok(())
}

// Draining requests is its own phase: a peer may answer before this rank
// has read its queue.
fn phase_requests(r: &mut RankState, sh: &Shared, _update: u64) -> Result<()> {
    for m in sh.transport.receive_all(r.id)? {
        if m.kind != MessageKind::SynapseRequestBatch {
            return Err(Error::Protocol(format!("unexpected {:?} during request routing", m.kind)));
        }
        r.local_requests.extend(m.records::<SynapseRequest>()?);
    }
    Ok(())
}

fn phase_resolve(r: &mut RankState, sh: &Shared, update: u64) -> Result<()> {
    let requests = std::mem::take(&mut r.local_requests);
    let allow_self = sh.config.allow_self_connections;
    for q in &requests {
        if r.neuron(q.dendrite_neuron).is_none() {
            return Err(Error::Protocol(format!("request for foreign neuron {}", q.dendrite_neuron)));
        }
    }
    let responses = resolve_conflicts(
        &requests,
        |id| r.neuron(id).map_or(0, |n| n.vacant_count(Side::Dendrite)),
        sh.config.seed,
        update,
    );
    let mut outgoing: HashMap<RankId, Vec<SynapseResponse>> = HashMap::new();
    for mut resp in responses {
        if !allow_self && resp.axon_neuron == resp.dendrite_neuron {
            resp.accepted = 0;
        }
        if resp.accepted > 0 {
            r.neuron_mut(resp.dendrite_neuron)?
                .add_synapses(Side::Dendrite, resp.axon_neuron, resp.accepted);
        }
        let owner = sh.owner_of(resp.axon_neuron)?;
        if owner == r.id {
            r.local_responses.push(resp);
        } else {
            outgoing.entry(owner).or_default().push(resp);
        }
    }
    let mut dest: Vec<_> = outgoing.into_iter().collect();
    dest.sort_by_key(|(k, _)| *k);
    for (to, batch) in dest {
        sh.transport
            .send(&Message::new(MessageKind::SynapseResponseBatch, r.id, to, &batch))?;
    }
    Ok(())
}

fn phase_responses(r: &mut RankState, sh: &Shared, _update: u64) -> Result<()> {
    let mut responses = std::mem::take(&mut r.local_responses);
    for m in sh.transport.receive_all(r.id)? {
        if m.kind != MessageKind::SynapseResponseBatch {
            return Err(Error::Protocol(format!("unexpected {:?} during response routing", m.kind)));
        }
        responses.extend(m.records::<SynapseResponse>()?);
    }
    responses.sort_unstable();
    for resp in responses {
        match r.sent.remove(&(resp.axon_neuron, resp.dendrite_neuron)) {
            Some(count) if count == resp.requested && resp.accepted <= count => {}
            _ => {
                return Err(Error::Protocol(format!(
                    "response {} -> {} matches no request",
                    resp.axon_neuron, resp.dendrite_neuron
                )))
            }
        }
        if resp.accepted > 0 {
            r.report.synapses_formed += resp.accepted;
            r.neuron_mut(resp.axon_neuron)?
                .add_synapses(Side::Axon, resp.dendrite_neuron, resp.accepted);
        }
    }
    if !r.sent.is_empty() {
        return Err(Error::Protocol(format!("{} requests left unanswered", r.sent.len())));
    }
    Ok(())
}

/// Positions placed on neurons with default state; a convenience for tests
/// and examples.
pub fn fresh_neurons(positions: &[Vec3], params: &crate::model::ModelParams) -> Vec<NeuronState> {
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| NeuronState::new(i as NeuronId, p, params))
        .collect()
}
