mod common;

use std::collections::BTreeMap;

use msp_core::baseline::{BarnesHutEngine, EngineKind};
use msp_core::connectivity::FmmEngine;
use msp_core::expansion::KernelParams;
use msp_core::geometry::{Cell, Vec3};
use msp_core::model::{ModelParams, NeuronState};
use msp_core::octree::{Aggregate, Decomposition, NodeRef};
use msp_core::rank::{fresh_neurons, Cluster, ConnectivityConfig, MessageKind, SchedulerMode};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

const SIDE: f64 = 1000.0;

fn neurons(n: usize, seed: u64) -> Vec<NeuronState> {
    let mut rng = SmallRng::seed_from_u64(seed);
    let positions: Vec<Vec3> = (0..n).map(|_| Vec3([(); 3].map(|_| rng.gen::<f64>() * SIDE))).collect();
    let mut out = fresh_neurons(&positions, &ModelParams::default());
    for n in &mut out {
        n.axons = rng.gen_range(0.0..4.0);
        n.dendrites = rng.gen_range(0.0..4.0);
    }
    out
}

fn cluster(n: usize, p: u32, mode: SchedulerMode, engine: EngineKind) -> Cluster {
    let kernel = KernelParams::new(750.0);
    let config = ConnectivityConfig {
        engine,
        fmm: FmmEngine::new(kernel),
        barnes_hut: BarnesHutEngine::new(kernel),
        seed: 42,
        allow_self_connections: false,
    };
    let dec = Decomposition::new(Cell::cube(SIDE), p).unwrap();
    Cluster::new(neurons(n, 7), dec, config, mode).unwrap()
}

type Edges = BTreeMap<(u64, u64), u64>;

fn edges(c: &Cluster) -> (Edges, Edges) {
    let (mut out, mut inn) = (Edges::new(), Edges::new());
    for n in c.neurons() {
        for &d in &n.out_synapses {
            *out.entry((n.id, d)).or_default() += 1;
        }
        for &a in &n.in_synapses {
            *inn.entry((a, n.id)).or_default() += 1;
        }
    }
    (out, inn)
}

fn run(c: &mut Cluster, updates: u64) -> Edges {
    for u in 0..updates {
        c.connectivity_update(u).unwrap();
    }
    edges(c).0
}

#[test]
fn every_rank_sends_its_branches_to_every_other() {
    let mut c = cluster(300, 4, SchedulerMode::Serial, EngineKind::Fmm);
    let r = c.connectivity_update(0).unwrap();
    assert_eq!(r.traffic.count(MessageKind::BranchExchange), 12);
    assert!(r.top_identical());
}

#[test]
fn shared_top_matches_published_subtrees() {
    let mut c = cluster(500, 8, SchedulerMode::Serial, EngineKind::Fmm);
    c.connectivity_update(0).unwrap();
    let top = c.ranks[0].top().unwrap().clone();
    assert_eq!(top.branches().count(), 8);
    for b in top.branches() {
        let w = c.window(b.node.rank);
        assert_eq!(w.summary_of(b.node.index), *b);
    }
    for (i, n) in top.nodes().iter().enumerate() {
        let parts: Vec<(Aggregate, Aggregate)> = n
            .children
            .iter()
            .flatten()
            .map(|&c| {
                let s = top.summary(c).unwrap();
                (s.axons, s.dendrites)
            })
            .collect();
        let ax = Aggregate::combine(parts.iter().map(|p| &p.0));
        let de = Aggregate::combine(parts.iter().map(|p| &p.1));
        assert_eq!((n.axons.sum, n.dendrites.sum), (ax.sum, de.sum), "top node {i}");
        assert_eq!(top.summary(NodeRef::top(i as u32)).unwrap().axons.sum, ax.sum);
    }
    let root = top.summary(top.root()).unwrap();
    let per_rank: u64 = (0..8).map(|r| c.window(r).roots().iter().map(|&i| c.window(r).node(i).dendrites.sum).sum::<u64>()).sum();
    assert_eq!(root.dendrites.sum, per_rank);
}

#[test]
fn remote_nodes_are_fetched_once_per_update() {
    let mut c = cluster(400, 4, SchedulerMode::Serial, EngineKind::Fmm);
    for u in 0..3 {
        let r = c.connectivity_update(u).unwrap();
        assert!(r.ranks.iter().map(|x| x.remote_fetches).sum::<u64>() > 0);
        assert_eq!(r.max_fetches_per_node(), 1);
        let fetches: u64 = r.ranks.iter().map(|x| x.remote_fetches).sum();
        assert_eq!(r.traffic.count(MessageKind::NodeFetchRequest), fetches);
        assert_eq!(r.traffic.count(MessageKind::NodeFetchReply), fetches);
        let cached: u64 = c.ranks.iter().map(|x| x.cache.len() as u64).sum();
        assert_eq!(cached, fetches);
    }
}

#[test]
fn single_rank_sends_no_messages() {
    for engine in [EngineKind::Fmm, EngineKind::BarnesHut, EngineKind::Direct] {
        let mut c = cluster(200, 1, SchedulerMode::Serial, engine);
        for u in 0..3 {
            let r = c.connectivity_update(u).unwrap();
            assert_eq!(r.traffic.total(), 0, "{engine}");
            assert_eq!(r.traffic.bytes, 0);
        }
    }
}

#[test]
fn synapses_are_bilateral() {
    for p in [1, 2, 8] {
        let mut c = cluster(300, p, SchedulerMode::Serial, EngineKind::Fmm);
        for u in 0..4 {
            let r = c.connectivity_update(u).unwrap();
            assert_eq!(r.out_synapses, r.in_synapses);
            let (out, inn) = edges(&c);
            assert_eq!(out, inn, "p={p} update {u}");
            assert!(out.keys().all(|(a, d)| a != d));
        }
    }
}

#[test]
fn scheduler_does_not_change_results() {
    for engine in [EngineKind::Fmm, EngineKind::BarnesHut, EngineKind::Direct] {
        let a = run(&mut cluster(300, 4, SchedulerMode::Serial, engine), 4);
        let b = run(&mut cluster(300, 4, SchedulerMode::Concurrent, engine), 4);
        assert!(!a.is_empty());
        assert_eq!(a, b, "{engine}");
    }
}

#[test]
fn rank_count_does_not_change_results() {
    for engine in [EngineKind::Fmm, EngineKind::BarnesHut, EngineKind::Direct] {
        let one = run(&mut cluster(300, 1, SchedulerMode::Serial, engine), 4);
        let four = run(&mut cluster(300, 4, SchedulerMode::Serial, engine), 4);
        assert_eq!(one, four, "{engine}");
    }
}

#[test]
fn pruning_sends_deletion_notices_across_ranks() {
    let mut c = cluster(300, 4, SchedulerMode::Serial, EngineKind::Fmm);
    c.connectivity_update(0).unwrap();
    for r in &mut c.ranks {
        for n in &mut r.neurons {
            n.axons = 0.0;
        }
    }
    let r = c.connectivity_update(1).unwrap();
    assert!(r.traffic.count(MessageKind::DeletionNotice) > 0);
    let (out, inn) = edges(&c);
    assert!(out.is_empty());
    assert!(inn.is_empty());
}
