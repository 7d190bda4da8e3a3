use std::path::PathBuf;

use msp_core::baseline::EngineKind;
use msp_core::rank::SchedulerMode;
use msp_core::sim::config::{Placement, RunConfig};
use msp_core::sim::output::{MetricsRow, TimingRow};
use msp_core::sim::{run_simulation, Simulation};

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn small(name: &str) -> RunConfig {
    RunConfig {
        neurons: 125,
        ranks: 2,
        steps: 20_000,
        out_dir: out_dir(name),
        ..RunConfig::default()
    }
}

fn first_line(p: &std::path::Path) -> String {
    std::fs::read_to_string(p).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn output_files_carry_exact_headers() {
    let out = run_simulation(&small("headers")).unwrap();
    assert_eq!(first_line(&out.metrics_path), "step,calcium_mean,calcium_std,synapses_total,vacant_axons,vacant_dendrites");
    assert_eq!(first_line(&out.timing_path), "rank,phase,min_s,avg_s,max_s");
    assert_eq!(first_line(&out.network_path), "axon_id,dendrite_id,count");
    assert_eq!(first_line(&out.metrics_path), MetricsRow::HEADER);
    assert_eq!(first_line(&out.timing_path), TimingRow::HEADER);
    let phases: Vec<String> = std::fs::read_to_string(&out.timing_path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(phases.len(), 2 * 3);
    assert!(phases.iter().all(|p| ["connectivity_update", "find_targets", "expansions"].contains(&p.as_str())));
    assert!(std::fs::read_to_string(&out.plot_path).unwrap().starts_with("<svg"));
    assert_eq!(out.metrics.len(), 200);
}

#[test]
fn reruns_are_byte_identical() {
    let a = run_simulation(&small("rerun_a")).unwrap();
    let b = run_simulation(&small("rerun_b")).unwrap();
    for (x, y) in [(&a.metrics_path, &b.metrics_path), (&a.network_path, &b.network_path)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let c = run_simulation(&RunConfig {
        scheduler: SchedulerMode::Concurrent,
        ranks: 8,
        ..small("rerun_c")
    })
    .unwrap();
    assert_eq!(std::fs::read(&a.network_path).unwrap(), std::fs::read(&c.network_path).unwrap());
}

#[test]
fn network_file_matches_final_metrics() {
    let out = run_simulation(&small("network")).unwrap();
    let total: u64 = std::fs::read_to_string(&out.network_path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, out.metrics.last().unwrap().synapses_total);
}

#[test]
fn fmm_tracks_the_direct_engine() {
    let run = |engine| {
        let mut sim = Simulation::new(RunConfig {
            neurons: 320,
            steps: 150_000,
            engine,
            placement: Placement::UniformRandom,
            out_dir: out_dir("unused"),
            ..RunConfig::default()
        })
        .unwrap();
        sim.advance(150_000, |_, _| {}).unwrap();
        sim.metrics()
    };
    let f = run(EngineKind::Fmm);
    let d = run(EngineKind::Direct);
    assert!((f.calcium_mean - d.calcium_mean).abs() <= 0.05, "{f:?} vs {d:?}");
    let rel = (f.synapses_total as f64 - d.synapses_total as f64).abs() / d.synapses_total as f64;
    assert!(rel <= 0.05, "{f:?} vs {d:?}");
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let cfg = RunConfig {
        neurons: 0,
        ..small("invalid")
    };
    assert!(run_simulation(&cfg).is_err());
}
