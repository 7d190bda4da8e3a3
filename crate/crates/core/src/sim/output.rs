//! CSV and SVG writers.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use crate::error::Result;
use crate::model::NeuronId;

/// Network state after one connectivity update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub calcium_mean: f64,
    pub calcium_std: f64,
    pub synapses_total: u64,
    pub vacant_axons: u64,
    pub vacant_dendrites: u64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "step,calcium_mean,calcium_std,synapses_total,vacant_axons,vacant_dendrites";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.calcium_mean, self.calcium_std, self.synapses_total, self.vacant_axons, self.vacant_dendrites
        )
    }
}

/// Spread of one phase's wall time.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub rank: u32,
    pub phase: String,
    pub min_s: f64,
    pub avg_s: f64,
    pub max_s: f64,
}

impl TimingRow {
    pub const HEADER: &'static str = "rank,phase,min_s,avg_s,max_s";
    pub const PHASES: [&'static str; 3] = ["connectivity_update", "find_targets", "expansions"];

    pub fn from_samples(rank: u32, phase: &str, xs: &[Duration]) -> Option<TimingRow> {
        if xs.is_empty() {
            return None;
        }
        let secs: Vec<f64> = xs.iter().map(Duration::as_secs_f64).collect();
        Some(TimingRow {
            rank,
            phase: phase.to_string(),
            min_s: secs.iter().copied().fold(f64::INFINITY, f64::min),
            avg_s: secs.iter().sum::<f64>() / secs.len() as f64,
            max_s: secs.iter().copied().fold(0.0, f64::max),
        })
    }

    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.rank, self.phase, self.min_s, self.avg_s, self.max_s)
    }
}

fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_lines(path, MetricsRow::HEADER, rows.iter().map(MetricsRow::csv))
}

pub fn write_timings(path: &Path, rows: &[TimingRow]) -> Result<()> {
    write_lines(path, TimingRow::HEADER, rows.iter().map(TimingRow::csv))
}

pub fn write_network(path: &Path, edges: &[(NeuronId, NeuronId, u64)]) -> Result<()> {
    write_lines(
        path,
        "axon_id,dendrite_id,count",
        edges.iter().map(|(a, d, c)| format!("{a},{d},{c}")),
    )
}

/// Calcium mean and synapse total against the step, as two stacked panels.
pub fn write_plot(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let (w, h, pad) = (640.0, 200.0, 30.0);
    let last = rows.last().map_or(1.0, |r| r.step.max(1) as f64);
    let panel = |svg: &mut String, top: f64, label: &str, ys: Vec<f64>| {
        let max = ys.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        let pts: Vec<String> = rows
            .iter()
            .zip(&ys)
            .map(|(r, y)| {
                let px = pad + (w - 2.0 * pad) * r.step as f64 / last;
                let py = top + h - pad - (h - 2.0 * pad) * y / max;
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let _ = write!(
            svg,
            "<text x=\"{pad}\" y=\"{}\" font-size=\"12\">{label} (max {max:.4})</text>\
             <polyline fill=\"none\" stroke=\"black\" points=\"{}\"/>",
            top + 14.0,
            pts.join(" ")
        );
    };
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{}\">", 2.0 * h);
    panel(&mut svg, 0.0, "calcium_mean", rows.iter().map(|r| r.calcium_mean).collect());
    panel(&mut svg, h, "synapses_total", rows.iter().map(|r| r.synapses_total as f64).collect());
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_are_exact() {
        assert_eq!(
            MetricsRow::HEADER,
            "step,calcium_mean,calcium_std,synapses_total,vacant_axons,vacant_dendrites"
        );
        assert_eq!(TimingRow::HEADER, "rank,phase,min_s,avg_s,max_s");
    }

    #[test]
    fn timing_spread_is_ordered() {
        let xs = [Duration::from_millis(3), Duration::from_millis(1), Duration::from_millis(2)];
        let r = TimingRow::from_samples(0, "find_targets", &xs).unwrap();
        assert!(r.min_s <= r.avg_s && r.avg_s <= r.max_s);
        assert_eq!(r.csv(), "0,find_targets,0.001,0.002,0.003");
    }
}
