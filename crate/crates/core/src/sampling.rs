//! Weighted index selection behind a trait so that the descent can be driven
//! by keyed random streams, a plain RNG, or a scripted replay.

use rand::Rng;

use crate::rng::{stream_id, unit_from_id, Stream};

pub trait Sampler {
    /// Picks an index with probability proportional to `weights`.
    /// `key` names the decision; keyed samplers derive their draw from it.
    fn pick(&mut self, key: &[u64], weights: &[f64]) -> usize;
}

/// Index `i` such that the cumulative weight first exceeds `u * total`.
pub fn pick_weighted(u: f64, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "no positive weight to pick from");
    let mut goal = u * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if goal < w {
                return i;
            }
            goal -= w;
            last = i;
        }
    }
    last
}

/// Draws from a stream keyed by `(seed, stream, salt, key)`; the same decision
/// key always sees the same uniform number.
#[derive(Clone, Debug)]
pub struct KeyedSampler {
    pub seed: u64,
    pub stream: Stream,
    pub salt: u64,
}

impl KeyedSampler {
    pub fn new(seed: u64, stream: Stream, salt: u64) -> Self {
        KeyedSampler { seed, stream, salt }
    }
}

impl Sampler for KeyedSampler {
    fn pick(&mut self, key: &[u64], weights: &[f64]) -> usize {
        let mut id = stream_id(self.seed, self.stream, &[self.salt]);
        for &k in key {
            id = crate::rng::mix64(id ^ k);
        }
        pick_weighted(unit_from_id(id), weights)
    }
}

/// Ignores keys and draws from a wrapped generator.
#[derive(Clone, Debug)]
pub struct RngSampler<R>(pub R);

impl<R: Rng> Sampler for RngSampler<R> {
    fn pick(&mut self, _key: &[u64], weights: &[f64]) -> usize {
        pick_weighted(self.0.gen::<f64>(), weights)
    }
}

/// Replays a fixed choice sequence and records how many options each decision
/// offered. Driving a run repeatedly with an odometer over the recorded
/// branching enumerates every outcome with non-zero probability.
#[derive(Clone, Debug, Default)]
pub struct ReplaySampler {
    pub script: Vec<usize>,
    pub position: usize,
    /// `(option indices with positive weight, chosen slot)` per decision.
    pub trace: Vec<(Vec<usize>, usize)>,
}

impl ReplaySampler {
    pub fn new(script: Vec<usize>) -> Self {
        ReplaySampler {
            script,
            position: 0,
            trace: Vec::new(),
        }
    }

    /// Next script in depth-first order, or `None` when exhausted.
    pub fn next_script(&self) -> Option<Vec<usize>> {
        let mut script: Vec<usize> = self.trace.iter().map(|(_, c)| *c).collect();
        while let Some(last) = script.pop() {
            let options = self.trace[script.len()].0.len();
            if last + 1 < options {
                script.push(last + 1);
                return Some(script);
            }
        }
        None
    }
}

impl Sampler for ReplaySampler {
    fn pick(&mut self, _key: &[u64], weights: &[f64]) -> usize {
        let options: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        let slot = self.script.get(self.position).copied().unwrap_or(0);
        self.position += 1;
        let chosen = options[slot];
        self.trace.push((options, slot));
        chosen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pick_respects_cumulative_weights() {
        let w = [0.0, 1.0, 0.0, 3.0];
        assert_eq!(pick_weighted(0.0, &w), 1);
        assert_eq!(pick_weighted(0.24, &w), 1);
        assert_eq!(pick_weighted(0.26, &w), 3);
        assert_eq!(pick_weighted(0.999_999, &w), 3);
    }

    #[test]
    fn keyed_sampler_is_a_function_of_the_key() {
        let mut a = KeyedSampler::new(3, Stream::Descent, 0);
        let mut b = KeyedSampler::new(3, Stream::Descent, 0);
        let w = [1.0; 16];
        let xs: Vec<usize> = (0..50).map(|k| a.pick(&[k], &w)).collect();
        let ys: Vec<usize> = (0..50).rev().map(|k| b.pick(&[k], &w)).collect();
        assert_eq!(xs, ys.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn replay_enumerates_all_paths() {
        // Two independent decisions with 2 and 3 positive options.
        let mut seen = Vec::new();
        let mut script = Some(Vec::new());
        while let Some(s) = script {
            let mut r = ReplaySampler::new(s);
            let a = r.pick(&[], &[1.0, 0.0, 1.0]);
            let b = r.pick(&[], &[1.0, 1.0, 1.0]);
            seen.push((a, b));
            script = r.next_script();
        }
        assert_eq!(seen.len(), 6);
        assert!(seen.contains(&(2, 1)));
    }
}
