//! Per-neuron dynamics: Poisson spiking, calcium trace, Gaussian growth curve
//! and synaptic-element bookkeeping.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub type NeuronId = u64;

/// The two kinds of synaptic element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    /// Outgoing elements; a vacant axon searches for a partner.
    Axon,
    /// Incoming elements; vacant dendrites attract axons.
    Dendrite,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Axon => Side::Dendrite,
            Side::Dendrite => Side::Axon,
        }
    }
}

/// Neuron model constants.
///
/// [`ModelParams::default`] is the calibrated set used by the simulator.
/// [`ModelParams::literal`] keeps the reference table values; with them the
/// background activity alone drives calcium to about 5, far above the 0.7
/// set point, so the homeostatic loop never engages.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub resting_activity: f64,
    /// Relaxation time constant of the activity, in steps.
    pub activity_decay: f64,
    pub background_activity: f64,
    /// Activity added per spiking presynaptic partner.
    pub input_per_spike: f64,
    pub calcium_per_spike: f64,
    /// Fraction of calcium lost per step.
    pub calcium_decay: f64,
    /// Right intersection of both growth curves (the calcium set point).
    pub target_calcium: f64,
    /// Left intersection of the axon growth curve.
    pub axon_onset: f64,
    /// Left intersection of the dendrite growth curve.
    pub dendrite_onset: f64,
    /// Peak element growth per step.
    pub growth_rate: f64,
    /// Attraction kernel width, in length units.
    pub sigma: f64,
    pub refractory_steps: u32,
    /// Activity steps between two connectivity updates.
    pub plasticity_interval: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            input_per_spike: 2e-2,
            calcium_decay: 1e-4,
            ..ModelParams::literal()
        }
    }
}

impl ModelParams {
    /// Reference parameter table, with per-spike increments of 1e-3 for
    /// calcium and 5e-4 for activity.
    pub fn literal() -> Self {
        ModelParams {
            resting_activity: 0.05,
            activity_decay: 5.0,
            background_activity: 0.003,
            input_per_spike: 5e-4,
            calcium_per_spike: 1e-3,
            calcium_decay: 1e-5,
            target_calcium: 0.7,
            axon_onset: 0.4,
            dendrite_onset: 0.1,
            growth_rate: 1e-4,
            sigma: 750.0,
            refractory_steps: 4,
            plasticity_interval: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("activity_decay", self.activity_decay),
            ("sigma", self.sigma),
            ("growth_rate", self.growth_rate),
            ("axon_onset", self.axon_onset),
            ("dendrite_onset", self.dendrite_onset),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.axon_onset >= self.target_calcium {
            return Err(Error::invalid("axon_onset", "must lie below target_calcium"));
        }
        if self.dendrite_onset >= self.target_calcium {
            return Err(Error::invalid("dendrite_onset", "must lie below target_calcium"));
        }
        if !(0.0..1.0).contains(&self.calcium_decay) {
            return Err(Error::invalid("calcium_decay", "must lie in [0, 1)"));
        }
        for (name, v) in [
            ("resting_activity", self.resting_activity),
            ("background_activity", self.background_activity),
            ("input_per_spike", self.input_per_spike),
            ("calcium_per_spike", self.calcium_per_spike),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if self.plasticity_interval == 0 {
            return Err(Error::invalid("plasticity_interval", "must be at least 1"));
        }
        Ok(())
    }

    pub fn onset(&self, side: Side) -> f64 {
        match side {
            Side::Axon => self.axon_onset,
            Side::Dendrite => self.dendrite_onset,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    pub id: NeuronId,
    pub position: Vec3,
    /// Membrane activity; doubles as the spike probability of the next draw.
    pub activity: f64,
    pub refractory_left: u32,
    pub calcium: f64,
    pub axons: f64,
    pub dendrites: f64,
    /// Sorted multiset of postsynaptic partners.
    pub out_synapses: Vec<NeuronId>,
    /// Sorted multiset of presynaptic partners.
    pub in_synapses: Vec<NeuronId>,
}

/// A synapse removed during pruning that the partner must also drop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Deletion {
    pub neuron: NeuronId,
    pub partner: NeuronId,
    /// The element side of `neuron` that lost the synapse.
    pub side: Side,
}

impl Deletion {
    /// Applies the notice at the partner's end. Returns whether a matching
    /// synapse was still present (the partner may have pruned it already).
    pub fn apply_to_partner(&self, partner: &mut NeuronState) -> bool {
        debug_assert_eq!(partner.id, self.partner);
        let list = match self.side {
            Side::Axon => &mut partner.in_synapses,
            Side::Dendrite => &mut partner.out_synapses,
        };
        match list.binary_search(&self.neuron) {
            Ok(i) => {
                list.remove(i);
                true
            }
            Err(_) => false,
        }
    }
}

impl NeuronState {
    pub fn new(id: NeuronId, position: Vec3, params: &ModelParams) -> Self {
        NeuronState {
            id,
            position,
            activity: params.resting_activity,
            refractory_left: 0,
            calcium: 0.0,
            axons: 0.0,
            dendrites: 0.0,
            out_synapses: Vec::new(),
            in_synapses: Vec::new(),
        }
    }

    pub fn elements(&self, side: Side) -> f64 {
        match side {
            Side::Axon => self.axons,
            Side::Dendrite => self.dendrites,
        }
    }

    pub fn synapses(&self, side: Side) -> &[NeuronId] {
        match side {
            Side::Axon => &self.out_synapses,
            Side::Dendrite => &self.in_synapses,
        }
    }

    /// Records `count` new synapses with `partner` on `side`, keeping the list sorted.
    pub fn add_synapses(&mut self, side: Side, partner: NeuronId, count: u64) {
        let list = match side {
            Side::Axon => &mut self.out_synapses,
            Side::Dendrite => &mut self.in_synapses,
        };
        let at = list.partition_point(|&n| n <= partner);
        list.splice(at..at, std::iter::repeat(partner).take(count as usize));
    }

    /// `floor(elements) - bound synapses`; negative only between growth and pruning.
    pub fn vacant(&self, side: Side) -> i64 {
        self.elements(side).floor() as i64 - self.synapses(side).len() as i64
    }

    /// Vacancy as used by the octree, clamped at zero.
    pub fn vacant_count(&self, side: Side) -> u64 {
        self.vacant(side).max(0) as u64
    }

    /// One activity step. Returns whether the neuron spiked.
    pub fn update_activity(
        &mut self,
        spiking_inputs: u32,
        params: &ModelParams,
        rng: &mut impl Rng,
    ) -> bool {
        let x = self.activity;
        let next = x + (params.resting_activity - x) / params.activity_decay
            + params.background_activity
            + params.input_per_spike * f64::from(spiking_inputs);
        self.activity = next.max(0.0);
        if self.refractory_left > 0 {
            self.refractory_left -= 1;
            return false;
        }
        let spiked = rng.gen::<f64>() < self.activity;
        if spiked {
            self.refractory_left = params.refractory_steps;
        }
        spiked
    }

    pub fn update_calcium(&mut self, spiked: bool, params: &ModelParams) {
        self.calcium *= 1.0 - params.calcium_decay;
        if spiked {
            self.calcium += params.calcium_per_spike;
        }
    }

    pub fn apply_element_update(&mut self, params: &ModelParams) {
        let da = growth_delta(self.calcium, params.axon_onset, params);
        let dd = growth_delta(self.calcium, params.dendrite_onset, params);
        self.axons = (self.axons + da).max(0.0);
        self.dendrites = (self.dendrites + dd).max(0.0);
    }

    /// Drops random synapses until both element counts cover their bound
    /// synapses. The returned notices must reach the partners before any new
    /// synapses are formed.
    pub fn prune_synapses(&mut self, rng: &mut impl Rng) -> Vec<Deletion> {
        let mut deletions = Vec::new();
        for side in [Side::Axon, Side::Dendrite] {
            let keep = self.elements(side).floor().max(0.0) as usize;
            let list = match side {
                Side::Axon => &mut self.out_synapses,
                Side::Dendrite => &mut self.in_synapses,
            };
            while list.len() > keep {
                let i = rng.gen_range(0..list.len());
                let partner = list.remove(i);
                deletions.push(Deletion {
                    neuron: self.id,
                    partner,
                    side,
                });
            }
        }
        deletions
    }
}

/// Gaussian growth curve `mu * (2 exp(-((ca - xi)/zeta)^2) - 1)`.
///
/// `xi` is the midpoint of `[onset, target]` and `zeta` is chosen so that the
/// curve crosses zero exactly at both ends; the peak value `mu` sits at `xi`.
pub fn growth_delta(calcium: f64, onset: f64, params: &ModelParams) -> f64 {
    let target = params.target_calcium;
    let mid = 0.5 * (onset + target);
    let width = (target - onset) / (2.0 * std::f64::consts::LN_2.sqrt());
    let z = (calcium - mid) / width;
    params.growth_rate * (2.0 * (-z * z).exp() - 1.0)
}
