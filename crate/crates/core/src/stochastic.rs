//! Per-slot random state: channel gains, harvestable energy and electricity
//! price states.
//!
//! Every slot gets its own ChaCha stream keyed by the slot index, so a slot
//! can be replayed without regenerating its predecessors. Inside a slot the
//! draws are consumed in a fixed order:
//!
//! 1. fading of every link, ascending link id;
//! 2. harvest of every EH/ME node, ascending node id;
//! 3. price state of every EG/ME node, ascending node id;
//! 4. fading of every non-link interference path, in [`Network::cross_paths`] order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{GainRef, Network, NodeId, Params, PriceModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub slot: u64,
    /// Channel gain per link (fading times `d^-4`).
    pub channel: Vec<f64>,
    /// Gain per non-link interference path.
    pub cross: Vec<f64>,
    /// Harvestable energy per node; zero for grid-only nodes.
    pub harvest: Vec<f64>,
    /// Price state per node; `None` for nodes without grid access.
    pub price: Vec<Option<f64>>,
}

impl SlotState {
    pub fn gain(&self, g: GainRef) -> f64 {
        match g {
            GainRef::Link(l) => self.channel[l.0],
            GainRef::Cross(i) => self.cross[i],
        }
    }
}

/// Path gain under the `fading * d^-4` law.
pub fn path_gain(fading: f64, distance: f64) -> f64 {
    fading / distance.powi(4)
}

/// Draws one slot from `rng` in the documented order.
pub fn sample_slot<R: Rng + ?Sized>(
    rng: &mut R,
    slot: u64,
    net: &Network,
    params: &Params,
) -> SlotState {
    let channel = net
        .links
        .iter()
        .map(|l| path_gain(params.fading.sample(rng), l.distance))
        .collect();
    let mut harvest = vec![0.0; net.num_nodes()];
    for node in net.nodes.iter().filter(|n| n.supply.harvests()) {
        harvest[node.id.0] = params.harvest.sample(rng);
    }
    let mut price = vec![None; net.num_nodes()];
    for node in net.nodes.iter().filter(|n| n.supply.grid()) {
        price[node.id.0] = Some(params.price.sample(rng));
    }
    let cross = net
        .cross_paths()
        .iter()
        .map(|&(_, _, d)| path_gain(params.fading.sample(rng), d))
        .collect();
    SlotState {
        slot,
        channel,
        cross,
        harvest,
        price,
    }
}

/// Seeded source of slot states; slot `t` is a pure function of `(seed, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotSampler {
    seed: u64,
}

impl SlotSampler {
    pub fn new(seed: u64) -> Self {
        SlotSampler { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&self, slot: u64, net: &Network, params: &Params) -> SlotState {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(slot);
        sample_slot(&mut rng, slot, net, params)
    }
}

/// Unit price paid by `node` when buying `purchase` from the grid.
pub fn electricity_price(
    state: &SlotState,
    node: NodeId,
    purchase: f64,
    model: &PriceModel,
) -> Result<f64> {
    let s = state
        .price
        .get(node.0)
        .copied()
        .flatten()
        .ok_or(Error::NoGridSupply(node))?;
    Ok(model.unit_price(s, purchase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::two_node;
    use crate::model::{build_topology, Dist, GeneratorConfig, TopologyConfig};

    fn default_net() -> Network {
        build_topology(&TopologyConfig::Generated(GeneratorConfig::default())).unwrap()
    }

    #[test]
    fn zero_h_max_means_no_harvest() {
        let net = default_net();
        let params = Params {
            harvest: Dist::uniform(0.0, 0.0),
            ..Params::default()
        };
        let s = SlotSampler::new(1).sample(3, &net, &params);
        assert!(s.harvest.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn unit_distance_gain_stays_in_fading_range() {
        let mut net = two_node();
        net.links[0].distance = 1.0;
        let params = Params::default();
        let sampler = SlotSampler::new(11);
        for t in 0..200 {
            let g = sampler.sample(t, &net, &params).channel[0];
            assert!((0.9..=1.1).contains(&g), "{g}");
        }
    }

    #[test]
    fn same_seed_and_slot_replays_exactly() {
        let net = default_net();
        let params = Params::default();
        let a = SlotSampler::new(42).sample(17, &net, &params);
        let b = SlotSampler::new(42).sample(17, &net, &params);
        assert_eq!(a, b);
        let c = SlotSampler::new(42).sample(18, &net, &params);
        assert_ne!(a, c);
    }

    #[test]
    fn states_respect_class_masks_and_ranges() {
        let net = default_net();
        let params = Params::default();
        let s = SlotSampler::new(5).sample(0, &net, &params);
        for node in &net.nodes {
            let h = s.harvest[node.id.0];
            if node.supply.harvests() {
                assert!((0.0..=2.0).contains(&h));
            } else {
                assert_eq!(h, 0.0);
            }
            match s.price[node.id.0] {
                Some(p) => {
                    assert!(node.supply.grid());
                    assert!((0.5..=1.0).contains(&p));
                }
                None => assert!(!node.supply.grid()),
            }
        }
        assert!(s.channel.iter().all(|&g| g > 0.0));
        assert_eq!(s.cross.len(), net.cross_paths().len());
    }

    #[test]
    fn harvest_mean_matches_uniform_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = Dist::uniform(0.0, 2.0);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        let tol = 3.0 * 2.0 / (12.0 * n as f64).sqrt();
        assert!((mean - 1.0).abs() <= tol, "mean {mean}");
    }

    #[test]
    fn flat_and_affine_prices() {
        let state = SlotState {
            slot: 0,
            channel: vec![],
            cross: vec![],
            harvest: vec![0.0, 0.0],
            price: vec![Some(0.7), None],
        };
        assert_eq!(
            electricity_price(&state, NodeId(0), 1.5, &PriceModel::Flat).unwrap(),
            0.7
        );
        let unit = SlotState {
            harvest: vec![0.0],
            price: vec![Some(1.0)],
            ..state.clone()
        };
        assert_eq!(
            electricity_price(&unit, NodeId(0), 0.0, &PriceModel::Flat).unwrap(),
            1.0
        );
        let affine = SlotState {
            price: vec![Some(0.5)],
            ..unit
        };
        let p =
            electricity_price(&affine, NodeId(0), 2.0, &PriceModel::Affine { slope: 0.1 }).unwrap();
        assert!((p - 0.7).abs() < 1e-12);
        assert!(matches!(
            electricity_price(&state, NodeId(1), 1.0, &PriceModel::Flat),
            Err(Error::NoGridSupply(NodeId(1)))
        ));
    }
}
