//! The per-slot controller: weights, energy management, source rates,
//! power allocation and max-weight scheduling.
//!
//! A node is *active* in a slot when its stored energy covers its
//! worst-case consumption. Inactive nodes neither sense, transmit nor
//! receive, which keeps every decision energy-feasible without looking
//! ahead.

use crate::error::{Error, Result};
use crate::model::{
    BoundConstants, LinkId, Network, NodeId, Params, PriceModel, SessionId, SupplyClass,
};
use crate::powalloc::{bcd_solve, link_capacities, BcdReport, PowerProblem};
use crate::queues::{total_consumption, Decision, QueueState};
use crate::stochastic::SlotState;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotWeights {
    sessions: usize,
    /// Energy weight `E - theta` per node, never positive.
    pub a: Vec<f64>,
    /// Scaled unit electricity price per node at zero purchase; zero off-grid.
    pub d: Vec<f64>,
    /// Differential backlog weight per `(link, session)`.
    pub w: Vec<f64>,
    /// `max(w - sigma, 0)` per `(link, session)`.
    pub w_tilde: Vec<f64>,
    /// Per link: the session with the largest shifted weight and that weight.
    pub best: Vec<Option<(SessionId, f64)>>,
    /// Whether each node holds enough energy to act this slot.
    pub active: Vec<bool>,
}

impl SlotWeights {
    pub fn w(&self, l: LinkId, f: SessionId) -> f64 {
        self.w[l.0 * self.sessions + f.0]
    }

    pub fn w_tilde(&self, l: LinkId, f: SessionId) -> f64 {
        self.w_tilde[l.0 * self.sessions + f.0]
    }

    /// Largest shifted weight on a link, zero without sessions.
    pub fn best_weight(&self, l: LinkId) -> f64 {
        self.best[l.0].map_or(0.0, |(_, w)| w)
    }
}

/// `V (1 - w1) w2`, the factor turning a unit price into an energy weight.
pub fn cost_scale(params: &Params) -> f64 {
    params.penalty_weight * (1.0 - params.utility_weight) * params.cost_mapping
}

pub fn compute_weights(
    state: &QueueState,
    slot: &SlotState,
    net: &Network,
    params: &Params,
    bounds: &BoundConstants,
) -> SlotWeights {
    let nf = net.num_sessions();
    let a: Vec<f64> = (0..net.num_nodes())
        .map(|n| state.energy[n] - bounds.theta[n])
        .collect();
    let k = cost_scale(params);
    let d = (0..net.num_nodes())
        .map(|n| slot.price[n].map_or(0.0, |s| k * params.price_model.unit_price(s, 0.0)))
        .collect();
    let active = (0..net.num_nodes())
        .map(|n| state.energy[n] >= bounds.p_total_max[n])
        .collect();
    let mut w = vec![0.0; net.num_links() * nf];
    let mut w_tilde = vec![0.0; net.num_links() * nf];
    let mut best = vec![None; net.num_links()];
    for l in &net.links {
        let rx_term = a[l.rx.0] * net.node(l.rx).receive_cost;
        for s in &net.sessions {
            let f = s.id;
            let i = l.id.0 * nf + f.0;
            w[i] = state.q(l.tx, f) - state.q(l.rx, f) + rx_term;
            w_tilde[i] = (w[i] - bounds.sigma).max(0.0);
            // Strict comparison keeps the lowest session id on ties.
            match best[l.id.0] {
                Some((_, b)) if w_tilde[i] <= b => {}
                _ => best[l.id.0] = Some((f, w_tilde[i])),
            }
        }
    }
    SlotWeights {
        sessions: nf,
        a,
        d,
        w,
        w_tilde,
        best,
        active,
    }
}

/// Cost of buying `g` units, in the same scale as the energy weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PurchaseCost {
    /// `d * g`.
    Linear(f64),
    /// `linear * g + quadratic * g^2`.
    Quadratic { linear: f64, quadratic: f64 },
}

impl PurchaseCost {
    pub fn for_price(scale: f64, price_state: f64, model: &PriceModel) -> Self {
        match *model {
            PriceModel::Flat => PurchaseCost::Linear(scale * price_state),
            PriceModel::Affine { slope } => PurchaseCost::Quadratic {
                linear: scale * price_state,
                quadratic: scale * slope,
            },
        }
    }

    pub fn eval(&self, g: f64) -> f64 {
        match *self {
            PurchaseCost::Linear(d) => d * g,
            PurchaseCost::Quadratic { linear, quadratic } => linear * g + quadratic * g * g,
        }
    }
}

/// Harvest and purchase for one node: minimizes `-c e + cost(g) - c g`
/// with `c = theta - E`, `0 <= e <= h`, `0 <= g <= g_max`, `e + g <= c`.
pub fn energy_management(
    supply: SupplyClass,
    stored: f64,
    theta: f64,
    cost: PurchaseCost,
    harvestable: f64,
    grid_max: f64,
) -> Result<(f64, f64)> {
    if stored > theta + 1e-9 * (1.0 + theta.abs()) {
        return Err(Error::StateCorruption {
            energy: stored,
            capacity: theta,
        });
    }
    let c = (theta - stored).max(0.0);
    // Harvested energy is free, so it always goes first.
    let e = if supply.harvests() {
        harvestable.min(c)
    } else {
        0.0
    };
    let room = if supply.grid() {
        grid_max.min(c - e).max(0.0)
    } else {
        0.0
    };
    let g = match cost {
        PurchaseCost::Linear(d) => {
            if d - c < 0.0 {
                room
            } else {
                0.0
            }
        }
        PurchaseCost::Quadratic { linear, quadratic } => {
            if quadratic > 0.0 {
                ((c - linear) / (2.0 * quadratic)).clamp(0.0, room)
            } else if linear - c < 0.0 {
                room
            } else {
                0.0
            }
        }
    };
    Ok((e, g))
}

/// Source rate maximizing `V w1 U(r) - (Q - A * sense_cost) r` on `[0, r_max]`.
pub fn source_rate(
    net: &Network,
    f: SessionId,
    backlog: f64,
    energy_weight: f64,
    params: &Params,
) -> f64 {
    let s = &net.sessions[f.0];
    let denom = backlog - energy_weight * s.sense_cost;
    if denom <= 0.0 {
        return s.max_rate;
    }
    let scale = params.penalty_weight * params.utility_weight;
    if scale <= 0.0 {
        return 0.0;
    }
    s.utility
        .inverse_derivative(denom / scale)
        .clamp(0.0, s.max_rate)
}

/// Routed rate per `(link, session)`: each link carries only its best
/// session, at its capacity capped by `x_max`, when both the capacity and
/// the shifted weight are positive.
pub fn schedule(
    weights: &SlotWeights,
    capacities: &[f64],
    x_max: f64,
    sessions: usize,
) -> Vec<f64> {
    let mut x = vec![0.0; capacities.len() * sessions];
    for (l, &c) in capacities.iter().enumerate() {
        if let Some((f, w)) = weights.best[l] {
            if w > 0.0 && c > 0.0 {
                x[l * sessions + f.0] = c.min(x_max);
            }
        }
    }
    x
}

/// Raw rate utility and electricity cost `(sum U, sum price * g)`.
pub fn slot_terms(
    dec: &Decision,
    slot: &SlotState,
    net: &Network,
    params: &Params,
) -> Result<(f64, f64)> {
    let utility = net
        .sessions
        .iter()
        .map(|s| s.utility.value(dec.rate[s.id.0]))
        .sum();
    let mut cost = 0.0;
    for node in net.nodes.iter().filter(|n| n.supply.grid()) {
        let g = dec.purchase[node.id.0];
        if g != 0.0 {
            let price =
                crate::stochastic::electricity_price(slot, node.id, g, &params.price_model)?;
            cost += price * g;
        }
    }
    Ok((utility, cost))
}

/// Objective of one slot: weighted utility minus mapped electricity cost.
pub fn slot_objective(
    dec: &Decision,
    slot: &SlotState,
    net: &Network,
    params: &Params,
) -> Result<f64> {
    let (u, c) = slot_terms(dec, slot, net, params)?;
    Ok(combine_objective(u, c, params))
}

pub fn combine_objective(utility: f64, cost: f64, params: &Params) -> f64 {
    params.utility_weight * utility - (1.0 - params.utility_weight) * params.cost_mapping * cost
}

/// The expanded drift-plus-penalty term minimized by the controller,
/// evaluated on a decision. Constant `B` is not included.
pub fn delta_tilde(
    state: &QueueState,
    dec: &Decision,
    slot: &SlotState,
    net: &Network,
    params: &Params,
    bounds: &BoundConstants,
) -> Result<f64> {
    let k = cost_scale(params);
    let a = |n: NodeId| state.e(n) - bounds.theta[n.0];
    let mut total = 0.0;
    for node in &net.nodes {
        let n = node.id;
        if node.supply.harvests() {
            total += a(n) * dec.harvest[n.0];
        }
        if node.supply.grid() {
            let g = dec.purchase[n.0];
            let d = match slot.price[n.0] {
                Some(s) => k * params.price_model.unit_price(s, g),
                None => return Err(Error::NoGridSupply(n)),
            };
            total += (d + a(n)) * g;
        }
    }
    let vw = params.penalty_weight * params.utility_weight;
    for s in &net.sessions {
        let r = dec.rate[s.id.0];
        let q = state.q(s.source, s.id);
        total -= vw * s.utility.value(r) - q * r + a(s.source) * s.sense_cost * r;
    }
    for l in &net.links {
        let rx_term = a(l.rx) * net.node(l.rx).receive_cost;
        let mut flow_term = 0.0;
        for s in &net.sessions {
            let w = state.q(l.tx, s.id) - state.q(l.rx, s.id) + rx_term;
            flow_term += w * dec.x(l.id, s.id);
        }
        total -= flow_term + a(l.tx) * dec.power[l.id.0];
    }
    Ok(total)
}

/// A committed link where capacity exceeds `delta * power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaExcess {
    pub link: LinkId,
    pub power: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub objective: f64,
    pub utility: f64,
    pub cost: f64,
    pub delta_tilde: f64,
    pub capacities: Vec<f64>,
    pub consumption: Vec<f64>,
    pub delta_excess: Vec<DeltaExcess>,
    pub bcd: BcdReport,
    pub active: Vec<bool>,
}

/// One slot of the controller.
pub fn run_slot(
    state: &QueueState,
    slot: &SlotState,
    net: &Network,
    params: &Params,
    bounds: &BoundConstants,
) -> Result<(Decision, Diagnostics)> {
    let weights = compute_weights(state, slot, net, params, bounds);
    let mut dec = Decision::zeros(net);
    let k = cost_scale(params);

    for node in &net.nodes {
        let n = node.id.0;
        let cost = match slot.price[n] {
            Some(s) => PurchaseCost::for_price(k, s, &params.price_model),
            None => PurchaseCost::Linear(0.0),
        };
        let (e, g) = energy_management(
            node.supply,
            state.energy[n],
            bounds.theta[n],
            cost,
            slot.harvest[n],
            node.grid_max,
        )?;
        dec.harvest[n] = e;
        dec.purchase[n] = g;
    }

    for s in &net.sessions {
        if weights.active[s.source.0] {
            dec.rate[s.id.0] = source_rate(
                net,
                s.id,
                state.q(s.source, s.id),
                weights.a[s.source.0],
                params,
            );
        }
    }

    let include: Vec<bool> = net
        .links
        .iter()
        .map(|l| {
            weights.active[l.tx.0] && weights.active[l.rx.0] && weights.best_weight(l.id) > 0.0
        })
        .collect();
    let best: Vec<f64> = net
        .links
        .iter()
        .map(|l| weights.best_weight(l.id))
        .collect();
    let prob = PowerProblem::from_network(net, slot, &best, &weights.a, &include)?;
    let (p, bcd) = bcd_solve(&prob)?;
    for (pl, &v) in prob.links.iter().zip(&p) {
        dec.power[pl.id.0] = v;
    }
    trim_powers(&mut dec.power, slot, net, params.x_max);
    let capacities = link_capacities(&dec.power, slot, net);

    dec.routed = schedule(&weights, &capacities, params.x_max, net.num_sessions());

    let delta_excess = net
        .links
        .iter()
        .filter_map(|l| {
            let (p, c) = (dec.power[l.id.0], capacities[l.id.0]);
            (p > 0.0 && c > params.delta * p).then_some(DeltaExcess {
                link: l.id,
                power: p,
                capacity: c,
            })
        })
        .collect();
    let (utility, cost) = slot_terms(&dec, slot, net, params)?;
    let consumption = (0..net.num_nodes())
        .map(|n| total_consumption(NodeId(n), &dec, net))
        .collect();
    let diag = Diagnostics {
        objective: combine_objective(utility, cost, params),
        utility,
        cost,
        delta_tilde: delta_tilde(state, &dec, slot, net, params, bounds)?,
        capacities,
        consumption,
        delta_excess,
        bcd,
        active: weights.active,
    };
    Ok((dec, diag))
}

/// Silences links whose capacity is not positive, then lowers, in link
/// order, the power of links whose capacity exceeds `x_max` to the level
/// giving exactly `x_max` under the current interference.
pub fn trim_powers(power: &mut [f64], slot: &SlotState, net: &Network, x_max: f64) {
    let caps = link_capacities(power, slot, net);
    for (p, c) in power.iter_mut().zip(&caps) {
        if *p > 0.0 && *c <= 0.0 {
            *p = 0.0;
        }
    }
    for l in &net.links {
        let i = l.id.0;
        if power[i] <= 0.0 {
            continue;
        }
        let c = crate::powalloc::capacity(l.id, power, slot, net);
        if c > x_max {
            power[i] *= (x_max - c).exp();
        }
    }
}
