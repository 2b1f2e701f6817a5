//! Data and energy queues, their one-slot dynamics and the per-slot
//! feasibility checks on a control decision.

use crate::error::{Error, Result};
use crate::model::{BoundConstants, LinkId, Network, NodeId, Params, SessionId};
use crate::powalloc::link_capacities;
use crate::stochastic::SlotState;

/// Slack allowed on every feasibility comparison.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    sessions: usize,
    /// Backlog per `(node, session)`, row-major by node.
    pub data: Vec<f64>,
    /// Stored energy per node.
    pub energy: Vec<f64>,
}

impl QueueState {
    /// Empty queues and batteries.
    pub fn zeros(net: &Network) -> Self {
        QueueState {
            sessions: net.num_sessions(),
            data: vec![0.0; net.num_nodes() * net.num_sessions()],
            energy: vec![0.0; net.num_nodes()],
        }
    }

    /// Initial state from the configured initial backlog and energy;
    /// destination backlogs stay at zero and energy is capped by `theta`.
    pub fn initial(net: &Network, params: &Params, bounds: &BoundConstants) -> Self {
        let mut s = QueueState::zeros(net);
        for n in 0..net.num_nodes() {
            s.energy[n] = params.initial_energy.min(bounds.theta[n]);
            for f in 0..net.num_sessions() {
                if !net.is_destination(NodeId(n), SessionId(f)) {
                    s.data[n * s.sessions + f] = params.initial_backlog.min(bounds.q_max);
                }
            }
        }
        s
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions
    }

    pub fn q(&self, n: NodeId, f: SessionId) -> f64 {
        self.data[n.0 * self.sessions + f.0]
    }

    pub fn set_q(&mut self, n: NodeId, f: SessionId, v: f64) {
        self.data[n.0 * self.sessions + f.0] = v;
    }

    pub fn e(&self, n: NodeId) -> f64 {
        self.energy[n.0]
    }
}

/// One slot of control actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    sessions: usize,
    /// Harvested energy per node.
    pub harvest: Vec<f64>,
    /// Grid purchase per node.
    pub purchase: Vec<f64>,
    /// Admitted source rate per session.
    pub rate: Vec<f64>,
    /// Transmit power per link.
    pub power: Vec<f64>,
    /// Routed rate per `(link, session)`, row-major by link.
    pub routed: Vec<f64>,
}

impl Decision {
    pub fn zeros(net: &Network) -> Self {
        Decision {
            sessions: net.num_sessions(),
            harvest: vec![0.0; net.num_nodes()],
            purchase: vec![0.0; net.num_nodes()],
            rate: vec![0.0; net.num_sessions()],
            power: vec![0.0; net.num_links()],
            routed: vec![0.0; net.num_links() * net.num_sessions()],
        }
    }

    pub fn x(&self, l: LinkId, f: SessionId) -> f64 {
        self.routed[l.0 * self.sessions + f.0]
    }

    pub fn set_x(&mut self, l: LinkId, f: SessionId, v: f64) {
        self.routed[l.0 * self.sessions + f.0] = v;
    }

    /// Total rate over all sessions on a link.
    pub fn link_flow(&self, l: LinkId) -> f64 {
        self.routed[l.0 * self.sessions..(l.0 + 1) * self.sessions]
            .iter()
            .sum()
    }
}

/// Energy a node spends in the slot: sensing, transmission and reception.
pub fn total_consumption(node: NodeId, dec: &Decision, net: &Network) -> f64 {
    let sensing: f64 = net
        .sourced(node)
        .iter()
        .map(|&f| net.sessions[f.0].sense_cost * dec.rate[f.0])
        .sum();
    let transmit: f64 = net.out_links(node).iter().map(|&l| dec.power[l.0]).sum();
    let received: f64 = net.in_links(node).iter().map(|&l| dec.link_flow(l)).sum();
    sensing + transmit + net.node(node).receive_cost * received
}

fn clamp_tiny(v: f64) -> f64 {
    if v < 0.0 && v > -FEASIBILITY_TOL {
        0.0
    } else {
        v
    }
}

/// Applies one slot of queue dynamics.
///
/// Fails if a node consumes more than it had stored at the start of the slot
/// or a backlog would go negative; both indicate a controller bug.
pub fn step(state: &QueueState, dec: &Decision, net: &Network, slot: u64) -> Result<QueueState> {
    let mut next = state.clone();
    for node in &net.nodes {
        let n = node.id;
        let consumption = total_consumption(n, dec, net);
        let stored = state.e(n);
        if consumption > stored + FEASIBILITY_TOL {
            return Err(Error::EnergyAvailability {
                node: n,
                slot,
                stored,
                consumption,
            });
        }
        let harvested = if node.supply.harvests() {
            dec.harvest[n.0]
        } else {
            0.0
        };
        let bought = if node.supply.grid() {
            dec.purchase[n.0]
        } else {
            0.0
        };
        next.energy[n.0] = clamp_tiny(stored + harvested + bought - consumption);
    }
    for s in &net.sessions {
        let f = s.id;
        for node in &net.nodes {
            let n = node.id;
            if s.destination == n {
                next.set_q(n, f, 0.0);
                continue;
            }
            let out: f64 = net.out_links(n).iter().map(|&l| dec.x(l, f)).sum();
            let inflow: f64 = net.in_links(n).iter().map(|&l| dec.x(l, f)).sum();
            let admitted = if s.source == n { dec.rate[f.0] } else { 0.0 };
            let q = clamp_tiny(state.q(n, f) - out + inflow + admitted);
            if q < 0.0 {
                return Err(Error::DataAvailability {
                    node: n,
                    session: f.0,
                    slot,
                    backlog: q,
                });
            }
            next.set_q(n, f, q);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    SourceRate {
        session: SessionId,
        rate: f64,
        max: f64,
    },
    PowerBudget {
        node: NodeId,
        total: f64,
        budget: f64,
    },
    NegativePower {
        link: LinkId,
        power: f64,
    },
    NegativeRate {
        link: LinkId,
        session: SessionId,
        rate: f64,
    },
    LinkCapacity {
        link: LinkId,
        flow: f64,
        capacity: f64,
    },
    EnergyAvailability {
        node: NodeId,
        stored: f64,
        consumption: f64,
    },
    BatteryCapacity {
        node: NodeId,
        level: f64,
        capacity: f64,
    },
    Harvest {
        node: NodeId,
        harvested: f64,
        available: f64,
    },
    Purchase {
        node: NodeId,
        purchased: f64,
        max: f64,
    },
    /// Harvest or purchase at a node whose supply class has no such source.
    SupplyMask {
        node: NodeId,
    },
    DataAvailability {
        node: NodeId,
        session: SessionId,
        outflow: f64,
        backlog: f64,
    },
}

/// Lists every constraint the decision breaks in the given state.
pub fn check_feasible(
    dec: &Decision,
    state: &QueueState,
    slot: &SlotState,
    net: &Network,
    _params: &Params,
    bounds: &BoundConstants,
) -> Vec<Violation> {
    const TOL: f64 = FEASIBILITY_TOL;
    let mut out = Vec::new();
    for s in &net.sessions {
        let r = dec.rate[s.id.0];
        if r < -TOL || r > s.max_rate + TOL {
            out.push(Violation::SourceRate {
                session: s.id,
                rate: r,
                max: s.max_rate,
            });
        }
    }
    let capacity = link_capacities(&dec.power, slot, net);
    for l in &net.links {
        let p = dec.power[l.id.0];
        if p < -TOL {
            out.push(Violation::NegativePower {
                link: l.id,
                power: p,
            });
        }
        for s in &net.sessions {
            let x = dec.x(l.id, s.id);
            if x < -TOL {
                out.push(Violation::NegativeRate {
                    link: l.id,
                    session: s.id,
                    rate: x,
                });
            }
        }
        let flow = dec.link_flow(l.id);
        // A link without power has no capacity but may carry nothing.
        let cap = capacity[l.id.0].max(0.0);
        if flow > cap + TOL {
            out.push(Violation::LinkCapacity {
                link: l.id,
                flow,
                capacity: capacity[l.id.0],
            });
        }
    }
    for node in &net.nodes {
        let n = node.id;
        let total: f64 = net.out_links(n).iter().map(|&l| dec.power[l.0]).sum();
        if total > node.max_power + TOL {
            out.push(Violation::PowerBudget {
                node: n,
                total,
                budget: node.max_power,
            });
        }
        let consumption = total_consumption(n, dec, net);
        if consumption > state.e(n) + TOL {
            out.push(Violation::EnergyAvailability {
                node: n,
                stored: state.e(n),
                consumption,
            });
        }
        let e = dec.harvest[n.0];
        let g = dec.purchase[n.0];
        if (!node.supply.harvests() && e != 0.0) || (!node.supply.grid() && g != 0.0) {
            out.push(Violation::SupplyMask { node: n });
        }
        if e < -TOL || e > slot.harvest[n.0] + TOL {
            out.push(Violation::Harvest {
                node: n,
                harvested: e,
                available: slot.harvest[n.0],
            });
        }
        if g < -TOL || g > node.grid_max + TOL {
            out.push(Violation::Purchase {
                node: n,
                purchased: g,
                max: node.grid_max,
            });
        }
        let level = state.e(n) + e + g;
        if level > bounds.theta[n.0] + TOL {
            out.push(Violation::BatteryCapacity {
                node: n,
                level,
                capacity: bounds.theta[n.0],
            });
        }
        for s in &net.sessions {
            let outflow: f64 = net.out_links(n).iter().map(|&l| dec.x(l, s.id)).sum();
            let backlog = state.q(n, s.id);
            if outflow > backlog + TOL {
                out.push(Violation::DataAvailability {
                    node: n,
                    session: s.id,
                    outflow,
                    backlog,
                });
            }
        }
    }
    out
}
