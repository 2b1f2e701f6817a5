//! Brute-force reference solvers for tests.
//!
//! Nothing here calls into the controller, the power solver or the
//! audits; each routine recomputes its answer from the raw definitions.

use crate::error::{Error, Result};
use crate::model::{BoundConstants, Network, Params, PriceModel, Session, SupplyClass};
use crate::powalloc::PowerProblem;
use crate::queues::{Decision, QueueState};
use crate::stochastic::SlotState;

/// Best source rate on a uniform grid of `points` values over `[0, r_max]`.
pub fn grid_rate_oracle(
    backlog: f64,
    energy_weight: f64,
    session: &Session,
    params: &Params,
    points: usize,
) -> f64 {
    let vw = params.penalty_weight * params.utility_weight;
    let slope = backlog - energy_weight * session.sense_cost;
    let n = points.max(2);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..n {
        let r = session.max_rate * i as f64 / (n - 1) as f64;
        let v = vw * (1.0 + r).ln() - slope * r;
        if v > best.0 {
            best = (v, r);
        }
    }
    best.1
}

/// Exact solution of the two-variable harvest/purchase program by vertex
/// enumeration. Among optimal vertices the one with the most harvest and
/// then the least purchase is returned.
pub fn lp_energy_oracle(
    supply: SupplyClass,
    stored: f64,
    theta: f64,
    price_weight: f64,
    harvestable: f64,
    grid_max: f64,
) -> (f64, f64) {
    let c = theta - stored;
    let eh = if matches!(supply, SupplyClass::EH | SupplyClass::ME) {
        harvestable
    } else {
        0.0
    };
    let gh = if matches!(supply, SupplyClass::EG | SupplyClass::ME) {
        grid_max
    } else {
        0.0
    };
    // Lines a*e + b*g = rhs.
    let lines = [
        (1.0, 0.0, 0.0),
        (1.0, 0.0, eh),
        (0.0, 1.0, 0.0),
        (0.0, 1.0, gh),
        (1.0, 1.0, c),
    ];
    let feasible = |e: f64, g: f64| {
        let tol = 1e-12 * (1.0 + c.abs());
        e >= -tol && e <= eh + tol && g >= -tol && g <= gh + tol && e + g <= c + tol
    };
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let (a1, b1, r1) = lines[i];
            let (a2, b2, r2) = lines[j];
            let det = a1 * b2 - a2 * b1;
            if det == 0.0 {
                continue;
            }
            let e = (r1 * b2 - r2 * b1) / det;
            let g = (a1 * r2 - a2 * r1) / det;
            if !feasible(e, g) {
                continue;
            }
            let obj = -c * e + (price_weight - c) * g;
            let better = match best {
                None => true,
                Some((bo, be, bg)) => obj < bo || (obj == bo && (e > be || (e == be && g < bg))),
            };
            if better {
                best = Some((obj, e, g));
            }
        }
    }
    best.map_or((0.0, 0.0), |(_, e, g)| (e.max(0.0), g.max(0.0)))
}

fn power_objective(p: &[f64], prob: &PowerProblem) -> f64 {
    let mut total = 0.0;
    for (i, l) in prob.links.iter().enumerate() {
        if l.weight > 0.0 {
            let mut denom = l.noise;
            for &(j, g) in &l.interferers {
                denom += g * p[j];
            }
            total += l.weight * (l.processing_gain * l.gain * p[i] / denom).ln();
        }
        total += prob.blocks[l.block].price * p[i];
    }
    total
}

fn budget_ok(p: &[f64], prob: &PowerProblem) -> bool {
    prob.blocks
        .iter()
        .all(|b| b.links.iter().map(|&l| p[l]).sum::<f64>() <= b.budget * (1.0 + 1e-12))
}

/// Exhaustive maximizer of `sum (W C + A p)` for at most three links: a
/// logarithmic grid per link over `[1e-9, P_max]` (400 points, 100 for
/// three links), then repeated local zooms around the incumbent.
pub fn grid_power_oracle(prob: &PowerProblem) -> Result<(Vec<f64>, f64)> {
    let n = prob.links.len();
    if n > 3 {
        return Err(Error::OracleSize(n));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // The problem is concave in log-powers, so the zoom recovers what a
    // coarser first grid misses.
    let points = if n == 3 { 100 } else { 400 };
    let lo = 1e-9f64.ln();
    let hi: Vec<f64> = prob
        .links
        .iter()
        .map(|l| prob.blocks[l.block].budget.ln())
        .collect();
    let axis: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..points)
                .map(|i| (lo + (hi[k] - lo) * i as f64 / (points - 1) as f64).exp())
                .collect()
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut p = vec![0.0; n];
    let mut idx = vec![0usize; n];
    loop {
        for k in 0..n {
            p[k] = axis[k][idx[k]];
        }
        if budget_ok(&p, prob) {
            let v = power_objective(&p, prob);
            if v > best.0 {
                best = (v, p.clone());
            }
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }

    // Zoom in log space around the incumbent.
    let mut width = (0..n)
        .map(|k| 2.0 * (hi[k] - lo) / (points - 1) as f64)
        .collect::<Vec<_>>();
    const ZOOM: usize = 21;
    for _ in 0..60 {
        let centre: Vec<f64> = best.1.iter().map(|v| v.ln()).collect();
        let mut idx = vec![0usize; n];
        loop {
            for k in 0..n {
                let t = centre[k] + width[k] * (idx[k] as f64 / (ZOOM - 1) as f64 * 2.0 - 1.0);
                p[k] = t.clamp(lo, hi[k]).exp();
            }
            if budget_ok(&p, prob) {
                let v = power_objective(&p, prob);
                if v > best.0 {
                    best = (v, p.clone());
                }
            }
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < ZOOM {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        for w in &mut width {
            *w *= 0.5;
        }
    }
    Ok((best.1, best.0))
}

/// Every term on both sides of the one-slot drift-plus-penalty bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftTerms {
    /// `L(t+1) - L(t)`, data part.
    pub data_drift: f64,
    /// `L(t+1) - L(t)`, energy part.
    pub energy_drift: f64,
    /// `V O(t)`.
    pub penalty: f64,
    /// Backlog-weighted net arrivals.
    pub data_term: f64,
    /// Energy-weight-weighted net energy inflow.
    pub energy_term: f64,
    /// `-V O(t)` as it enters the right-hand side.
    pub penalty_term: f64,
    /// Sum of the three terms above.
    pub delta_tilde: f64,
    pub b: f64,
}

impl DriftTerms {
    pub fn lhs(&self) -> f64 {
        self.data_drift + self.energy_drift - self.penalty
    }

    pub fn rhs(&self) -> f64 {
        self.b + self.delta_tilde
    }
}

/// Recomputes the drift-plus-penalty bound from its unexpanded form.
pub fn drift_term_oracle(
    before: &QueueState,
    after: &QueueState,
    dec: &Decision,
    slot: &SlotState,
    net: &Network,
    params: &Params,
    bounds: &BoundConstants,
) -> DriftTerms {
    let nf = net.num_sessions();
    let mut data_drift = 0.0;
    for (q0, q1) in before.data.iter().zip(&after.data) {
        data_drift += 0.5 * (q1 - q0) * (q1 + q0);
    }
    let mut energy_drift = 0.0;
    for n in 0..net.num_nodes() {
        let z0 = before.energy[n] - bounds.theta[n];
        let z1 = after.energy[n] - bounds.theta[n];
        energy_drift += 0.5 * (z1 - z0) * (z1 + z0);
    }

    let mut data_term = 0.0;
    for n in 0..net.num_nodes() {
        for f in 0..nf {
            let mut net_in = 0.0;
            let s = &net.sessions[f];
            if s.source.0 == n {
                net_in += dec.rate[f];
            }
            for l in &net.links {
                let x = dec.routed[l.id.0 * nf + f];
                if l.rx.0 == n {
                    net_in += x;
                }
                if l.tx.0 == n {
                    net_in -= x;
                }
            }
            data_term += before.data[n * nf + f] * net_in;
        }
    }

    let mut energy_term = 0.0;
    let mut cost = 0.0;
    for node in &net.nodes {
        let n = node.id.0;
        let mut consumption = 0.0;
        for s in net.sessions.iter().filter(|s| s.source.0 == n) {
            consumption += s.sense_cost * dec.rate[s.id.0];
        }
        for l in &net.links {
            if l.tx.0 == n {
                consumption += dec.power[l.id.0];
            }
            if l.rx.0 == n {
                let flow: f64 = dec.routed[l.id.0 * nf..(l.id.0 + 1) * nf].iter().sum();
                consumption += node.receive_cost * flow;
            }
        }
        let harvests = matches!(node.supply, SupplyClass::EH | SupplyClass::ME);
        let grid = matches!(node.supply, SupplyClass::EG | SupplyClass::ME);
        let inflow =
            if harvests { dec.harvest[n] } else { 0.0 } + if grid { dec.purchase[n] } else { 0.0 };
        energy_term += (before.energy[n] - bounds.theta[n]) * (inflow - consumption);
        if grid {
            let g = dec.purchase[n];
            let s = slot.price[n].unwrap_or(f64::NAN);
            let unit = match params.price_model {
                PriceModel::Flat => s,
                PriceModel::Affine { slope } => s + slope * g,
            };
            if g != 0.0 {
                cost += unit * g;
            }
        }
    }
    let utility: f64 = net.sessions.iter().map(|s| dec.rate[s.id.0].ln_1p()).sum();
    let objective = params.utility_weight * utility
        - (1.0 - params.utility_weight) * params.cost_mapping * cost;
    let penalty = params.penalty_weight * objective;

    DriftTerms {
        data_drift,
        energy_drift,
        penalty,
        data_term,
        energy_term,
        penalty_term: -penalty,
        delta_tilde: data_term + energy_term - penalty,
        b: bounds.b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::two_node;

    #[test]
    fn rate_oracle_edge_cases() {
        let net = two_node();
        let s = &net.sessions[0];
        let params = Params::default();
        assert_eq!(grid_rate_oracle(0.0, 0.0, s, &params, 10_001), 3.0);
        let zero_v = Params {
            penalty_weight: 0.0,
            ..Params::default()
        };
        assert_eq!(grid_rate_oracle(10.0, 0.0, s, &zero_v, 10_001), 0.0);
    }

    #[test]
    fn lp_oracle_edge_cases() {
        assert_eq!(
            lp_energy_oracle(SupplyClass::ME, 5.0, 5.0, 1.0, 2.0, 2.0),
            (0.0, 0.0)
        );
        assert_eq!(
            lp_energy_oracle(SupplyClass::EH, 4.0, 10.0, 0.0, 9.0, 2.0),
            (6.0, 0.0)
        );
        assert_eq!(
            lp_energy_oracle(SupplyClass::ME, 4.0, 10.0, 1.0, 2.0, 2.0),
            (2.0, 2.0)
        );
        assert_eq!(
            lp_energy_oracle(SupplyClass::ME, 4.0, 10.0, 100.0, 2.0, 2.0),
            (2.0, 0.0)
        );
    }

    #[test]
    fn power_oracle_rejects_large_problems() {
        use crate::model::{LinkId, NodeId};
        use crate::powalloc::{PowerBlock, PowerLink};
        let links = (0..4)
            .map(|i| PowerLink {
                id: LinkId(i),
                block: i,
                weight: 1.0,
                gain: 1.0,
                noise: 1.0,
                processing_gain: 100.0,
                interferers: vec![],
            })
            .collect();
        let blocks = (0..4)
            .map(|i| PowerBlock {
                node: NodeId(i),
                links: vec![i],
                budget: 1.0,
                price: -1.0,
            })
            .collect();
        let prob = PowerProblem::new(links, blocks).unwrap();
        assert!(matches!(
            grid_power_oracle(&prob),
            Err(Error::OracleSize(4))
        ));
    }

    #[test]
    fn zero_slot_has_only_constants() {
        let net = two_node();
        let params = Params::default();
        let bounds = crate::model::bound_constants(&net, &params);
        let state = QueueState::zeros(&net);
        let dec = Decision::zeros(&net);
        let slot = SlotState {
            slot: 0,
            channel: vec![1.0],
            cross: vec![],
            harvest: vec![0.0, 0.0],
            price: vec![Some(1.0), Some(1.0)],
        };
        let t = drift_term_oracle(&state, &state, &dec, &slot, &net, &params, &bounds);
        assert_eq!(t.lhs(), 0.0);
        assert_eq!(t.delta_tilde, 0.0);
        assert_eq!(t.rhs(), bounds.b);
    }

    #[test]
    fn single_session_hand_example() {
        // Source 0 with Q = 10, E = 100; node 1 has E = 50. The source
        // senses r = 1, sends x = 2 at p = 0.5; node 1 buys g = 1 at price 0.8.
        let net = two_node();
        let params = Params::default();
        let bounds = crate::model::bound_constants(&net, &params);
        let mut before = QueueState::zeros(&net);
        before.energy = vec![100.0, 50.0];
        before.data[0] = 10.0;
        let mut dec = Decision::zeros(&net);
        dec.rate[0] = 1.0;
        dec.power[0] = 0.5;
        dec.routed[0] = 2.0;
        dec.purchase[1] = 1.0;
        let slot = SlotState {
            slot: 0,
            channel: vec![1.0],
            cross: vec![],
            harvest: vec![0.0, 0.0],
            price: vec![Some(1.0), Some(0.8)],
        };
        let after = crate::queues::step(&before, &dec, &net, 0).unwrap();
        let t = drift_term_oracle(&before, &after, &dec, &slot, &net, &params, &bounds);
        let (a0, a1) = (100.0 - bounds.theta[0], 50.0 - bounds.theta[1]);
        let data = 10.0 * (1.0 - 2.0);
        let energy = a0 * (0.0 - (0.1 + 0.5)) + a1 * (1.0 - 0.05 * 2.0);
        let objective = 0.6 * 2f64.ln() - 0.4 * 0.5 * 0.8;
        assert!((t.data_term - data).abs() < 1e-9);
        assert!((t.energy_term - energy).abs() < 1e-9);
        assert!((t.delta_tilde - (data + energy - 1000.0 * objective)).abs() < 1e-9);
        assert!(t.lhs() <= t.rhs());
    }
}
