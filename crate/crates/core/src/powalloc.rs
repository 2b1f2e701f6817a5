//! Per-slot transmit power allocation.
//!
//! Links are optimized in the log-power domain `y = ln p`, where the
//! weighted sum of log-SINRs is concave. Each node owns a block (its
//! outgoing links) constrained by `sum exp(y) <= P_max`; blocks are
//! updated Gauss-Seidel in ascending node order until the objective
//! stalls.

use crate::error::{Error, Result};
use crate::model::{LinkId, Network, NodeId};
use crate::stochastic::SlotState;

/// Smallest representable power; a block optimum at this floor commits as zero.
pub const POWER_FLOOR: f64 = 1e-9;
pub const INNER_TOL: f64 = 1e-8;
pub const INNER_MAX_ITER: usize = 200;
pub const OUTER_TOL: f64 = 1e-8;
pub const OUTER_MAX_SWEEPS: usize = 100;

/// Capacity of link `l` under the power vector `p` (indexed by link id);
/// `-inf` when the link is silent.
pub fn capacity(l: LinkId, p: &[f64], slot: &SlotState, net: &Network) -> f64 {
    let link = net.link(l);
    let own = p[l.0];
    if own <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut denom = net.node(link.rx).noise_floor;
    for i in net.interferers(l) {
        let pj = p[i.link.0];
        if pj > 0.0 {
            denom += slot.gain(i.gain) * pj;
        }
    }
    (link.processing_gain * slot.channel[l.0] * own / denom).ln()
}

pub fn link_capacities(p: &[f64], slot: &SlotState, net: &Network) -> Vec<f64> {
    (0..net.num_links())
        .map(|l| capacity(LinkId(l), p, slot, net))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLink {
    pub id: LinkId,
    /// Index of the owning block in [`PowerProblem::blocks`].
    pub block: usize,
    /// Shifted max-weight `W~*`, nonnegative.
    pub weight: f64,
    /// Direct channel gain.
    pub gain: f64,
    /// Noise floor at the receiver.
    pub noise: f64,
    pub processing_gain: f64,
    /// `(problem link index, path gain)` of co-channel transmitters heard at the receiver.
    pub interferers: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerBlock {
    pub node: NodeId,
    /// Problem link indices owned by this node.
    pub links: Vec<usize>,
    pub budget: f64,
    /// Energy price `A_n <= 0` charged per unit power.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerProblem {
    pub links: Vec<PowerLink>,
    pub blocks: Vec<PowerBlock>,
    /// Per link: `(victim index, gain)` for every link this one interferes with.
    victims: Vec<Vec<(usize, f64)>>,
    /// Per block: links whose log-SINR depends on the block.
    touched: Vec<Vec<usize>>,
}

impl PowerProblem {
    pub fn new(links: Vec<PowerLink>, blocks: Vec<PowerBlock>) -> Result<Self> {
        let mut owner = vec![None; links.len()];
        for (b, block) in blocks.iter().enumerate() {
            if !(block.price <= 0.0) || !(block.budget > 0.0) {
                return Err(Error::Validation(format!(
                    "power block of node {} needs price <= 0 and budget > 0",
                    block.node
                )));
            }
            for &l in &block.links {
                if l >= links.len() || owner[l].is_some() {
                    return Err(Error::Validation(format!(
                        "link index {l} badly assigned to blocks"
                    )));
                }
                owner[l] = Some(b);
            }
        }
        let mut victims = vec![Vec::new(); links.len()];
        for (i, l) in links.iter().enumerate() {
            if owner[i] != Some(l.block) {
                return Err(Error::Validation(format!("link {} block mismatch", l.id)));
            }
            if !(l.weight >= 0.0 && l.gain > 0.0 && l.noise > 0.0 && l.processing_gain > 0.0) {
                return Err(Error::Validation(format!(
                    "link {} has invalid coefficients",
                    l.id
                )));
            }
            for &(j, g) in &l.interferers {
                if j >= links.len() || j == i {
                    return Err(Error::Validation(format!(
                        "link {} has a bad interferer",
                        l.id
                    )));
                }
                victims[j].push((i, g));
            }
        }
        let touched = blocks
            .iter()
            .map(|b| {
                let mut t: Vec<usize> = b.links.clone();
                for &l in &b.links {
                    t.extend(victims[l].iter().map(|&(v, _)| v));
                }
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        Ok(PowerProblem {
            links,
            blocks,
            victims,
            touched,
        })
    }

    /// Problem over the links with `include[l]`, weights `weight[l]` and node
    /// prices `price[n]`. Excluded links are treated as silent.
    pub fn from_network(
        net: &Network,
        slot: &SlotState,
        weight: &[f64],
        price: &[f64],
        include: &[bool],
    ) -> Result<Self> {
        let mut index = vec![usize::MAX; net.num_links()];
        let mut blocks: Vec<PowerBlock> = Vec::new();
        let mut links = Vec::new();
        for node in &net.nodes {
            let mine: Vec<LinkId> = net
                .out_links(node.id)
                .iter()
                .copied()
                .filter(|l| include[l.0])
                .collect();
            if mine.is_empty() {
                continue;
            }
            let b = blocks.len();
            let mut owned = Vec::new();
            for l in mine {
                index[l.0] = links.len();
                owned.push(links.len());
                let link = net.link(l);
                links.push(PowerLink {
                    id: l,
                    block: b,
                    weight: weight[l.0],
                    gain: slot.channel[l.0],
                    noise: net.node(link.rx).noise_floor,
                    processing_gain: link.processing_gain,
                    interferers: Vec::new(),
                });
            }
            blocks.push(PowerBlock {
                node: node.id,
                links: owned,
                budget: node.max_power,
                price: price[node.id.0],
            });
        }
        for pl in &mut links {
            pl.interferers = net
                .interferers(pl.id)
                .iter()
                .filter(|i| include[i.link.0])
                .map(|i| (index[i.link.0], slot.gain(i.gain)))
                .collect();
        }
        PowerProblem::new(links, blocks)
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

fn interference(l: usize, p: &[f64], prob: &PowerProblem) -> f64 {
    let link = &prob.links[l];
    link.noise + link.interferers.iter().map(|&(j, g)| g * p[j]).sum::<f64>()
}

fn psi_p(l: usize, y: &[f64], p: &[f64], prob: &PowerProblem) -> f64 {
    prob.links[l].gain.ln() + y[l] - interference(l, p, prob).ln()
}

fn powers(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v.exp()).collect()
}

/// Log-SINR of problem link `l` at log-powers `y`, without the processing gain.
pub fn psi(l: usize, y: &[f64], prob: &PowerProblem) -> f64 {
    psi_p(l, y, &powers(y), prob)
}

/// Full objective in the log domain: `sum W psi + sum A exp(y)`.
pub fn objective_log(y: &[f64], prob: &PowerProblem) -> f64 {
    let p = powers(y);
    prob.links
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let w = if link.weight > 0.0 {
                link.weight * psi_p(l, y, &p, prob)
            } else {
                0.0
            };
            w + prob.blocks[link.block].price * p[l]
        })
        .sum()
}

/// `sum (W C + A p)` over linear powers `p`, with the processing gain included.
pub fn objective_g(p: &[f64], prob: &PowerProblem) -> f64 {
    let y: Vec<f64> = p.iter().map(|&v| v.ln()).collect();
    prob.links
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let rate = if link.weight > 0.0 {
                link.weight * (link.processing_gain.ln() + psi_p(l, &y, p, prob))
            } else {
                0.0
            };
            rate + prob.blocks[link.block].price * p[l]
        })
        .sum()
}

/// Part of the objective that depends on block `b`.
fn block_objective(b: usize, y: &[f64], p: &[f64], prob: &PowerProblem) -> f64 {
    let mut v = 0.0;
    for &l in &prob.touched[b] {
        let w = prob.links[l].weight;
        if w > 0.0 {
            v += w * psi_p(l, y, p, prob);
        }
    }
    let price = prob.blocks[b].price;
    for &l in &prob.blocks[b].links {
        v += price * p[l];
    }
    v
}

/// Gradient of the full objective with respect to block `b`'s log-powers.
pub fn psi_gradient(b: usize, y: &[f64], prob: &PowerProblem) -> Vec<f64> {
    gradient_p(b, &powers(y), prob)
}

fn gradient_p(b: usize, p: &[f64], prob: &PowerProblem) -> Vec<f64> {
    let block = &prob.blocks[b];
    block
        .links
        .iter()
        .map(|&l| {
            let own = p[l];
            let mut d = prob.links[l].weight + block.price * own;
            for &(v, g) in &prob.victims[l] {
                let w = prob.links[v].weight;
                if w > 0.0 {
                    d -= w * g * own / interference(v, p, prob);
                }
            }
            d
        })
        .collect()
}

/// Solves `w + ln w = c` for `w > 0`.
fn omega(c: f64) -> f64 {
    let mut w = if c > 1.0 { c - c.ln() } else { c.exp() };
    for _ in 0..50 {
        let next = w * (1.0 + c - w.ln()) / (1.0 + w);
        let next = if next > 0.0 { next } else { w * 1e-3 };
        if (next - w).abs() <= 1e-15 * w {
            return next;
        }
        w = next;
    }
    w
}

/// Euclidean projection of `z` onto `{y >= ln floor, sum exp(y) <= budget}`.
pub fn project(z: &[f64], budget: f64) -> Vec<f64> {
    let lo = POWER_FLOOR.ln();
    let clamped: Vec<f64> = z.iter().map(|&v| v.max(lo)).collect();
    let total: f64 = clamped.iter().map(|v| v.exp()).sum();
    if total <= budget {
        return clamped;
    }
    if z.len() == 1 {
        return vec![budget.ln().max(lo)];
    }
    // y_i = max(lo, z_i - u_i) with u_i + ln u_i = z_i + t, t = ln(multiplier).
    let eval = |t: f64| -> (Vec<f64>, f64, f64) {
        let mut y = Vec::with_capacity(z.len());
        let (mut sum, mut slope) = (0.0, 0.0);
        for &zi in z {
            let u = omega(zi + t);
            let yi = zi - u;
            if yi > lo {
                let e = yi.exp();
                sum += e;
                slope -= e * u / (1.0 + u);
                y.push(yi);
            } else {
                sum += POWER_FLOOR;
                y.push(lo);
            }
        }
        (y, sum, slope)
    };
    let target = budget.ln();
    let (mut a, mut b) = (-60.0_f64, 60.0_f64);
    while eval(a).1 < budget {
        a -= 60.0;
    }
    while eval(b).1 > budget {
        b += 60.0;
    }
    let mut t = 0.0_f64.clamp(a, b);
    let mut best = eval(t);
    for _ in 0..200 {
        let (_, sum, slope) = &best;
        let f = sum.ln() - target;
        if f.abs() <= 1e-15 {
            break;
        }
        if f > 0.0 {
            a = t;
        } else {
            b = t;
        }
        let newton = if *slope < 0.0 {
            t - f * sum / slope
        } else {
            f64::NAN
        };
        t = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        best = eval(t);
        if b - a <= 1e-14 * (1.0 + t.abs()) {
            break;
        }
    }
    let (mut y, sum, _) = best;
    if sum > budget {
        let shift = (sum / budget).ln();
        for v in &mut y {
            if *v > lo {
                *v -= shift;
            }
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn residual(b: usize, y: &[f64], p: &[f64], prob: &PowerProblem) -> f64 {
    let block = &prob.blocks[b];
    let g = gradient_p(b, p, prob);
    let z: Vec<f64> = block
        .links
        .iter()
        .zip(&g)
        .map(|(&l, gi)| y[l] + gi)
        .collect();
    let p = project(&z, block.budget);
    block
        .links
        .iter()
        .zip(&p)
        .map(|(&l, pi)| (pi - y[l]).abs())
        .fold(0.0, f64::max)
}

/// Maximizes the objective over block `b` with the other blocks fixed,
/// starting from the (feasible) current `y`. The block objective never
/// decreases.
pub fn block_update(b: usize, y: &mut [f64], prob: &PowerProblem) -> BlockReport {
    let mut p = powers(y);
    block_update_p(b, y, &mut p, prob)
}

/// Diagonal of the block Hessian in log-powers; never positive.
fn hessian_diag(b: usize, p: &[f64], prob: &PowerProblem) -> Vec<f64> {
    let block = &prob.blocks[b];
    block
        .links
        .iter()
        .map(|&l| {
            let own = p[l];
            let mut h = block.price * own;
            for &(v, g) in &prob.victims[l] {
                let w = prob.links[v].weight;
                if w > 0.0 {
                    let share = g * own / interference(v, p, prob);
                    h -= w * share * (1.0 - share);
                }
            }
            h.min(0.0)
        })
        .collect()
}

struct Trial<'a> {
    b: usize,
    prob: &'a PowerProblem,
    y: Vec<f64>,
    p: Vec<f64>,
}

impl Trial<'_> {
    /// Moves block `b` to `cand` if that provably does not lower `f`.
    fn accept(
        &mut self,
        cand: &[f64],
        old: &[f64],
        g: &[f64],
        f: &mut f64,
        y: &mut [f64],
        p: &mut [f64],
    ) -> bool {
        let idx = &self.prob.blocks[self.b].links;
        for (&l, &v) in idx.iter().zip(cand) {
            self.y[l] = v;
            self.p[l] = v.exp();
        }
        let ft = block_objective(self.b, &self.y, &self.p, self.prob);
        let ascent: f64 = cand
            .iter()
            .zip(old)
            .zip(g)
            .map(|((c, o), gi)| (c - o) * gi)
            .sum();
        // Concave along the segment: a non-negative slope at its far end
        // proves ascent when the values agree to rounding.
        let flat = (ft - *f).abs() <= 1e-12 * (1.0 + f.abs());
        let uphill = flat && {
            let gt = gradient_p(self.b, &self.p, self.prob);
            cand.iter()
                .zip(old)
                .zip(&gt)
                .map(|((c, o), gi)| (c - o) * gi)
                .sum::<f64>()
                >= 0.0
        };
        let ok = (ft >= *f + 1e-4 * ascent && ft >= *f) || uphill;
        for &l in idx {
            if ok {
                y[l] = self.y[l];
                p[l] = self.p[l];
            } else {
                self.y[l] = y[l];
                self.p[l] = p[l];
            }
        }
        if ok {
            *f = f.max(ft);
        }
        ok
    }
}

/// [`block_update`] with `p = exp(y)` kept in sync.
fn block_update_p(b: usize, y: &mut [f64], p: &mut [f64], prob: &PowerProblem) -> BlockReport {
    let block = &prob.blocks[b];
    let idx = &block.links;
    let lo = POWER_FLOOR.ln();
    let mut g = gradient_p(b, p, prob);
    let mut f = block_objective(b, y, p, prob);
    let mut step = 1.0 / g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut report = BlockReport {
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
    };
    let mut trial = Trial {
        b,
        prob,
        y: y.to_vec(),
        p: p.to_vec(),
    };
    for it in 0..INNER_MAX_ITER {
        report.iterations = it;
        let z: Vec<f64> = idx.iter().zip(&g).map(|(&l, gi)| y[l] + gi).collect();
        let full = project(&z, block.budget);
        report.residual = idx
            .iter()
            .zip(&full)
            .map(|(&l, v)| (v - y[l]).abs())
            .fold(0.0, f64::max);
        if report.residual <= INNER_TOL {
            report.converged = true;
            return report;
        }
        let old: Vec<f64> = idx.iter().map(|&l| y[l]).collect();
        let mut accepted = false;

        // Scaled step on the box when the budget stays slack: links fading
        // towards the floor have gradient and curvature both ~ p.
        let h = hessian_diag(b, p, prob);
        let mut s = 1.0;
        for _ in 0..4 {
            let cand: Vec<f64> = old
                .iter()
                .zip(&g)
                .zip(&h)
                .map(|((v, gi), hi)| {
                    let d = if *hi < 0.0 {
                        gi / -hi
                    } else {
                        gi.signum() * 20.0
                    };
                    (v + s * d.clamp(-20.0, 20.0)).max(lo)
                })
                .collect();
            if cand.iter().map(|v| v.exp()).sum::<f64>() > block.budget {
                break;
            }
            if trial.accept(&cand, &old, &g, &mut f, y, p) {
                accepted = true;
                break;
            }
            s *= 0.5;
        }

        let mut s = step;
        for _ in 0..60 {
            if accepted {
                break;
            }
            let z: Vec<f64> = old.iter().zip(&g).map(|(v, gi)| v + s * gi).collect();
            let cand = project(&z, block.budget);
            if trial.accept(&cand, &old, &g, &mut f, y, p) {
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            report.residual = residual(b, y, p, prob);
            report.converged = report.residual <= INNER_TOL;
            return report;
        }
        let g_new = gradient_p(b, p, prob);
        let (mut ss, mut sy) = (0.0, 0.0);
        for (k, &l) in idx.iter().enumerate() {
            let ds = y[l] - old[k];
            ss += ds * ds;
            sy -= ds * (g_new[k] - g[k]);
        }
        step = if sy > 0.0 && ss > 0.0 {
            ss / sy
        } else {
            s * 2.0
        };
        g = g_new;
    }
    report.iterations = INNER_MAX_ITER;
    report.residual = residual(b, y, p, prob);
    report.converged = report.residual <= INNER_TOL;
    report
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BcdReport {
    pub sweeps: usize,
    /// Objective (processing-gain offset included) before the first sweep
    /// and after every sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Largest projected-gradient residual over blocks at the end.
    pub residual: f64,
    /// Block updates that hit the inner iteration cap.
    pub inner_failures: usize,
}

/// Warm start: each link gets its isolated optimum `W / (-A)`, capped at
/// an even share of the node budget.
pub fn warm_start(prob: &PowerProblem) -> Vec<f64> {
    let lo = POWER_FLOOR.ln();
    prob.links
        .iter()
        .map(|l| {
            let block = &prob.blocks[l.block];
            let share = block.budget / block.links.len() as f64;
            let p = if block.price < 0.0 {
                (l.weight / -block.price).min(share)
            } else {
                share
            };
            p.ln().max(lo)
        })
        .collect()
}

/// Gauss-Seidel block coordinate ascent. Returns linear powers per problem
/// link; links left at the floor come back as exactly zero.
pub fn bcd_solve(prob: &PowerProblem) -> Result<(Vec<f64>, BcdReport)> {
    let mut report = BcdReport::default();
    if prob.is_empty() {
        report.converged = true;
        return Ok((Vec::new(), report));
    }
    let offset: f64 = prob
        .links
        .iter()
        .filter(|l| l.weight > 0.0)
        .map(|l| l.weight * l.processing_gain.ln())
        .sum();
    let mut y = warm_start(prob);
    let mut pw = powers(&y);
    let mut f = objective_log(&y, prob);
    report.trace.push(f + offset);
    for _ in 0..OUTER_MAX_SWEEPS {
        for b in 0..prob.blocks.len() {
            let r = block_update_p(b, &mut y, &mut pw, prob);
            if !r.converged && r.iterations >= INNER_MAX_ITER {
                report.inner_failures += 1;
            }
        }
        report.sweeps += 1;
        let next = objective_log(&y, prob);
        report.trace.push(next + offset);
        let gain = next - f;
        f = next;
        if gain < OUTER_TOL * (1.0 + f.abs()) {
            report.converged = true;
            break;
        }
    }
    report.residual = (0..prob.blocks.len())
        .map(|b| residual(b, &y, &pw, prob))
        .fold(0.0, f64::max);

    let floor = POWER_FLOOR * (1.0 + 1e-9);
    let p: Vec<f64> = y
        .iter()
        .map(|&v| {
            let p = v.exp();
            if p <= floor {
                0.0
            } else {
                p
            }
        })
        .collect();
    for block in &prob.blocks {
        let total: f64 = block.links.iter().map(|&l| p[l]).sum();
        if total > block.budget + 1e-9 {
            return Err(Error::BudgetBreach {
                node: block.node,
                total,
                budget: block.budget,
            });
        }
    }
    Ok((p, report))
}
