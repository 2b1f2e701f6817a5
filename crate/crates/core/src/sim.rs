//! Slot loop, run metrics, sweeps and the runtime audits.
//!
//! Output files (all CSV with a header row):
//!
//! * `slots.csv`: one row per slot with `slot, objective, running_avg_objective,
//!   utility, cost, total_q, max_q, mean_e_eh, mean_e_eg, mean_e_me, flags,
//!   audit_slack, bcd_sweeps, bcd_converged`. Queue columns describe the state
//!   at the start of the slot. `flags` is a bit set of [`flags`]; class means
//!   are empty when the class has no nodes and `audit_slack` is empty for
//!   unaudited slots.
//! * `nodes.csv`: `node, class, x, y, battery_capacity, p_total_max,
//!   first_active_slot, max_energy`.
//! * `bounds.csv`: one row `penalty_weight, sigma, q_max, r_max, b, b_tilde`.
//! * `queues.csv` (with a snapshot cadence): `slot, queue, node, session, value`
//!   where `queue` is `data` or `energy` and `session` is empty for energy.
//! * `bcd_trace.csv` (with a trace cadence): `slot, sweep, objective`.
//! * `summary.csv`: one row per run, columns [`SUMMARY_HEADER`].
//!
//! None of the files carry wall-clock data, so equal inputs give equal bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::control::{combine_objective, delta_tilde, run_slot, slot_terms};
use crate::error::{Error, Result};
use crate::model::{
    bound_constants, validate_network, BoundConstants, Network, NodeId, Params, SessionId,
    SupplyClass,
};
use crate::queues::{
    check_feasible, step, total_consumption, Decision, QueueState, FEASIBILITY_TOL,
};
use crate::stochastic::{SlotSampler, SlotState};

/// Bits of the per-slot `flags` column.
pub mod flags {
    pub const DATA_BOUND: u32 = 1;
    pub const ENERGY_BOUND: u32 = 2;
    pub const SENSING_ENERGY: u32 = 4;
    pub const TRANSMIT_BACKLOG: u32 = 8;
    pub const INFEASIBLE: u32 = 16;
    pub const AUDIT_FAILED: u32 = 32;
}

/// Which slots get the drift-plus-penalty audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuditMode {
    /// Every slot when the run has at most 10^4 slots, every 10th otherwise.
    #[default]
    Sampled,
    Full,
    Off,
}

impl AuditMode {
    fn audits(self, t: u64, slots: u64) -> bool {
        match self {
            AuditMode::Full => true,
            AuditMode::Off => false,
            AuditMode::Sampled => slots <= 10_000 || t.is_multiple_of(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub audit: AuditMode,
    /// Queue snapshot cadence in slots.
    pub snapshot_every: Option<u64>,
    /// Power-solver trace cadence in slots.
    pub bcd_trace_every: Option<u64>,
    /// Write `slots.csv` when an output directory is given.
    pub slot_csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AuditRecord {
    /// `L(t+1) - L(t)`.
    pub drift: f64,
    /// `V O(t)`.
    pub penalty: f64,
    pub b: f64,
    pub delta_tilde: f64,
    /// `b + delta_tilde - (drift - penalty)`.
    pub slack: f64,
    pub passed: bool,
}

/// Relative tolerance on the audit slack.
pub const AUDIT_TOL: f64 = 1e-6;

/// Checks `L(t+1) - L(t) - V O(t) <= B + delta_tilde` for one slot.
pub fn drift_audit(
    before: &QueueState,
    after: &QueueState,
    dec: &Decision,
    slot: &SlotState,
    net: &Network,
    params: &Params,
    bounds: &BoundConstants,
) -> Result<AuditRecord> {
    let half_diff = |a: f64, b: f64| 0.5 * (b - a) * (b + a);
    let mut drift: f64 = before
        .data
        .iter()
        .zip(&after.data)
        .map(|(&a, &b)| half_diff(a, b))
        .sum();
    for n in 0..net.num_nodes() {
        drift += half_diff(
            before.energy[n] - bounds.theta[n],
            after.energy[n] - bounds.theta[n],
        );
    }
    let (u, c) = slot_terms(dec, slot, net, params)?;
    let penalty = params.penalty_weight * combine_objective(u, c, params);
    let dt = delta_tilde(before, dec, slot, net, params, bounds)?;
    let lhs = drift - penalty;
    let rhs = bounds.b + dt;
    let slack = rhs - lhs;
    let scale = 1.0f64.max(bounds.b.abs() + dt.abs() + drift.abs() + penalty.abs());
    Ok(AuditRecord {
        drift,
        penalty,
        b: bounds.b,
        delta_tilde: dt,
        slack,
        passed: slack >= -AUDIT_TOL * scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonitorViolation {
    DataBound {
        node: NodeId,
        session: SessionId,
        backlog: f64,
        bound: f64,
    },
    EnergyBound {
        node: NodeId,
        energy: f64,
        bound: f64,
    },
    /// A node consumed energy while holding less than its worst-case consumption.
    SensingEnergy {
        node: NodeId,
        energy: f64,
        required: f64,
    },
    /// A link carried data for a session whose backlog was below `l_max * x_max`.
    TransmitBacklog {
        node: NodeId,
        session: SessionId,
        backlog: f64,
        required: f64,
    },
}

/// Checks the deterministic queue bounds and the two premises on the state
/// a decision was made in.
pub fn bound_monitor(
    state: &QueueState,
    dec: &Decision,
    net: &Network,
    params: &Params,
    bounds: &BoundConstants,
) -> Vec<MonitorViolation> {
    let mut out = Vec::new();
    let lx = params.l_max as f64 * params.x_max;
    for node in &net.nodes {
        let n = node.id;
        for s in &net.sessions {
            let q = state.q(n, s.id);
            if q > bounds.q_max + FEASIBILITY_TOL {
                out.push(MonitorViolation::DataBound {
                    node: n,
                    session: s.id,
                    backlog: q,
                    bound: bounds.q_max,
                });
            }
        }
        let e = state.e(n);
        if e > bounds.theta[n.0] + FEASIBILITY_TOL {
            out.push(MonitorViolation::EnergyBound {
                node: n,
                energy: e,
                bound: bounds.theta[n.0],
            });
        }
        if total_consumption(n, dec, net) > 0.0 && e < bounds.p_total_max[n.0] {
            out.push(MonitorViolation::SensingEnergy {
                node: n,
                energy: e,
                required: bounds.p_total_max[n.0],
            });
        }
    }
    for l in &net.links {
        for s in &net.sessions {
            if dec.x(l.id, s.id) > 0.0 {
                let q = state.q(l.tx, s.id);
                if q < lx {
                    out.push(MonitorViolation::TransmitBacklog {
                        node: l.tx,
                        session: s.id,
                        backlog: q,
                        required: lx,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub penalty_weight: f64,
    pub seed: u64,
    pub slots: u64,
    /// Time average of the slot objective.
    pub avg_objective: f64,
    /// Time average of the raw rate utility.
    pub avg_utility: f64,
    /// Time average of the raw electricity cost.
    pub avg_cost: f64,
    /// Mean data backlog over all `(node, session)` pairs and slots.
    pub avg_data_queue: f64,
    pub max_data_queue: f64,
    /// Mean stored energy over nodes and slots.
    pub avg_energy_queue: f64,
    pub max_energy_queue: f64,
    /// Time-average backlog per `(node, session)`, row-major by node.
    pub avg_data_per_queue: Vec<f64>,
    pub max_data_per_queue: Vec<f64>,
    pub avg_energy_per_node: Vec<f64>,
    pub max_energy_per_node: Vec<f64>,
    pub q_max: f64,
    pub theta_max: f64,
    pub audits: u64,
    pub audit_failures: u64,
    pub min_audit_slack: f64,
    pub data_bound_violations: u64,
    pub energy_bound_violations: u64,
    pub sensing_energy_violations: u64,
    pub transmit_backlog_violations: u64,
    pub feasibility_violations: u64,
    /// Committed links with capacity above `delta * power`; informational.
    pub delta_excess: u64,
    pub bcd_nonconverged: u64,
    pub bcd_sweeps: u64,
    pub first_active_slot: Vec<Option<u64>>,
    pub wall_clock: Duration,
}

impl RunMetrics {
    pub fn monitor_violations(&self) -> u64 {
        self.audit_failures
            + self.data_bound_violations
            + self.energy_bound_violations
            + self.sensing_energy_violations
            + self.transmit_backlog_violations
            + self.feasibility_violations
    }

    pub fn passed(&self) -> bool {
        self.monitor_violations() == 0
    }
}

pub const SUMMARY_HEADER: [&str; 24] = [
    "penalty_weight",
    "seed",
    "slots",
    "avg_objective",
    "avg_utility",
    "avg_cost",
    "avg_data_queue",
    "max_data_queue",
    "avg_energy_queue",
    "max_energy_queue",
    "q_max",
    "theta_max",
    "audits",
    "audit_failures",
    "min_audit_slack",
    "data_bound_violations",
    "energy_bound_violations",
    "sensing_energy_violations",
    "transmit_backlog_violations",
    "feasibility_violations",
    "delta_excess",
    "bcd_nonconverged",
    "bcd_sweeps",
    "label",
];

fn summary_row(m: &RunMetrics, label: &str) -> Vec<String> {
    vec![
        m.penalty_weight.to_string(),
        m.seed.to_string(),
        m.slots.to_string(),
        m.avg_objective.to_string(),
        m.avg_utility.to_string(),
        m.avg_cost.to_string(),
        m.avg_data_queue.to_string(),
        m.max_data_queue.to_string(),
        m.avg_energy_queue.to_string(),
        m.max_energy_queue.to_string(),
        m.q_max.to_string(),
        m.theta_max.to_string(),
        m.audits.to_string(),
        m.audit_failures.to_string(),
        if m.audits > 0 {
            m.min_audit_slack.to_string()
        } else {
            String::new()
        },
        m.data_bound_violations.to_string(),
        m.energy_bound_violations.to_string(),
        m.sensing_energy_violations.to_string(),
        m.transmit_backlog_violations.to_string(),
        m.feasibility_violations.to_string(),
        m.delta_excess.to_string(),
        m.bcd_nonconverged.to_string(),
        m.bcd_sweeps.to_string(),
        label.to_string(),
    ]
}

/// Writes `summary.csv` with one row per labelled run.
pub fn write_summary(path: &Path, rows: &[(String, RunMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for (label, m) in rows {
        w.write_record(summary_row(m, label))?;
    }
    w.flush()?;
    Ok(())
}

struct Writers {
    slots: Option<csv::Writer<BufWriter<File>>>,
    queues: Option<csv::Writer<BufWriter<File>>>,
    trace: Option<csv::Writer<BufWriter<File>>>,
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(
        path,
    )?)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_snapshot(
    w: &mut csv::Writer<BufWriter<File>>,
    t: u64,
    state: &QueueState,
    net: &Network,
) -> Result<()> {
    for n in 0..net.num_nodes() {
        for f in 0..net.num_sessions() {
            w.write_record([
                t.to_string(),
                "data".into(),
                n.to_string(),
                f.to_string(),
                state.q(NodeId(n), SessionId(f)).to_string(),
            ])?;
        }
    }
    for n in 0..net.num_nodes() {
        w.write_record([
            t.to_string(),
            "energy".into(),
            n.to_string(),
            String::new(),
            state.energy[n].to_string(),
        ])?;
    }
    Ok(())
}

fn write_static(
    dir: &Path,
    net: &Network,
    params: &Params,
    bounds: &BoundConstants,
    m: &RunMetrics,
) -> Result<()> {
    let mut w = writer(&dir.join("nodes.csv"))?;
    w.write_record([
        "node",
        "class",
        "x",
        "y",
        "battery_capacity",
        "p_total_max",
        "first_active_slot",
        "max_energy",
    ])?;
    for node in &net.nodes {
        let n = node.id.0;
        w.write_record([
            n.to_string(),
            node.supply.name().to_string(),
            node.position[0].to_string(),
            node.position[1].to_string(),
            bounds.theta[n].to_string(),
            bounds.p_total_max[n].to_string(),
            m.first_active_slot[n].map_or_else(String::new, |s| s.to_string()),
            m.max_energy_per_node[n].to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = writer(&dir.join("bounds.csv"))?;
    w.write_record(["penalty_weight", "sigma", "q_max", "r_max", "b", "b_tilde"])?;
    w.write_record([
        params.penalty_weight.to_string(),
        bounds.sigma.to_string(),
        bounds.q_max.to_string(),
        bounds.r_max.to_string(),
        bounds.b.to_string(),
        bounds.b_tilde.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Runs `params.slots` slots from the configured initial state with seed
/// `params.seed`. With `out`, the per-run CSV files are written there.
pub fn run(
    net: &Network,
    params: &Params,
    opts: &RunOptions,
    out: Option<&Path>,
) -> Result<RunMetrics> {
    params.check()?;
    let violations = validate_network(net, params);
    if !violations.is_empty() {
        return Err(Error::Validation(format!("{violations:?}")));
    }
    let started = Instant::now();
    let bounds = bound_constants(net, params);
    let mut net = net.clone();
    net.apply_bounds(&bounds);
    let net = &net;

    let mut writers = Writers {
        slots: None,
        queues: None,
        trace: None,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        if opts.slot_csv {
            let mut w = writer(&dir.join("slots.csv"))?;
            w.write_record([
                "slot",
                "objective",
                "running_avg_objective",
                "utility",
                "cost",
                "total_q",
                "max_q",
                "mean_e_eh",
                "mean_e_eg",
                "mean_e_me",
                "flags",
                "audit_slack",
                "bcd_sweeps",
                "bcd_converged",
            ])?;
            writers.slots = Some(w);
        }
        if opts.snapshot_every.is_some() {
            let mut w = writer(&dir.join("queues.csv"))?;
            w.write_record(["slot", "queue", "node", "session", "value"])?;
            writers.queues = Some(w);
        }
        if opts.bcd_trace_every.is_some() {
            let mut w = writer(&dir.join("bcd_trace.csv"))?;
            w.write_record(["slot", "sweep", "objective"])?;
            writers.trace = Some(w);
        }
    }

    let nq = net.num_nodes() * net.num_sessions();
    let nn = net.num_nodes();
    let mut m = RunMetrics {
        penalty_weight: params.penalty_weight,
        seed: params.seed,
        slots: params.slots,
        q_max: bounds.q_max,
        theta_max: bounds.theta.iter().copied().fold(0.0, f64::max),
        min_audit_slack: f64::INFINITY,
        avg_data_per_queue: vec![0.0; nq],
        max_data_per_queue: vec![0.0; nq],
        avg_energy_per_node: vec![0.0; nn],
        max_energy_per_node: vec![0.0; nn],
        first_active_slot: vec![None; nn],
        ..RunMetrics::default()
    };
    let class_of: Vec<usize> = net
        .nodes
        .iter()
        .map(|n| match n.supply {
            SupplyClass::EH => 0,
            SupplyClass::EG => 1,
            SupplyClass::ME => 2,
        })
        .collect();
    let mut class_count = [0usize; 3];
    for &c in &class_of {
        class_count[c] += 1;
    }

    let sampler = SlotSampler::new(params.seed);
    let mut state = QueueState::initial(net, params, &bounds);
    let (mut sum_obj, mut sum_u, mut sum_c) = (0.0, 0.0, 0.0);
    for t in 0..params.slots {
        if let (Some(w), Some(every)) = (writers.queues.as_mut(), opts.snapshot_every) {
            if every > 0 && t % every == 0 {
                write_snapshot(w, t, &state, net)?;
            }
        }
        let slot = sampler.sample(t, net, params);
        let (dec, diag) = run_slot(&state, &slot, net, params, &bounds)?;
        let mut flag = 0u32;

        for v in bound_monitor(&state, &dec, net, params, &bounds) {
            match v {
                MonitorViolation::DataBound { .. } => {
                    m.data_bound_violations += 1;
                    flag |= flags::DATA_BOUND;
                }
                MonitorViolation::EnergyBound { .. } => {
                    m.energy_bound_violations += 1;
                    flag |= flags::ENERGY_BOUND;
                }
                MonitorViolation::SensingEnergy { .. } => {
                    m.sensing_energy_violations += 1;
                    flag |= flags::SENSING_ENERGY;
                }
                MonitorViolation::TransmitBacklog { .. } => {
                    m.transmit_backlog_violations += 1;
                    flag |= flags::TRANSMIT_BACKLOG;
                }
            }
        }
        let infeasible = check_feasible(&dec, &state, &slot, net, params, &bounds);
        if !infeasible.is_empty() {
            m.feasibility_violations += infeasible.len() as u64;
            flag |= flags::INFEASIBLE;
        }
        m.delta_excess += diag.delta_excess.len() as u64;
        m.bcd_sweeps += diag.bcd.sweeps as u64;
        if !diag.bcd.converged {
            m.bcd_nonconverged += 1;
        }
        for (n, &a) in diag.active.iter().enumerate() {
            if a && m.first_active_slot[n].is_none() {
                m.first_active_slot[n] = Some(t);
            }
        }

        // Queue statistics describe the state the slot started from.
        let mut total_q = 0.0;
        let mut max_q = 0.0f64;
        for (i, &q) in state.data.iter().enumerate() {
            total_q += q;
            max_q = max_q.max(q);
            m.avg_data_per_queue[i] += q;
            m.max_data_per_queue[i] = m.max_data_per_queue[i].max(q);
        }
        let mut class_sum = [0.0; 3];
        for (n, &e) in state.energy.iter().enumerate() {
            class_sum[class_of[n]] += e;
            m.avg_energy_per_node[n] += e;
            m.max_energy_per_node[n] = m.max_energy_per_node[n].max(e);
        }

        let next = match step(&state, &dec, net, t) {
            Ok(s) => s,
            Err(e) => {
                if let Some(dir) = out {
                    let mut w = writer(&dir.join("failure_state.csv"))?;
                    w.write_record(["slot", "queue", "node", "session", "value"])?;
                    write_snapshot(&mut w, t, &state, net)?;
                    w.flush()?;
                }
                return Err(e);
            }
        };

        let mut slack = None;
        if opts.audit.audits(t, params.slots) {
            let rec = drift_audit(&state, &next, &dec, &slot, net, params, &bounds)?;
            m.audits += 1;
            m.min_audit_slack = m.min_audit_slack.min(rec.slack);
            if !rec.passed {
                m.audit_failures += 1;
                flag |= flags::AUDIT_FAILED;
            }
            slack = Some(rec.slack);
        }

        sum_obj += diag.objective;
        sum_u += diag.utility;
        sum_c += diag.cost;
        if let Some(w) = writers.slots.as_mut() {
            let mean =
                |c: usize| (class_count[c] > 0).then(|| class_sum[c] / class_count[c] as f64);
            w.write_record([
                t.to_string(),
                diag.objective.to_string(),
                (sum_obj / (t + 1) as f64).to_string(),
                diag.utility.to_string(),
                diag.cost.to_string(),
                total_q.to_string(),
                max_q.to_string(),
                opt(mean(0)),
                opt(mean(1)),
                opt(mean(2)),
                flag.to_string(),
                opt(slack),
                diag.bcd.sweeps.to_string(),
                (diag.bcd.converged as u8).to_string(),
            ])?;
        }
        if let (Some(w), Some(every)) = (writers.trace.as_mut(), opts.bcd_trace_every) {
            if every > 0 && t % every == 0 {
                for (k, v) in diag.bcd.trace.iter().enumerate() {
                    w.write_record([t.to_string(), k.to_string(), v.to_string()])?;
                }
            }
        }
        state = next;
    }

    let slots = params.slots.max(1) as f64;
    if params.slots > 0 {
        m.avg_objective = sum_obj / slots;
        m.avg_utility = sum_u / slots;
        m.avg_cost = sum_c / slots;
        for v in &mut m.avg_data_per_queue {
            *v /= slots;
        }
        for v in &mut m.avg_energy_per_node {
            *v /= slots;
        }
        m.avg_data_queue = m.avg_data_per_queue.iter().sum::<f64>() / nq.max(1) as f64;
        m.avg_energy_queue = m.avg_energy_per_node.iter().sum::<f64>() / nn.max(1) as f64;
        m.max_data_queue = m.max_data_per_queue.iter().copied().fold(0.0, f64::max);
        m.max_energy_queue = m.max_energy_per_node.iter().copied().fold(0.0, f64::max);
    } else {
        m.min_audit_slack = 0.0;
    }
    if m.audits == 0 {
        m.min_audit_slack = 0.0;
    }

    for w in [
        writers.slots.as_mut(),
        writers.queues.as_mut(),
        writers.trace.as_mut(),
    ]
    .into_iter()
    .flatten()
    {
        w.flush()?;
    }
    if let Some(dir) = out {
        write_static(dir, net, params, &bounds, &m)?;
        write_summary(&dir.join("summary.csv"), &[(String::new(), m.clone())])?;
    }
    m.wall_clock = started.elapsed();
    Ok(m)
}

/// One independent run of a sweep.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub net: Network,
    pub params: Params,
}

/// Runs cells concurrently. With `out`, each cell writes its files into a
/// subdirectory named by its label and `summary.csv` collects the rows of
/// the successful cells in input order.
pub fn run_cells(
    cells: &[Cell],
    opts: &RunOptions,
    out: Option<&Path>,
) -> Result<Vec<Result<RunMetrics>>> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let results: Vec<Result<RunMetrics>> = cells
        .par_iter()
        .map(|c| {
            let sub = out.map(|d| d.join(&c.label));
            run(&c.net, &c.params, opts, sub.as_deref())
        })
        .collect();
    if let Some(dir) = out {
        let rows: Vec<(String, RunMetrics)> = cells
            .iter()
            .zip(&results)
            .filter_map(|(c, r)| r.as_ref().ok().map(|m| (c.label.clone(), m.clone())))
            .collect();
        write_summary(&dir.join("summary.csv"), &rows)?;
    }
    Ok(results)
}

/// Cells for a sweep over the penalty weight; cell `i` uses seed `base_seed + i`.
pub fn v_cells(net: &Network, params: &Params, vs: &[f64], base_seed: u64) -> Vec<Cell> {
    vs.iter()
        .enumerate()
        .map(|(i, &v)| Cell {
            label: format!("v{v}"),
            net: net.clone(),
            params: Params {
                penalty_weight: v,
                seed: base_seed.wrapping_add(i as u64),
                ..params.clone()
            },
        })
        .collect()
}

pub fn sweep_v(
    net: &Network,
    params: &Params,
    vs: &[f64],
    base_seed: u64,
    opts: &RunOptions,
    out: Option<&Path>,
) -> Result<Vec<Result<RunMetrics>>> {
    if vs.is_empty() {
        return Err(Error::config("V-list", "needs at least one value"));
    }
    run_cells(&v_cells(net, params, vs, base_seed), opts, out)
}

/// Writes a plain-text state dump for error reports.
pub fn dump_state<W: Write>(mut w: W, state: &QueueState) -> std::io::Result<()> {
    writeln!(w, "energy: {:?}", state.energy)?;
    writeln!(w, "data: {:?}", state.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::two_node;
    use crate::model::{build_topology, GeneratorConfig, TopologyConfig};

    fn params(slots: u64) -> Params {
        Params {
            slots,
            ..Params::default()
        }
    }

    #[test]
    fn zero_slots_give_zero_metrics() {
        let m = run(&two_node(), &params(0), &RunOptions::default(), None).unwrap();
        assert_eq!(m.avg_objective, 0.0);
        assert_eq!(m.avg_data_queue, 0.0);
        assert_eq!(m.audits, 0);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let net = two_node();
        let a = run(&net, &params(1000), &RunOptions::default(), None).unwrap();
        let b = run(&net, &params(1000), &RunOptions::default(), None).unwrap();
        assert_eq!(
            RunMetrics {
                wall_clock: Duration::ZERO,
                ..a
            },
            RunMetrics {
                wall_clock: Duration::ZERO,
                ..b
            }
        );
    }

    #[test]
    fn zero_decision_audit_is_bounded_by_the_constant() {
        let net = two_node();
        let p = Params::default();
        let bounds = bound_constants(&net, &p);
        let state = QueueState::zeros(&net);
        let dec = Decision::zeros(&net);
        let slot = SlotSampler::new(1).sample(0, &net, &p);
        let rec = drift_audit(&state, &state, &dec, &slot, &net, &p, &bounds).unwrap();
        assert_eq!(rec.drift, 0.0);
        assert_eq!(rec.delta_tilde, 0.0);
        assert!(rec.passed && rec.slack == bounds.b);
    }

    #[test]
    fn adversarial_decision_still_satisfies_the_bound() {
        // Everything at its feasible maximum on a charged two-node network.
        let mut net = two_node();
        net.links[0].distance = 1.0;
        let p = Params::default();
        let bounds = bound_constants(&net, &p);
        let mut state = QueueState::zeros(&net);
        state.energy = vec![bounds.p_total_max[0], bounds.p_total_max[1]];
        state.data[0] = 12.0;
        let slot = SlotSampler::new(1).sample(0, &net, &p);
        let mut dec = Decision::zeros(&net);
        dec.harvest[0] = slot.harvest[0];
        dec.purchase = vec![2.0, 2.0];
        dec.rate[0] = 3.0;
        dec.power[0] = 2.0;
        dec.routed[0] = 2.0;
        let after = step(&state, &dec, &net, 0).unwrap();
        let rec = drift_audit(&state, &after, &dec, &slot, &net, &p, &bounds).unwrap();
        assert!(rec.passed, "{rec:?}");
        let oracle =
            crate::oracle::drift_term_oracle(&state, &after, &dec, &slot, &net, &p, &bounds);
        assert!(
            (oracle.delta_tilde - rec.delta_tilde).abs() < 1e-9 * (1.0 + rec.delta_tilde.abs())
        );
    }

    #[test]
    fn monitor_flags_an_overfull_queue() {
        let net = two_node();
        let p = Params::default();
        let bounds = bound_constants(&net, &p);
        let mut state = QueueState::zeros(&net);
        state.data[0] = bounds.q_max + 1.0;
        let v = bound_monitor(&state, &Decision::zeros(&net), &net, &p, &bounds);
        assert!(matches!(v[..], [MonitorViolation::DataBound { .. }]));
    }

    #[test]
    fn idle_empty_node_is_not_a_sensing_violation() {
        let net = two_node();
        let p = Params::default();
        let bounds = bound_constants(&net, &p);
        let state = QueueState::zeros(&net);
        assert!(bound_monitor(&state, &Decision::zeros(&net), &net, &p, &bounds).is_empty());
    }

    #[test]
    fn default_scenario_short_run_passes_every_monitor() {
        let net = build_topology(&TopologyConfig::Generated(GeneratorConfig::default())).unwrap();
        let m = run(&net, &params(500), &RunOptions::default(), None).unwrap();
        assert!(m.passed(), "{m:?}");
        assert_eq!(m.audits, 500);
        assert!(m.max_data_queue <= m.q_max);
    }

    #[test]
    fn v_cells_use_consecutive_seeds() {
        let cells = v_cells(&two_node(), &Params::default(), &[100.0, 300.0], 40);
        assert_eq!(cells[0].params.seed, 40);
        assert_eq!(cells[1].params.seed, 41);
        assert_eq!(cells[1].params.penalty_weight, 300.0);
        assert_eq!(cells[1].label, "v300");
    }
}
