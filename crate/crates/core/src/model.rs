//! Network topology, scenario parameters and the derived bound constants.
//!
//! Node, link and session ids are dense and zero-based: `nodes[i].id == NodeId(i)`.
//! Links are directed. A session's destination absorbs everything it
//! receives, so its own backlog for that session is always zero.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How a node is powered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SupplyClass {
    /// Energy harvesting only.
    EH,
    /// Electricity grid only.
    EG,
    /// Mixed: both harvesting and grid.
    ME,
}

impl SupplyClass {
    pub fn harvests(self) -> bool {
        matches!(self, SupplyClass::EH | SupplyClass::ME)
    }

    pub fn grid(self) -> bool {
        matches!(self, SupplyClass::EG | SupplyClass::ME)
    }

    pub fn name(self) -> &'static str {
        match self {
            SupplyClass::EH => "EH",
            SupplyClass::EG => "EG",
            SupplyClass::ME => "ME",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub supply: SupplyClass,
    pub position: [f64; 2],
    /// Receiver noise power.
    pub noise_floor: f64,
    /// Transmit power budget over all outgoing links.
    pub max_power: f64,
    /// Energy spent per received data unit.
    pub receive_cost: f64,
    /// Largest grid purchase per slot (grid-connected nodes only).
    pub grid_max: f64,
    /// Battery size; zero until [`Network::apply_bounds`] runs.
    pub battery_capacity: f64,
    /// Worst-case per-slot consumption; zero until [`Network::apply_bounds`] runs.
    pub p_total_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub tx: NodeId,
    pub rx: NodeId,
    pub channel: usize,
    pub distance: f64,
    /// CDMA processing gain; must exceed 1.
    pub processing_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Utility {
    /// `U(r) = ln(1 + r)`.
    Log1p,
}

impl Utility {
    pub fn value(self, r: f64) -> f64 {
        match self {
            Utility::Log1p => r.ln_1p(),
        }
    }

    pub fn derivative(self, r: f64) -> f64 {
        match self {
            Utility::Log1p => 1.0 / (1.0 + r),
        }
    }

    /// Inverse of the derivative; `y` must be positive.
    pub fn inverse_derivative(self, y: f64) -> f64 {
        match self {
            Utility::Log1p => 1.0 / y - 1.0,
        }
    }

    /// Supremum of the derivative over `r >= 0`.
    pub fn max_derivative(self) -> f64 {
        match self {
            Utility::Log1p => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: SessionId,
    pub source: NodeId,
    pub destination: NodeId,
    pub max_rate: f64,
    /// Energy spent per sensed data unit.
    pub sense_cost: f64,
    pub utility: Utility,
}

/// A one-dimensional random law for per-slot states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl Dist {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Dist::Uniform { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            Dist::Constant { value } => value,
        }
    }

    pub fn lower(&self) -> f64 {
        match *self {
            Dist::Uniform { lo, .. } => lo,
            Dist::Constant { value } => value,
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            Dist::Uniform { hi, .. } => hi,
            Dist::Constant { value } => value,
        }
    }
}

/// Unit electricity price as a function of the price state and the purchase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceModel {
    /// Price equals the price state.
    Flat,
    /// Price state plus `slope` per purchased unit.
    Affine { slope: f64 },
}

impl PriceModel {
    pub fn unit_price(&self, state: f64, purchase: f64) -> f64 {
        match *self {
            PriceModel::Flat => state,
            PriceModel::Affine { slope } => state + slope * purchase,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Weight `V` on the penalty in drift-plus-penalty.
    pub penalty_weight: f64,
    /// Share of the objective given to rate utility, in `[0, 1]`.
    pub utility_weight: f64,
    /// Factor mapping electricity cost onto the utility scale.
    pub cost_mapping: f64,
    /// Slope bound assumed between link capacity and transmit power.
    pub delta: f64,
    /// Per-link, per-slot rate bound.
    pub x_max: f64,
    /// Maximum in/out degree of any node.
    pub l_max: usize,
    /// Small-scale fading factor multiplying `d^-4`.
    pub fading: Dist,
    pub harvest: Dist,
    pub price: Dist,
    pub price_model: PriceModel,
    pub initial_energy: f64,
    pub initial_backlog: f64,
    pub slots: u64,
    pub seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            penalty_weight: 1000.0,
            utility_weight: 0.6,
            cost_mapping: 0.5,
            delta: 2.0,
            x_max: 2.0,
            l_max: 6,
            fading: Dist::uniform(0.9, 1.1),
            harvest: Dist::uniform(0.0, 2.0),
            price: Dist::uniform(0.5, 1.0),
            price_model: PriceModel::Flat,
            initial_energy: 0.0,
            initial_backlog: 0.0,
            slots: 100_000,
            seed: 7,
        }
    }
}

impl Params {
    pub fn h_max(&self) -> f64 {
        self.harvest.upper()
    }

    /// Checks ranges; the first offending key is reported.
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("penalty_weight", self.penalty_weight),
            ("cost_mapping", self.cost_mapping),
            ("delta", self.delta),
            ("x_max", self.x_max),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.utility_weight) {
            return Err(Error::config(
                "utility_weight",
                format!("must lie in [0, 1], got {}", self.utility_weight),
            ));
        }
        if self.l_max == 0 {
            return Err(Error::config("l_max", "must be at least 1"));
        }
        check_dist("fading", &self.fading, true)?;
        check_dist("harvest", &self.harvest, false)?;
        check_dist("price", &self.price, false)?;
        if let PriceModel::Affine { slope } = self.price_model {
            if !(slope >= 0.0) {
                return Err(Error::config(
                    "price_slope",
                    format!("must be >= 0, got {slope}"),
                ));
            }
        }
        if !(self.initial_energy >= 0.0) {
            return Err(Error::config("initial_energy", "must be >= 0"));
        }
        if !(self.initial_backlog >= 0.0) {
            return Err(Error::config("initial_backlog", "must be >= 0"));
        }
        Ok(())
    }
}

fn check_dist(key: &str, d: &Dist, strictly_positive: bool) -> Result<()> {
    let (lo, hi) = (d.lower(), d.upper());
    let ok_lo = if strictly_positive {
        lo > 0.0
    } else {
        lo >= 0.0
    };
    if !(ok_lo && hi >= lo && hi.is_finite()) {
        return Err(Error::config(key, format!("invalid range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Where an interference path gain comes from in a slot state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainRef {
    /// The path is itself a link; reuse its channel draw.
    Link(LinkId),
    /// Index into the cross-path table ([`Network::cross_paths`]).
    Cross(usize),
}

/// A co-channel transmission that reaches the receiver of another link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interferer {
    pub link: LinkId,
    pub gain: GainRef,
    /// Interferer-to-victim-receiver distance.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub sessions: Vec<Session>,
    pub channels: usize,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
    sourced: Vec<Vec<SessionId>>,
    interferers: Vec<Vec<Interferer>>,
    cross_paths: Vec<(NodeId, NodeId, f64)>,
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Network {
    /// Assembles a network and its adjacency tables. Structural errors
    /// (dangling ids, self loops, duplicate links, degenerate sessions)
    /// are rejected here; numeric ranges are left to [`validate_network`].
    pub fn new(
        nodes: Vec<Node>,
        links: Vec<Link>,
        sessions: Vec<Session>,
        channels: usize,
    ) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id.0 != i {
                return Err(Error::Validation(format!(
                    "node ids must be dense and ordered: position {i} holds id {}",
                    node.id
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, l) in links.iter().enumerate() {
            if l.id.0 != i {
                return Err(Error::Validation(format!(
                    "link ids must be dense and ordered: position {i} holds id {}",
                    l.id
                )));
            }
            if l.tx.0 >= n || l.rx.0 >= n {
                return Err(Error::Validation(format!(
                    "link {} references unknown node",
                    l.id
                )));
            }
            if l.tx == l.rx {
                return Err(Error::Validation(format!("link {} is a self loop", l.id)));
            }
            if !seen.insert((l.tx, l.rx)) {
                return Err(Error::Validation(format!(
                    "duplicate link {} -> {}",
                    l.tx, l.rx
                )));
            }
            if l.channel >= channels {
                return Err(Error::Validation(format!(
                    "link {} uses channel {} but only {channels} exist",
                    l.id, l.channel
                )));
            }
        }
        for (i, s) in sessions.iter().enumerate() {
            if s.id.0 != i {
                return Err(Error::Validation(format!(
                    "session ids must be dense and ordered: position {i} holds id {}",
                    s.id
                )));
            }
            if s.source.0 >= n || s.destination.0 >= n {
                return Err(Error::Validation(format!(
                    "session {} references unknown node",
                    s.id
                )));
            }
            if s.source == s.destination {
                return Err(Error::Validation(format!(
                    "session {} has identical source and destination",
                    s.id
                )));
            }
        }

        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        for l in &links {
            out_links[l.tx.0].push(l.id);
            in_links[l.rx.0].push(l.id);
        }
        let mut sourced = vec![Vec::new(); n];
        for s in &sessions {
            sourced[s.source.0].push(s.id);
        }

        // Interference: co-channel links whose transmitter is neither end
        // of the victim link.
        let mut cross_paths: Vec<(NodeId, NodeId, f64)> = Vec::new();
        let mut interferers = Vec::with_capacity(links.len());
        for victim in &links {
            let mut list = Vec::new();
            for other in &links {
                if other.channel != victim.channel || other.tx == victim.tx || other.tx == victim.rx
                {
                    continue;
                }
                let d = distance(nodes[other.tx.0].position, nodes[victim.rx.0].position);
                let gain = match links.iter().find(|l| l.tx == other.tx && l.rx == victim.rx) {
                    Some(l) => GainRef::Link(l.id),
                    None => {
                        let idx = match cross_paths
                            .iter()
                            .position(|&(a, b, _)| a == other.tx && b == victim.rx)
                        {
                            Some(i) => i,
                            None => {
                                cross_paths.push((other.tx, victim.rx, d));
                                cross_paths.len() - 1
                            }
                        };
                        GainRef::Cross(idx)
                    }
                };
                list.push(Interferer {
                    link: other.id,
                    gain,
                    distance: d,
                });
            }
            interferers.push(list);
        }

        Ok(Network {
            nodes,
            links,
            sessions,
            channels,
            out_links,
            in_links,
            sourced,
            interferers,
            cross_paths,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkId] {
        &self.out_links[n.0]
    }

    pub fn in_links(&self, n: NodeId) -> &[LinkId] {
        &self.in_links[n.0]
    }

    /// Sessions whose source is `n`.
    pub fn sourced(&self, n: NodeId) -> &[SessionId] {
        &self.sourced[n.0]
    }

    pub fn interferers(&self, l: LinkId) -> &[Interferer] {
        &self.interferers[l.0]
    }

    /// Interference paths `(transmitter, receiver, distance)` that are not links.
    pub fn cross_paths(&self) -> &[(NodeId, NodeId, f64)] {
        &self.cross_paths
    }

    pub fn link(&self, l: LinkId) -> &Link {
        &self.links[l.0]
    }

    pub fn node(&self, n: NodeId) -> &Node {
        &self.nodes[n.0]
    }

    pub fn is_destination(&self, n: NodeId, f: SessionId) -> bool {
        self.sessions[f.0].destination == n
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_links.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_in_degree(&self) -> usize {
        self.in_links.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Shortest hop count from `from` to every node along directed links.
    pub fn hop_distances(&self, from: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        let mut queue = VecDeque::new();
        dist[from.0] = Some(0);
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            let du = dist[u.0].unwrap_or(0);
            for &l in &self.out_links[u.0] {
                let v = self.links[l.0].rx;
                if dist[v.0].is_none() {
                    dist[v.0] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Writes battery capacities and consumption bounds onto the nodes.
    pub fn apply_bounds(&mut self, bounds: &BoundConstants) {
        for (node, (&theta, &ptot)) in self
            .nodes
            .iter_mut()
            .zip(bounds.theta.iter().zip(&bounds.p_total_max))
        {
            node.battery_capacity = theta;
            node.p_total_max = ptot;
        }
    }
}

/// Per-node defaults used when a topology is generated or a node entry
/// leaves a field out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDefaults {
    pub noise_floor: f64,
    pub max_power: f64,
    pub receive_cost: f64,
    pub grid_max: f64,
}

impl Default for NodeDefaults {
    fn default() -> Self {
        NodeDefaults {
            noise_floor: 5e-13,
            max_power: 2.0,
            receive_cost: 0.05,
            grid_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionDefaults {
    pub max_rate: f64,
    pub sense_cost: f64,
}

impl Default for SessionDefaults {
    fn default() -> Self {
        SessionDefaults {
            max_rate: 3.0,
            sense_cost: 0.1,
        }
    }
}

pub const DEFAULT_PROCESSING_GAIN: f64 = 100.0;

/// Random-geometric topology generator.
///
/// Nodes are dropped uniformly on a square field with a minimum separation,
/// pairs closer than `radius` are connected in both directions, and nodes
/// above `l_max` neighbours lose their longest edges. Draws are retried
/// until the graph is connected. Directed links get channels round-robin
/// in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub nodes: usize,
    pub channels: usize,
    pub sessions: usize,
    pub seed: u64,
    pub field_size: f64,
    pub radius: f64,
    pub min_separation: f64,
    pub l_max: usize,
    /// Relative shares of EH, EG and ME nodes.
    pub supply_mix: [f64; 3],
    /// Allowed hop distance between a session's source and destination.
    pub session_hops: (usize, usize),
    pub processing_gain: f64,
    pub node: NodeDefaults,
    pub session: SessionDefaults,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            nodes: 20,
            channels: 14,
            sessions: 6,
            seed: 7,
            field_size: 10_000.0,
            radius: 2_950.0,
            min_separation: 600.0,
            l_max: 6,
            supply_mix: [1.0, 1.0, 1.0],
            session_hops: (2, 3),
            processing_gain: DEFAULT_PROCESSING_GAIN,
            node: NodeDefaults::default(),
            session: SessionDefaults::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitTopology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub sessions: Vec<Session>,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyConfig {
    Explicit(ExplicitTopology),
    Generated(GeneratorConfig),
}

pub fn build_topology(config: &TopologyConfig) -> Result<Network> {
    let net = match config {
        TopologyConfig::Explicit(t) => Network::new(
            t.nodes.clone(),
            t.links.clone(),
            t.sessions.clone(),
            t.channels,
        )?,
        TopologyConfig::Generated(g) => generate(g)?,
    };
    for s in &net.sessions {
        if net.hop_distances(s.source)[s.destination.0].is_none() {
            return Err(Error::Topology(format!(
                "session {} has no path from node {} to node {}",
                s.id, s.source, s.destination
            )));
        }
    }
    Ok(net)
}

const GENERATOR_ATTEMPTS: usize = 1000;

fn generate(cfg: &GeneratorConfig) -> Result<Network> {
    if cfg.nodes < 2 {
        return Err(Error::Topology("generator needs at least 2 nodes".into()));
    }
    if cfg.channels == 0 {
        return Err(Error::Topology("generator needs at least 1 channel".into()));
    }
    if cfg.sessions > cfg.nodes {
        return Err(Error::Topology(format!(
            "{} sessions need distinct sources but only {} nodes exist",
            cfg.sessions, cfg.nodes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..GENERATOR_ATTEMPTS {
        let Some(positions) = place_nodes(cfg, &mut rng) else {
            continue;
        };
        let mut edges = Vec::new();
        for i in 0..cfg.nodes {
            for j in (i + 1)..cfg.nodes {
                let d = distance(positions[i], positions[j]);
                if d <= cfg.radius {
                    edges.push((i, j, d));
                }
            }
        }
        prune_degree(&mut edges, cfg.nodes, cfg.l_max);
        if !connected(cfg.nodes, &edges) {
            continue;
        }

        let classes = assign_classes(cfg, &mut rng);
        let nodes: Vec<Node> = positions
            .iter()
            .enumerate()
            .map(|(i, &position)| Node {
                id: NodeId(i),
                supply: classes[i],
                position,
                noise_floor: cfg.node.noise_floor,
                max_power: cfg.node.max_power,
                receive_cost: cfg.node.receive_cost,
                grid_max: cfg.node.grid_max,
                battery_capacity: 0.0,
                p_total_max: 0.0,
            })
            .collect();

        let mut links = Vec::with_capacity(edges.len() * 2);
        for &(i, j, d) in &edges {
            for (tx, rx) in [(i, j), (j, i)] {
                let id = links.len();
                links.push(Link {
                    id: LinkId(id),
                    tx: NodeId(tx),
                    rx: NodeId(rx),
                    channel: id % cfg.channels,
                    distance: d,
                    processing_gain: cfg.processing_gain,
                });
            }
        }
        let net = Network::new(nodes, links, Vec::new(), cfg.channels)?;
        let sessions = pick_sessions(cfg, &net, &mut rng);
        let Network {
            nodes,
            links,
            channels,
            ..
        } = net;
        return Network::new(nodes, links, sessions, channels);
    }
    Err(Error::Topology(format!(
        "no connected topology after {GENERATOR_ATTEMPTS} attempts; enlarge the radius"
    )))
}

fn place_nodes(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Option<Vec<[f64; 2]>> {
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(cfg.nodes);
    let mut tries = 0;
    while positions.len() < cfg.nodes {
        tries += 1;
        if tries > 100 * cfg.nodes {
            return None;
        }
        let p = [
            rng.gen::<f64>() * cfg.field_size,
            rng.gen::<f64>() * cfg.field_size,
        ];
        if positions
            .iter()
            .all(|&q| distance(p, q) >= cfg.min_separation)
        {
            positions.push(p);
        }
    }
    Some(positions)
}

fn prune_degree(edges: &mut Vec<(usize, usize, f64)>, n: usize, l_max: usize) {
    for node in 0..n {
        loop {
            let incident: Vec<usize> = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.0 == node || e.1 == node)
                .map(|(i, _)| i)
                .collect();
            if incident.len() <= l_max {
                break;
            }
            let longest = incident
                .into_iter()
                .max_by(|&a, &b| edges[a].2.total_cmp(&edges[b].2))
                .expect("non-empty");
            edges.remove(longest);
        }
    }
}

fn connected(n: usize, edges: &[(usize, usize, f64)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(i, j, _) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn assign_classes(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<SupplyClass> {
    let total: f64 = cfg.supply_mix.iter().sum();
    let kinds = [SupplyClass::EH, SupplyClass::EG, SupplyClass::ME];
    // Largest-remainder apportionment of node counts.
    let quotas: Vec<f64> = cfg
        .supply_mix
        .iter()
        .map(|w| w / total * cfg.nodes as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = cfg.nodes.saturating_sub(counts.iter().sum());
    for &k in order.iter().cycle().take(short) {
        counts[k] += 1;
    }
    let mut classes: Vec<SupplyClass> = counts
        .iter()
        .zip(kinds)
        .flat_map(|(&c, k)| std::iter::repeat_n(k, c))
        .collect();
    classes.shuffle(rng);
    classes
}

fn pick_sessions(cfg: &GeneratorConfig, net: &Network, rng: &mut ChaCha8Rng) -> Vec<Session> {
    let mut sources: Vec<usize> = (0..cfg.nodes).collect();
    sources.shuffle(rng);
    sources.truncate(cfg.sessions);
    let (lo, hi) = cfg.session_hops;
    sources
        .into_iter()
        .enumerate()
        .map(|(i, src)| {
            let hops = net.hop_distances(NodeId(src));
            let in_band: Vec<usize> = (0..cfg.nodes)
                .filter(|&v| matches!(hops[v], Some(h) if h >= lo.max(1) && h <= hi))
                .collect();
            let candidates = if in_band.is_empty() {
                (0..cfg.nodes)
                    .filter(|&v| v != src && hops[v].is_some())
                    .collect()
            } else {
                in_band
            };
            let dst = candidates[rng.gen_range(0..candidates.len())];
            Session {
                id: SessionId(i),
                source: NodeId(src),
                destination: NodeId(dst),
                max_rate: cfg.session.max_rate,
                sense_cost: cfg.session.sense_cost,
                utility: Utility::Log1p,
            }
        })
        .collect()
}

/// Constants derived from the queue and drift bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    /// Shift subtracted from link weights: `l_max * x_max + r_max`.
    pub sigma: f64,
    /// Deterministic data backlog bound.
    pub q_max: f64,
    /// Largest per-session rate bound.
    pub r_max: f64,
    /// Largest utility derivative over all sessions.
    pub beta_u: f64,
    /// Battery capacity per node; also the energy perturbation.
    pub theta: Vec<f64>,
    /// Worst-case per-slot consumption per node.
    pub p_total_max: Vec<f64>,
    pub b_q: f64,
    pub b_e: Vec<f64>,
    /// Drift constant: `N * F * b_q + sum(b_e)`.
    pub b: f64,
    /// Optimality-gap constant: `b + N * F * sigma * l_max * x_max`.
    pub b_tilde: f64,
}

pub fn bound_constants(net: &Network, params: &Params) -> BoundConstants {
    let lx = params.l_max as f64 * params.x_max;
    let r_max = net.sessions.iter().map(|s| s.max_rate).fold(0.0, f64::max);
    let beta_u = net
        .sessions
        .iter()
        .map(|s| s.utility.max_derivative())
        .fold(0.0, f64::max);
    let sigma = lx + r_max;
    let scaled = params.utility_weight * beta_u * params.penalty_weight;
    let q_max = scaled + r_max;

    let p_total_max: Vec<f64> = net
        .nodes
        .iter()
        .map(|node| {
            let sensing: f64 = net
                .sourced(node.id)
                .iter()
                .map(|&f| {
                    let s = &net.sessions[f.0];
                    s.sense_cost * s.max_rate
                })
                .sum();
            sensing + node.max_power + node.receive_cost * lx
        })
        .collect();
    let theta: Vec<f64> = p_total_max
        .iter()
        .map(|p| params.delta * scaled + p)
        .collect();

    let b_q = 1.5 * lx * lx + r_max * r_max;
    let b_e: Vec<f64> = net
        .nodes
        .iter()
        .zip(&p_total_max)
        .map(|(node, ptot)| {
            let inflow = if node.supply.harvests() {
                params.h_max()
            } else {
                0.0
            } + if node.supply.grid() {
                node.grid_max
            } else {
                0.0
            };
            0.5 * inflow * inflow + 0.5 * ptot * ptot
        })
        .collect();
    let nf = (net.num_nodes() * net.num_sessions()) as f64;
    let b = nf * b_q + b_e.iter().sum::<f64>();
    let b_tilde = b + nf * sigma * lx;

    BoundConstants {
        sigma,
        q_max,
        r_max,
        beta_u,
        theta,
        p_total_max,
        b_q,
        b_e,
        b,
        b_tilde,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyViolation {
    NoiseFloor {
        node: NodeId,
        value: f64,
    },
    MaxPower {
        node: NodeId,
        value: f64,
    },
    ReceiveCost {
        node: NodeId,
        value: f64,
    },
    GridMax {
        node: NodeId,
        value: f64,
    },
    OutDegree {
        node: NodeId,
        degree: usize,
        l_max: usize,
    },
    InDegree {
        node: NodeId,
        degree: usize,
        l_max: usize,
    },
    SelfLoop {
        link: LinkId,
    },
    DuplicateLink {
        link: LinkId,
    },
    Distance {
        link: LinkId,
        value: f64,
    },
    ProcessingGain {
        link: LinkId,
        value: f64,
    },
    Channel {
        link: LinkId,
        channel: usize,
    },
    SessionEndpoints {
        session: SessionId,
    },
    MaxRate {
        session: SessionId,
        value: f64,
    },
    SenseCost {
        session: SessionId,
        value: f64,
    },
}

/// Lists every invariant the network breaks; never fails.
pub fn validate_network(net: &Network, params: &Params) -> Vec<TopologyViolation> {
    use TopologyViolation as V;
    let mut out = Vec::new();
    for node in &net.nodes {
        let id = node.id;
        if !(node.noise_floor > 0.0) {
            out.push(V::NoiseFloor {
                node: id,
                value: node.noise_floor,
            });
        }
        if !(node.max_power > 0.0) {
            out.push(V::MaxPower {
                node: id,
                value: node.max_power,
            });
        }
        if !(node.receive_cost >= 0.0) {
            out.push(V::ReceiveCost {
                node: id,
                value: node.receive_cost,
            });
        }
        if node.supply.grid() && !(node.grid_max >= 0.0) {
            out.push(V::GridMax {
                node: id,
                value: node.grid_max,
            });
        }
        let out_deg = net.links.iter().filter(|l| l.tx == id).count();
        let in_deg = net.links.iter().filter(|l| l.rx == id).count();
        if out_deg > params.l_max {
            out.push(V::OutDegree {
                node: id,
                degree: out_deg,
                l_max: params.l_max,
            });
        }
        if in_deg > params.l_max {
            out.push(V::InDegree {
                node: id,
                degree: in_deg,
                l_max: params.l_max,
            });
        }
    }
    let mut seen = BTreeSet::new();
    for l in &net.links {
        if l.tx == l.rx {
            out.push(V::SelfLoop { link: l.id });
        }
        if !seen.insert((l.tx, l.rx)) {
            out.push(V::DuplicateLink { link: l.id });
        }
        if !(l.distance > 0.0) {
            out.push(V::Distance {
                link: l.id,
                value: l.distance,
            });
        }
        if !(l.processing_gain > 1.0) {
            out.push(V::ProcessingGain {
                link: l.id,
                value: l.processing_gain,
            });
        }
        if l.channel >= net.channels {
            out.push(V::Channel {
                link: l.id,
                channel: l.channel,
            });
        }
    }
    for s in &net.sessions {
        if s.source == s.destination {
            out.push(V::SessionEndpoints { session: s.id });
        }
        if !(s.max_rate > 0.0) {
            out.push(V::MaxRate {
                session: s.id,
                value: s.max_rate,
            });
        }
        if !(s.sense_cost >= 0.0) {
            out.push(V::SenseCost {
                session: s.id,
                value: s.sense_cost,
            });
        }
    }
    out
}
