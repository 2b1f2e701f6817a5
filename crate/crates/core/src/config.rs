//! TOML scenario files.
//!
//! ```toml
//! [params]            # every key optional, defaults shown
//! penalty_weight = 1000.0
//! utility_weight = 0.6
//! cost_mapping = 0.5
//! delta = 2.0
//! x_max = 2.0
//! l_max = 6
//! fading = [0.9, 1.1]
//! harvest = [0.0, 2.0]
//! price = [0.5, 1.0]
//! price_model = "flat"   # or "affine" with price_slope
//! price_slope = 0.0
//! initial_energy = 0.0
//! initial_backlog = 0.0
//! slots = 100000
//! seed = 7
//!
//! [generator]         # used when no [[nodes]] are given
//! nodes = 20
//! channels = 14
//! sessions = 6
//! seed = 7
//! radius = 2950.0
//! # field_size, min_separation, supply_mix, session_hops, processing_gain,
//! # noise_floor, max_power, receive_cost, grid_max, max_rate, sense_cost
//!
//! channels = 14       # explicit topologies only
//! [[nodes]]
//! id = 0
//! supply = "ME"       # EH, EG or ME
//! x = 0.0
//! y = 0.0
//! # noise_floor, max_power, receive_cost, grid_max
//! [[links]]
//! id = 0
//! tx = 0
//! rx = 1
//! channel = 0
//! # distance (from positions), processing_gain
//! [[sessions]]
//! id = 0
//! source = 0
//! destination = 1
//! # max_rate, sense_cost, utility = "log1p"
//! ```
//!
//! Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_topology, distance, Dist, ExplicitTopology, GeneratorConfig, Link, LinkId, Network, Node,
    NodeDefaults, NodeId, Params, PriceModel, Session, SessionDefaults, SessionId, SupplyClass,
    TopologyConfig, Utility, DEFAULT_PROCESSING_GAIN,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_mapping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fading: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harvest: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_backlog: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorFile {
    pub nodes: Option<usize>,
    pub channels: Option<usize>,
    pub sessions: Option<usize>,
    pub seed: Option<u64>,
    pub field_size: Option<f64>,
    pub radius: Option<f64>,
    pub min_separation: Option<f64>,
    pub supply_mix: Option<[f64; 3]>,
    pub session_hops: Option<[usize; 2]>,
    pub processing_gain: Option<f64>,
    pub noise_floor: Option<f64>,
    pub max_power: Option<f64>,
    pub receive_cost: Option<f64>,
    pub grid_max: Option<f64>,
    pub max_rate: Option<f64>,
    pub sense_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub id: usize,
    pub supply: SupplyClass,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub receive_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub id: usize,
    pub tx: usize,
    pub rx: usize,
    pub channel: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub processing_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub id: usize,
    pub source: usize,
    pub destination: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sense_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<Utility>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sessions: Vec<SessionFile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub net: Network,
    pub params: Params,
    pub topology: TopologyConfig,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment in the text.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

fn with_line(err: Error, text: &str) -> Error {
    match err {
        Error::Config {
            key: Some(k),
            line: None,
            message,
        } => {
            let line = line_of_key(text, &k);
            Error::Config {
                key: Some(k),
                line,
                message,
            }
        }
        other => other,
    }
}

fn range(key: &str, v: Option<[f64; 2]>, default: Dist) -> Result<Dist> {
    match v {
        None => Ok(default),
        Some([lo, hi]) if lo <= hi => Ok(Dist::uniform(lo, hi)),
        Some([lo, hi]) => Err(Error::config(
            key,
            format!("range [{lo}, {hi}] is reversed"),
        )),
    }
}

pub fn params_from_file(p: &ParamsFile) -> Result<Params> {
    let d = Params::default();
    let price_model = match (p.price_model.as_deref(), p.price_slope) {
        (None | Some("flat"), None) => PriceModel::Flat,
        (None | Some("affine"), Some(slope)) => PriceModel::Affine { slope },
        (Some("affine"), None) => PriceModel::Affine { slope: 0.0 },
        (Some("flat"), Some(_)) => {
            return Err(Error::config(
                "price_slope",
                "only valid with price_model = \"affine\"",
            ))
        }
        (Some(other), _) => {
            return Err(Error::config(
                "price_model",
                format!("unknown model `{other}`"),
            ))
        }
    };
    let params = Params {
        penalty_weight: p.penalty_weight.unwrap_or(d.penalty_weight),
        utility_weight: p.utility_weight.unwrap_or(d.utility_weight),
        cost_mapping: p.cost_mapping.unwrap_or(d.cost_mapping),
        delta: p.delta.unwrap_or(d.delta),
        x_max: p.x_max.unwrap_or(d.x_max),
        l_max: p.l_max.unwrap_or(d.l_max),
        fading: range("fading", p.fading, d.fading)?,
        harvest: range("harvest", p.harvest, d.harvest)?,
        price: range("price", p.price, d.price)?,
        price_model,
        initial_energy: p.initial_energy.unwrap_or(d.initial_energy),
        initial_backlog: p.initial_backlog.unwrap_or(d.initial_backlog),
        slots: p.slots.unwrap_or(d.slots),
        seed: p.seed.unwrap_or(d.seed),
    };
    params.check()?;
    Ok(params)
}

fn generator_from_file(g: &GeneratorFile, l_max: usize) -> GeneratorConfig {
    let d = GeneratorConfig {
        l_max,
        ..GeneratorConfig::default()
    };
    GeneratorConfig {
        nodes: g.nodes.unwrap_or(d.nodes),
        channels: g.channels.unwrap_or(d.channels),
        sessions: g.sessions.unwrap_or(d.sessions),
        seed: g.seed.unwrap_or(d.seed),
        field_size: g.field_size.unwrap_or(d.field_size),
        radius: g.radius.unwrap_or(d.radius),
        min_separation: g.min_separation.unwrap_or(d.min_separation),
        l_max,
        supply_mix: g.supply_mix.unwrap_or(d.supply_mix),
        session_hops: g.session_hops.map_or(d.session_hops, |[a, b]| (a, b)),
        processing_gain: g.processing_gain.unwrap_or(d.processing_gain),
        node: NodeDefaults {
            noise_floor: g.noise_floor.unwrap_or(d.node.noise_floor),
            max_power: g.max_power.unwrap_or(d.node.max_power),
            receive_cost: g.receive_cost.unwrap_or(d.node.receive_cost),
            grid_max: g.grid_max.unwrap_or(d.node.grid_max),
        },
        session: SessionDefaults {
            max_rate: g.max_rate.unwrap_or(d.session.max_rate),
            sense_cost: g.sense_cost.unwrap_or(d.session.sense_cost),
        },
    }
}

fn explicit_from_file(f: &ScenarioFile) -> Result<ExplicitTopology> {
    let nd = NodeDefaults::default();
    let sd = SessionDefaults::default();
    let nodes: Vec<Node> = f
        .nodes
        .iter()
        .map(|n| Node {
            id: NodeId(n.id),
            supply: n.supply,
            position: [n.x, n.y],
            noise_floor: n.noise_floor.unwrap_or(nd.noise_floor),
            max_power: n.max_power.unwrap_or(nd.max_power),
            receive_cost: n.receive_cost.unwrap_or(nd.receive_cost),
            grid_max: n.grid_max.unwrap_or(nd.grid_max),
            battery_capacity: 0.0,
            p_total_max: 0.0,
        })
        .collect();
    let position = |id: usize, link: usize| -> Result<[f64; 2]> {
        nodes
            .get(id)
            .map(|n| n.position)
            .ok_or_else(|| Error::Validation(format!("link {link} references unknown node {id}")))
    };
    let mut links = Vec::with_capacity(f.links.len());
    for l in &f.links {
        let d = match l.distance {
            Some(d) => d,
            None => distance(position(l.tx, l.id)?, position(l.rx, l.id)?),
        };
        links.push(Link {
            id: LinkId(l.id),
            tx: NodeId(l.tx),
            rx: NodeId(l.rx),
            channel: l.channel,
            distance: d,
            processing_gain: l.processing_gain.unwrap_or(DEFAULT_PROCESSING_GAIN),
        });
    }
    let sessions = f
        .sessions
        .iter()
        .map(|s| Session {
            id: SessionId(s.id),
            source: NodeId(s.source),
            destination: NodeId(s.destination),
            max_rate: s.max_rate.unwrap_or(sd.max_rate),
            sense_cost: s.sense_cost.unwrap_or(sd.sense_cost),
            utility: s.utility.unwrap_or(Utility::Log1p),
        })
        .collect();
    let channels = match f.channels {
        Some(c) => c,
        None => f.links.iter().map(|l| l.channel + 1).max().unwrap_or(1),
    };
    Ok(ExplicitTopology {
        nodes,
        links,
        sessions,
        channels,
    })
}

pub fn parse_config(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config {
        key: None,
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    let params = params_from_file(&file.params.clone().unwrap_or_default())
        .map_err(|e| with_line(e, text))?;
    let topology = if file.nodes.is_empty() {
        if !file.links.is_empty() || !file.sessions.is_empty() {
            return Err(Error::config(
                "nodes",
                "links and sessions need an explicit node list",
            ));
        }
        if file.channels.is_some() {
            return Err(with_line(
                Error::config(
                    "channels",
                    "top-level channels applies to explicit topologies; use [generator]",
                ),
                text,
            ));
        }
        TopologyConfig::Generated(generator_from_file(
            &file.generator.clone().unwrap_or_default(),
            params.l_max,
        ))
    } else {
        if file.generator.is_some() {
            return Err(Error::config(
                "generator",
                "cannot be combined with an explicit node list",
            ));
        }
        TopologyConfig::Explicit(explicit_from_file(&file)?)
    };
    let net = build_topology(&topology)?;
    Ok(Scenario {
        net,
        params,
        topology,
    })
}

pub fn load_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        key: None,
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text)
}

/// Explicit-topology file for a network; distances and positions are kept
/// exactly, so loading it rebuilds the same network.
pub fn dump_topology(net: &Network) -> Result<String> {
    let file = ScenarioFile {
        channels: Some(net.channels),
        params: None,
        generator: None,
        nodes: net
            .nodes
            .iter()
            .map(|n| NodeFile {
                id: n.id.0,
                supply: n.supply,
                x: n.position[0],
                y: n.position[1],
                noise_floor: Some(n.noise_floor),
                max_power: Some(n.max_power),
                receive_cost: Some(n.receive_cost),
                grid_max: Some(n.grid_max),
            })
            .collect(),
        links: net
            .links
            .iter()
            .map(|l| LinkFile {
                id: l.id.0,
                tx: l.tx.0,
                rx: l.rx.0,
                channel: l.channel,
                distance: Some(l.distance),
                processing_gain: Some(l.processing_gain),
            })
            .collect(),
        sessions: net
            .sessions
            .iter()
            .map(|s| SessionFile {
                id: s.id.0,
                source: s.source.0,
                destination: s.destination.0,
                max_rate: Some(s.max_rate),
                sense_cost: Some(s.sense_cost),
                utility: Some(s.utility),
            })
            .collect(),
    };
    toml::to_string(&file).map_err(|e| Error::config("topology", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_scenario() {
        let s = parse_config("").unwrap();
        assert_eq!(s.params, Params::default());
        assert_eq!(
            s.topology,
            TopologyConfig::Generated(GeneratorConfig::default())
        );
        assert_eq!(s.net.num_nodes(), 20);
    }

    #[test]
    fn out_of_range_weight_names_key_and_line() {
        let err = parse_config("[params]\nseed = 3\nutility_weight = 1.2\n").unwrap_err();
        match err {
            Error::Config { key, line, .. } => {
                assert_eq!(key.as_deref(), Some("utility_weight"));
                assert_eq!(line, Some(3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_its_line() {
        let err = parse_config("[params]\n\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(
            matches!(err, Error::Config { line: Some(3), .. }),
            "{err:?}"
        );
    }

    #[test]
    fn explicit_topology_overrides_the_generator() {
        let text = r#"
[[nodes]]
id = 0
supply = "ME"
x = 0.0
y = 0.0

[[nodes]]
id = 1
supply = "EG"
x = 3.0
y = 4.0

[[links]]
id = 0
tx = 0
rx = 1
channel = 0

[[sessions]]
id = 0
source = 0
destination = 1
"#;
        let s = parse_config(text).unwrap();
        assert_eq!(s.net.num_nodes(), 2);
        assert_eq!(s.net.links[0].distance, 5.0);
        assert_eq!(s.net.channels, 1);
        assert_eq!(s.net.sessions[0].max_rate, 3.0);
    }

    #[test]
    fn generated_topology_round_trips_exactly() {
        let s = parse_config("").unwrap();
        let text = dump_topology(&s.net).unwrap();
        let again = parse_config(&text).unwrap();
        assert_eq!(again.net, s.net);
    }

    #[test]
    fn affine_price_model() {
        let s = parse_config("[params]\nprice_model = \"affine\"\nprice_slope = 0.1\n").unwrap();
        assert_eq!(s.params.price_model, PriceModel::Affine { slope: 0.1 });
        assert!(parse_config("[params]\nprice_model = \"tiered\"\n").is_err());
    }
}
