//! Scenario files on disk and small hand-built networks end to end.

use easyo::config::{dump_topology, load_config, parse_config};
use easyo::model::{bound_constants, SupplyClass};
use easyo::sim::{run, AuditMode, RunOptions};

const LINE: &str = r#"
channels = 1

[params]
penalty_weight = 200
slots = 2000
seed = 9

[[nodes]]
id = 0
supply = "ME"
x = 0.0
y = 0.0

[[nodes]]
id = 1
supply = "EH"
x = 800.0
y = 0.0

[[nodes]]
id = 2
supply = "EG"
x = 1600.0
y = 0.0

[[links]]
id = 0
tx = 0
rx = 1
channel = 0

[[links]]
id = 1
tx = 1
rx = 2
channel = 0

[[sessions]]
id = 0
source = 0
destination = 2
"#;

#[test]
fn file_round_trip_preserves_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("line.toml");
    std::fs::write(&path, LINE).unwrap();
    let a = load_config(&path).unwrap();
    assert_eq!(a.net.num_links(), 2);
    assert_eq!(a.net.nodes[1].supply, SupplyClass::EH);
    assert_eq!(a.params.penalty_weight, 200.0);

    let again = parse_config(&dump_topology(&a.net).unwrap()).unwrap();
    assert_eq!(again.net.nodes, a.net.nodes);
    assert_eq!(again.net.links, a.net.links);
    assert_eq!(again.net.sessions, a.net.sessions);
}

#[test]
fn two_hop_line_delivers_data_within_bounds() {
    let s = parse_config(LINE).unwrap();
    let opts = RunOptions {
        audit: AuditMode::Full,
        ..RunOptions::default()
    };
    let m = run(&s.net, &s.params, &opts, None).unwrap();
    assert!(m.passed(), "{m:?}");
    assert_eq!(m.audits, 2000);
    assert!(m.avg_utility > 0.0);
    let bounds = bound_constants(&s.net, &s.params);
    assert!(m.max_data_queue <= bounds.q_max);
    assert!(m.first_active_slot.iter().all(Option::is_some));
}

#[test]
fn generated_default_has_the_target_size() {
    let s = parse_config("").unwrap();
    assert_eq!(s.net.num_nodes(), 20);
    assert_eq!(s.net.channels, 14);
    assert_eq!(s.net.num_sessions(), 6);
    assert!((60..=96).contains(&s.net.num_links()));
}
