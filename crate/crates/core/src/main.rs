use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use easyo::config::{dump_topology, load_config, parse_config, Scenario};
use easyo::model::{build_topology, GeneratorConfig, TopologyConfig};
use easyo::sim::{run, sweep_v, AuditMode, RunMetrics, RunOptions};
use easyo::Error;

/// Overrides `--out` for every subcommand that writes files.
const OUT_ENV: &str = "EASYO_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "easyo",
    version,
    about = "Simulate energy-aware cross-layer control of sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long = "V", alias = "v")]
        v: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write a queue snapshot every N slots.
        #[arg(long)]
        csv_every: Option<u64>,
        /// Dump the power-solver objective trace every N slots.
        #[arg(long)]
        bcd_trace_every: Option<u64>,
        /// Audit every slot.
        #[arg(long)]
        full_audit: bool,
    },
    /// Run one simulation per penalty weight.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(
            long = "V-list",
            alias = "v-list",
            value_delimiter = ',',
            required = true
        )]
        v_list: Vec<f64>,
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        csv_every: Option<u64>,
        /// Skip the per-slot CSV of each run.
        #[arg(long)]
        no_slot_csv: bool,
    },
    /// Run with every monitor and print the results without writing files.
    Audit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long = "V", alias = "v")]
        v: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Audit every slot instead of sampling.
        #[arg(long)]
        full: bool,
    },
    /// Write a generated topology as an explicit scenario file.
    GenTopology {
        #[arg(long, default_value_t = 20)]
        nodes: usize,
        #[arg(long, default_value_t = 14)]
        channels: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        sessions: usize,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn scenario(config: Option<&Path>) -> Result<Scenario, Error> {
    match config {
        Some(p) => load_config(p),
        None => parse_config(""),
    }
}

fn out_dir(flag: PathBuf) -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or(flag)
}

fn report(m: &RunMetrics) {
    println!(
        "V={} seed={} slots={} avg_objective={:.6} avg_utility={:.6} avg_cost={:.6} avg_data_queue={:.4} max_data_queue={:.4} (bound {}) avg_energy_queue={:.4} max_energy_queue={:.4} (bound {:.4})",
        m.penalty_weight,
        m.seed,
        m.slots,
        m.avg_objective,
        m.avg_utility,
        m.avg_cost,
        m.avg_data_queue,
        m.max_data_queue,
        m.q_max,
        m.avg_energy_queue,
        m.max_energy_queue,
        m.theta_max,
    );
    println!(
        "audits={} audit_failures={} min_slack={:.6e} bound_violations={} premise_violations={} infeasible={} delta_excess={} bcd_nonconverged={} wall_clock={:.2}s",
        m.audits,
        m.audit_failures,
        m.min_audit_slack,
        m.data_bound_violations + m.energy_bound_violations,
        m.sensing_energy_violations + m.transmit_backlog_violations,
        m.feasibility_violations,
        m.delta_excess,
        m.bcd_nonconverged,
        m.wall_clock.as_secs_f64(),
    );
}

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run {
            config,
            slots,
            v,
            seed,
            out,
            csv_every,
            bcd_trace_every,
            full_audit,
        } => {
            let s = scenario(config.as_deref())?;
            let mut params = s.params;
            params.slots = slots.unwrap_or(params.slots);
            params.penalty_weight = v.unwrap_or(params.penalty_weight);
            params.seed = seed.unwrap_or(params.seed);
            println!("seed {}", params.seed);
            let out = out_dir(out);
            let opts = RunOptions {
                audit: if full_audit {
                    AuditMode::Full
                } else {
                    AuditMode::Sampled
                },
                snapshot_every: csv_every,
                bcd_trace_every,
                slot_csv: true,
            };
            let m = run(&s.net, &params, &opts, Some(&out))?;
            report(&m);
            println!("wrote {}", out.display());
            Ok(m.passed())
        }
        Command::Sweep {
            config,
            v_list,
            slots,
            seed,
            out,
            csv_every,
            no_slot_csv,
        } => {
            let s = scenario(config.as_deref())?;
            let mut params = s.params;
            params.slots = slots.unwrap_or(params.slots);
            let base = seed.unwrap_or(params.seed);
            let out = out_dir(out);
            let opts = RunOptions {
                snapshot_every: csv_every,
                slot_csv: !no_slot_csv,
                ..RunOptions::default()
            };
            let results = sweep_v(&s.net, &params, &v_list, base, &opts, Some(&out))?;
            let mut ok = true;
            for (i, (v, r)) in v_list.iter().zip(results).enumerate() {
                println!("seed {}", base.wrapping_add(i as u64));
                match r {
                    Ok(m) => {
                        report(&m);
                        ok &= m.passed();
                    }
                    Err(e) => return Err(Error::Validation(format!("run with V={v} failed: {e}"))),
                }
            }
            println!("wrote {}", out.join("summary.csv").display());
            Ok(ok)
        }
        Command::Audit {
            config,
            slots,
            v,
            seed,
            full,
        } => {
            let s = scenario(config.as_deref())?;
            let mut params = s.params;
            params.slots = slots.unwrap_or(params.slots);
            params.penalty_weight = v.unwrap_or(params.penalty_weight);
            params.seed = seed.unwrap_or(params.seed);
            println!("seed {}", params.seed);
            let opts = RunOptions {
                audit: if full {
                    AuditMode::Full
                } else {
                    AuditMode::Sampled
                },
                ..RunOptions::default()
            };
            let m = run(&s.net, &params, &opts, None)?;
            report(&m);
            Ok(m.passed())
        }
        Command::GenTopology {
            nodes,
            channels,
            seed,
            sessions,
            radius,
            out,
        } => {
            let d = GeneratorConfig::default();
            let cfg = GeneratorConfig {
                nodes,
                channels,
                seed,
                sessions,
                radius: radius.unwrap_or(d.radius),
                ..d
            };
            println!("seed {seed}");
            let net = build_topology(&TopologyConfig::Generated(cfg))?;
            let out = match std::env::var_os(OUT_ENV) {
                Some(dir) => PathBuf::from(dir).join(out.file_name().unwrap_or(out.as_os_str())),
                None => out,
            };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&out, dump_topology(&net)?)?;
            println!(
                "wrote {} ({} nodes, {} links, {} sessions)",
                out.display(),
                net.num_nodes(),
                net.num_links(),
                net.num_sessions()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("monitor violations detected");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
