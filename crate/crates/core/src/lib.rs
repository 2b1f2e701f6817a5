//! Drift-plus-penalty control of multihop sensor networks powered by
//! harvested energy, the electricity grid, or both.
//!
//! Each slot the controller observes queue backlogs, stored energy,
//! channel gains, harvestable energy and electricity prices, then decides
//! how much energy to harvest and buy, how fast each source senses, how
//! much power each link gets and which session each link serves.
//!
//! ```no_run
//! use easyo::config::parse_config;
//! use easyo::sim::{run, RunOptions};
//!
//! let scenario = parse_config("[params]\nslots = 1000\n").unwrap();
//! let metrics = run(&scenario.net, &scenario.params, &RunOptions::default(), None).unwrap();
//! assert!(metrics.passed());
//! ```

// Negated comparisons are how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod error;
pub mod model;
pub mod oracle;
pub mod powalloc;
pub mod queues;
pub mod sim;
pub mod stochastic;

pub use error::{Error, Result};
