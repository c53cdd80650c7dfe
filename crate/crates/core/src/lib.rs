//! Agent-based discrete-event simulation of a train rapid-transit system
//! driven by smart-card journey records.
//!
//! A day is simulated by [`simulation::run_replication`]: trains are
//! dispatched along every line and direction, commuters tap in, walk, queue,
//! ride and tap out, and the run is summarised in a
//! [`simulation::MetricsReport`]. Around that core sit route-choice fitting
//! ([`routing`]), distribution comparison ([`metrics`]) and population and
//! demand-reshaping sweeps ([`scenarios`]).

pub mod agents;
pub mod cli;
pub mod demand;
pub mod des;
pub mod fixtures;
pub mod metrics;
pub mod network;
pub mod routing;
pub mod scenarios;
pub mod simulation;

pub use agents::CrowdLimit;
pub use demand::{DemandProfile, JourneyRecord};
pub use des::{RngStream, Secs};
pub use network::Network;
pub use routing::{Route, RouteChoiceTable};
pub use simulation::{run_replication, run_replications, MetricsReport, SimConfig};
