//! Core domain model, scenario generation, simulator and metrics for a
//! station-based shared-EV system with dynamic daily deployment.

pub mod domain;
pub mod geom;
pub mod metrics;
pub mod money;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use domain::{DemandEvent, Order, Plan, Poi, Snapshot, Station, StationId};
pub use geom::Point;
pub use money::Money;
pub use scenario::{DemandTables, Scenario, ScenarioConfig, STEPS_PER_DAY};
pub use sim::{run_episode, EpisodeDriver, EpisodeRecord, SimOptions};
