//! Discrete-time warehouse simulation: layout, agents, dispatching and the
//! on-board safety governor.

pub mod agents;
pub mod event;
pub mod geometry;
pub mod layout;
pub mod order;
pub mod path;
pub mod rng;
pub mod rules;
pub mod scenario;
pub mod schedule;
pub mod snapshot;
pub mod world;

pub use agents::{Amr, AmrState, Route, Worker, WorkerState};
pub use event::{write_events, Event, EventKind};
pub use geometry::{Cell, Vec2};
pub use layout::{Rack, Slot, WarehouseLayout};
pub use order::{Order, OrderState};
pub use path::{distance_field, plan_path, Path};
pub use rng::RngStreams;
pub use rules::{governed_speed, GovernorMode, SafetyRuleParams};
pub use scenario::ScenarioConfig;
pub use schedule::{ArrivalCursor, ArrivalSchedule, Distribution, Phase};
pub use snapshot::{restore, snapshot, Snapshot};
pub use world::{build_world, AmrSense, Assignment, SimClock, TickReport, WorldState};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no path from {from} to {to}")]
    Unreachable { from: Cell, to: Cell },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
