//! Warehouse digital twin: an agent-based AMR/worker simulator, compliance
//! metrics, a goal model of safety-rule alternatives, and the what-if engine
//! and adaptation loop built on them.

pub mod metrics;
pub mod sim;
pub mod goal;
pub mod pool;
pub mod twin;
pub mod orchestrator;
pub mod experiment;
