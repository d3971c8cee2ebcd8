//! HTTP service, scenario simulator and command-line front end over
//! `streamdesk-core`.
//!
//! [`engine::Engine`] owns all state and is shared by the HTTP router in
//! [`server`] and the replay loop in [`simulate`].

pub mod api;
pub mod cli;
pub mod config;
pub mod engine;
pub mod scenario;
pub mod server;
pub mod simulate;

use std::path::Path;

/// The bundled demo scenario, as shipped in `scenarios/demo.jsonl`.
pub const DEMO_SCENARIO: &str = include_str!("../scenarios/demo.jsonl");

/// Parse the bundled demo scenario.
pub fn demo_scenario() -> Result<scenario::Scenario, scenario::ScenarioError> {
    scenario::Scenario::parse(DEMO_SCENARIO.as_bytes(), Path::new("demo.jsonl"), Path::new("."))
}
