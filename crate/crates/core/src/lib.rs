//! Runtime for tool-augmented LLM agents under hard per-tool budgets.

pub mod agent;
pub mod bench;
pub mod cost;
pub mod events;
pub mod ledger;
pub mod money;
pub mod planning;
pub mod providers;
pub mod scaling;
pub mod verification;
