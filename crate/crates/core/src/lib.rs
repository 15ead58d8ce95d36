pub mod actor_critic;
pub mod backend;
pub mod env;
pub mod explore;
pub mod fixtures;
pub mod harness;
pub mod memory;
pub mod planner;
pub mod state;
