//! Simulator and optimization engine for an active STAR-RIS assisted
//! multi-access edge computing uplink.
//!
//! Per slot, user transmit powers come from sequential fractional programming
//! ([`power_control`]), offloading ratios from an exact continuous knapsack
//! ([`offload_solver`]), and surface coefficients plus task admission from a
//! double deep Q-network acting on a drift-plus-penalty reward ([`drl`]).

pub mod channel;
pub mod compute;
pub mod drl;
pub mod offload_solver;
pub mod orchestrator;
pub mod power_control;
pub mod queueing;
pub mod rng;
pub mod scenario;
pub mod verify;

pub use scenario::{load_scenario, ArrivalScale, OffloadMode, RewardSign, RisMode, Scenario};
