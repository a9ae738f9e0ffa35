//! Learning stack: environment, Q-network, replay and agents.

pub mod agent;
pub mod env;
pub mod mab;
pub mod nn;
pub mod replay;

pub use agent::{Agent, AgentKind, AnyAgent, Checkpoint, QAgent, TargetRule};
pub use env::{Env, EnvOptions, QueueModel, SlotDecision, Violations, IDENTITY_ACTION, NUM_ACTIONS};
