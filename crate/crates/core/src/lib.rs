//! Multi-turn self-correction reinforcement learning on ChartLang.
//!
//! A small autoregressive policy learns to "reproduce a chart" by writing a
//! ChartLang program, sees the interpreter's feedback, and revises its code.
//! Training follows a cold start (behaviour cloning, then rejection-sampled
//! two-turn correction data) and a two-stage GRPO schedule: shared-first-turn
//! groups first, full-trajectory groups second.
//!
//! Module map:
//! - [`chartlang`]: tokens, parser, interpreter, canonical form
//! - [`rewards`]: format / rule / judge / composite / trajectory rewards
//! - [`policy`]: the token policy with exact log-probs and gradients
//! - [`rollout`]: turns, feedback, and group rollouts per strategy
//! - [`grpo`]: advantages, strategy gradients, Adam, the staged trainer
//! - [`coldstart`]: behaviour cloning and self-correction data
//! - [`data`]: task generation, corruption, dataset files
//! - [`eval`]: self-correction diagnostics
//! - [`config`]: the TOML run configuration
//! - [`cli`]: the `chartloop` command line

pub mod chartlang;
pub mod cli;
pub mod coldstart;
pub mod config;
pub mod color;
pub mod data;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod rewards;
pub mod rollout;
pub mod seed;

pub use error::{ConfigError, Error, Result};
