//! Stopping rules for a sequence of independent success/failure treatments.
//!
//! The goal throughout is to stop exactly on the last success: every
//! success is realised and no futile treatment follows it.
//!
//! - [`odds`]: known success probabilities, the sum-the-odds threshold and
//!   its value function, plus brute-force and order-search helpers.
//! - [`adaptive`]: unknown internal success probability scaled by health
//!   scores, estimated sequentially from the outcomes seen so far.
//! - [`horizon`]: requests arriving as a Poisson stream over `[0, t]`.
//! - [`simulator`]: Monte Carlo harness for all of the above.

pub mod adaptive;
pub mod decision;
pub mod error;
pub mod exec;
pub mod horizon;
pub mod odds;
pub mod simulator;

pub use decision::{Action, Outcome, Source};
pub use error::{Error, Result};
pub use exec::Execution;
