//! Serial/parallel dispatch for replication loops.
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] runs
//! serially. Results never depend on the choice: every job gets its own
//! RNG substream and reductions are either exact (integer tallies) or
//! performed in index order.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Serial
        }
    }
}

impl Execution {
    /// Maps `f` over `0..count`, returning results in index order.
    pub fn map_collect<T, F>(self, count: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..count).into_par_iter().map(f).collect(),
            _ => (0..count).map(f).collect(),
        }
    }

    /// Maps `f` over `0..count` and merges the results. `merge` must be
    /// associative and commutative with `identity` as neutral element;
    /// callers only use it for exact integer tallies.
    pub fn map_reduce<T, F, I, M>(self, count: u64, identity: I, f: F, merge: M) -> T
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
        I: Fn() -> T + Sync + Send,
        M: Fn(T, T) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..count).into_par_iter().map(f).reduce(identity, merge),
            _ => (0..count).map(f).fold(identity(), merge),
        }
    }
}
