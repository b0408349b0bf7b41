//! Grid-based Hamilton-Jacobi reachability: discounted forward reachable
//! tubes, invariance and barrier-function checks, and safety filters.

pub mod analysis;
pub mod cli_io;
pub mod dynamics;
pub mod grid;
pub mod safety_sim;
pub mod solver;
pub mod targets;

mod par;
#[cfg(test)]
mod testutil;
