//! Ground-truth world simulation.
//!
//! Each server's availability follows a two-state Markov chain; jobs join a
//! finite FIFO queue and at most one job per available server completes per
//! slot. Dispatchers only learn server status through paid queries or through
//! ACK/NAK feedback for their own jobs, and track the age of that information.

mod markov;
mod trajectory;
mod types;
mod world;


pub use markov::{stationary_distribution, transition_availability, Stationary};
pub use trajectory::SlotRecord;
pub use types::*;
pub use world::{compute_rewards, JobCounters, StatusReport, World};
