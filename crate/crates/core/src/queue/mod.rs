//! The n-th prelimit system: event-driven simulation and exact stationary
//! analysis under work-conserving preemptive policies.

mod exact;
mod policy;
mod sim;
mod varpi;

pub use exact::{exact_stationary_cost, TruncatedChain, MAX_STATES};
pub use policy::{AllocScratch, AllocationKind, SchedulingPolicy};
pub use sim::{simulate_ergodic_cost, simulate_time_average, SimConfig, SimReport};
pub use varpi::{varpi, varpi_into};
