//! Edge resource metering over a permissioned ledger.
//!
//! A single edge server mines a hash-chained ledger and runs two native
//! contracts that register IoT devices, move an internal coin currency, and
//! record every admission decision. Resource requests are admitted by a
//! dynamic-pricing greedy scheduler and charged in coins; a credit system
//! scores request and traffic behavior and blocks misbehaving devices. The
//! harness drives the whole stack through a discrete-timeslot simulation and
//! reproduces the acceptance-rate experiments.

pub mod admission;
pub mod coins;
pub mod contracts;
pub mod credit;
pub mod harness;
pub mod hash;
pub mod ledger;
pub mod pool;
pub mod registry;
pub mod resources;
pub mod state;
