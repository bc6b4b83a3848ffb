//! Planning and rate simulation for entanglement distribution networks
//! whose topology is set by the pump lasers of a spontaneous four-wave
//! mixing source.
//!
//! The crate is layered bottom-up:
//!
//! - [`grid`]: ITU channel arithmetic.
//! - [`sfwm`]: SFWM processes, correlated channel pairs and bright channels.
//! - [`stats`]: analytic rates, time-tag simulation, coincidence counting, JSI.
//! - [`network`]: user allocation, induced topologies and time-sharing.
//! - [`planner`]: pump-configuration scheduling for a target topology.
//! - [`qkd`]: sifted and secure key rates over a time-shared schedule.
//! - [`pipeline`] and [`calibrate`]: end-to-end link evaluation and model defaults.

pub mod calibrate;
pub mod error;
pub mod grid;
pub mod network;
pub mod pipeline;
pub mod planner;
pub mod qkd;
pub mod sfwm;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{Channel, ChannelGrid};
pub use network::{Schedule, Topology, UserAllocation, UserPair};
pub use sfwm::{Pump, PumpConfig};
