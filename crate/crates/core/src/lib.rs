//! Simulation of piezoelectric vibration harvesters feeding an
//! intermittently powered load, with and without a regulating converter.

pub mod engine;
pub mod error;
pub mod excitation;
pub mod frontend;
pub mod mppt;
pub mod ode;
pub mod storage;
pub mod transducer;

pub use error::{Error, Result};
pub use excitation::{Forcing, VibrationProfile, DEFAULT_FORCE_GAIN};
pub use frontend::{Topology, TopologyKind};
pub use storage::{cap_energy, load_energy_per_cycle, step_cap_load, CapLoadState};
pub use transducer::{IvCurve, PiezoModel, PiezoState};
pub use engine::{run_grid, run_sim, GridSpec, SimConfig, SimTrace, SweepTable};
pub use mppt::{find_mpp, MppEstimate};
